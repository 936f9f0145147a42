#pragma once

// Tape-based reverse-mode differentiation over imagine::Tensor.
//
// A Tape is the computation record: every primitive applied through it
// appends one node (kind, inputs, value, saved activations). backward() walks
// the nodes in reverse. Tapes are single-threaded; independent tapes may run
// concurrently as long as they only read the parameters they share.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "imagine/tensor.hpp"

namespace imagine::ad {

enum class Primitive {
  leaf,
  matmul,
  add,
  mul,
  tanh,
  relu,
  softmax_cross_entropy,
  gather_rows,
  concat,
  slice,
  sum,
  mean,
  scale,
  transpose,
  causal_softmax,
  layer_norm,
};

std::string_view primitive_name(Primitive p);

/// Static arguments of a primitive. Unused fields are ignored.
struct Attrs {
  double factor = 1.0;              // scale
  std::size_t axis = 0;             // concat, slice
  std::size_t begin = 0;            // slice
  std::size_t end = 0;              // slice (exclusive)
  bool per_row = false;             // sum: one total per row instead of one overall
  std::vector<std::int64_t> indices;  // gather_rows ids; cross-entropy targets (-1 = not scored)
};

class Parameter {
 public:
  Parameter(std::string name, Tensor value) : name_(std::move(name)), value(std::move(value)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;

 public:
  Tensor value;
};

/// Owns named parameters in insertion order; addresses are stable.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor init);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  /// Deep copy of the values (names and order preserved).
  ParameterSet clone() const;
  void copy_values_from(const ParameterSet& other);
  bool values_equal(const ParameterSet& other) const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Tape;

/// Handle to a node of a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

/// Result of Tape::backward: one adjoint per node.
class Gradients {
 public:
  /// Gradient for a node; zeros of the node's shape when it was unreachable.
  Tensor of(Var v) const;
  /// Gradient for a parameter; zeros when the parameter never entered the tape.
  Tensor of(const Parameter& p) const;
  /// Nullptr when the parameter is absent or received no gradient.
  const Tensor* find(const Parameter& p) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Tensor> adjoints_;
  std::vector<std::pair<const Parameter*, std::size_t>> param_nodes_;
};

class Tape {
 public:
  /// With recording off the tape still evaluates values but refuses backward.
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  /// Non-differentiable input.
  Var constant(Tensor value);
  /// Differentiable free input (used by grad_check).
  Var variable(Tensor value);
  /// Leaf bound to a parameter; repeated calls return the same node.
  Var parameter(const Parameter& p);

  Var apply(Primitive kind, std::span<const Var> inputs, const Attrs& attrs = {});

  const Tensor& value(Var v) const;
  Primitive kind(Var v) const;
  std::span<const std::size_t> inputs(Var v) const;

  Gradients backward(Var loss) const;

 private:
  struct Node {
    Primitive kind = Primitive::leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor saved;
    Attrs attrs;
    const Parameter* param = nullptr;
    bool needs_grad = false;
  };

  Var push(Node node);
  void backprop_node(const Node& node, const Tensor& grad, std::vector<Tensor>& adjoints) const;

  bool recording_;
  std::vector<Node> nodes_;
  std::vector<std::pair<const Parameter*, std::size_t>> param_nodes_;
};

/// Forward evaluation of a primitive on plain tensors; the same kernel the
/// tape uses. `saved` receives activations needed by backward.
Tensor evaluate_primitive(Primitive kind, std::span<const Tensor* const> inputs, const Attrs& attrs,
                          Tensor* saved = nullptr);

// Convenience wrappers; all operands must live on the same tape.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var tanh(Var a);
Var relu(Var a);
Var softmax_cross_entropy(Var logits, std::vector<std::int64_t> targets);
Var gather_rows(Var table, std::vector<std::int64_t> ids);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var sum(Var a);
Var row_sums(Var a);
Var mean(Var a);
Var scale(Var a, double factor);
Var transpose(Var a);
Var causal_softmax(Var a);
Var layer_norm(Var a);

/// One tensor per parameter of a ParameterSet, in set order.
class GradientBuffer {
 public:
  GradientBuffer() = default;
  explicit GradientBuffer(const ParameterSet& params);

  void accumulate(const ParameterSet& params, const Gradients& grads, double weight = 1.0);
  void accumulate(const GradientBuffer& other);
  void scale(double factor);
  double norm() const;
  bool all_finite() const;
  bool all_zero() const;
  std::size_t size() const { return grads_.size(); }
  Tensor& operator[](std::size_t i) { return grads_[i]; }
  const Tensor& operator[](std::size_t i) const { return grads_[i]; }

 private:
  std::vector<Tensor> grads_;
};

/// Rescales `grads` in place so its global norm is at most max_norm.
/// Returns the norm before clipping.
double clip_global_norm(GradientBuffer& grads, double max_norm);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. step() descends along the given gradient.
class Adam {
 public:
  Adam(ParameterSet& params, AdamConfig config);
  void step(const GradientBuffer& grads);
  std::size_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  ParameterSet* params_;
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

/// Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12)
/// for f at x. f must return a scalar.
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps);

/// Same measure with respect to parameters. When coords_per_tensor is nonzero
/// only that many coordinates per parameter (chosen from `seed`) are probed.
double grad_check(const std::function<Var(Tape&)>& f, ParameterSet& params, double eps,
                  std::size_t coords_per_tensor = 0, std::uint64_t seed = 0);

}  // namespace imagine::ad
