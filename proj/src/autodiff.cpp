#include "imagine/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "imagine/kernels.hpp"

namespace imagine::ad {

namespace {

std::string shapes_of(std::span<const Tensor* const> inputs) {
  std::string s;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (i) s += " ";
    s += to_string(inputs[i]->shape());
  }
  return s;
}

[[noreturn]] void shape_fail(Primitive kind, std::span<const Tensor* const> inputs, const std::string& why) {
  throw ShapeError(std::string(primitive_name(kind)) + ": " + why + " (got " + shapes_of(inputs) + ")");
}

void expect_arity(Primitive kind, std::span<const Tensor* const> inputs, std::size_t n) {
  if (inputs.size() != n)
    shape_fail(kind, inputs, "expects " + std::to_string(n) + " operand(s)");
}

enum class Pairing { same, row_broadcast };

Pairing pairing(Primitive kind, std::span<const Tensor* const> in) {
  const Tensor& a = *in[0];
  const Tensor& b = *in[1];
  if (a.shape() == b.shape()) return Pairing::same;
  if (b.rows() == 1 && b.cols() == a.cols() && a.rank() == 2) return Pairing::row_broadcast;
  shape_fail(kind, in, "operands must match or the second must be a row of the first's width");
}

Tensor column_sums(const Tensor& g, const Shape& target) {
  Tensor out(target);
  const std::size_t n = g.cols();
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += g.at(r, c);
  return out;
}

void add_into(std::vector<Tensor>& adjoints, std::size_t id, Tensor&& contribution) {
  if (adjoints[id].size() == 0)
    adjoints[id] = std::move(contribution);
  else
    adjoints[id].accumulate(contribution);
}

}  // namespace

std::string_view primitive_name(Primitive p) {
  switch (p) {
    case Primitive::leaf: return "leaf";
    case Primitive::matmul: return "matmul";
    case Primitive::add: return "add";
    case Primitive::mul: return "mul";
    case Primitive::tanh: return "tanh";
    case Primitive::relu: return "relu";
    case Primitive::softmax_cross_entropy: return "softmax_cross_entropy";
    case Primitive::gather_rows: return "gather_rows";
    case Primitive::concat: return "concat";
    case Primitive::slice: return "slice";
    case Primitive::sum: return "sum";
    case Primitive::mean: return "mean";
    case Primitive::scale: return "scale";
    case Primitive::transpose: return "transpose";
    case Primitive::causal_softmax: return "causal_softmax";
    case Primitive::layer_norm: return "layer_norm";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// ParameterSet

Parameter& ParameterSet::add(std::string name, Tensor init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(init)));
  return *params_.back();
}

Parameter& ParameterSet::get(std::string_view name) {
  for (auto& p : params_)
    if (p->name() == name) return *p;
  throw std::out_of_range("no parameter named " + std::string(name));
}

const Parameter& ParameterSet::get(std::string_view name) const {
  return const_cast<ParameterSet*>(this)->get(name);
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p->name() == name; });
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& p : params_) out.add(p->name(), p->value);
  return out;
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  if (other.size() != size()) throw std::invalid_argument("parameter set size mismatch");
  for (std::size_t i = 0; i < size(); ++i) {
    if (params_[i]->name() != other[i].name() || params_[i]->value.shape() != other[i].value.shape())
      throw std::invalid_argument("parameter mismatch at " + params_[i]->name());
    params_[i]->value = other[i].value;
  }
}

bool ParameterSet::values_equal(const ParameterSet& other) const {
  if (other.size() != size()) return false;
  for (std::size_t i = 0; i < size(); ++i)
    if (params_[i]->name() != other[i].name() || !(params_[i]->value == other[i].value)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Forward kernels

Tensor evaluate_primitive(Primitive kind, std::span<const Tensor* const> in, const Attrs& attrs, Tensor* saved) {
  switch (kind) {
    case Primitive::leaf:
      throw std::invalid_argument("leaf is not an applicable primitive");

    case Primitive::matmul: {
      expect_arity(kind, in, 2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.cols() != b.rows()) shape_fail(kind, in, "inner dimensions differ");
      Tensor out({a.rows(), b.cols()});
      kernels::parallel::matmul_nn(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
      return out;
    }

    case Primitive::add:
    case Primitive::mul: {
      expect_arity(kind, in, 2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      const Pairing pr = pairing(kind, in);
      Tensor out(a.shape());
      const std::size_t n = a.cols();
      const bool is_add = kind == Primitive::add;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double bv = pr == Pairing::same ? b[i] : b[i % n];
        out[i] = is_add ? a[i] + bv : a[i] * bv;
      }
      return out;
    }

    case Primitive::tanh: {
      expect_arity(kind, in, 1);
      Tensor out(in[0]->shape());
      kernels::parallel::tanh_forward(in[0]->data(), out.data());
      return out;
    }

    case Primitive::relu: {
      expect_arity(kind, in, 1);
      Tensor out(in[0]->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, (*in[0])[i]);
      return out;
    }

    case Primitive::softmax_cross_entropy: {
      expect_arity(kind, in, 1);
      const Tensor& z = *in[0];
      const std::size_t n = z.rows();
      const std::size_t v = z.cols();
      if (attrs.indices.size() != n)
        shape_fail(kind, in, "needs one target per row, got " + std::to_string(attrs.indices.size()));
      Tensor probs({n, v});
      double total = 0.0;
      std::size_t counted = 0;
      for (std::size_t r = 0; r < n; ++r) {
        const auto row = z.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double se = 0.0;
        for (std::size_t c = 0; c < v; ++c) se += std::exp(row[c] - mx);
        const double lse = mx + std::log(se);
        for (std::size_t c = 0; c < v; ++c) probs.at(r, c) = std::exp(row[c] - lse);
        const auto target = attrs.indices[r];
        if (target < 0) continue;
        if (static_cast<std::size_t>(target) >= v)
          shape_fail(kind, in, "target id " + std::to_string(target) + " outside vocabulary");
        total += lse - row[static_cast<std::size_t>(target)];
        ++counted;
      }
      if (counted == 0) shape_fail(kind, in, "no scored rows");
      if (saved) *saved = std::move(probs);
      return Tensor::scalar(total / static_cast<double>(counted));
    }

    case Primitive::gather_rows: {
      expect_arity(kind, in, 1);
      const Tensor& table = *in[0];
      if (table.rank() != 2) shape_fail(kind, in, "table must be rank 2");
      if (attrs.indices.empty()) shape_fail(kind, in, "no row ids");
      const std::size_t d = table.cols();
      Tensor out({attrs.indices.size(), d});
      for (std::size_t r = 0; r < attrs.indices.size(); ++r) {
        const auto id = attrs.indices[r];
        if (id < 0 || static_cast<std::size_t>(id) >= table.rows())
          shape_fail(kind, in, "row id " + std::to_string(id) + " out of range");
        std::copy_n(table.row(static_cast<std::size_t>(id)).begin(), d, out.row(r).begin());
      }
      return out;
    }

    case Primitive::concat: {
      if (in.empty()) shape_fail(kind, in, "needs at least one operand");
      if (attrs.axis == 0) {
        const std::size_t c = in[0]->cols();
        std::size_t r = 0;
        for (const Tensor* t : in) {
          if (t->cols() != c) shape_fail(kind, in, "column counts differ");
          r += t->rows();
        }
        Tensor out({r, c});
        std::size_t off = 0;
        for (const Tensor* t : in) {
          std::copy(t->data().begin(), t->data().end(), out.data().begin() + static_cast<long>(off));
          off += t->size();
        }
        return out;
      }
      if (attrs.axis != 1) shape_fail(kind, in, "axis must be 0 or 1");
      const std::size_t r = in[0]->rows();
      std::size_t c = 0;
      for (const Tensor* t : in) {
        if (t->rows() != r) shape_fail(kind, in, "row counts differ");
        c += t->cols();
      }
      Tensor out({r, c});
      for (std::size_t i = 0; i < r; ++i) {
        std::size_t off = 0;
        for (const Tensor* t : in) {
          std::copy_n(t->row(i).begin(), t->cols(), out.row(i).begin() + static_cast<long>(off));
          off += t->cols();
        }
      }
      return out;
    }

    case Primitive::slice: {
      expect_arity(kind, in, 1);
      const Tensor& a = *in[0];
      const std::size_t limit = attrs.axis == 0 ? a.rows() : a.cols();
      if (attrs.axis > 1 || attrs.begin >= attrs.end || attrs.end > limit)
        shape_fail(kind, in,
                   "bad range [" + std::to_string(attrs.begin) + "," + std::to_string(attrs.end) + ") on axis " +
                       std::to_string(attrs.axis));
      if (attrs.axis == 0) {
        Tensor out({attrs.end - attrs.begin, a.cols()});
        std::copy(a.data().begin() + static_cast<long>(attrs.begin * a.cols()),
                  a.data().begin() + static_cast<long>(attrs.end * a.cols()), out.data().begin());
        return out;
      }
      const std::size_t w = attrs.end - attrs.begin;
      Tensor out({a.rows(), w});
      for (std::size_t r = 0; r < a.rows(); ++r)
        std::copy_n(a.row(r).begin() + static_cast<long>(attrs.begin), w, out.row(r).begin());
      return out;
    }

    case Primitive::sum: {
      expect_arity(kind, in, 1);
      const Tensor& a = *in[0];
      if (attrs.per_row) {
        Tensor out({a.rows()});
        for (std::size_t r = 0; r < a.rows(); ++r) {
          double s = 0.0;
          for (double x : a.row(r)) s += x;
          out[r] = s;
        }
        return out;
      }
      double s = 0.0;
      for (double x : a.data()) s += x;
      return Tensor::scalar(s);
    }

    case Primitive::mean: {
      expect_arity(kind, in, 1);
      double s = 0.0;
      for (double x : in[0]->data()) s += x;
      return Tensor::scalar(s / static_cast<double>(in[0]->size()));
    }

    case Primitive::scale: {
      expect_arity(kind, in, 1);
      Tensor out(in[0]->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] * attrs.factor;
      return out;
    }

    case Primitive::transpose: {
      expect_arity(kind, in, 1);
      const Tensor& a = *in[0];
      Tensor out({a.cols(), a.rows()});
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out.at(c, r) = a.at(r, c);
      return out;
    }

    case Primitive::causal_softmax: {
      expect_arity(kind, in, 1);
      const Tensor& s = *in[0];
      if (s.rank() != 2 || s.rows() != s.cols()) shape_fail(kind, in, "needs a square matrix");
      const std::size_t n = s.rows();
      Tensor out({n, n});
      for (std::size_t r = 0; r < n; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c <= r; ++c) mx = std::max(mx, s.at(r, c));
        double se = 0.0;
        for (std::size_t c = 0; c <= r; ++c) {
          out.at(r, c) = std::exp(s.at(r, c) - mx);
          se += out.at(r, c);
        }
        for (std::size_t c = 0; c <= r; ++c) out.at(r, c) /= se;
      }
      return out;
    }

    case Primitive::layer_norm: {
      expect_arity(kind, in, 1);
      const Tensor& x = *in[0];
      const std::size_t d = x.cols();
      Tensor out(x.shape());
      Tensor inv({x.rows()});
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto row = x.row(r);
        double mu = 0.0;
        for (double v : row) mu += v;
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (double v : row) var += (v - mu) * (v - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + 1e-5);
        inv[r] = is;
        for (std::size_t c = 0; c < d; ++c) out.at(r, c) = (row[c] - mu) * is;
      }
      if (saved) *saved = std::move(inv);
      return out;
    }
  }
  throw std::invalid_argument("unknown primitive");
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(const Parameter& p) {
  for (const auto& [param, id] : param_nodes_)
    if (param == &p) return Var{this, id};
  Node n;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = true;
  Var v = push(std::move(n));
  param_nodes_.emplace_back(&p, v.id);
  return v;
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v.id).value; }
Primitive Tape::kind(Var v) const { return nodes_.at(v.id).kind; }
std::span<const std::size_t> Tape::inputs(Var v) const { return nodes_.at(v.id).inputs; }

Var Tape::apply(Primitive kind, std::span<const Var> inputs, const Attrs& attrs) {
  std::vector<const Tensor*> operands;
  operands.reserve(inputs.size());
  Node n;
  n.kind = kind;
  for (const Var& v : inputs) {
    if (v.tape != this) throw std::invalid_argument("operand belongs to a different tape");
    operands.push_back(&nodes_.at(v.id).value);
    n.inputs.push_back(v.id);
    n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
  }
  n.value = evaluate_primitive(kind, operands, attrs, recording_ ? &n.saved : nullptr);
  if (recording_) n.attrs = attrs;
  return push(std::move(n));
}

Gradients Tape::backward(Var loss) const {
  if (!recording_) throw std::logic_error("backward on a tape with recording disabled");
  if (loss.tape != this) throw std::invalid_argument("loss belongs to a different tape");
  if (!value(loss).is_scalar())
    throw ShapeError("backward needs a scalar loss, got shape " + to_string(value(loss).shape()));
  Gradients g;
  g.tape_ = this;
  g.param_nodes_ = param_nodes_;
  g.adjoints_.resize(nodes_.size());
  g.adjoints_[loss.id] = Tensor(value(loss).shape(), 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.needs_grad || node.kind == Primitive::leaf || g.adjoints_[i].size() == 0) continue;
    backprop_node(node, g.adjoints_[i], g.adjoints_);
  }
  return g;
}

void Tape::backprop_node(const Node& node, const Tensor& g, std::vector<Tensor>& adj) const {
  auto wants = [&](std::size_t k) { return nodes_[node.inputs[k]].needs_grad; };
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[node.inputs[k]].value; };
  const Tensor& y = node.value;

  switch (node.kind) {
    case Primitive::leaf:
      return;

    case Primitive::matmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
      if (wants(0)) {
        Tensor da(a.shape());
        kernels::parallel::matmul_nt(g.data(), b.data(), da.data(), m, n, k);
        add_into(adj, node.inputs[0], std::move(da));
      }
      if (wants(1)) {
        Tensor db(b.shape());
        kernels::parallel::matmul_tn(a.data(), g.data(), db.data(), k, m, n);
        add_into(adj, node.inputs[1], std::move(db));
      }
      return;
    }

    case Primitive::add:
    case Primitive::mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const bool same = a.shape() == b.shape();
      const std::size_t n = a.cols();
      const bool is_add = node.kind == Primitive::add;
      if (wants(0)) {
        Tensor da(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i)
          da[i] = is_add ? g[i] : g[i] * (same ? b[i] : b[i % n]);
        add_into(adj, node.inputs[0], std::move(da));
      }
      if (wants(1)) {
        Tensor gb(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) gb[i] = is_add ? g[i] : g[i] * a[i];
        add_into(adj, node.inputs[1], same ? std::move(gb) : column_sums(gb, b.shape()));
      }
      return;
    }

    case Primitive::tanh: {
      Tensor dx(y.shape());
      for (std::size_t i = 0; i < y.size(); ++i) dx[i] = g[i] * (1.0 - y[i] * y[i]);
      add_into(adj, node.inputs[0], std::move(dx));
      return;
    }

    case Primitive::relu: {
      const Tensor& x = in(0);
      Tensor dx(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? g[i] : 0.0;
      add_into(adj, node.inputs[0], std::move(dx));
      return;
    }

    case Primitive::softmax_cross_entropy: {
      const Tensor& p = node.saved;
      const auto& targets = node.attrs.indices;
      std::size_t counted = 0;
      for (auto t : targets) counted += t >= 0 ? 1 : 0;
      const double w = g.item() / static_cast<double>(counted);
      Tensor dz(in(0).shape());
      const std::size_t v = p.cols();
      for (std::size_t r = 0; r < p.rows(); ++r) {
        if (targets[r] < 0) continue;
        for (std::size_t c = 0; c < v; ++c) dz.at(r, c) = w * p.at(r, c);
        dz.at(r, static_cast<std::size_t>(targets[r])) -= w;
      }
      add_into(adj, node.inputs[0], std::move(dz));
      return;
    }

    case Primitive::gather_rows: {
      const Tensor& table = in(0);
      Tensor dt(table.shape());
      const std::size_t d = table.cols();
      for (std::size_t r = 0; r < node.attrs.indices.size(); ++r) {
        auto dst = dt.row(static_cast<std::size_t>(node.attrs.indices[r]));
        auto src = g.row(r);
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
      add_into(adj, node.inputs[0], std::move(dt));
      return;
    }

    case Primitive::concat: {
      if (node.attrs.axis == 0) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
          const Tensor& part = in(k);
          if (wants(k)) {
            Tensor dp(part.shape());
            std::copy_n(g.data().begin() + static_cast<long>(off), part.size(), dp.data().begin());
            add_into(adj, node.inputs[k], std::move(dp));
          }
          off += part.size();
        }
        return;
      }
      std::size_t off = 0;
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const Tensor& part = in(k);
        if (wants(k)) {
          Tensor dp(part.shape());
          for (std::size_t r = 0; r < part.rows(); ++r)
            std::copy_n(g.row(r).begin() + static_cast<long>(off), part.cols(), dp.row(r).begin());
          add_into(adj, node.inputs[k], std::move(dp));
        }
        off += part.cols();
      }
      return;
    }

    case Primitive::slice: {
      const Tensor& a = in(0);
      Tensor da(a.shape());
      if (node.attrs.axis == 0) {
        std::copy(g.data().begin(), g.data().end(),
                  da.data().begin() + static_cast<long>(node.attrs.begin * a.cols()));
      } else {
        for (std::size_t r = 0; r < a.rows(); ++r)
          std::copy_n(g.row(r).begin(), g.cols(), da.row(r).begin() + static_cast<long>(node.attrs.begin));
      }
      add_into(adj, node.inputs[0], std::move(da));
      return;
    }

    case Primitive::sum: {
      const Tensor& a = in(0);
      Tensor da(a.shape());
      if (node.attrs.per_row) {
        for (std::size_t r = 0; r < a.rows(); ++r)
          for (double& v : da.row(r)) v = g[r];
      } else {
        da.fill(g.item());
      }
      add_into(adj, node.inputs[0], std::move(da));
      return;
    }

    case Primitive::mean: {
      const Tensor& a = in(0);
      add_into(adj, node.inputs[0], Tensor(a.shape(), g.item() / static_cast<double>(a.size())));
      return;
    }

    case Primitive::scale: {
      Tensor da(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * node.attrs.factor;
      add_into(adj, node.inputs[0], std::move(da));
      return;
    }

    case Primitive::transpose: {
      const Tensor& a = in(0);
      Tensor da(a.shape());
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) da.at(r, c) = g.at(c, r);
      add_into(adj, node.inputs[0], std::move(da));
      return;
    }

    case Primitive::causal_softmax: {
      const std::size_t n = y.rows();
      Tensor ds(y.shape());
      for (std::size_t r = 0; r < n; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c <= r; ++c) dot += y.at(r, c) * g.at(r, c);
        for (std::size_t c = 0; c <= r; ++c) ds.at(r, c) = y.at(r, c) * (g.at(r, c) - dot);
      }
      add_into(adj, node.inputs[0], std::move(ds));
      return;
    }

    case Primitive::layer_norm: {
      const Tensor& inv = node.saved;
      const std::size_t d = y.cols();
      const double dd = static_cast<double>(d);
      Tensor dx(y.shape());
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double gm = 0.0, gy = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          gm += g.at(r, c);
          gy += g.at(r, c) * y.at(r, c);
        }
        gm /= dd;
        gy /= dd;
        for (std::size_t c = 0; c < d; ++c) dx.at(r, c) = inv[r] * (g.at(r, c) - gm - y.at(r, c) * gy);
      }
      add_into(adj, node.inputs[0], std::move(dx));
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Gradients

Tensor Gradients::of(Var v) const {
  if (v.tape != tape_) throw std::invalid_argument("variable from a different tape");
  const Tensor& a = adjoints_.at(v.id);
  if (a.size() == 0) return Tensor(tape_->value(v).shape());
  return a;
}

const Tensor* Gradients::find(const Parameter& p) const {
  for (const auto& [param, id] : param_nodes_)
    if (param == &p) return adjoints_[id].size() ? &adjoints_[id] : nullptr;
  return nullptr;
}

Tensor Gradients::of(const Parameter& p) const {
  if (const Tensor* t = find(p)) return *t;
  return Tensor(p.value.shape());
}

// ---------------------------------------------------------------------------
// Wrappers

namespace {
Var apply1(Primitive k, Var a, const Attrs& attrs = {}) {
  const Var ops[] = {a};
  return a.tape->apply(k, ops, attrs);
}
Var apply2(Primitive k, Var a, Var b) {
  const Var ops[] = {a, b};
  return a.tape->apply(k, ops);
}
}  // namespace

Var matmul(Var a, Var b) { return apply2(Primitive::matmul, a, b); }
Var add(Var a, Var b) { return apply2(Primitive::add, a, b); }
Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }
Var mul(Var a, Var b) { return apply2(Primitive::mul, a, b); }
Var tanh(Var a) { return apply1(Primitive::tanh, a); }
Var relu(Var a) { return apply1(Primitive::relu, a); }

Var softmax_cross_entropy(Var logits, std::vector<std::int64_t> targets) {
  Attrs attrs;
  attrs.indices = std::move(targets);
  return apply1(Primitive::softmax_cross_entropy, logits, attrs);
}

Var gather_rows(Var table, std::vector<std::int64_t> ids) {
  Attrs attrs;
  attrs.indices = std::move(ids);
  return apply1(Primitive::gather_rows, table, attrs);
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: needs at least one operand");
  Attrs attrs;
  attrs.axis = axis;
  return parts[0].tape->apply(Primitive::concat, parts, attrs);
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  Attrs attrs;
  attrs.axis = axis;
  attrs.begin = begin;
  attrs.end = end;
  return apply1(Primitive::slice, a, attrs);
}

Var sum(Var a) { return apply1(Primitive::sum, a); }

Var row_sums(Var a) {
  Attrs attrs;
  attrs.per_row = true;
  return apply1(Primitive::sum, a, attrs);
}

Var mean(Var a) { return apply1(Primitive::mean, a); }

Var scale(Var a, double factor) {
  Attrs attrs;
  attrs.factor = factor;
  return apply1(Primitive::scale, a, attrs);
}

Var transpose(Var a) { return apply1(Primitive::transpose, a); }
Var causal_softmax(Var a) { return apply1(Primitive::causal_softmax, a); }
Var layer_norm(Var a) { return apply1(Primitive::layer_norm, a); }

// ---------------------------------------------------------------------------
// Gradient buffers and optimisation

GradientBuffer::GradientBuffer(const ParameterSet& params) {
  grads_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) grads_.emplace_back(params[i].value.shape());
}

void GradientBuffer::accumulate(const ParameterSet& params, const Gradients& grads, double weight) {
  if (params.size() != grads_.size()) throw std::invalid_argument("gradient buffer / parameter set mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor* g = grads.find(params[i]);
    if (!g) continue;
    auto dst = grads_[i].data();
    auto src = g->data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += weight * src[j];
  }
}

void GradientBuffer::accumulate(const GradientBuffer& other) {
  if (other.size() != size()) throw std::invalid_argument("gradient buffer size mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i].accumulate(other.grads_[i]);
}

void GradientBuffer::scale(double factor) {
  for (auto& g : grads_)
    for (double& v : g.data()) v *= factor;
}

double GradientBuffer::norm() const {
  double s = 0.0;
  for (const auto& g : grads_)
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

bool GradientBuffer::all_finite() const {
  return std::all_of(grads_.begin(), grads_.end(), [](const Tensor& t) { return t.all_finite(); });
}

bool GradientBuffer::all_zero() const {
  for (const auto& g : grads_)
    for (double v : g.data())
      if (v != 0.0) return false;
  return true;
}

double clip_global_norm(GradientBuffer& grads, double max_norm) {
  const double n = grads.norm();
  if (n > max_norm && n > 0.0) grads.scale(max_norm / n);
  return n;
}

Adam::Adam(ParameterSet& params, AdamConfig config) : params_(&params), config_(config) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params[i].value.shape());
    v_.emplace_back(params[i].value.shape());
  }
}

void Adam::step(const GradientBuffer& grads) {
  if (grads.size() != params_->size()) throw std::invalid_argument("Adam: gradient/parameter count mismatch");
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_->size(); ++i) {
    auto p = (*params_)[i].value.data();
    auto g = grads[i].data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      p[j] -= config_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference checks

namespace {

void check_eps(double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw std::invalid_argument("grad_check: eps must lie in (0, 1e-2]");
}

double scalar_of(Var y) {
  if (!y.value().is_scalar())
    throw ShapeError("grad_check: function must return a scalar, got shape " + to_string(y.value().shape()));
  return y.value().item();
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
}

}  // namespace

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps) {
  check_eps(eps);
  Tape tape;
  Var xv = tape.variable(x);
  Var y = f(tape, xv);
  scalar_of(y);
  const Tensor analytic = tape.backward(y).of(xv);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto eval = [&](double delta) {
      Tensor xp = x;
      xp[i] += delta;
      Tape t(false);
      return scalar_of(f(t, t.variable(xp)));
    };
    const double numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

double grad_check(const std::function<Var(Tape&)>& f, ParameterSet& params, double eps,
                  std::size_t coords_per_tensor, std::uint64_t seed) {
  check_eps(eps);
  Tape tape;
  Var y = f(tape);
  scalar_of(y);
  const Gradients grads = tape.backward(y);
  std::mt19937_64 pick(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    const Tensor analytic = grads.of(p);
    std::vector<std::size_t> coords;
    if (coords_per_tensor == 0 || coords_per_tensor >= p.value.size()) {
      coords.resize(p.value.size());
      for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
      std::uniform_int_distribution<std::size_t> u(0, p.value.size() - 1);
      for (std::size_t i = 0; i < coords_per_tensor; ++i) coords.push_back(u(pick));
    }
    for (std::size_t i : coords) {
      const double orig = p.value[i];
      auto eval = [&](double delta) {
        p.value[i] = orig + delta;
        Tape t(false);
        const double v = scalar_of(f(t));
        p.value[i] = orig;
        return v;
      };
      const double numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
      worst = std::max(worst, relative_error(analytic[i], numeric));
    }
  }
  return worst;
}

}  // namespace imagine::ad
