#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "imagine/autodiff.hpp"
#include "imagine/checkpoint.hpp"

using namespace imagine;
using namespace imagine::ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(gen);
  return t;
}

// Scalarises an op's output with fixed random weights so no coordinate's
// gradient is trivially constant.
Var weighted_total(Tape& tape, Var y, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  Var w = tape.constant(random_tensor(y.value().shape(), gen));
  return sum(mul(y, w));
}

}  // namespace

TEST_CASE("apply_primitive examples") {
  Tape tape;
  Var a = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var i = tape.constant(Tensor::identity(2));
  CHECK(matmul(a, i).value() == Tensor::matrix({{1, 2}, {3, 4}}));

  Var z = tape.constant(Tensor({2, 3}));
  CHECK(tanh(z).value() == Tensor({2, 3}));

  Var logits = tape.constant(Tensor({1, 4}, 0.37));
  CHECK(softmax_cross_entropy(logits, {2}).value().item() == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(tape.size() == 7);
}

TEST_CASE("shape mismatch names the offending shapes") {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3] [2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, tape.constant(Tensor({3, 2}))), ShapeError);
  CHECK_THROWS_AS(slice(a, 1, 2, 5), ShapeError);
  CHECK_THROWS_AS(gather_rows(a, {0, 2}), ShapeError);
}

TEST_CASE("backward examples") {
  SUBCASE("d(x^2)/dx at 3") {
    Tape tape;
    Var x = tape.variable(Tensor::vector({3.0}));
    auto g = tape.backward(sum(mul(x, x)));
    CHECK(g.of(x)[0] == 6.0);
  }
  SUBCASE("unreachable parameter gets a zero gradient") {
    ParameterSet ps;
    auto& p = ps.add("p", Tensor::vector({1.0, 2.0}));
    auto& q = ps.add("q", Tensor::vector({5.0}));
    Tape tape;
    tape.parameter(p);
    Var qv = tape.parameter(q);
    auto g = tape.backward(sum(scale(qv, 2.0)));
    CHECK(g.of(p) == Tensor::vector({0.0, 0.0}));
    CHECK(g.of(q) == Tensor::vector({2.0}));
    GradientBuffer buf(ps);
    buf.accumulate(ps, g);
    CHECK(buf[0] == Tensor::vector({0.0, 0.0}));
  }
  SUBCASE("non-scalar loss rejected") {
    Tape tape;
    Var x = tape.variable(Tensor::vector({1.0, 2.0}));
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
  }
  SUBCASE("recording off refuses backward") {
    Tape tape(false);
    Var x = tape.variable(Tensor::vector({1.0}));
    CHECK_THROWS_AS(tape.backward(sum(x)), std::logic_error);
  }
}

TEST_CASE("batch-mean gradient equals the average of per-example gradients") {
  std::mt19937_64 gen(5);
  ParameterSet ps;
  auto& w = ps.add("w", random_tensor({4, 3}, gen));
  auto& b = ps.add("b", random_tensor({3}, gen));
  const Tensor batch = random_tensor({6, 4}, gen);
  const std::vector<std::int64_t> targets = {0, 2, 1, 1, 0, 2};

  Tape tape;
  Var logits = add(matmul(tape.constant(batch), tape.parameter(w)), tape.parameter(b));
  auto g_batch = tape.backward(softmax_cross_entropy(logits, targets));

  GradientBuffer manual(ps);
  for (std::size_t r = 0; r < 6; ++r) {
    Tape t;
    Var x = slice(t.constant(batch), 0, r, r + 1);
    Var l = add(matmul(x, t.parameter(w)), t.parameter(b));
    manual.accumulate(ps, t.backward(softmax_cross_entropy(l, {targets[r]})), 1.0 / 6.0);
  }
  const Tensor gw = g_batch.of(w);
  const Tensor gb = g_batch.of(b);
  for (std::size_t i = 0; i < gw.size(); ++i) CHECK(gw[i] == doctest::Approx(manual[0][i]).epsilon(1e-12));
  for (std::size_t i = 0; i < gb.size(); ++i) CHECK(gb[i] == doctest::Approx(manual[1][i]).epsilon(1e-12));
}

TEST_CASE("grad_check examples") {
  std::mt19937_64 gen(8);
  SUBCASE("sum of squares") {
    const Tensor x = random_tensor({8}, gen);
    CHECK(grad_check([](Tape&, Var v) { return sum(mul(v, v)); }, x, 1e-5) < 1e-6);
  }
  SUBCASE("linear function is exact up to rounding") {
    const Tensor x = random_tensor({8}, gen);
    for (double eps : {1e-2, 1e-4, 1e-6}) {
      const double err = grad_check(
          [](Tape& t, Var v) {
            return sum(mul(v, t.constant(Tensor::vector({1, -2, 3, 0.5, 4, -1, 2, 7}))));
          },
          x, eps);
      CHECK(err < 1e-9);
    }
  }
  SUBCASE("cross-entropy through a two-layer tanh net") {
    const Tensor w1 = random_tensor({5, 7}, gen);
    const Tensor w2 = random_tensor({7, 4}, gen);
    const Tensor x = random_tensor({3, 5}, gen);
    auto f = [&](Tape& t, Var in) {
      Var h = tanh(matmul(in, t.constant(w1)));
      return softmax_cross_entropy(matmul(h, t.constant(w2)), {1, 3, 0});
    };
    CHECK(grad_check(f, x, 1e-5) < 1e-4);
  }
  SUBCASE("non-scalar function rejected") {
    CHECK_THROWS_AS(grad_check([](Tape&, Var v) { return v; }, Tensor::vector({1, 2}), 1e-5), ShapeError);
  }
  SUBCASE("eps outside (0, 1e-2] rejected") {
    CHECK_THROWS(grad_check([](Tape&, Var v) { return sum(v); }, Tensor::vector({1}), 0.5));
  }
}

TEST_CASE("every primitive passes grad_check on 20 random inputs") {
  using Fn = std::function<Var(Tape&, Var)>;
  struct Case {
    const char* name;
    Shape shape;
    Fn f;
  };
  std::mt19937_64 side(99);
  const Tensor other = random_tensor({4, 3}, side);
  const Tensor rhs = random_tensor({3, 5}, side);
  const Tensor bias = random_tensor({3}, side);
  const std::vector<Case> cases = {
      {"matmul-left", {4, 3}, [&](Tape& t, Var x) { return weighted_total(t, matmul(x, t.constant(rhs)), 1); }},
      {"matmul-right", {3, 5}, [&](Tape& t, Var x) { return weighted_total(t, matmul(t.constant(other), x), 2); }},
      {"add", {4, 3}, [&](Tape& t, Var x) { return weighted_total(t, add(x, t.constant(other)), 3); }},
      {"add-broadcast-row", {3}, [&](Tape& t, Var x) { return weighted_total(t, add(t.constant(other), x), 4); }},
      {"mul", {4, 3}, [&](Tape& t, Var x) { return weighted_total(t, mul(x, x), 5); }},
      {"mul-broadcast-row", {3}, [&](Tape& t, Var x) { return weighted_total(t, mul(t.constant(other), x), 6); }},
      {"tanh", {4, 3}, [&](Tape& t, Var x) { return weighted_total(t, tanh(x), 7); }},
      {"relu", {4, 3}, [&](Tape& t, Var x) { return weighted_total(t, relu(x), 8); }},
      {"softmax_cross_entropy", {4, 6}, [&](Tape&, Var x) { return softmax_cross_entropy(x, {5, -1, 0, 2}); }},
      {"gather_rows", {5, 3}, [&](Tape& t, Var x) { return weighted_total(t, gather_rows(x, {4, 0, 4, 2}), 9); }},
      {"concat-rows", {2, 3},
       [&](Tape& t, Var x) {
         const Var parts[] = {x, t.constant(other), x};
         return weighted_total(t, concat(parts, 0), 10);
       }},
      {"concat-cols", {4, 2},
       [&](Tape& t, Var x) {
         const Var parts[] = {t.constant(other), x};
         return weighted_total(t, concat(parts, 1), 11);
       }},
      {"slice-rows", {5, 3}, [&](Tape& t, Var x) { return weighted_total(t, slice(x, 0, 1, 4), 12); }},
      {"slice-cols", {4, 6}, [&](Tape& t, Var x) { return weighted_total(t, slice(x, 1, 2, 5), 13); }},
      {"sum", {4, 3}, [&](Tape&, Var x) { return sum(mul(x, x)); }},
      {"row_sums", {4, 3}, [&](Tape& t, Var x) { return weighted_total(t, row_sums(mul(x, x)), 14); }},
      {"mean", {4, 3}, [&](Tape&, Var x) { return mean(mul(x, x)); }},
      {"scale", {4, 3}, [&](Tape& t, Var x) { return weighted_total(t, scale(x, -2.5), 15); }},
      {"transpose", {4, 3}, [&](Tape& t, Var x) { return weighted_total(t, transpose(x), 16); }},
      {"causal_softmax", {5, 5}, [&](Tape& t, Var x) { return weighted_total(t, causal_softmax(x), 17); }},
      {"layer_norm", {4, 6}, [&](Tape& t, Var x) { return weighted_total(t, layer_norm(x), 18); }},
  };
  std::mt19937_64 gen(2024);
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) worst = std::max(worst, grad_check(c.f, random_tensor(c.shape, gen), 1e-5));
    INFO(c.name << " worst relative error " << worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("backward is deterministic and recording does not change values") {
  std::mt19937_64 gen(21);
  ParameterSet ps;
  auto& w = ps.add("w", random_tensor({6, 6}, gen));
  const Tensor x = random_tensor({4, 6}, gen);
  auto build = [&](Tape& t) {
    Var h = layer_norm(tanh(matmul(t.constant(x), t.parameter(w))));
    Var s = causal_softmax(matmul(h, transpose(h)));
    return mean(mul(s, s));
  };
  Tape rec;
  Var loss = build(rec);
  auto g1 = rec.backward(loss);
  auto g2 = rec.backward(loss);
  CHECK(g1.of(w) == g2.of(w));

  Tape plain(false);
  CHECK(build(plain).value() == loss.value());
}

TEST_CASE("parameter grad_check samples coordinates") {
  std::mt19937_64 gen(4);
  ParameterSet ps;
  ps.add("w1", random_tensor({3, 8}, gen));
  ps.add("w2", random_tensor({8, 2}, gen));
  const Tensor x = random_tensor({5, 3}, gen);
  auto f = [&](Tape& t) {
    Var h = tanh(matmul(t.constant(x), t.parameter(ps.get("w1"))));
    return softmax_cross_entropy(matmul(h, t.parameter(ps.get("w2"))), {0, 1, 1, 0, 1});
  };
  const ParameterSet before = ps.clone();
  CHECK(grad_check(f, ps, 1e-5) < 1e-6);
  CHECK(grad_check(f, ps, 1e-5, 4, 77) < 1e-6);
  CHECK(ps.values_equal(before));
}

TEST_CASE("global-norm clipping and Adam") {
  ParameterSet ps;
  ps.add("a", Tensor::vector({1.0, 1.0}));
  GradientBuffer g(ps);
  g[0] = Tensor::vector({3.0, 4.0});
  CHECK(clip_global_norm(g, 1.0) == 5.0);
  CHECK(g.norm() == doctest::Approx(1.0).epsilon(1e-15));
  GradientBuffer small(ps);
  small[0] = Tensor::vector({0.3, 0.4});
  clip_global_norm(small, 1.0);
  CHECK(small[0] == Tensor::vector({0.3, 0.4}));

  // First Adam step moves each coordinate by lr * sign(g) (up to eps).
  Adam opt(ps, {.lr = 0.1});
  opt.step(g);
  CHECK(ps[0].value[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(ps[0].value[1] == doctest::Approx(0.9).epsilon(1e-6));

  // Zero gradient with fresh moments leaves parameters untouched.
  ParameterSet ps2;
  ps2.add("b", Tensor::vector({2.0}));
  Adam opt2(ps2, {});
  opt2.step(GradientBuffer(ps2));
  CHECK(ps2[0].value[0] == 2.0);
}

TEST_CASE("checkpoint container round-trips and writes a manifest") {
  std::mt19937_64 gen(1);
  ParameterSet ps;
  ps.add("layer.w", random_tensor({3, 4}, gen));
  ps.add("layer.b", random_tensor({4}, gen));
  const auto dir = std::filesystem::temp_directory_path() / "imagine_ckpt_test";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir / "m.ckpt", ps);

  ParameterSet loaded;
  loaded.add("layer.w", Tensor({3, 4}));
  loaded.add("layer.b", Tensor({4}));
  load_checkpoint(dir / "m.ckpt", loaded);
  CHECK(loaded.values_equal(ps));

  std::ifstream manifest(dir / "m.ckpt.manifest");
  std::string line1, line2;
  std::getline(manifest, line1);
  std::getline(manifest, line2);
  CHECK(line1 == "layer.w 3x4");
  CHECK(line2 == "layer.b 4");

  ParameterSet wrong;
  wrong.add("layer.w", Tensor({4, 3}));
  wrong.add("layer.b", Tensor({4}));
  CHECK_THROWS(load_checkpoint(dir / "m.ckpt", wrong));
  std::filesystem::remove_all(dir);
}
