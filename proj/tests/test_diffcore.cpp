#include <doctest.h>

#include <cmath>
#include <random>

#include "cftraj/diffcore.hpp"

using namespace cftraj::diff;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.5, double hi = 1.5) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::zeros(r, c);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Reduces any tensor to a scalar through fixed random weights so every entry matters.
Var project(const Var& y) {
  Tape& tape = *y.tape();
  Tensor w = Tensor::zeros(y.value().rows(), y.value().cols());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
  return sum(mul(reshape(y, w.rows(), w.cols()), tape.constant(w)));
}

}  // namespace

TEST_CASE("forward values of elementwise ops") {
  Tape t;
  const Var a = t.leaf(Tensor::matrix(1, 3, {-1.0, 0.0, 2.0}));
  CHECK(relu(a).value().data() == std::vector<double>{0.0, 0.0, 2.0});
  CHECK(sigmoid(a).value()[1] == doctest::Approx(0.5));
  CHECK(softplus(a).value()[2] == doctest::Approx(std::log1p(std::exp(2.0))));
  CHECK(tanh(a).value()[0] == doctest::Approx(std::tanh(-1.0)));
  CHECK(sum(square(a)).value().item() == doctest::Approx(5.0));
  CHECK(mean(a).value().item() == doctest::Approx(1.0 / 3.0));
  const Tensor sm = softmax(a).value();
  double total = 0.0;
  for (double v : sm.data()) total += v;
  CHECK(total == doctest::Approx(1.0));
  CHECK(log_softmax(a).value()[2] == doctest::Approx(std::log(sm[2])));
  // Large logits must not overflow.
  const Var big = t.leaf(Tensor::matrix(1, 2, {1000.0, 999.0}));
  CHECK(softplus(big).value()[0] == doctest::Approx(1000.0));
  CHECK(log_softmax(big).value()[1] == doctest::Approx(-1.0 - std::log1p(std::exp(-1.0))));
}

TEST_CASE("matmul, transpose and reshape match hand computation") {
  Tape t;
  const Var a = t.leaf(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  const Var b = t.leaf(Tensor::matrix(3, 2, {7, 8, 9, 10, 11, 12}));
  CHECK(matmul(a, b).value().data() == std::vector<double>{58, 64, 139, 154});
  CHECK(transpose(a).value().data() == std::vector<double>{1, 4, 2, 5, 3, 6});
  CHECK(reshape(a, 3, 2).value().at(2, 1) == 6.0);
  CHECK(slice_cols(a, 1, 3).value().data() == std::vector<double>{2, 3, 5, 6});
  CHECK(slice_rows(a, 1, 2).value().data() == std::vector<double>{4, 5, 6});
  CHECK(concat_cols({a, a}).value().shape() == std::vector<std::size_t>{2, 6});
  CHECK(concat_rows({a, a}).value().at(3, 0) == 4.0);
  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(reshape(a, 4, 2), std::invalid_argument);
}

TEST_CASE("backward of a hand-derived expression") {
  // f(x, y) = sum(x * y) + sum(exp(x)); df/dx = y + exp(x), df/dy = x.
  Tape t;
  const Var x = t.leaf(Tensor::matrix(1, 2, {0.5, -1.0}));
  const Var y = t.leaf(Tensor::matrix(1, 2, {2.0, 3.0}));
  const Gradients g = t.backward(add(sum(mul(x, y)), sum(exp(x))));
  CHECK(g.of(x)[0] == doctest::Approx(2.0 + std::exp(0.5)));
  CHECK(g.of(x)[1] == doctest::Approx(3.0 + std::exp(-1.0)));
  CHECK(g.of(y)[0] == doctest::Approx(0.5));
  const Var c = t.constant(Tensor::scalar(1.0));
  CHECK(g.of(c)[0] == 0.0);
}

TEST_CASE("a value reused in several places accumulates its gradient") {
  Tape t;
  const Var x = t.leaf(Tensor::scalar(3.0));
  const Var y = add(mul(x, x), mul(x, t.constant(Tensor::scalar(2.0))));  // x^2 + 2x
  CHECK(t.backward(y).of(x).item() == doctest::Approx(8.0));
}

TEST_CASE("gradient check of every op") {
  std::mt19937_64 rng(31);
  const Tensor x = random_tensor(rng, 3, 4);
  const Tensor pos = random_tensor(rng, 3, 4, 0.3, 2.0);
  const Tensor other = random_tensor(rng, 3, 4);
  const Tensor mat = random_tensor(rng, 4, 2);
  const Tensor bias = random_tensor(rng, 1, 4);
  auto c = [](const Var& v, const Tensor& t) { return v.tape()->constant(t); };

  CHECK(grad_check([&](const Var& v) { return project(matmul(v, c(v, mat))); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(matmul(c(v, x), transpose(v))); },
                   random_tensor(rng, 2, 4)) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(add(v, c(v, other))); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(sub(c(v, other), v)); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(mul(v, c(v, other))); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(div(c(v, other), v)); }, pos) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(div(v, c(v, pos))); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(add_bias(v, c(v, bias))); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(add_bias(c(v, x), v)); }, bias) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(scale(v, -2.5)); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(add_scalar(v, 0.7)); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(exp(v)); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(log(v)); }, pos) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(tanh(v)); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(sigmoid(v)); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(relu(v)); }, pos) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(relu(scale(v, -1.0))); }, pos) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(softplus(v)); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(square(v)); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(softmax(v)); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(log_softmax(v)); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return sum(mul(v, v)); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return mean(exp(v)); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(concat_cols({v, square(v)})); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(concat_rows({tanh(v), v})); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(slice_cols(v, 1, 3)); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(slice_rows(v, 1, 3)); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(transpose(v)); }, x) < 1e-4);
  CHECK(grad_check([&](const Var& v) { return project(reshape(v, 2, 6)); }, x) < 1e-4);
}

TEST_CASE("gradient check of a small composite network") {
  std::mt19937_64 rng(37);
  const Tensor w1 = random_tensor(rng, 4, 5), w2 = random_tensor(rng, 5, 3), in = random_tensor(rng, 2, 4);
  auto net = [&](const Var& w) {
    Tape& t = *w.tape();
    const Var h = tanh(matmul(t.constant(in), w));
    return mean(log_softmax(matmul(h, t.constant(w2))));
  };
  CHECK(grad_check(net, w1) < 1e-4);
}

TEST_CASE("parameter store serialisation and binding") {
  std::mt19937_64 rng(1);
  ParamStore p;
  p.add("W", xavier(3, 4, rng));
  p.add("b", Tensor::zeros(1, 4));
  CHECK(p.index_of("b") == 1);
  CHECK_THROWS(p.index_of("missing"));
  const ParamStore back = ParamStore::from_json(p.to_json());
  CHECK(back == p);
  const double bound = std::sqrt(6.0 / 7.0);
  for (double v : p.get("W").data()) CHECK(std::abs(v) <= bound);
  Tape t;
  const auto leaves = p.bind(t);
  const auto consts = p.bind_constant(t);
  CHECK(t.requires_grad(leaves[0].id()));
  CHECK_FALSE(t.requires_grad(consts[0].id()));
}

TEST_CASE("Adam minimises a quadratic and respects the gradient clip") {
  ParamStore p;
  p.add("x", Tensor::matrix(1, 2, {5.0, -3.0}));
  Adam opt(p, {.lr = 0.05});
  for (int it = 0; it < 2000; ++it) {
    Tape t;
    const auto v = p.bind(t);
    const Var target = t.constant(Tensor::matrix(1, 2, {1.0, 2.0}));
    const Gradients g = t.backward(sum(square(sub(v[0], target))));
    opt.step(p, {g.of(v[0])});
  }
  CHECK(p.get("x")[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(p.get("x")[1] == doctest::Approx(2.0).epsilon(1e-3));
  CHECK(opt.steps() == 2000);

  // First Adam step has magnitude lr whatever the gradient scale, clipped or not.
  ParamStore q;
  q.add("x", Tensor::scalar(0.0));
  Adam clipped(q, {.lr = 0.1, .clip_norm = 1e-3});
  clipped.step(q, {Tensor::scalar(1e9)});
  CHECK(std::isfinite(q.get("x").item()));
  CHECK(q.get("x").item() == doctest::Approx(-0.1).epsilon(1e-6));
}
