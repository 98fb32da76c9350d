#include <doctest.h>

#include <functional>
#include <random>

#include "comofusion/autograd.hpp"
#include "comofusion/errors.hpp"

using namespace comofusion;
using ag::Var;

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(s);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

using Fn = std::function<Var(const std::vector<Var>&)>;

double dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.numel(); ++k) acc += a[k] * b[k];
  return acc;
}

// Largest relative error between backward() and central differences of
// <r, f(inputs)> over every input element.
double gradient_error(const Fn& f, std::vector<Tensor> values, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Var> vars;
  for (auto& v : values) vars.emplace_back(v, true);
  const Var out = f(vars);
  const Tensor r = random_tensor(out.shape(), rng);
  ag::backward(out, r);

  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t a = 0; a < values.size(); ++a) {
    for (std::size_t k = 0; k < values[a].numel(); ++k) {
      auto eval = [&](double delta) {
        std::vector<Var> probe;
        for (std::size_t b = 0; b < values.size(); ++b) {
          Tensor t = values[b];
          if (b == a) t[k] += delta;
          probe.emplace_back(t, false);
        }
        return dot(f(probe).value(), r);
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double analytic = vars[a].has_grad() ? vars[a].grad()[k] : 0.0;
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-3});
      worst = std::max(worst, std::abs(numeric - analytic) / scale);
    }
  }
  return worst;
}

}  // namespace

TEST_SUITE("autograd") {

TEST_CASE("conv2d gradients") {
  std::mt19937_64 rng(1);
  for (int stride : {1, 2}) {
    const Tensor x = random_tensor({2, 3, 6, 6}, rng);
    const Tensor w = random_tensor({4, 3, 3, 3}, rng, 0.3);
    const Tensor b = random_tensor({1, 4, 1, 1}, rng);
    const double err = gradient_error(
        [stride](const std::vector<Var>& v) { return ag::conv2d(v[0], v[1], v[2], stride, 1); },
        {x, w, b}, 2);
    CHECK(err < 1e-5);
  }
  const Tensor x = random_tensor({2, 3, 4, 5}, rng);
  const Tensor w = random_tensor({2, 3, 1, 1}, rng);
  const Tensor b = random_tensor({1, 2, 1, 1}, rng);
  CHECK(gradient_error([](const std::vector<Var>& v) { return ag::conv2d(v[0], v[1], v[2], 1, 0); },
                       {x, w, b}, 3) < 1e-5);
}

TEST_CASE("conv2d forward matches direct convolution") {
  std::mt19937_64 rng(8);
  // Wide enough that the row-panel loop runs more than once.
  const Tensor x = random_tensor({1, 2, 40, 33}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor b = random_tensor({1, 3, 1, 1}, rng);
  for (int stride : {1, 2}) {
    const Tensor y = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b), stride, 1).value();
    const int ho = (40 + 2 - 3) / stride + 1, wo = (33 + 2 - 3) / stride + 1;
    REQUIRE(y.shape() == Shape{1, 3, ho, wo});
    double worst = 0.0;
    for (int co = 0; co < 3; ++co)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = b[co];
          for (int ci = 0; ci < 2; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * stride - 1 + ky, ix = ox * stride - 1 + kx;
                if (iy < 0 || iy >= 40 || ix < 0 || ix >= 33) continue;
                acc += w.at(co, ci, ky, kx) * x.at(0, ci, iy, ix);
              }
          worst = std::max(worst, std::abs(acc - y.at(0, co, oy, ox)));
        }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("conv2d gradient across row panels") {
  std::mt19937_64 rng(12);
  const Tensor x = random_tensor({1, 1, 20, 30}, rng);
  const Tensor w = random_tensor({2, 1, 3, 3}, rng);
  const Tensor b = random_tensor({1, 2, 1, 1}, rng);
  CHECK(gradient_error([](const std::vector<Var>& v) { return ag::conv2d(v[0], v[1], v[2], 1, 1); },
                       {x, w, b}, 13) < 1e-5);
}

TEST_CASE("elementwise and structural ops") {
  std::mt19937_64 rng(4);
  const Tensor a = random_tensor({2, 3, 4, 4}, rng);
  const Tensor b = random_tensor({2, 3, 4, 4}, rng);
  const Tensor c = random_tensor({2, 2, 4, 4}, rng);

  CHECK(gradient_error([](const std::vector<Var>& v) { return ag::add(v[0], v[1]); }, {a, b}, 1) < 1e-5);
  CHECK(gradient_error([](const std::vector<Var>& v) { return ag::mul(v[0], v[1]); }, {a, b}, 1) < 1e-5);
  CHECK(gradient_error([](const std::vector<Var>& v) { return ag::axpby(0.3, v[0], -1.7, v[1]); }, {a, b}, 1) < 1e-5);
  CHECK(gradient_error([](const std::vector<Var>& v) { return ag::silu(v[0]); }, {a}, 1) < 1e-5);
  CHECK(gradient_error([](const std::vector<Var>& v) { return ag::sigmoid(v[0]); }, {a}, 1) < 1e-5);
  CHECK(gradient_error([](const std::vector<Var>& v) { return ag::tanh(v[0]); }, {a}, 1) < 1e-5);
  CHECK(gradient_error([](const std::vector<Var>& v) { return ag::relu(v[0]); }, {a}, 1) < 1e-5);
  CHECK(gradient_error([](const std::vector<Var>& v) { return ag::concat_channels(v[0], v[1]); }, {a, c}, 1) < 1e-5);
  CHECK(gradient_error([](const std::vector<Var>& v) { return ag::upsample_nearest2x(v[0]); }, {a}, 1) < 1e-5);
  CHECK(gradient_error([](const std::vector<Var>& v) { return ag::global_avg_pool(v[0]); }, {a}, 1) < 1e-5);
}

TEST_CASE("broadcasting ops") {
  std::mt19937_64 rng(6);
  const Tensor u = random_tensor({2, 3, 4, 5}, rng);
  const Tensor s = random_tensor({2, 3, 1, 1}, rng);
  const Tensor q = random_tensor({2, 1, 4, 5}, rng);
  const Tensor ss = random_tensor({2, 6, 1, 1}, rng);
  CHECK(gradient_error([](const std::vector<Var>& v) { return ag::scale_channels(v[0], v[1]); }, {u, s}, 2) < 1e-5);
  CHECK(gradient_error([](const std::vector<Var>& v) { return ag::scale_spatial(v[0], v[1]); }, {u, q}, 2) < 1e-5);
  CHECK(gradient_error([](const std::vector<Var>& v) { return ag::modulate(v[0], v[1]); }, {u, ss}, 2) < 1e-5);

  const Tensor x = random_tensor({3, 5, 1, 1}, rng);
  const Tensor w = random_tensor({4, 5, 1, 1}, rng);
  const Tensor b = random_tensor({1, 4, 1, 1}, rng);
  CHECK(gradient_error([](const std::vector<Var>& v) { return ag::linear(v[0], v[1], v[2]); }, {x, w, b}, 2) < 1e-5);
}

TEST_CASE("shared subexpressions accumulate gradients") {
  std::mt19937_64 rng(7);
  const Tensor a = random_tensor({1, 2, 3, 3}, rng);
  CHECK(gradient_error(
            [](const std::vector<Var>& v) {
              const Var t = ag::tanh(v[0]);
              return ag::mul(t, ag::add(t, v[0]));
            },
            {a}, 3) < 1e-5);
}

TEST_CASE("no-grad guard records nothing") {
  Var x(Tensor({1, 1, 2, 2}, 1.0), true);
  Var y;
  {
    ag::NoGradGuard guard;
    CHECK_FALSE(ag::grad_enabled());
    y = ag::mul(x, x);
  }
  CHECK(ag::grad_enabled());
  CHECK_FALSE(y.requires_grad());
  ag::backward(y, Tensor(y.shape(), 1.0));
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("shape errors") {
  Var a(Tensor({1, 2, 3, 3}), true);
  Var b(Tensor({1, 2, 3, 4}), true);
  CHECK_THROWS_AS(ag::add(a, b), ValidationError);
  CHECK_THROWS_AS(ag::conv2d(a, Var(Tensor({4, 3, 3, 3})), Var(Tensor({1, 4, 1, 1})), 1, 1),
                  ValidationError);
  CHECK_THROWS_AS(ag::backward(a, Tensor({1, 1, 1, 1})), ValidationError);
}

}  // TEST_SUITE
