#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "gpal/adam.hpp"
#include "gpal/grad_check.hpp"
#include "gpal/ops.hpp"
#include "gpal/tensor.hpp"

using namespace gpal::diff;

namespace {

Tensor randn(Shape s, std::uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  return Tensor::randn(std::move(s), rng, stddev);
}

}  // namespace

TEST_CASE("softmax of a constant row is uniform") {
  Tensor x = Tensor::from_data({3}, {0.0, 0.0, 0.0});
  Tensor y = softmax(x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("matmul with the identity is the identity map") {
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  Tensor a = randn({3, 3}, 7);
  Tensor out = matmul(eye, a);
  for (std::size_t i = 0; i < 9; ++i) CHECK(out[i] == doctest::Approx(a[i]).epsilon(1e-15));
}

TEST_CASE("layer_norm matches a scalar-loop recomputation") {
  // Oracle: direct mean/variance arithmetic on the row [1,2,3].
  const double eps = 1e-5;
  const double mu = 2.0;
  const double var = ((1 - mu) * (1 - mu) + (2 - mu) * (2 - mu) + (3 - mu) * (3 - mu)) / 3.0;
  const double is = 1.0 / std::sqrt(var + eps);

  Tensor x = Tensor::from_data({1, 3}, {1.0, 2.0, 3.0});
  Tensor gain = Tensor::full({3}, 1.0);
  Tensor bias = Tensor::zeros({3});
  Tensor y = layer_norm(x, gain, bias, eps);
  CHECK(y[0] == doctest::Approx((1.0 - mu) * is).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(y[2] == doctest::Approx((3.0 - mu) * is).epsilon(1e-12));
}

TEST_CASE("backward of sum is all ones; squared norm gives 2x") {
  Tensor x = Tensor::from_data({2}, {1.0, -2.0});
  x.set_requires_grad(true);
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = sum(x);
    Tensor g = tape.backward(loss).at(x);
    CHECK(g[0] == 1.0);
    CHECK(g[1] == 1.0);
  }
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = sum(mul(x, x));
    Tensor g = tape.backward(loss).at(x);
    CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(g[1] == doctest::Approx(-4.0).epsilon(1e-14));
  }
}

TEST_CASE("backward errors: non-scalar loss, double backward, disconnected loss") {
  Tensor x = randn({4}, 3);
  x.set_requires_grad(true);
  Tape tape;
  Tape::Scope scope(tape);
  Tensor y = mul(x, x);
  CHECK_THROWS(tape.backward(y));  // non-scalar (the tape stays unconsumed on this error)
  Tensor loss = sum(y);
  tape.backward(loss);
  CHECK_THROWS(tape.backward(loss));  // consumed

  Tape other;
  Tape::Scope scope2(other);
  Tensor z = Tensor::scalar(1.0);
  CHECK_THROWS(other.backward(z));  // never recorded
}

TEST_CASE("gradients of leaves disconnected from the loss are zero") {
  Tensor x = randn({3}, 11);
  Tensor y = randn({3}, 12);
  x.set_requires_grad(true);
  y.set_requires_grad(true);
  Tape tape;
  Tape::Scope scope(tape);
  Tensor loss = sum(mul(x, x));
  mul(y, y);  // recorded but unused by the loss
  Gradients g = tape.backward(loss);
  Tensor gy = g.at(y);
  for (std::size_t i = 0; i < 3; ++i) CHECK(gy[i] == 0.0);
}

TEST_CASE("shape errors are reported with op names") {
  Tensor a = randn({2, 3}, 1);
  Tensor b = randn({4, 2}, 2);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
  Tensor table = randn({5, 2}, 3);
  std::vector<std::int32_t> bad = {5};
  CHECK_THROWS_AS(embedding_gather(table, bad), std::invalid_argument);
}

TEST_CASE("grad_check: x dot x at x=3") {
  Tensor p = Tensor::from_data({1}, {3.0});
  auto f = [](const Tensor& x) { return sum(mul(x, x)); };
  GradCheckReport r = grad_check(f, p, 1e-6, 1e-9);
  CHECK(r.passed);
  CHECK(r.analytic_at_worst == doctest::Approx(6.0).epsilon(1e-9));
}

TEST_CASE("grad_check: softmax + cross entropy composite") {
  Tensor logits = randn({4, 7}, 21);
  std::vector<std::int32_t> targets = {1, 0, 6, 3};
  auto f = [&](const Tensor& x) { return cross_entropy_from_logits(x, targets); };
  GradCheckReport r = grad_check(f, logits, 1e-6, 1e-7);
  CHECK(r.passed);
}

TEST_CASE("every primitive passes finite differences") {
  auto check = [](const char* what, const std::function<Tensor(const Tensor&)>& f, const Tensor& p,
                  double tol = 1e-6) {
    GradCheckReport r = grad_check(f, p, 1e-6, tol);
    INFO(what, ": max rel err ", r.max_rel_error, " at ", r.worst_index);
    CHECK(r.passed);
  };

  Tensor p23 = randn({2, 3}, 100, 0.8);
  Tensor other = randn({2, 3}, 101, 0.7);
  Tensor suffix = randn({3}, 102, 0.9);
  check("add", [&](const Tensor& x) { return sum(add(x, other)); }, p23);
  check("add suffix-broadcast", [&](const Tensor& x) { return sum(mul(add(x, suffix), other)); }, p23);
  check("sub", [&](const Tensor& x) { return sum(sub(x, other)); }, p23);
  check("mul", [&](const Tensor& x) { return sum(mul(x, other)); }, p23);
  check("div", [&](const Tensor& x) { return sum(div(other, add(mul(x, x), Tensor::scalar(1.0)))); }, p23);
  check("scale", [&](const Tensor& x) { return sum(scale(x, -2.5)); }, p23);
  check("sqrt", [&](const Tensor& x) { return sum(gpal::diff::sqrt(add(mul(x, x), Tensor::scalar(0.5)))); }, p23);

  Tensor m34 = randn({3, 4}, 103, 0.5);
  check("matmul lhs", [&](const Tensor& x) { return sum(matmul(x, m34)); }, randn({2, 3}, 104));
  check("matmul rhs", [&](const Tensor& x) { return sum(matmul(randn({2, 3}, 105), x)); }, m34);
  check("matmul batched",
        [&](const Tensor& x) { return sum(matmul(x, transpose(x, 1, 2))); }, randn({2, 3, 4}, 106, 0.5));

  check("transpose", [&](const Tensor& x) { return sum(mul(transpose(x, 0, 1), randn({3, 2}, 107))); }, p23);
  check("reshape", [&](const Tensor& x) { return sum(mul(reshape(x, {6}), randn({6}, 108))); }, p23);
  check("slice", [&](const Tensor& x) { return sum(mul(slice(x, 1, 1, 2), randn({2, 2}, 109))); }, p23);
  check("concat", [&](const Tensor& x) {
    std::vector<Tensor> parts = {x, scale(x, 2.0)};
    return sum(mul(concat(parts, 0), randn({4, 3}, 110)));
  }, p23);

  std::vector<std::int32_t> ids = {0, 3, 3, 1};
  check("embedding_gather",
        [&](const Tensor& x) { return sum(mul(embedding_gather(x, ids), randn({4, 3}, 111))); },
        randn({5, 3}, 112));

  check("softmax", [&](const Tensor& x) { return sum(mul(softmax(x), randn({2, 3}, 113))); }, p23);
  check("log_softmax", [&](const Tensor& x) { return sum(mul(log_softmax(x), randn({2, 3}, 114))); }, p23);

  Tensor gain = randn({3}, 115, 0.5);
  Tensor bias = randn({3}, 116, 0.5);
  check("layer_norm x", [&](const Tensor& x) { return sum(mul(layer_norm(x, gain, bias), other)); }, p23,
        1e-5);
  check("layer_norm gain", [&](const Tensor& g) { return sum(mul(layer_norm(p23, g, bias), other)); },
        gain);
  check("layer_norm bias", [&](const Tensor& b) { return sum(mul(layer_norm(p23, gain, b), other)); },
        bias);

  check("relu", [&](const Tensor& x) { return sum(relu(x)); }, randn({2, 3}, 117, 2.0));
  check("gelu", [&](const Tensor& x) { return sum(gelu(x)); }, randn({2, 3}, 118, 2.0));

  Tensor mask = Tensor::from_data({2, 3}, {0, 1, 0, 0, 0, 1});
  check("mask_fill", [&](const Tensor& x) { return sum(mul(mask_fill(x, mask, -1e9), mask_fill(other, mask, 0.0))); }, p23);

  check("sum", [&](const Tensor& x) { return sum(x); }, p23);
  check("mean", [&](const Tensor& x) { return mean(x); }, p23);

  std::vector<std::int32_t> targets = {2, 0};
  check("cross_entropy", [&](const Tensor& x) { return cross_entropy_from_logits(x, targets); }, p23,
        1e-7);
  std::vector<std::int32_t> targets_ign = {2, 9};
  check("cross_entropy ignore",
        [&](const Tensor& x) { return cross_entropy_from_logits(x, targets_ign, 9); }, p23, 1e-7);
}

TEST_CASE("randomly composed graphs pass finite differences (100 seeded cases)") {
  // Composes 3-5 random layers of mixed primitives over a [2,4] input.
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed * 7919 + 13);
    Tensor w1 = Tensor::randn({4, 4}, rng, 0.6);
    Tensor w2 = Tensor::randn({4, 4}, rng, 0.6);
    Tensor gain = Tensor::full({4}, 1.0);
    Tensor bias = Tensor::zeros({4});
    Tensor mix = Tensor::randn({2, 4}, rng, 0.8);
    const int kind = static_cast<int>(seed % 5);

    auto f = [&](const Tensor& x) -> Tensor {
      Tensor h = matmul(x, w1);
      switch (kind) {
        case 0: h = gelu(h); break;
        case 1: h = relu(h); break;
        case 2: h = softmax(h); break;
        case 3: h = layer_norm(h, gain, bias); break;
        default: h = mul(h, h); break;
      }
      h = add(matmul(h, w2), mix);
      h = sub(h, mean(h));
      return sum(mul(softmax(h), h));
    };

    Tensor point = Tensor::randn({2, 4}, rng, 0.9);
    GradCheckReport r = grad_check(f, point, 1e-6, 1e-5);
    INFO("seed ", seed, " kind ", kind, " max rel err ", r.max_rel_error);
    CHECK(r.passed);
  }
}

TEST_CASE("softmax rows sum to one; log_softmax equals log of softmax") {
  Tensor x = randn({5, 9}, 55, 3.0);
  Tensor s = softmax(x);
  Tensor ls = log_softmax(x);
  for (std::size_t r = 0; r < 5; ++r) {
    double rowsum = 0.0;
    for (std::size_t i = 0; i < 9; ++i) rowsum += s[r * 9 + i];
    CHECK(std::fabs(rowsum - 1.0) <= 1e-12);
    for (std::size_t i = 0; i < 9; ++i) {
      CHECK(std::fabs(ls[r * 9 + i] - std::log(s[r * 9 + i])) <= 1e-9);
    }
  }
}

TEST_CASE("gradient linearity: grad(a*f + b*g) = a*grad f + b*grad g") {
  Tensor point = randn({3, 3}, 77);
  Tensor w = randn({3, 3}, 78);
  const double a = 1.7, b = -0.3;

  auto grad_of = [&](const std::function<Tensor(const Tensor&)>& fn) {
    Tensor x = point.clone();
    x.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    return tape.backward(fn(x)).at(x);
  };

  auto f = [&](const Tensor& x) { return sum(mul(matmul(x, w), x)); };
  auto g = [&](const Tensor& x) { return mean(gelu(x)); };
  auto combined = [&](const Tensor& x) { return add(scale(f(x), a), scale(g(x), b)); };

  Tensor gf = grad_of(f), gg = grad_of(g), gc = grad_of(combined);
  for (std::size_t i = 0; i < point.numel(); ++i) {
    CHECK(std::fabs(gc[i] - (a * gf[i] + b * gg[i])) <= 1e-10);
  }
}

TEST_CASE("determinism: identical tape and inputs give bit-identical results") {
  auto run = [] {
    std::mt19937_64 rng(5);
    Tensor x = Tensor::randn({4, 6}, rng, 1.0);
    x.set_requires_grad(true);
    Tensor w = Tensor::randn({6, 6}, rng, 0.5);
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = mean(gelu(matmul(softmax(x), w)));
    Tensor g = tape.backward(loss).at(x);
    return std::make_pair(loss.item(), std::vector<double>(g.data(), g.data() + g.numel()));
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(std::memcmp(&l1, &l2, sizeof(double)) == 0);
  CHECK(g1.size() == g2.size());
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("adam: first step moves by about the step size against the sign of the gradient") {
  Tensor p = Tensor::scalar(1.0);
  p.set_requires_grad(true);
  std::vector<Tensor> params = {p};
  AdamState state;
  state.init(params);

  Tape tape;
  Tape::Scope scope(tape);
  Tensor loss = scale(sum(p), 3.0);  // constant gradient 3
  Gradients grads = tape.backward(loss);
  adam_step(params, grads, state, 0.01);
  CHECK(state.t == 1);
  // First-step bias correction cancels: p - lr * g / (sqrt(g^2) + eps)
  CHECK(p.item() == doctest::Approx(1.0 - 0.01 * 3.0 / (3.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam: zero gradient leaves the parameter unchanged and still counts the step") {
  Tensor p = Tensor::scalar(2.5);
  p.set_requires_grad(true);
  Tensor q = Tensor::scalar(1.0);
  q.set_requires_grad(true);
  std::vector<Tensor> params = {p, q};
  AdamState state;
  state.init(params);

  Tape tape;
  Tape::Scope scope(tape);
  Tensor loss = sum(mul(q, q));  // p disconnected
  Gradients grads = tape.backward(loss);
  adam_step(params, grads, state, 0.1);
  CHECK(p.item() == 2.5);
  CHECK(state.t == 1);
}

TEST_CASE("adam: two steps match a hand-rolled scalar trace") {
  // Oracle: explicit scalar Adam with g=1 then g=-1.
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0, v = 0, x = 0.7;
  double gs[2] = {1.0, -1.0};
  for (int t = 1; t <= 2; ++t) {
    const double g = gs[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    x -= lr * mhat / (std::sqrt(vhat) + eps);
  }

  Tensor p = Tensor::scalar(0.7);
  p.set_requires_grad(true);
  std::vector<Tensor> params = {p};
  AdamState state;
  state.init(params);
  for (int t = 0; t < 2; ++t) {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = scale(sum(p), gs[t]);
    Gradients grads = tape.backward(loss);
    adam_step(params, grads, state, lr);
  }
  CHECK(p.item() == doctest::Approx(x).epsilon(1e-14));
}

TEST_CASE("adam: non-finite gradient names the parameter") {
  Tensor p = Tensor::scalar(1.0);
  p.set_requires_grad(true);
  std::vector<Tensor> params = {p};
  AdamState state;
  state.init(params);

  Tape tape;
  Tape::Scope scope(tape);
  Tensor loss = div(sum(p), Tensor::scalar(0.0));  // inf
  Gradients grads = tape.backward(loss);
  CHECK_THROWS_WITH_AS(adam_step(params, grads, state, 0.01, {"embed"}),
                       doctest::Contains("embed"), std::runtime_error);
}

TEST_CASE("ops without an active tape are pure evaluation") {
  Tensor x = randn({2, 2}, 9);
  x.set_requires_grad(true);
  Tensor y = mul(x, x);
  CHECK(y.is_leaf());  // nothing recorded
}
