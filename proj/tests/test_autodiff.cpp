#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hsnerf/nn.hpp"
#include "hsnerf/rng.hpp"

using namespace hsnerf;
using nn::ParamStore;

namespace {

MatD random_mat(int r, int c, uint64_t seed, double scale = 1.0) {
  rng::Stream rnd(seed);
  MatD m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * (2 * rnd.next_double() - 1);
  return m;
}

VecD random_vec(int n, uint64_t seed, double scale = 1.0) {
  rng::Stream rnd(seed);
  VecD v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * (2 * rnd.next_double() - 1);
  return v;
}

}  // namespace

TEST_CASE("affine_forward identity and hand arithmetic") {
  nn::AffineCache<double> cache;
  VecD x(2);
  x << 1, 2;
  MatD W = MatD::Identity(2, 2);
  VecD b = VecD::Zero(2);
  VecD y = nn::affine_forward(x, W, b, cache);
  CHECK(y(0) == doctest::Approx(1));
  CHECK(y(1) == doctest::Approx(2));

  VecD x2(2);
  x2 << 1, 1;
  MatD W2(2, 2);
  W2 << 1, 1, 0, 1;
  VecD b2(2);
  b2 << 1, 0;
  VecD y2 = nn::affine_forward(x2, W2, b2, cache);
  CHECK(y2(0) == doctest::Approx(3));
  CHECK(y2(1) == doctest::Approx(1));
}

TEST_CASE("affine dimension mismatch is a configuration error") {
  nn::AffineCache<double> cache;
  VecD x(3);
  x.setZero();
  MatD W = MatD::Identity(2, 2);
  VecD b = VecD::Zero(2);
  CHECK_THROWS_AS(nn::affine_forward(x, W, b, cache), ConfigError);
}

TEST_CASE("affine_backward identity, zero cotangent, stale cache") {
  nn::AffineCache<double> cache;
  VecD x(2);
  x << 0.3, -0.8;
  MatD W = MatD::Identity(2, 2);
  VecD b = VecD::Zero(2);
  nn::affine_forward(x, W, b, cache);

  VecD dy(2);
  dy << 1, 0;
  VecD dx;
  MatD dW;
  VecD db;
  nn::affine_backward(dy, W, cache, dx, dW, db);
  CHECK(dx(0) == doctest::Approx(1));
  CHECK(dx(1) == doctest::Approx(0));
  CHECK(db(0) == doctest::Approx(1));
  CHECK(dW(0, 0) == doctest::Approx(0.3));

  // Cache was consumed: a second backward is a usage error.
  CHECK_THROWS_AS(nn::affine_backward(dy, W, cache, dx, dW, db), UsageError);

  nn::affine_forward(x, W, b, cache);
  VecD zero = VecD::Zero(2);
  nn::affine_backward(zero, W, cache, dx, dW, db);
  CHECK(dx.norm() == doctest::Approx(0));
  CHECK(dW.norm() == doctest::Approx(0));
  CHECK(db.norm() == doctest::Approx(0));
}

TEST_CASE("affine gradients match finite differences on a random 4->3 layer") {
  const MatD W = random_mat(3, 4, 11);
  const VecD b = random_vec(3, 12);
  const VecD x = random_vec(4, 13);
  const VecD g = random_vec(3, 14);  // fixed cotangent defines a scalar loss

  nn::AffineCache<double> cache;
  nn::affine_forward(x, W, b, cache);
  VecD dx;
  MatD dW;
  VecD db;
  nn::affine_backward(g, W, cache, dx, dW, db);

  const double h = 1e-6;
  auto loss = [&](const MatD& Wp, const VecD& bp, const VecD& xp) {
    return g.dot(Wp * xp + bp);
  };
  double max_rel = 0;
  auto rel = [](double a, double fd) {
    return std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-9});
  };
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) {
      MatD Wp = W, Wm = W;
      Wp(r, c) += h;
      Wm(r, c) -= h;
      const double fd = (loss(Wp, b, x) - loss(Wm, b, x)) / (2 * h);
      max_rel = std::max(max_rel, rel(dW(r, c), fd));
    }
  for (int i = 0; i < 4; ++i) {
    VecD xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    const double fd = (loss(W, b, xp) - loss(W, b, xm)) / (2 * h);
    max_rel = std::max(max_rel, rel(dx(i), fd));
  }
  CHECK(max_rel < 1e-6);
}

TEST_CASE("relu forward/backward") {
  MatD x(1, 3);
  x << -1, 0, 2;
  MatD y;
  nn::relu(x, y);
  CHECK(y(0, 0) == 0);
  CHECK(y(0, 1) == 0);
  CHECK(y(0, 2) == 2);

  MatD dy(1, 3);
  dy << 1, 1, 1;
  MatD dx;
  nn::relu_backward(dy, y, dx);  // subgradient at 0 is 0
  CHECK(dx(0, 0) == 0);
  CHECK(dx(0, 1) == 0);
  CHECK(dx(0, 2) == 1);
}

TEST_CASE("softplus values, asymptote, derivative") {
  CHECK(nn::softplus(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(nn::softplus(50.0) == doctest::Approx(50.0));
  CHECK(std::isfinite(nn::softplus(750.0)));

  MatD x(1, 1), dy(1, 1), dx;
  x(0, 0) = 0.0;
  dy(0, 0) = 1.0;
  nn::softplus_backward(dy, x, dx);
  CHECK(dx(0, 0) == doctest::Approx(0.5));

  // Finite differences at a few points.
  for (double v : {-3.0, -0.5, 0.7, 4.0}) {
    const double h = 1e-6;
    const double fd = (nn::softplus(v + h) - nn::softplus(v - h)) / (2 * h);
    x(0, 0) = v;
    nn::softplus_backward(dy, x, dx);
    CHECK(dx(0, 0) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("adam: zero gradient is the identity") {
  ParamStore<double> p;
  auto& e = p.add("w", 2, 2);
  e.W << 1, 2, 3, 4;
  nn::AdamState<double> state;
  state.init_like(p);
  for (int i = 0; i < 5; ++i) nn::adam_step(p, state, 0.1);
  CHECK(e.W(0, 0) == 1);
  CHECK(e.W(1, 1) == 4);
  CHECK(state.mW[0].norm() == 0);
  CHECK(state.vW[0].norm() == 0);
}

TEST_CASE("adam: first-step update magnitude is about lr") {
  ParamStore<double> p;
  auto& e = p.add("w", 1, 1);
  e.W(0, 0) = 0.0;
  e.dW(0, 0) = 1.0;
  nn::AdamState<double> state;
  state.init_like(p);
  nn::adam_step(p, state, 0.1);
  // Bias-corrected: m_hat = g, v_hat = g^2 -> step = lr * g/(|g|+eps).
  CHECK(e.W(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
  // Gradients zeroed afterward.
  CHECK(e.dW(0, 0) == 0);
}

TEST_CASE("adam: identical params with identical gradients stay identical") {
  ParamStore<double> p;
  auto& a = p.add("a", 2, 2);
  auto& b = p.add("b", 2, 2);
  a.W = random_mat(2, 2, 21);
  b.W = a.W;
  nn::AdamState<double> state;
  state.init_like(p);
  rng::Stream rnd(77);
  for (int step = 0; step < 20; ++step) {
    MatD g = random_mat(2, 2, 1000 + uint64_t(step));
    p.at("a").dW = g;
    p.at("b").dW = g;
    p.at("a").db.setZero();
    p.at("b").db.setZero();
    nn::adam_step(p, state, 0.01);
    CHECK((p.at("a").W - p.at("b").W).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("adam: NaN gradient aborts naming the parameter") {
  ParamStore<double> p;
  p.add("bad_layer", 1, 1);
  p.at("bad_layer").dW(0, 0) = std::numeric_limits<double>::quiet_NaN();
  nn::AdamState<double> state;
  state.init_like(p);
  try {
    nn::adam_step(p, state, 0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("bad_layer") != std::string::npos);
  }
}

TEST_CASE("learning-rate schedule endpoints, midpoint, continuity, bounds") {
  CHECK(nn::lr_at(0) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(nn::lr_at(2000) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(nn::lr_at(76000) == doctest::Approx(5.05e-4).epsilon(1e-9));
  CHECK(nn::lr_at(150000) == doctest::Approx(1e-5).epsilon(1e-9));
  CHECK(nn::lr_at(1000000) == doctest::Approx(1e-5).epsilon(1e-12));

  // Continuity at the joints.
  CHECK(std::abs(nn::lr_at(1999) - nn::lr_at(2000)) < 2e-6);
  CHECK(std::abs(nn::lr_at(149999) - nn::lr_at(150000)) < 2e-8);
  for (int64_t k = 0; k <= 160000; k += 997) {
    const double lr = nn::lr_at(k);
    CHECK(lr >= 1e-5 - 1e-15);
    CHECK(lr <= 1e-3 + 1e-15);
  }
}

TEST_CASE("grad_check: quadratic loss, corrupted gradient, determinism guard") {
  ParamStore<double> p;
  p.add("w", 3, 2).W = random_mat(3, 2, 31);
  p.at("w").b = random_vec(3, 32);

  std::function<double(ParamStore<double>&)> quad =
      [](ParamStore<double>& ps) {
        auto& e = ps.at("w");
        e.dW += 2.0 * e.W;
        e.db += 2.0 * e.b;
        return e.W.squaredNorm() + e.b.squaredNorm();
      };
  CHECK(nn::grad_check<double>(quad, p, 1e-6) < 1e-8);

  // Deliberately corrupted gradient must be flagged.
  std::function<double(ParamStore<double>&)> bad = [](ParamStore<double>& ps) {
    auto& e = ps.at("w");
    e.dW += 2.0 * e.W;
    e.dW(0, 0) += 3.0;  // corruption
    e.db += 2.0 * e.b;
    return e.W.squaredNorm() + e.b.squaredNorm();
  };
  CHECK(nn::grad_check<double>(bad, p, 1e-6) > 1e-2);

  // Non-deterministic loss is rejected.
  int calls = 0;
  std::function<double(ParamStore<double>&)> flaky =
      [&calls](ParamStore<double>& ps) {
        return ps.at("w").W.squaredNorm() + 1e-3 * double(calls++);
      };
  CHECK_THROWS_AS(nn::grad_check<double>(flaky, p, 1e-6), UsageError);
}
