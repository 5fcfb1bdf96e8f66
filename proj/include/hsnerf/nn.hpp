// Reverse-mode building blocks for the fixed MLP architecture: affine layers,
// ReLU and softplus activations, parameter storage with parallel gradient
// buffers, the Adam optimizer, the warmup/cosine learning-rate schedule, and
// a finite-difference gradient checker.
//
// Batched variants operate on (samples x features) matrices; the vector
// variants exist for single-point evaluation and mirror the batched math
// exactly. Everything is templated on the scalar so tests run the identical
// code in 64-bit while training uses 32-bit.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "hsnerf/common.hpp"

namespace hsnerf::nn {

// ---------------------------------------------------------------------------
// Parameter storage

template <class S>
struct ParamStore {
  struct Entry {
    std::string name;
    Mat<S> W;   // out x in
    Vec<S> b;   // out
    Mat<S> dW;  // gradient buffers, shape-parallel
    Vec<S> db;
  };

  std::vector<Entry> entries;

  Entry& add(const std::string& name, int out_dim, int in_dim) {
    Entry e;
    e.name = name;
    e.W = Mat<S>::Zero(out_dim, in_dim);
    e.b = Vec<S>::Zero(out_dim);
    e.dW = Mat<S>::Zero(out_dim, in_dim);
    e.db = Vec<S>::Zero(out_dim);
    entries.push_back(std::move(e));
    return entries.back();
  }

  Entry& at(const std::string& name) {
    for (auto& e : entries)
      if (e.name == name) return e;
    throw UsageError("ParamStore: no entry named '" + name + "'");
  }
  const Entry& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }

  void zero_grads() {
    for (auto& e : entries) {
      e.dW.setZero();
      e.db.setZero();
    }
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& e : entries) n += e.W.size() + e.b.size();
    return n;
  }
};

// Gradient accumulator shape-parallel to a ParamStore. Worker chunks each own
// one and the owner folds them into the store in fixed chunk order.
template <class S>
struct GradBuffer {
  std::vector<Mat<S>> dW;
  std::vector<Vec<S>> db;

  void init_like(const ParamStore<S>& p) {
    dW.clear();
    db.clear();
    for (const auto& e : p.entries) {
      dW.push_back(Mat<S>::Zero(e.W.rows(), e.W.cols()));
      db.push_back(Vec<S>::Zero(e.b.size()));
    }
  }
  void set_zero() {
    for (auto& m : dW) m.setZero();
    for (auto& v : db) v.setZero();
  }
  void add_into(ParamStore<S>& p) const {
    for (size_t i = 0; i < dW.size(); ++i) {
      p.entries[i].dW += dW[i];
      p.entries[i].db += db[i];
    }
  }
};

// ---------------------------------------------------------------------------
// Layer primitives (batched: rows are samples)

// y = x * W^T + b
template <class S>
void affine_forward(const Mat<S>& x, const Mat<S>& W, const Vec<S>& b,
                    Mat<S>& y) {
  check_config(x.cols() == W.cols(),
               "affine_forward: input dim " + std::to_string(x.cols()) +
                   " != weight in-dim " + std::to_string(W.cols()));
  check_config(W.rows() == b.size(), "affine_forward: bias dim mismatch");
  y.noalias() = x * W.transpose();
  y.rowwise() += b.transpose();
}

// Given dy and the cached forward input x:
//   dx = dy * W,  dW += dy^T * x,  db += colsum(dy)
template <class S>
void affine_backward(const Mat<S>& dy, const Mat<S>& x, const Mat<S>& W,
                     Mat<S>& dx, Mat<S>& dW, Vec<S>& db) {
  dx.noalias() = dy * W;
  dW.noalias() += dy.transpose() * x;
  db.noalias() += dy.colwise().sum().transpose();
}

// Single-vector flavor with an explicit cache, used for point evaluation and
// in unit tests. The cache is consumed by backward; reuse is a usage error.
template <class S>
struct AffineCache {
  Vec<S> x;
  bool valid = false;
};

template <class S>
Vec<S> affine_forward(const Vec<S>& x, const Mat<S>& W, const Vec<S>& b,
                      AffineCache<S>& cache) {
  check_config(x.size() == W.cols(), "affine_forward: dim mismatch");
  check_config(W.rows() == b.size(), "affine_forward: bias dim mismatch");
  cache.x = x;
  cache.valid = true;
  return W * x + b;
}

template <class S>
void affine_backward(const Vec<S>& dy, const Mat<S>& W, AffineCache<S>& cache,
                     Vec<S>& dx, Mat<S>& dW, Vec<S>& db) {
  check_usage(cache.valid, "affine_backward: stale or missing forward cache");
  cache.valid = false;
  dx = W.transpose() * dy;
  dW = dy * cache.x.transpose();
  db = dy;
}

template <class S>
void relu(const Mat<S>& x, Mat<S>& y) {
  y = x.cwiseMax(S(0));
}

// dx = dy * 1[x > 0]; the subgradient at 0 is 0. The mask may be taken from
// the post-activation values since y > 0 iff x > 0.
template <class S>
void relu_backward(const Mat<S>& dy, const Mat<S>& y_post, Mat<S>& dx) {
  dx = (y_post.array() > S(0)).template cast<S>() * dy.array();
}

template <class S>
S softplus(S x) {
  // Overflow-safe: softplus(x) = max(x, 0) + log1p(exp(-|x|)).
  return std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <class S>
S sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  S e = std::exp(x);
  return e / (S(1) + e);
}

template <class S>
void softplus(const Mat<S>& x, Mat<S>& y) {
  y = x.array().max(S(0)) + (-x.array().abs()).exp().log1p();
}

// dx = dy * sigmoid(x); recomputed from the cached pre-activation.
template <class S>
void softplus_backward(const Mat<S>& dy, const Mat<S>& x_pre, Mat<S>& dx) {
  dx = dy.array() *
       (S(1) / (S(1) + (-x_pre.array().max(S(-80)).min(S(80))).exp()));
}

// ---------------------------------------------------------------------------
// Adam

template <class S>
struct AdamState {
  std::vector<Mat<S>> mW, vW;
  std::vector<Vec<S>> mb, vb;
  int64_t step = 0;
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);

  void init_like(const ParamStore<S>& p) {
    mW.clear();
    vW.clear();
    mb.clear();
    vb.clear();
    for (const auto& e : p.entries) {
      mW.push_back(Mat<S>::Zero(e.W.rows(), e.W.cols()));
      vW.push_back(Mat<S>::Zero(e.W.rows(), e.W.cols()));
      mb.push_back(Vec<S>::Zero(e.b.size()));
      vb.push_back(Vec<S>::Zero(e.b.size()));
    }
    step = 0;
  }
};

// One bias-corrected Adam update over every entry. Gradients are zeroed
// afterward. A NaN gradient aborts with the offending entry named.
template <class S>
void adam_step(ParamStore<S>& params, AdamState<S>& state, S lr) {
  check_usage(state.mW.size() == params.entries.size(),
              "adam_step: state not initialized for this ParamStore");
  state.step += 1;
  const S b1 = state.beta1, b2 = state.beta2;
  const S corr1 = S(1) - std::pow(b1, S(state.step));
  const S corr2 = S(1) - std::pow(b2, S(state.step));
  for (size_t i = 0; i < params.entries.size(); ++i) {
    auto& e = params.entries[i];
    if (!e.dW.allFinite() || !e.db.allFinite())
      throw NumericError("adam_step: non-finite gradient in '" + e.name + "'");
    auto update = [&](auto& p, auto& g, auto& m, auto& v) {
      m = b1 * m + (S(1) - b1) * g;
      v.array() = b2 * v.array() + (S(1) - b2) * g.array().square();
      p.array() -=
          lr * (m.array() / corr1) / ((v.array() / corr2).sqrt() + state.eps);
    };
    update(e.W, e.dW, state.mW[i], state.vW[i]);
    update(e.b, e.db, state.mb[i], state.vb[i]);
  }
  params.zero_grads();
}

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup 1e-5 -> 1e-3 over the first
// warmup_iters iterations, cosine decay back to 1e-5 by decay_end_iter,
// constant afterward.

struct LrSchedule {
  double lr_min = 1e-5;
  double lr_max = 1e-3;
  int64_t warmup_iters = 2000;
  int64_t decay_end_iter = 150000;

  double at(int64_t k) const {
    if (k <= 0) return lr_min;
    if (k < warmup_iters)
      return lr_min + (lr_max - lr_min) * double(k) / double(warmup_iters);
    if (k >= decay_end_iter) return lr_min;
    double u = double(k - warmup_iters) / double(decay_end_iter - warmup_iters);
    return lr_min + 0.5 * (lr_max - lr_min) *
                        (1.0 + std::cos(3.14159265358979323846 * u));
  }
};

inline double lr_at(int64_t k) { return LrSchedule{}.at(k); }

// ---------------------------------------------------------------------------
// Gradient checker
//
// loss_fn must populate the store's gradient buffers as a side effect and be
// deterministic; it is re-evaluated with individual parameters perturbed by
// +-h and the central difference is compared against the analytic gradient.
// The returned error is max_i |analytic_i - fd_i| normalized by the overall
// gradient scale max(||analytic||_inf, ||fd||_inf, 1e-12), which keeps
// near-zero components from drowning the check in finite-difference noise.

template <class S>
double grad_check(const std::function<S(ParamStore<S>&)>& loss_fn,
                  ParamStore<S>& params, S h) {
  params.zero_grads();
  S base = loss_fn(params);
  S base2_probe = loss_fn(params);
  if (!(base == base2_probe))
    throw UsageError("grad_check: loss_fn is not deterministic");

  // Snapshot analytic gradients (the second call accumulated on top of the
  // first, so halve).
  std::vector<Mat<S>> adW;
  std::vector<Vec<S>> adb;
  for (auto& e : params.entries) {
    adW.push_back(e.dW / S(2));
    adb.push_back(e.db / S(2));
  }

  double max_abs_diff = 0.0, scale = 0.0;
  auto probe = [&](S& p, double analytic) {
    const S saved = p;
    p = saved + h;
    params.zero_grads();
    S fp = loss_fn(params);
    p = saved - h;
    params.zero_grads();
    S fm = loss_fn(params);
    p = saved;
    double fd = (double(fp) - double(fm)) / (2.0 * double(h));
    max_abs_diff = std::max(max_abs_diff, std::abs(analytic - fd));
    scale = std::max({scale, std::abs(analytic), std::abs(fd)});
  };
  for (size_t i = 0; i < params.entries.size(); ++i) {
    auto& e = params.entries[i];
    for (Eigen::Index r = 0; r < e.W.rows(); ++r)
      for (Eigen::Index c = 0; c < e.W.cols(); ++c)
        probe(e.W(r, c), double(adW[i](r, c)));
    for (Eigen::Index r = 0; r < e.b.size(); ++r)
      probe(e.b(r), double(adb[i](r)));
  }
  params.zero_grads();
  return max_abs_diff / std::max(scale, 1e-12);
}

}  // namespace hsnerf::nn
