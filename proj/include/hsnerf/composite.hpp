// Volume compositing along one ray.
//
// alpha_i = 1 - exp(-sigma_i * delta_i), T_i = exp(-sum_{j<i} sigma_j delta_j),
// w_i = T_i * alpha_i, color = sum_i w_i c_i, with delta_i the gap to the next
// sample and the last interval capped at t_far. Densities may be shared
// across channels (single mode, one density column) or per-channel
// (multi-channel density, one column per channel); the same engine handles
// both, with the single column broadcast across channels. A radiance matrix
// with zero columns requests density-only compositing (weights and depth,
// no color).
//
// Expected depth defaults to the distance-weighted form d = sum_i w_i t_i.
// Compiling with -DHSNERF_DEPTH_SIGMA_LITERAL makes the density-weighted
// variant d = sum_i w_i sigma_i the default instead; both stay selectable at
// runtime for comparison.
#pragma once

#include <cmath>

#include "hsnerf/common.hpp"

namespace hsnerf::render {

enum class DepthMode { kDistance, kSigmaWeighted };

#ifdef HSNERF_DEPTH_SIGMA_LITERAL
inline constexpr DepthMode kDefaultDepthMode = DepthMode::kSigmaWeighted;
#else
inline constexpr DepthMode kDefaultDepthMode = DepthMode::kDistance;
#endif

inline VecD interval_lengths(const VecD& t, double t_far) {
  const Eigen::Index n = t.size();
  VecD delta(n);
  for (Eigen::Index i = 0; i + 1 < n; ++i) delta(i) = t(i + 1) - t(i);
  delta(n - 1) = t_far - t(n - 1);
  check_internal(delta.minCoeff() > 0.0, "composite: non-positive interval");
  return delta;
}

template <class S>
struct RayComposite {
  Mat<S> T;              // n x dd, transmittance at each sample
  Mat<S> w;              // n x dd, compositing weights T*alpha
  Vec<S> color;          // c (empty when compositing density-only)
  Vec<S> depth_channel;  // dd
  S mean_depth = S(0);
  Vec<S> w_combined;     // n, per-channel weights summed and normalized
  VecD delta;
};

template <class S>
void composite_forward(const VecD& t, double t_far,
                       const Eigen::Ref<const Mat<S>>& sigma,
                       const Eigen::Ref<const Mat<S>>& radiance,
                       RayComposite<S>& out,
                       DepthMode depth_mode = kDefaultDepthMode) {
  const Eigen::Index n = t.size();
  const Eigen::Index dd = sigma.cols();
  const Eigen::Index c = radiance.cols();
  check_internal(sigma.rows() == n && (c == 0 || radiance.rows() == n),
                 "composite: sample count mismatch");
  check_internal(c == 0 || dd == 1 || dd == c,
                 "composite: density dim must be 1 or c");
  check_internal(sigma.minCoeff() >= S(0), "composite: negative density");

  out.delta = interval_lengths(t, t_far);
  out.T.resize(n, dd);
  out.w.resize(n, dd);
  for (Eigen::Index j = 0; j < dd; ++j) {
    S acc = S(0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const S od = sigma(i, j) * S(out.delta(i));
      const S trans = std::exp(-acc);
      out.T(i, j) = trans;
      out.w(i, j) = trans * (S(1) - std::exp(-od));
      acc += od;
    }
  }

  out.color.resize(c);
  for (Eigen::Index j = 0; j < c; ++j) {
    const Eigen::Index jj = dd == 1 ? 0 : j;
    out.color(j) = out.w.col(jj).dot(radiance.col(j));
  }

  out.depth_channel.resize(dd);
  for (Eigen::Index j = 0; j < dd; ++j) {
    S d = S(0);
    for (Eigen::Index i = 0; i < n; ++i)
      d += out.w(i, j) *
           (depth_mode == DepthMode::kDistance ? S(t(i)) : sigma(i, j));
    out.depth_channel(j) = d;
  }
  out.mean_depth = out.depth_channel.mean();

  out.w_combined = out.w.rowwise().sum();
  const S total = out.w_combined.sum();
  if (total > S(0)) out.w_combined /= total;
}

// Accumulates cotangents of sigma and radiance given cotangents of the
// composited color and of the mean depth. dsigma/dradiance views must have
// the forward shapes; they are overwritten.
template <class S>
void composite_backward(const VecD& t, const Eigen::Ref<const Mat<S>>& sigma,
                        const Eigen::Ref<const Mat<S>>& radiance,
                        const RayComposite<S>& fwd, const Vec<S>& dcolor,
                        S dmean_depth, Eigen::Ref<Mat<S>> dsigma,
                        Eigen::Ref<Mat<S>> dradiance,
                        DepthMode depth_mode = kDefaultDepthMode) {
  const Eigen::Index n = t.size();
  const Eigen::Index dd = sigma.cols();
  const Eigen::Index c = radiance.cols();

  dsigma.setZero();
  if (c > 0) dradiance.setZero();

  // g(i, j) = dL/dw_ij.
  Mat<S> g = Mat<S>::Zero(n, dd);
  for (Eigen::Index j = 0; j < c; ++j) {
    const Eigen::Index jj = dd == 1 ? 0 : j;
    g.col(jj) += dcolor(j) * radiance.col(j);
    dradiance.col(j) = fwd.w.col(jj) * dcolor(j);
  }
  if (dmean_depth != S(0)) {
    const S per_col = dmean_depth / S(dd);
    for (Eigen::Index j = 0; j < dd; ++j) {
      if (depth_mode == DepthMode::kDistance) {
        for (Eigen::Index i = 0; i < n; ++i) g(i, j) += per_col * S(t(i));
      } else {
        g.col(j) += per_col * sigma.col(j);
        dsigma.col(j) += per_col * fwd.w.col(j);
      }
    }
  }

  // dL/dsigma_kj = delta_k * (g_kj (T_kj - w_kj) - sum_{i>k} g_ij w_ij).
  for (Eigen::Index j = 0; j < dd; ++j) {
    S suffix = S(0);
    for (Eigen::Index k = n - 1; k >= 0; --k) {
      dsigma(k, j) +=
          S(fwd.delta(k)) * (g(k, j) * (fwd.T(k, j) - fwd.w(k, j)) - suffix);
      suffix += g(k, j) * fwd.w(k, j);
    }
  }
}

// Spec-level wrappers.

// Single-density compositing: returns the color and the weights w_i.
template <class S>
void composite(const VecD& t, double t_far, const Vec<S>& sigma,
               const Mat<S>& radiance, Vec<S>& color, Vec<S>& weights) {
  Mat<S> sig(sigma.size(), 1);
  sig.col(0) = sigma;
  RayComposite<S> out;
  composite_forward<S>(t, t_far, sig, radiance, out);
  color = out.color;
  weights = out.w.col(0);
}

// Multi-channel density compositing: per-channel colors, the per-channel
// weight matrix w_ij, and the combined PDF weights (summed over channels and
// normalized to sum to one).
template <class S>
void composite_md(const VecD& t, double t_far, const Mat<S>& sigma,
                  const Mat<S>& radiance, Vec<S>& color, Mat<S>& weights,
                  Vec<S>& weights_combined) {
  RayComposite<S> out;
  composite_forward<S>(t, t_far, sigma, radiance, out);
  color = out.color;
  weights = out.w;
  weights_combined = out.w_combined;
}

// Per-channel expected depth and its mean, from an already-composited ray.
template <class S>
void render_depth(const RayComposite<S>& fwd, Vec<S>& depth_per_channel,
                  S& mean_depth) {
  depth_per_channel = fwd.depth_channel;
  mean_depth = fwd.mean_depth;
}

}  // namespace hsnerf::render
