// Ray-space sampling: stratified coarse samples, inverse-CDF fine samples
// over the coarse-weight PDF, and the annealed near/far planes used early in
// training. Sample positions are treated as constants by backprop.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <utility>

#include "hsnerf/common.hpp"
#include "hsnerf/rng.hpp"

namespace hsnerf::render {

// One uniform draw in each of n equal-width bins of [t_near, t_far]; sorted
// by construction.
inline VecD stratified_samples(double t_near, double t_far, int n,
                               rng::Stream& rnd) {
  check_config(n >= 2, "stratified_samples: need n >= 2");
  check_input(t_near < t_far, "stratified_samples: t_near must be < t_far");
  VecD t(n);
  const double w = (t_far - t_near) / double(n);
  for (int i = 0; i < n; ++i)
    t(i) = t_near + (double(i) + rnd.next_double()) * w;
  return t;
}

// Inverse-transform draws from the piecewise-constant PDF over the n_bins
// equal-width bins of [t_near, t_far] given nonnegative per-bin weights.
// Uniforms are stratified over [0,1). All-zero weights fall back to the
// uniform PDF with a warning.
inline VecD pdf_resample(const VecD& weights, double t_near, double t_far,
                         int n_fine, rng::Stream& rnd, bool warn = true) {
  const int n_bins = int(weights.size());
  check_config(n_bins >= 1 && n_fine >= 1, "pdf_resample: empty input");
  check_internal(weights.minCoeff() >= 0.0, "pdf_resample: negative weight");
  VecD pdf = weights;
  double total = pdf.sum();
  if (total <= 0.0) {
    if (warn)
      std::fprintf(stderr,
                   "[warn] pdf_resample: all-zero weights; falling back to "
                   "uniform PDF\n");
    pdf.setConstant(1.0);
    total = double(n_bins);
  }
  pdf /= total;
  VecD cdf(n_bins + 1);
  cdf(0) = 0.0;
  for (int i = 0; i < n_bins; ++i) cdf(i + 1) = cdf(i) + pdf(i);
  cdf(n_bins) = 1.0;

  const double bin_w = (t_far - t_near) / double(n_bins);
  VecD out(n_fine);
  int bin = 0;
  for (int s = 0; s < n_fine; ++s) {
    const double u = (double(s) + rnd.next_double()) / double(n_fine);
    while (bin + 1 < n_bins && cdf(bin + 1) <= u) ++bin;
    const double mass = cdf(bin + 1) - cdf(bin);
    const double frac = mass > 0.0 ? (u - cdf(bin)) / mass : 0.5;
    out(s) = t_near + (double(bin) + frac) * bin_w;
  }
  return out;
}

// Merge two sorted distance vectors, enforcing strict increase (exact
// duplicates are nudged by one ulp so interval lengths stay positive).
inline VecD merge_sorted(const VecD& a, const VecD& b) {
  VecD out(a.size() + b.size());
  std::merge(a.data(), a.data() + a.size(), b.data(), b.data() + b.size(),
             out.data());
  for (Eigen::Index i = 1; i < out.size(); ++i)
    if (out(i) <= out(i - 1))
      out(i) = std::nextafter(out(i - 1), std::numeric_limits<double>::max());
  return out;
}

// Annealed sample-space planes. eta(k) = clamp(k / N_k, p_s, 1): the interval
// starts at fraction p_s of its width, centered on the midpoint, and relaxes
// linearly to the full [t_near, t_far].
inline std::pair<double, double> anneal_planes(int64_t k, double t_near,
                                               double t_far, int64_t n_k,
                                               double p_s) {
  check_config(p_s > 0.0 && p_s <= 1.0, "anneal_planes: need 0 < p_s <= 1");
  check_config(n_k >= 1, "anneal_planes: need N_k >= 1");
  double eta = std::clamp(double(k) / double(n_k), p_s, 1.0);
  const double t_mid = 0.5 * (t_near + t_far);
  return {t_mid + (t_near - t_mid) * eta, t_mid + (t_far - t_mid) * eta};
}

}  // namespace hsnerf::render
