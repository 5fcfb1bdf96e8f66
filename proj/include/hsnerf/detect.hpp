// Adaptive coherence estimator target detection plus the image and detection
// metrics: rank-based AUC, TPR/FPR against reference masks, PSNR, per-channel
// SSIM, and robust false-color rendering.
#pragma once

#include <utility>
#include <vector>

#include "hsnerf/common.hpp"
#include "hsnerf/hsic.hpp"
#include "hsnerf/png_io.hpp"

namespace hsnerf::detect {

struct BackgroundModel {
  VecD mean;
  MatD cov;       // sample covariance (n-1 normalization)
  MatD cov_reg;   // shrinkage-regularized, positive definite
  MatD cov_inv;
  int64_t n_pixels = 0;

  // Sample moments over all pixels with shrinkage toward the scaled
  // identity: cov_reg = (1-delta) cov + (delta tr(cov)/c + 1e-8) I. A fully
  // degenerate (zero) covariance falls back to the pure 1e-8 I floor.
  static BackgroundModel fit(const MatD& pixels, double shrinkage = 1e-3);
  // Exact moments without shrinkage, for hand-constructed tests.
  static BackgroundModel from_moments(const VecD& mean, const MatD& cov,
                                      double shrinkage = 0.0);
};

// Per-pixel ACE scores in [0, 1]:
//   score(y) = (t' S^-1 (y-mu))^2 / [(t' S^-1 t) ((y-mu)' S^-1 (y-mu))].
// Pixels whose whitened deviation norm is below 1e-12 score 0; a target with
// whitened norm below 1e-12 is an input error.
VecD ace_scores(const MatD& pixels, const VecD& target,
                const BackgroundModel& bg);

inline std::vector<uint8_t> threshold_mask(const VecD& scores, double tau) {
  check_input(tau >= 0.0 && tau <= 1.0, "threshold_mask: tau must be in [0,1]");
  std::vector<uint8_t> mask(size_t(scores.size()));
  for (Eigen::Index i = 0; i < scores.size(); ++i)
    mask[size_t(i)] = scores(i) > tau ? 255 : 0;
  return mask;
}

// Mann-Whitney AUC with midrank tie handling: the probability that a random
// positive outranks a random negative. Throws if only one class is present.
double roc_auc(const VecD& scores, const std::vector<uint8_t>& labels);

// (TPR, FPR) of a predicted mask against a reference mask; empty reference
// is an input error.
std::pair<double, double> tpr_fpr(const std::vector<uint8_t>& pred,
                                  const std::vector<uint8_t>& ref);

// 10 log10(peak^2 / MSE) over all pixels and channels, capped at 99 dB.
double psnr(const io::HsiCube& render, const io::HsiCube& truth, double peak);

// Mean over channels of single-scale SSIM with an 11x11 Gaussian window
// (sigma 1.5), K1=0.01, K2=0.03, and the supplied dynamic range.
double ssim(const io::HsiCube& render, const io::HsiCube& truth,
            double dynamic_range);

// Nearest-channel false color with 1st-99th percentile scaling per channel.
io::PngImage falsecolor(const io::HsiCube& cube, double red_um,
                        double green_um, double blue_um);

}  // namespace hsnerf::detect
