// The training objective: coarse+fine L2, spectral angle (SAM) on the fine
// rendering, adaptive weighted L2 with residual-driven channel weights, and
// geometry regularization over random patches, each with its lambda schedule
// and exact analytic gradients.
//
// Core functions return per-ray (or per-patch) sums and add `grad_scale`
// times the sum's gradient into the caller's cotangent buffers, so chunked
// callers can reduce over a whole batch with the mean taken once. The
// batch-mean wrappers below give the spec-level semantics directly: mean
// over rays for L2/SAM/AWL2, sum over neighbor pairs then mean over patches
// for geometry regularization.
#pragma once

#include <cmath>

#include "hsnerf/common.hpp"

namespace hsnerf::loss {

struct Schedules {
  double lambda_c = 0.1;
  double lambda_f = 1.0;
  double lambda_sam = 2.0;
  // AWL2: 0 until awl2_ramp_start, linear to awl2_max by awl2_ramp_end.
  int64_t awl2_ramp_start = 5000;
  int64_t awl2_ramp_end = 25000;
  double awl2_max = 100.0;
  // GR: gr_start at k=0, linear to gr_end by gr_ramp_end.
  double gr_start = 10000.0;
  double gr_end = 1.0;
  int64_t gr_ramp_end = 6000;

  double lambda_awl2(int64_t k) const {
    if (k <= awl2_ramp_start) return 0.0;
    if (k >= awl2_ramp_end) return awl2_max;
    return awl2_max * double(k - awl2_ramp_start) /
           double(awl2_ramp_end - awl2_ramp_start);
  }
  double lambda_gr(int64_t k) const {
    if (k >= gr_ramp_end) return gr_end;
    return gr_start + (gr_end - gr_start) * double(k) / double(gr_ramp_end);
  }
};

// sum_r lambda_c ||Cc_r - C_r||^2 + lambda_f ||Cf_r - C_r||^2.
template <class S>
S l2_sum(const Mat<S>& Cc, const Mat<S>& Cf, const Mat<S>& target, S lambda_c,
         S lambda_f, Mat<S>* dCc, Mat<S>* dCf, S grad_scale) {
  Mat<S> rc = Cc - target, rf = Cf - target;
  S sum = lambda_c * rc.squaredNorm() + lambda_f * rf.squaredNorm();
  if (dCc) *dCc += (S(2) * lambda_c * grad_scale) * rc;
  if (dCf) *dCf += (S(2) * lambda_f * grad_scale) * rf;
  return sum;
}

// Spectral angle: sum_r arccos of the clamped cosine similarity. Pairs where
// either spectrum has norm < 1e-12 contribute zero (the angle is undefined
// there); the cosine is clamped away from +-1 so the arccos derivative stays
// finite.
template <class S>
S sam_sum(const Mat<S>& Cf, const Mat<S>& target, Mat<S>* dCf, S grad_scale) {
  const S norm_floor = S(1e-12);
  const S clamp = S(1) - S(1e-12);
  S sum = S(0);
  for (Eigen::Index r = 0; r < Cf.rows(); ++r) {
    const auto a = Cf.row(r);
    const auto y = target.row(r);
    const S na = a.norm(), ny = y.norm();
    if (na < norm_floor || ny < norm_floor) continue;
    S cosv = a.dot(y) / (na * ny);
    const bool clamped = cosv >= clamp || cosv <= -clamp;
    if (cosv > clamp) cosv = clamp;
    if (cosv < -clamp) cosv = -clamp;
    sum += std::acos(cosv);
    if (dCf && !clamped) {
      // d acos(u)/du = -1/sqrt(1-u^2); du/da = y/(na ny) - u a/na^2.
      const S dacos = -S(1) / std::sqrt(S(1) - cosv * cosv);
      dCf->row(r) +=
          (grad_scale * dacos) * (y / (na * ny) - (cosv / (na * na)) * a);
    }
  }
  return sum;
}

// sum_r sum_j w_j (Cf_rj - C_rj)^2.
template <class S>
S awl2_sum(const Mat<S>& Cf, const Mat<S>& target, const Vec<S>& w, Mat<S>* dCf,
           S grad_scale) {
  Mat<S> r = Cf - target;
  S sum = (r.array().square().rowwise() * w.transpose().array()).sum();
  if (dCf)
    *dCf +=
        (S(2) * grad_scale) * (r.array().rowwise() * w.transpose().array()).matrix();
  return sum;
}

// Geometry regularization for one S_p x S_p grid of mean depths: squared
// differences over every horizontally and vertically adjacent pair.
template <class S>
S gr_patch_sum(const Mat<S>& depth, Mat<S>* ddepth, S grad_scale) {
  const Eigen::Index rows = depth.rows(), cols = depth.cols();
  S sum = S(0);
  auto pair_term = [&](Eigen::Index r0, Eigen::Index c0, Eigen::Index r1,
                       Eigen::Index c1) {
    const S d = depth(r0, c0) - depth(r1, c1);
    sum += d * d;
    if (ddepth) {
      (*ddepth)(r0, c0) += S(2) * grad_scale * d;
      (*ddepth)(r1, c1) -= S(2) * grad_scale * d;
    }
  };
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c + 1 < cols; ++c) pair_term(r, c, r, c + 1);
  for (Eigen::Index r = 0; r + 1 < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) pair_term(r, c, r + 1, c);
  return sum;
}

// Batch-mean wrappers (the spec-level loss surfaces).

template <class S>
S l2_loss(const Mat<S>& Cc, const Mat<S>& Cf, const Mat<S>& target,
          S lambda_c = S(0.1), S lambda_f = S(1), Mat<S>* dCc = nullptr,
          Mat<S>* dCf = nullptr) {
  const S inv_b = S(1) / S(Cc.rows());
  return inv_b * l2_sum(Cc, Cf, target, lambda_c, lambda_f, dCc, dCf, inv_b);
}

template <class S>
S sam_loss(const Mat<S>& Cf, const Mat<S>& target, Mat<S>* dCf = nullptr) {
  const S inv_b = S(1) / S(Cf.rows());
  return inv_b * sam_sum(Cf, target, dCf, inv_b);
}

template <class S>
S awl2_loss(const Mat<S>& Cf, const Mat<S>& target, const Vec<S>& w,
            Mat<S>* dCf = nullptr) {
  const S inv_b = S(1) / S(Cf.rows());
  return inv_b * awl2_sum(Cf, target, w, dCf, inv_b);
}

template <class S>
S gr_loss(const std::vector<Mat<S>>& patch_depths) {
  S sum = S(0);
  for (const auto& d : patch_depths) sum += gr_patch_sum<S>(d, nullptr, S(0));
  return sum / S(patch_depths.size());
}

// Residual-driven channel weights: w_j proportional to the mean squared fine
// residual of channel j, normalized to sum to one. All-zero residuals give
// uniform weights.
struct ChannelWeights {
  VecD w;
  int64_t updated_at = -1;

  static ChannelWeights uniform(int channels) {
    ChannelWeights cw;
    cw.w = VecD::Constant(channels, 1.0 / double(channels));
    return cw;
  }
};

inline ChannelWeights channel_weights_from_residuals(const MatD& rendered,
                                                     const MatD& target,
                                                     int64_t iteration) {
  ChannelWeights cw;
  VecD mean_sq =
      (rendered - target).array().square().colwise().mean().transpose();
  const double total = mean_sq.sum();
  if (total <= 0.0)
    cw.w = VecD::Constant(rendered.cols(), 1.0 / double(rendered.cols()));
  else
    cw.w = mean_sq / total;
  cw.updated_at = iteration;
  return cw;
}

// Per-term values of one training step's objective. combine() applies the
// schedules and aborts on a non-finite term, naming it.
struct Terms {
  double l2 = 0;
  double sam = 0;
  double awl2 = 0;
  double gr = 0;
  double total = 0;

  void add(const Terms& o) {
    l2 += o.l2;
    sam += o.sam;
    awl2 += o.awl2;
    gr += o.gr;
  }

  void combine(int64_t k, const Schedules& s) {
    const char* bad = nullptr;
    if (!std::isfinite(l2)) bad = "L2";
    else if (!std::isfinite(sam)) bad = "SAM";
    else if (!std::isfinite(awl2)) bad = "AWL2";
    else if (!std::isfinite(gr)) bad = "GR";
    if (bad)
      throw NumericError(std::string("loss term ") + bad + " is not finite");
    total = l2 + s.lambda_sam * sam + s.lambda_awl2(k) * awl2 +
            s.lambda_gr(k) * gr;
  }
};

}  // namespace hsnerf::loss
