// Per-channel standardization of training radiance. The network trains
// entirely in standardized space (z-scores against the global background
// spectrum of the training pixels); renders are destandardized before any
// metric or detection step.
#pragma once

#include <cmath>
#include <cstdio>

#include "hsnerf/common.hpp"

namespace hsnerf::field {

struct Standardizer {
  VecD mean;  // per channel
  VecD sd;    // per channel, > 0

  // pixels: n x c, n >= 2. Sample standard deviation (n-1); a constant
  // channel gets its sd clamped to 1e-8 with a warning.
  static Standardizer fit(const MatD& pixels) {
    check_input(pixels.rows() >= 2, "Standardizer: need at least 2 pixels");
    Standardizer s;
    const auto n = pixels.rows();
    s.mean = pixels.colwise().mean();
    s.sd.resize(pixels.cols());
    for (Eigen::Index j = 0; j < pixels.cols(); ++j) {
      double var =
          (pixels.col(j).array() - s.mean(j)).square().sum() / double(n - 1);
      double sd = std::sqrt(var);
      if (sd <= 0.0) {
        std::fprintf(stderr,
                     "[warn] standardizer: channel %ld is constant; clamping "
                     "sd to 1e-8\n",
                     long(j));
        sd = 1e-8;
      }
      s.sd(j) = sd;
    }
    return s;
  }

  template <class Derived>
  auto apply(const Eigen::MatrixBase<Derived>& pixels) const {
    using S = typename Derived::Scalar;
    return ((pixels.array().rowwise() -
             mean.transpose().array().template cast<S>()).rowwise() /
            sd.transpose().array().template cast<S>())
        .eval();
  }

  template <class Derived>
  auto invert(const Eigen::MatrixBase<Derived>& z) const {
    using S = typename Derived::Scalar;
    return ((z.array().rowwise() * sd.transpose().array().template cast<S>())
                .rowwise() +
            mean.transpose().array().template cast<S>())
        .eval();
  }

  int channels() const { return int(mean.size()); }
};

}  // namespace hsnerf::field
