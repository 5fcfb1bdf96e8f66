// Sinusoidal positional encoding. Per coordinate y the encoder emits
// [sin(2^0 pi y), cos(2^0 pi y), ..., sin(2^{L-1} pi y), cos(2^{L-1} pi y)],
// so a 3-vector maps to 6L features. Callers pre-scale coordinates into
// [-1, 1] by the scene bounding radius.
#pragma once

#include <cmath>

#include "hsnerf/common.hpp"

namespace hsnerf::field {

inline int encoded_dim(int L) { return 6 * L; }

// Batched: pts is n x 3, out is resized to n x 6L. Higher frequencies come
// from the angle-doubling recurrence (sin 2a = 2 sin a cos a,
// cos 2a = 1 - 2 sin^2 a), one trig pair per coordinate. Outputs are clamped
// to [-1, 1] against recurrence round-off.
template <class S>
void positional_encode(const Mat<S>& pts, int L, Mat<S>& out) {
  check_config(L >= 1, "positional_encode: L must be >= 1");
  check_config(pts.cols() == 3, "positional_encode: points must be n x 3");
  const Eigen::Index n = pts.rows();
  out.resize(n, 6 * L);
  Vec<S> s(n), c(n), s2(n);
  for (int coord = 0; coord < 3; ++coord) {
    s = (pts.col(coord) * S(3.14159265358979323846)).array().sin();
    c = (pts.col(coord) * S(3.14159265358979323846)).array().cos();
    for (int l = 0; l < L; ++l) {
      const int base = coord * 2 * L + 2 * l;
      out.col(base) = s.cwiseMin(S(1)).cwiseMax(S(-1));
      out.col(base + 1) = c.cwiseMin(S(1)).cwiseMax(S(-1));
      if (l + 1 < L) {
        s2 = S(2) * s.array() * c.array();
        c = S(1) - S(2) * s.array().square();
        s.swap(s2);
      }
    }
  }
}

template <class S>
Vec<S> encode(const Vec3T<S>& v, int L) {
  Mat<S> pts(1, 3), out;
  pts.row(0) = v.transpose();
  positional_encode(pts, L, out);
  return out.row(0).transpose();
}

}  // namespace hsnerf::field
