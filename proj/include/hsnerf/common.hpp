// Core scalar/matrix aliases and the error taxonomy shared by every module.
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hsnerf {

// Dense storage is row-major throughout so serialized blobs and image
// buffers share one layout.
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using Vec3T = Eigen::Matrix<S, 3, 1>;

using MatD = Mat<double>;
using MatF = Mat<float>;
using VecD = Vec<double>;
using VecF = Vec<float>;
using Vec3 = Eigen::Vector3d;
using Mat4 = Eigen::Matrix4d;

// Training runs in 32-bit; tests and oracles instantiate the same templates
// with double.
using TrainScalar = float;

// Error taxonomy, mapped to CLI exit codes: ConfigError -> 2, IoError -> 3,
// NumericError (and anything else) -> 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// API misuse (stale cache, wrong call order).
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};
// Broken internal invariant.
struct InternalError : std::logic_error {
  using std::logic_error::logic_error;
};

inline void check_config(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}
inline void check_input(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}
inline void check_usage(bool ok, const std::string& msg) {
  if (!ok) throw UsageError(msg);
}
inline void check_internal(bool ok, const std::string& msg) {
  if (!ok) throw InternalError(msg);
}

}  // namespace hsnerf
