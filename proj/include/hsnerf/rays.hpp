// Pinhole camera model and per-pixel ray generation.
#pragma once

#include <cmath>
#include <vector>

#include "hsnerf/common.hpp"

namespace hsnerf::render {

struct Intrinsics {
  int width = 0;
  int height = 0;
  double focal_px = 0;  // principal point at the image center
};

// Camera-to-world transform. The camera looks along +z in its own frame,
// +x is image-right, +y is image-down.
struct CameraPose {
  Mat4 c2w = Mat4::Identity();

  Vec3 origin() const { return c2w.block<3, 1>(0, 3); }
  Eigen::Matrix3d rotation() const { return c2w.block<3, 3>(0, 0); }

  void validate() const {
    Eigen::Matrix3d R = rotation();
    double dev = (R.transpose() * R - Eigen::Matrix3d::Identity())
                     .cwiseAbs()
                     .maxCoeff();
    check_input(dev <= 1e-6, "CameraPose: rotation is not orthonormal");
  }

  static CameraPose look_at(const Vec3& eye, const Vec3& target,
                            const Vec3& up) {
    Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up);
    double n = right.norm();
    check_input(n > 1e-9, "look_at: view direction parallel to up vector");
    right /= n;
    Vec3 down = forward.cross(right).normalized() * -1.0;
    // Columns are the camera axes in world coordinates: x=right, y=down,
    // z=forward.
    CameraPose pose;
    pose.c2w.setIdentity();
    pose.c2w.block<3, 1>(0, 0) = right;
    pose.c2w.block<3, 1>(0, 1) = -down;
    pose.c2w.block<3, 1>(0, 2) = forward;
    pose.c2w.block<3, 1>(0, 3) = eye;
    return pose;
  }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::Zero();  // unit
  double t_near = 0;
  double t_far = 0;
  int row = 0, col = 0;
  int image_id = 0;
};

inline Vec3 pixel_direction(const CameraPose& pose, const Intrinsics& intr,
                            double row, double col) {
  const double cx = 0.5 * intr.width, cy = 0.5 * intr.height;
  Vec3 d_cam((col + 0.5 - cx) / intr.focal_px, (row + 0.5 - cy) / intr.focal_px,
             1.0);
  return (pose.rotation() * d_cam).normalized();
}

// One ray per pixel through the pixel center, row-major order.
inline std::vector<Ray> rays_for_camera(const CameraPose& pose,
                                        const Intrinsics& intr, double t_near,
                                        double t_far, int image_id = 0) {
  pose.validate();
  check_input(t_near > 0 && t_near < t_far,
              "rays_for_camera: need 0 < t_near < t_far");
  std::vector<Ray> rays;
  rays.reserve(size_t(intr.width) * size_t(intr.height));
  const Vec3 o = pose.origin();
  for (int r = 0; r < intr.height; ++r)
    for (int c = 0; c < intr.width; ++c) {
      Ray ray;
      ray.origin = o;
      ray.dir = pixel_direction(pose, intr, r, c);
      ray.t_near = t_near;
      ray.t_far = t_far;
      ray.row = r;
      ray.col = c;
      ray.image_id = image_id;
      rays.push_back(ray);
    }
  return rays;
}

}  // namespace hsnerf::render
