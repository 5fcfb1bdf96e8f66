// The poses.json manifest written next to dataset cubes: scene bounding
// radius, stack base, and one frame record per image.
#pragma once

#include <string>
#include <vector>

#include "hsnerf/common.hpp"
#include "hsnerf/rays.hpp"

namespace hsnerf::io {

struct Frame {
  std::string file;  // cube filename relative to the manifest
  render::CameraPose pose;
  double focal_px = 0;
  int width = 0, height = 0;
  double near = 0, far = 0;
  std::string half;  // "top" | "bottom"
};

struct PoseManifest {
  double bounding_radius = 0;
  Vec3 stack_base = Vec3::Zero();
  std::vector<Frame> frames;
};

void write_poses(const std::string& path, const PoseManifest& manifest);
PoseManifest read_poses(const std::string& path);

}  // namespace hsnerf::io
