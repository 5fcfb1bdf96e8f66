#include "hsnerf/poses_io.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace hsnerf::io {

void write_poses(const std::string& path, const PoseManifest& manifest) {
  nlohmann::json j;
  j["bounding_radius"] = manifest.bounding_radius;
  j["stack_base"] = {manifest.stack_base.x(), manifest.stack_base.y(),
                     manifest.stack_base.z()};
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : manifest.frames) {
    nlohmann::json jf;
    jf["file"] = f.file;
    std::vector<double> m(16);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) m[size_t(r) * 4 + c] = f.pose.c2w(r, c);
    jf["camera_to_world"] = m;
    jf["focal_px"] = f.focal_px;
    jf["width"] = f.width;
    jf["height"] = f.height;
    jf["near"] = f.near;
    jf["far"] = f.far;
    jf["half"] = f.half;
    frames.push_back(jf);
  }
  j["frames"] = frames;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("write_poses: cannot open '" + path + "'");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write_poses: write failed for '" + path + "'");
}

PoseManifest read_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_poses: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("read_poses: invalid JSON in '" + path + "': " + e.what());
  }
  PoseManifest m;
  try {
    m.bounding_radius = j.at("bounding_radius").get<double>();
    auto sb = j.at("stack_base").get<std::vector<double>>();
    if (sb.size() != 3) throw IoError("read_poses: stack_base must have 3 entries");
    m.stack_base = Vec3(sb[0], sb[1], sb[2]);
    for (const auto& jf : j.at("frames")) {
      Frame f;
      f.file = jf.at("file").get<std::string>();
      auto mat = jf.at("camera_to_world").get<std::vector<double>>();
      if (mat.size() != 16)
        throw IoError("read_poses: camera_to_world must have 16 entries");
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) f.pose.c2w(r, c) = mat[size_t(r) * 4 + c];
      f.focal_px = jf.at("focal_px").get<double>();
      f.width = jf.at("width").get<int>();
      f.height = jf.at("height").get<int>();
      f.near = jf.at("near").get<double>();
      f.far = jf.at("far").get<double>();
      f.half = jf.at("half").get<std::string>();
      if (f.half != "top" && f.half != "bottom")
        throw IoError("read_poses: frame half must be top|bottom");
      m.frames.push_back(f);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("read_poses: field error in '" + path + "': " + e.what());
  }
  return m;
}

}  // namespace hsnerf::io
