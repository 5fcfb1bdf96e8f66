// Analytic facility-plus-plume scene with closed-form per-wavelength density
// and radiance fields, a brute-force ray-march oracle renderer, hemisphere
// pose generation, biased farthest-point view selection, and dataset
// emission with ground-truth plume masks.
//
// Solids (ground plane, building box, stack cylinder) carry a large constant
// density and wavelength-dependent surface radiance with gentle spatial
// modulation. The plume is a chain of Gaussian puffs whose density in
// channel j is concentration(x) * a_j, with a_j the gas absorption spectrum
// (exactly zero away from its peak), and whose emission contrast decays
// along the chain with a configurable cooling profile.
#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "hsnerf/common.hpp"
#include "hsnerf/hsic.hpp"
#include "hsnerf/poses_io.hpp"
#include "hsnerf/rays.hpp"

namespace hsnerf::scene {

struct WavelengthGrid {
  VecD centers_um;

  static WavelengthGrid linear(int channels, double lo_um = 7.8,
                               double hi_um = 13.4);
  int channels() const { return int(centers_um.size()); }
  int nearest_channel(double um) const;
};

struct Puff {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;     // Gaussian sigma, meters
  double amplitude = 0.0;  // peak concentration
  double contrast = 0.0;   // emission contrast against plume_base
};

struct AnalyticScene {
  WavelengthGrid grid;

  double ground_height = 0.0;
  VecD ground_spectrum;
  Vec3 building_center = Vec3::Zero();
  Vec3 building_extents = Vec3::Zero();  // full side lengths
  VecD building_spectrum;
  Vec3 stack_base = Vec3::Zero();
  double stack_height = 38.0;
  double stack_radius = 2.5;
  VecD stack_spectrum;

  std::vector<Puff> puffs;
  VecD gas_absorption;      // a_j >= 0, single dominant peak, exact zeros
  double plume_base = 0.0;  // emission baseline the contrast rides on

  VecD ambient;             // radiance of empty space (zero by default)
  double bounding_radius = 130.0;
  double solid_density = 1e4;

  double wind_speed_kmh = 14.3;
  Vec3 wind_dir = Vec3::UnitX();

  int channels() const { return grid.channels(); }
  int peak_channel() const;
  Vec3 stack_top() const { return stack_base + Vec3(0, 0, stack_height); }

  double plume_concentration(const Vec3& x) const;
  // Concentration-weighted emission contrast at x.
  double plume_contrast(const Vec3& x) const;
  bool in_solid(const Vec3& x, const VecD** spectrum) const;
};

// Tunables the CLI exposes for the default scene.
struct SceneParams {
  double plume_strength = 0.12;   // peak puff concentration scale
  double plume_contrast = 5.0;    // emission contrast scale
  double cooling_length_m = 140;  // contrast zero-crossing distance
  int n_puffs = 12;
};

AnalyticScene make_default_scene(int channels, uint64_t seed,
                                 const SceneParams& params = {});

// Density and radiance of every channel at x.
void scene_fields(const AnalyticScene& scene, const Vec3& x, VecD& sigma,
                  VecD& radiance);
// Single-channel convenience used by tests.
void scene_field_channel(const AnalyticScene& scene, const Vec3& x, int j,
                         double& sigma_j, double& radiance_j);

// Fixed-step midpoint ray march over [t_near, t_far], composited per channel.
VecD oracle_render(const AnalyticScene& scene, const render::Ray& ray,
                   int n_steps);

struct PoseInfo {
  render::CameraPose pose;
  std::string half;  // "top" | "bottom" by polar-angle median
};

// Fibonacci lattice on the upper hemisphere of radius R about the stack
// base, every pose looking at the stack base with a +z up convention.
std::vector<PoseInfo> hemisphere_poses(int n, double radius,
                                       const Vec3& stack_base, uint64_t seed);

// Farthest-point sampling (Euclidean on camera origins, seeded random start,
// smallest-index tie break) over one pose pool; returns indices into `origins`.
std::vector<int> farthest_point_sample(const std::vector<Vec3>& origins, int k,
                                       uint64_t seed);

// Biased view selection: ceil(top_frac * k) poses FPS-selected within the
// top-half pool, the rest within the bottom pool. A pool smaller than its
// quota is taken whole with the surplus moved to the other pool (warned).
std::vector<int> biased_fps(const std::vector<PoseInfo>& poses, int k,
                            double top_frac, uint64_t seed);

// A pixel is plume iff the ray's plume-only optical depth at the peak
// absorption channel, attenuated by any solids crossed first, exceeds tau_od.
std::vector<uint8_t> plume_truth_mask(const AnalyticScene& scene,
                                      const render::CameraPose& pose,
                                      const render::Intrinsics& intr,
                                      double t_near, double t_far,
                                      double tau_od, int n_steps);

struct EmitConfig {
  int width = 32;
  int height = 32;
  double hemisphere_radius = 1000.0;
  int n_poses = 64;
  int march_steps = 512;
  double tau_od = 0.15;
  uint64_t seed = 1;
  int threads = 1;
};

// Writes cube_###.hsic, mask_###.png, poses.json and scene.json into out_dir.
// Pure function of (scene, config): identical bytes for identical inputs.
void emit_dataset(const AnalyticScene& scene, const EmitConfig& cfg,
                  const std::string& out_dir);

nlohmann::json scene_to_json(const AnalyticScene& scene, double tau_od);

}  // namespace hsnerf::scene
