#include "hsnerf/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "hsnerf/parallel.hpp"
#include "hsnerf/png_io.hpp"
#include "hsnerf/rng.hpp"

namespace hsnerf::scene {

namespace {
constexpr double kPi = 3.14159265358979323846;

// Smooth seeded material spectrum: base level plus a few low-order harmonics
// over the band.
VecD seeded_spectrum(const WavelengthGrid& grid, double base, double wiggle,
                     uint64_t seed) {
  const double lo = grid.centers_um.minCoeff();
  const double hi = grid.centers_um.maxCoeff();
  rng::Stream rnd(seed);
  double a[3], ph[3];
  for (int h = 0; h < 3; ++h) {
    a[h] = wiggle * (0.4 + 0.6 * rnd.next_double()) / double(h + 1);
    ph[h] = 2.0 * kPi * rnd.next_double();
  }
  VecD out(grid.channels());
  for (int j = 0; j < grid.channels(); ++j) {
    const double u = hi > lo ? (grid.centers_um(j) - lo) / (hi - lo) : 0.0;
    double v = base;
    for (int h = 0; h < 3; ++h) v += a[h] * std::sin(2.0 * kPi * (h + 1) * u + ph[h]);
    out(j) = v;
  }
  return out;
}

// Gentle deterministic spatial texture applied to solid radiance.
double spatial_modulation(const Vec3& x) {
  return 1.0 + 0.05 * std::sin(0.045 * x.x()) * std::cos(0.06 * x.y()) +
         0.03 * std::sin(0.08 * (x.x() + x.y()));
}
}  // namespace

WavelengthGrid WavelengthGrid::linear(int channels, double lo_um, double hi_um) {
  check_config(channels >= 2, "WavelengthGrid: need at least 2 channels");
  check_config(lo_um < hi_um, "WavelengthGrid: band must be increasing");
  WavelengthGrid g;
  g.centers_um.resize(channels);
  for (int j = 0; j < channels; ++j)
    g.centers_um(j) =
        lo_um + (hi_um - lo_um) * double(j) / double(channels - 1);
  return g;
}

int WavelengthGrid::nearest_channel(double um) const {
  int best = 0;
  double best_d = std::numeric_limits<double>::max();
  for (int j = 0; j < channels(); ++j) {
    const double d = std::abs(centers_um(j) - um);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

int AnalyticScene::peak_channel() const {
  int best = 0;
  for (int j = 1; j < channels(); ++j)
    if (gas_absorption(j) > gas_absorption(best)) best = j;
  return best;
}

double AnalyticScene::plume_concentration(const Vec3& x) const {
  double conc = 0.0;
  for (const auto& p : puffs) {
    const double d2 = (x - p.center).squaredNorm();
    conc += p.amplitude * std::exp(-d2 / (2.0 * p.radius * p.radius));
  }
  return conc;
}

double AnalyticScene::plume_contrast(const Vec3& x) const {
  double conc = 0.0, weighted = 0.0;
  for (const auto& p : puffs) {
    const double d2 = (x - p.center).squaredNorm();
    const double w = p.amplitude * std::exp(-d2 / (2.0 * p.radius * p.radius));
    conc += w;
    weighted += w * p.contrast;
  }
  return conc > 0.0 ? weighted / conc : 0.0;
}

bool AnalyticScene::in_solid(const Vec3& x, const VecD** spectrum) const {
  // Stack and building take precedence over the ground plane.
  const Vec3 rel = x - stack_base;
  if (rel.z() >= 0.0 && rel.z() <= stack_height &&
      rel.head<2>().squaredNorm() <= stack_radius * stack_radius) {
    if (spectrum) *spectrum = &stack_spectrum;
    return true;
  }
  const Vec3 b = x - building_center;
  if (std::abs(b.x()) <= 0.5 * building_extents.x() &&
      std::abs(b.y()) <= 0.5 * building_extents.y() &&
      std::abs(b.z()) <= 0.5 * building_extents.z()) {
    if (spectrum) *spectrum = &building_spectrum;
    return true;
  }
  if (x.z() <= ground_height) {
    if (spectrum) *spectrum = &ground_spectrum;
    return true;
  }
  return false;
}

AnalyticScene make_default_scene(int channels, uint64_t seed,
                                 const SceneParams& params) {
  check_config(channels >= 2, "make_default_scene: need c >= 2");
  AnalyticScene s;
  s.grid = WavelengthGrid::linear(channels);

  rng::Stream rnd(rng::key({seed, 0xA11CE}));
  const double wind_az = 2.0 * kPi * rnd.next_double();
  s.wind_dir = Vec3(std::cos(wind_az), std::sin(wind_az), 0.0);

  s.ground_height = 0.0;
  s.ground_spectrum = seeded_spectrum(s.grid, 10.0, 1.6, rng::key({seed, 1}));
  s.building_center = Vec3(25.0, 12.0, 8.0);
  s.building_extents = Vec3(30.0, 24.0, 16.0);
  s.building_spectrum = seeded_spectrum(s.grid, 8.5, 1.2, rng::key({seed, 2}));
  s.stack_base = Vec3::Zero();
  s.stack_height = 38.0;
  s.stack_radius = 2.5;
  s.stack_spectrum = seeded_spectrum(s.grid, 12.0, 1.0, rng::key({seed, 3}));
  s.plume_base = 10.0;
  s.ambient = VecD::Zero(channels);
  s.bounding_radius = 130.0;

  // Absorption: Gaussian bump at the channel nearest 10.5 um, clipped to an
  // exact zero once below 5% so distant channels carry no plume density.
  const double peak_um = s.grid.centers_um(s.grid.nearest_channel(10.5));
  const double width_um = 0.9, cutoff = 0.05;
  s.gas_absorption.resize(channels);
  for (int j = 0; j < channels; ++j) {
    const double d = s.grid.centers_um(j) - peak_um;
    const double g = std::exp(-d * d / (2.0 * width_um * width_um));
    s.gas_absorption(j) = g > cutoff ? (g - cutoff) / (1.0 - cutoff) : 0.0;
  }

  // Puff chain from the stack top along the wind, spaced by roughly two
  // seconds of drift at 14.3 km/h, spreading and cooling with distance.
  const double wind_mps = s.wind_speed_kmh / 3.6;
  const double ds = 2.0 * wind_mps;
  for (int m = 0; m < params.n_puffs; ++m) {
    const double dist = ds * double(m);
    Puff p;
    p.center = s.stack_top() + s.wind_dir * dist + Vec3(0, 0, 0.18 * dist);
    p.radius = 3.0 + 0.085 * dist;
    p.amplitude = params.plume_strength * std::exp(-dist / 90.0);
    p.contrast = params.plume_contrast * (1.0 - dist / params.cooling_length_m);
    s.puffs.push_back(p);
  }
  return s;
}

void scene_fields(const AnalyticScene& scene, const Vec3& x, VecD& sigma,
                  VecD& radiance) {
  const int c = scene.channels();
  sigma.setZero(c);
  radiance = scene.ambient;

  const VecD* solid_spec = nullptr;
  const bool solid = scene.in_solid(x, &solid_spec);
  const double conc = scene.plume_concentration(x);

  if (!solid && conc <= 0.0) return;

  const double mod = solid ? spatial_modulation(x) : 1.0;
  const double emission =
      conc > 0.0 ? scene.plume_base + scene.plume_contrast(x) : 0.0;
  for (int j = 0; j < c; ++j) {
    const double sp = conc * scene.gas_absorption(j);
    const double ss = solid ? scene.solid_density : 0.0;
    const double total = sp + ss;
    sigma(j) = total;
    if (total > 0.0) {
      const double rs = solid ? (*solid_spec)(j)*mod : 0.0;
      radiance(j) = (ss * rs + sp * emission) / total;
    }
  }
}

void scene_field_channel(const AnalyticScene& scene, const Vec3& x, int j,
                         double& sigma_j, double& radiance_j) {
  VecD s, r;
  scene_fields(scene, x, s, r);
  sigma_j = s(j);
  radiance_j = r(j);
}

VecD oracle_render(const AnalyticScene& scene, const render::Ray& ray,
                   int n_steps) {
  check_config(n_steps >= 256, "oracle_render: need n_steps >= 256");
  const int c = scene.channels();
  const double dt = (ray.t_far - ray.t_near) / double(n_steps);
  VecD color = VecD::Zero(c);
  Eigen::ArrayXd trans = Eigen::ArrayXd::Ones(c);
  VecD sigma(c), radiance(c);
  for (int i = 0; i < n_steps; ++i) {
    const double t = ray.t_near + (double(i) + 0.5) * dt;
    scene_fields(scene, ray.origin + t * ray.dir, sigma, radiance);
    const Eigen::ArrayXd att = (-sigma.array() * dt).exp();
    color.array() += trans * (1.0 - att) * radiance.array();
    trans *= att;
  }
  return color;
}

std::vector<PoseInfo> hemisphere_poses(int n, double radius,
                                       const Vec3& stack_base, uint64_t seed) {
  check_config(n >= 4, "hemisphere_poses: need n >= 4");
  rng::Stream rnd(rng::key({seed, 0xF1B0}));
  const double az0 = 2.0 * kPi * rnd.next_double();
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;

  std::vector<double> cos_theta(static_cast<size_t>(n));
  std::vector<PoseInfo> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double ct = (double(i) + 0.5) / double(n);
    const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    const double az = az0 + 2.0 * kPi * double(i) / golden;
    const Vec3 pos = stack_base + radius * Vec3(st * std::cos(az),
                                                st * std::sin(az), ct);
    out[size_t(i)].pose =
        render::CameraPose::look_at(pos, stack_base, Vec3::UnitZ());
    cos_theta[size_t(i)] = ct;
  }
  // Elevation halves split at the polar-angle median.
  std::vector<double> sorted = cos_theta;
  std::nth_element(sorted.begin(), sorted.begin() + n / 2, sorted.end());
  const double median = sorted[size_t(n) / 2];
  for (int i = 0; i < n; ++i)
    out[size_t(i)].half = cos_theta[size_t(i)] >= median ? "top" : "bottom";
  return out;
}

std::vector<int> farthest_point_sample(const std::vector<Vec3>& origins, int k,
                                       uint64_t seed) {
  const int n = int(origins.size());
  check_input(k <= n, "farthest_point_sample: k exceeds pool size");
  if (k <= 0) return {};
  std::vector<int> chosen;
  chosen.reserve(size_t(k));
  rng::Stream rnd(rng::key({seed, 0xF95}));
  chosen.push_back(int(rnd.next_below(uint64_t(n))));
  std::vector<double> min_d(size_t(n), std::numeric_limits<double>::max());
  while (int(chosen.size()) < k) {
    const Vec3& last = origins[size_t(chosen.back())];
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      min_d[size_t(i)] =
          std::min(min_d[size_t(i)], (origins[size_t(i)] - last).norm());
      if (min_d[size_t(i)] > best_d + 1e-15 &&
          std::find(chosen.begin(), chosen.end(), i) == chosen.end()) {
        best_d = min_d[size_t(i)];
        best = i;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

std::vector<int> biased_fps(const std::vector<PoseInfo>& poses, int k,
                            double top_frac, uint64_t seed) {
  check_input(k <= int(poses.size()), "biased_fps: k exceeds pose count");
  std::vector<int> top_pool, bottom_pool;
  for (int i = 0; i < int(poses.size()); ++i)
    (poses[size_t(i)].half == "top" ? top_pool : bottom_pool).push_back(i);

  int want_top = int(std::ceil(top_frac * double(k)));
  int want_bottom = k - want_top;
  if (want_top > int(top_pool.size())) {
    std::fprintf(stderr,
                 "[warn] biased_fps: top pool smaller than quota; moving "
                 "surplus to bottom\n");
    want_bottom += want_top - int(top_pool.size());
    want_top = int(top_pool.size());
  }
  if (want_bottom > int(bottom_pool.size())) {
    std::fprintf(stderr,
                 "[warn] biased_fps: bottom pool smaller than quota; moving "
                 "surplus to top\n");
    want_top += want_bottom - int(bottom_pool.size());
    want_bottom = int(bottom_pool.size());
  }

  auto select = [&](const std::vector<int>& pool, int count, uint64_t salt) {
    std::vector<Vec3> origins;
    origins.reserve(pool.size());
    for (int i : pool) origins.push_back(poses[size_t(i)].pose.origin());
    std::vector<int> local = farthest_point_sample(origins, count,
                                                   rng::key({seed, salt}));
    std::vector<int> out;
    out.reserve(local.size());
    for (int i : local) out.push_back(pool[size_t(i)]);
    return out;
  };
  std::vector<int> chosen = select(top_pool, want_top, 0x70);
  std::vector<int> bottom = select(bottom_pool, want_bottom, 0xB0);
  chosen.insert(chosen.end(), bottom.begin(), bottom.end());
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<uint8_t> plume_truth_mask(const AnalyticScene& scene,
                                      const render::CameraPose& pose,
                                      const render::Intrinsics& intr,
                                      double t_near, double t_far,
                                      double tau_od, int n_steps) {
  check_config(tau_od > 0.0, "plume_truth_mask: tau_od must be positive");
  const int peak = scene.peak_channel();
  const double a_peak = scene.gas_absorption(peak);
  auto rays = render::rays_for_camera(pose, intr, t_near, t_far);
  std::vector<uint8_t> mask(rays.size(), 0);
  const double dt = (t_far - t_near) / double(n_steps);
  for (size_t p = 0; p < rays.size(); ++p) {
    double solid_od = 0.0, plume_od = 0.0;
    for (int i = 0; i < n_steps; ++i) {
      const double t = t_near + (double(i) + 0.5) * dt;
      const Vec3 x = rays[p].origin + t * rays[p].dir;
      const double conc = scene.plume_concentration(x);
      if (conc > 0.0)
        plume_od += conc * a_peak * dt * std::exp(-solid_od);
      if (scene.in_solid(x, nullptr)) {
        solid_od += scene.solid_density * dt;
        if (solid_od > 40.0) break;  // fully occluded from here on
      }
    }
    mask[p] = plume_od > tau_od ? 255 : 0;
  }
  return mask;
}

nlohmann::json scene_to_json(const AnalyticScene& scene, double tau_od) {
  nlohmann::json j;
  j["channels"] = scene.channels();
  j["wavelengths_um"] = std::vector<double>(
      scene.grid.centers_um.data(),
      scene.grid.centers_um.data() + scene.grid.centers_um.size());
  j["gas_absorption"] = std::vector<double>(
      scene.gas_absorption.data(),
      scene.gas_absorption.data() + scene.gas_absorption.size());
  j["bounding_radius"] = scene.bounding_radius;
  j["stack_base"] = {scene.stack_base.x(), scene.stack_base.y(),
                     scene.stack_base.z()};
  j["stack_height_m"] = scene.stack_height;
  j["wind_speed_kmh"] = scene.wind_speed_kmh;
  j["tau_od"] = tau_od;
  return j;
}

void emit_dataset(const AnalyticScene& scene, const EmitConfig& cfg,
                  const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("emit_dataset: cannot create '" + out_dir + "'");

  auto poses = hemisphere_poses(cfg.n_poses, cfg.hemisphere_radius,
                                scene.stack_base, cfg.seed);
  render::Intrinsics intr;
  intr.width = cfg.width;
  intr.height = cfg.height;
  intr.focal_px = 0.5 * double(cfg.width) * cfg.hemisphere_radius /
                  (1.15 * scene.bounding_radius);
  const double t_near = cfg.hemisphere_radius - scene.bounding_radius;
  const double t_far = cfg.hemisphere_radius + scene.bounding_radius;

  io::PoseManifest manifest;
  manifest.bounding_radius = scene.bounding_radius;
  manifest.stack_base = scene.stack_base;

  for (int i = 0; i < cfg.n_poses; ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "cube_%03d.hsic", i);
    char mask_name[64];
    std::snprintf(mask_name, sizeof(mask_name), "mask_%03d.png", i);

    auto rays = render::rays_for_camera(poses[size_t(i)].pose, intr, t_near,
                                        t_far, i);
    io::HsiCube cube;
    cube.height = cfg.height;
    cube.width = cfg.width;
    cube.wavelengths_um = scene.grid.centers_um;
    cube.data.assign(cube.pixel_count() * size_t(scene.channels()), 0.0f);
    const int n_chunks = std::max(1, std::min(64, int(rays.size())));
    parallel_for_chunks(n_chunks, cfg.threads, [&](int chunk) {
      auto range = chunk_range(int(rays.size()), n_chunks, chunk);
      for (int p = range.begin; p < range.end; ++p) {
        VecD spec = oracle_render(scene, rays[size_t(p)], cfg.march_steps);
        for (int j = 0; j < scene.channels(); ++j)
          cube.data[size_t(p) * size_t(scene.channels()) + size_t(j)] =
              float(spec(j));
      }
    });
    io::write_hsic((fs::path(out_dir) / name).string(), cube);

    auto mask = plume_truth_mask(scene, poses[size_t(i)].pose, intr, t_near,
                                 t_far, cfg.tau_od, cfg.march_steps);
    io::PngImage png;
    png.width = cfg.width;
    png.height = cfg.height;
    png.channels = 1;
    png.data = mask;
    io::write_png((fs::path(out_dir) / mask_name).string(), png);

    io::Frame frame;
    frame.file = name;
    frame.pose = poses[size_t(i)].pose;
    frame.focal_px = intr.focal_px;
    frame.width = cfg.width;
    frame.height = cfg.height;
    frame.near = t_near;
    frame.far = t_far;
    frame.half = poses[size_t(i)].half;
    manifest.frames.push_back(frame);
  }
  io::write_poses((fs::path(out_dir) / "poses.json").string(), manifest);

  std::ofstream sj((fs::path(out_dir) / "scene.json").string(),
                   std::ios::trunc);
  if (!sj) throw IoError("emit_dataset: cannot write scene.json");
  sj << scene_to_json(scene, cfg.tau_od).dump(2) << "\n";
}

}  // namespace hsnerf::scene
