#include "hsnerf/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "hsnerf/checkpoint.hpp"
#include "hsnerf/parallel.hpp"
#include "hsnerf/png_io.hpp"
#include "hsnerf/scene.hpp"

namespace hsnerf::train {

namespace fs = std::filesystem;
using S = TrainScalar;

std::string Toggles::describe() const {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (on) {
      if (!s.empty()) s += "+";
      s += name;
    }
  };
  add(sam, "sam");
  add(awl2, "awl2");
  add(md, "md");
  add(gr, "gr");
  add(anneal, "anneal");
  return s.empty() ? "baseline" : s;
}

void TrainConfig::validate() const {
  check_config(views >= 1, "train: need at least one training view");
  check_config(eval_views >= 0, "train: eval_views must be >= 0");
  check_config(iterations >= 0, "train: iterations must be >= 0");
  check_config(batch_rays >= 1, "train: batch_rays must be >= 1");
  check_config(gr_patches >= 1 && gr_patch_size >= 2 && gr_pool >= 1,
               "train: invalid geometry-regularization settings");
  check_config(rs.n_coarse >= 2 && rs.n_fine >= 1,
               "train: invalid sample counts");
  check_config(threads >= 1, "train: threads must be >= 1");
  field.validate();
}

Dataset load_dataset(const std::string& dir, bool load_masks) {
  Dataset ds;
  ds.dir = dir;
  const fs::path root(dir);
  if (!fs::exists(root / "poses.json"))
    throw IoError("load_dataset: no poses.json under '" + dir + "'");
  ds.manifest = io::read_poses((root / "poses.json").string());
  check_input(!ds.manifest.frames.empty(), "load_dataset: empty manifest");

  for (size_t i = 0; i < ds.manifest.frames.size(); ++i) {
    const auto& f = ds.manifest.frames[i];
    ds.cubes.push_back(io::read_hsic((root / f.file).string()));
    const auto& cube = ds.cubes.back();
    if (cube.height != f.height || cube.width != f.width)
      throw IoError("load_dataset: cube/manifest shape mismatch for " + f.file);
    if (i > 0 && cube.channels() != ds.cubes.front().channels())
      throw IoError("load_dataset: inconsistent channel counts");
    if (load_masks) {
      char name[64];
      std::snprintf(name, sizeof(name), "mask_%03d.png", int(i));
      const fs::path mp = root / name;
      if (fs::exists(mp)) {
        auto png = io::read_png(mp.string());
        if (png.channels != 1 || png.width != f.width || png.height != f.height)
          throw IoError("load_dataset: bad mask " + std::string(name));
        ds.truth_masks.push_back(png.data);
      } else {
        ds.truth_masks.emplace_back();
      }
    }
  }
  ds.wavelengths = ds.cubes.front().wavelengths_um;

  const fs::path sj = root / "scene.json";
  if (fs::exists(sj)) {
    std::ifstream in(sj);
    nlohmann::json j;
    in >> j;
    auto abs = j.value("gas_absorption", std::vector<double>{});
    if (!abs.empty())
      ds.gas_absorption =
          Eigen::Map<const VecD>(abs.data(), Eigen::Index(abs.size()));
    ds.tau_od = j.value("tau_od", 0.0);
  }
  return ds;
}

ViewSplit select_views(const io::PoseManifest& manifest, int n_train,
                       uint64_t view_seed, int n_eval, uint64_t eval_seed) {
  const int n = int(manifest.frames.size());
  check_config(n_eval >= 0 && n_train >= 1, "select_views: bad counts");
  check_config(n_train + n_eval <= n,
               "select_views: train+eval exceeds available views");

  // Simple random sample for evaluation (partial Fisher-Yates).
  std::vector<int> ids(static_cast<size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  rng::Stream rnd(rng::key({eval_seed, 0xE7A1}));
  for (int i = 0; i < n_eval; ++i) {
    const int j = i + int(rnd.next_below(uint64_t(n - i)));
    std::swap(ids[size_t(i)], ids[size_t(j)]);
  }
  ViewSplit split;
  split.eval_ids.assign(ids.begin(), ids.begin() + n_eval);
  std::sort(split.eval_ids.begin(), split.eval_ids.end());

  // Biased farthest-point sampling over the remaining pool.
  std::vector<int> pool(ids.begin() + n_eval, ids.end());
  std::sort(pool.begin(), pool.end());
  std::vector<scene::PoseInfo> infos;
  infos.reserve(pool.size());
  for (int id : pool) {
    scene::PoseInfo info;
    info.pose = manifest.frames[size_t(id)].pose;
    info.half = manifest.frames[size_t(id)].half;
    infos.push_back(info);
  }
  auto local = scene::biased_fps(infos, n_train, 0.65, view_seed);
  for (int li : local) split.train_ids.push_back(pool[size_t(li)]);
  std::sort(split.train_ids.begin(), split.train_ids.end());
  return split;
}

namespace {

struct ViewData {
  int frame_id = 0;
  std::vector<render::Ray> rays;
  Mat<S> targets_std;  // HW x c
};

struct PatchCamera {
  render::CameraPose pose;
  double t_near = 0, t_far = 0;
};

render::CameraPose look_at_safe(const Vec3& eye, const Vec3& target) {
  try {
    return render::CameraPose::look_at(eye, target, Vec3::UnitZ());
  } catch (const ConfigError&) {
    return render::CameraPose::look_at(eye, target, Vec3::UnitX());
  }
}

std::vector<PatchCamera> build_patch_pool(const TrainConfig& cfg,
                                          const Dataset& ds,
                                          const std::vector<int>& train_ids) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::max());
  Vec3 hi = Vec3::Constant(std::numeric_limits<double>::lowest());
  for (int id : train_ids) {
    const Vec3 o = ds.manifest.frames[size_t(id)].pose.origin();
    lo = lo.cwiseMin(o);
    hi = hi.cwiseMax(o);
  }
  const double bound = ds.manifest.bounding_radius;
  std::vector<PatchCamera> pool(static_cast<size_t>(cfg.gr_pool));
  for (int i = 0; i < cfg.gr_pool; ++i) {
    rng::Stream rnd(rng::key({cfg.sample_seed, 0xA00F, uint64_t(i)}));
    Vec3 pos;
    for (int a = 0; a < 3; ++a)
      pos(a) = lo(a) + rnd.next_double() * (hi(a) - lo(a));
    Vec3 jitter;
    for (int a = 0; a < 3; ++a) jitter(a) = 2.0 * rnd.next_double() - 1.0;
    const Vec3 target = ds.manifest.stack_base + 0.05 * bound * jitter;
    PatchCamera cam;
    cam.pose = look_at_safe(pos, target);
    const double dist = (pos - ds.manifest.stack_base).norm();
    cam.t_near = std::max(1.0, dist - bound);
    cam.t_far = dist + bound;
    pool[size_t(i)] = cam;
  }
  return pool;
}

// One parallel work item: either a chunk of supervised batch rays or one
// geometry-regularization patch.
struct WorkItem {
  std::vector<render::Ray> rays;
  Mat<S> targets;  // batch chunks only
  bool is_patch = false;

  pipeline::Workspace<S> ws;
  pipeline::GroupRender<S> render;
  nn::GradBuffer<S> grads_coarse, grads_fine;
  loss::Terms terms;
};

struct Logger {
  std::ofstream out;
  explicit Logger(const std::string& path) : out(path, std::ios::trunc) {
    if (!out) throw IoError("cannot open training log '" + path + "'");
  }
  void line(const nlohmann::json& j) { out << j.dump() << "\n"; }
};

nlohmann::json vec_to_json(const VecD& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

VecD json_to_vec(const nlohmann::json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VecD>(v.data(), Eigen::Index(v.size()));
}

}  // namespace

int64_t peak_rss_kb() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("VmHWM:", 0) == 0) {
      int64_t kb = 0;
      std::sscanf(line.c_str(), "VmHWM: %ld", &kb);
      return kb;
    }
  }
  return 0;
}

void save_checkpoint_file(const std::string& path, const TrainConfig& cfg,
                          const TrainerState& state) {
  io::Checkpoint ckpt;
  nlohmann::json& m = ckpt.manifest;
  m["format"] = "hsnerf-ckpt-v1";
  m["iteration"] = state.iteration;
  m["config_hash"] = cfg.config_hash;
  m["dataset_dir"] = cfg.dataset_dir;
  m["views"] = cfg.views;
  m["eval_views"] = cfg.eval_views;
  m["iterations"] = cfg.iterations;
  m["batch_rays"] = cfg.batch_rays;
  m["checkpoint_every"] = cfg.checkpoint_every;
  m["eval_every"] = cfg.eval_every;
  m["early_stop_patience"] = cfg.early_stop_patience;
  m["seeds"] = {{"view", cfg.view_seed},
                {"eval", cfg.eval_seed},
                {"init", cfg.init_seed},
                {"sample", cfg.sample_seed}};
  m["toggles"] = {{"sam", cfg.toggles.sam},
                  {"awl2", cfg.toggles.awl2},
                  {"md", cfg.toggles.md},
                  {"gr", cfg.toggles.gr},
                  {"anneal", cfg.toggles.anneal}};
  m["field"] = {{"base_depth", cfg.field.base_depth},
                {"base_width", cfg.field.base_width},
                {"head_depth", cfg.field.head_depth},
                {"head_width", cfg.field.head_width},
                {"L_pos", cfg.field.L_pos},
                {"L_dir", cfg.field.L_dir},
                {"channels", cfg.field.channels},
                {"skip_layer", cfg.field.skip_layer},
                {"scene_radius", cfg.field.scene_radius},
                {"per_channel",
                 cfg.field.density_mode == field::DensityMode::kPerChannel}};
  m["render"] = {{"n_coarse", cfg.rs.n_coarse},
                 {"n_fine", cfg.rs.n_fine},
                 {"anneal_iters", cfg.rs.anneal_iters},
                 {"anneal_p_s", cfg.rs.anneal_p_s},
                 {"depth_sigma_literal",
                  cfg.rs.depth_mode == render::DepthMode::kSigmaWeighted}};
  m["sched"] = {{"lambda_c", cfg.sched.lambda_c},
                {"lambda_f", cfg.sched.lambda_f},
                {"lambda_sam", cfg.sched.lambda_sam},
                {"awl2_ramp_start", cfg.sched.awl2_ramp_start},
                {"awl2_ramp_end", cfg.sched.awl2_ramp_end},
                {"awl2_max", cfg.sched.awl2_max},
                {"gr_start", cfg.sched.gr_start},
                {"gr_end", cfg.sched.gr_end},
                {"gr_ramp_end", cfg.sched.gr_ramp_end}};
  m["lr"] = {{"min", cfg.lr.lr_min},
             {"max", cfg.lr.lr_max},
             {"warmup_iters", cfg.lr.warmup_iters},
             {"decay_end_iter", cfg.lr.decay_end_iter}};
  m["awl2_update_every"] = cfg.awl2_update_every;
  m["awl2_subsample"] = cfg.awl2_subsample;
  m["gr"] = {{"patches", cfg.gr_patches},
             {"patch_size", cfg.gr_patch_size},
             {"pool", cfg.gr_pool}};
  m["train_ids"] = state.train_ids;
  m["eval_ids"] = state.eval_ids;
  m["channel_weights"] = {{"w", vec_to_json(state.channel_weights.w)},
                          {"updated_at", state.channel_weights.updated_at}};
  m["standardizer"] = {{"mean", vec_to_json(state.standardizer.mean)},
                       {"sd", vec_to_json(state.standardizer.sd)}};
  m["adam"] = {{"beta1", double(state.adam_coarse.beta1)},
               {"beta2", double(state.adam_coarse.beta2)},
               {"eps", double(state.adam_coarse.eps)},
               {"step_coarse", state.adam_coarse.step},
               {"step_fine", state.adam_fine.step}};

  auto add_store = [&](const std::string& prefix, const TrainScalarStore& p,
                       const nn::AdamState<S>& adam) {
    for (size_t i = 0; i < p.entries.size(); ++i) {
      const auto& e = p.entries[i];
      const std::string base = prefix + e.name;
      ckpt.add_tensor(base + ".W", e.W.data(), e.W.rows(), e.W.cols());
      ckpt.add_tensor(base + ".W.m", adam.mW[i].data(), e.W.rows(), e.W.cols());
      ckpt.add_tensor(base + ".W.v", adam.vW[i].data(), e.W.rows(), e.W.cols());
      ckpt.add_tensor(base + ".b", e.b.data(), e.b.size(), 1);
      ckpt.add_tensor(base + ".b.m", adam.mb[i].data(), e.b.size(), 1);
      ckpt.add_tensor(base + ".b.v", adam.vb[i].data(), e.b.size(), 1);
    }
  };
  add_store("coarse/", state.coarse, state.adam_coarse);
  add_store("fine/", state.fine, state.adam_fine);
  io::write_checkpoint(path, ckpt);
}

LoadedCheckpoint load_checkpoint_file(const std::string& path) {
  io::Checkpoint ckpt = io::read_checkpoint(path);
  const nlohmann::json& m = ckpt.manifest;
  LoadedCheckpoint out;
  TrainConfig& cfg = out.cfg;
  try {
    cfg.dataset_dir = m.at("dataset_dir").get<std::string>();
    cfg.views = m.at("views").get<int>();
    cfg.eval_views = m.at("eval_views").get<int>();
    cfg.iterations = m.at("iterations").get<int64_t>();
    cfg.batch_rays = m.at("batch_rays").get<int>();
    cfg.checkpoint_every = m.at("checkpoint_every").get<int64_t>();
    cfg.eval_every = m.at("eval_every").get<int64_t>();
    cfg.early_stop_patience = m.at("early_stop_patience").get<int64_t>();
    cfg.config_hash = m.at("config_hash").get<std::string>();
    cfg.view_seed = m.at("seeds").at("view").get<uint64_t>();
    cfg.eval_seed = m.at("seeds").at("eval").get<uint64_t>();
    cfg.init_seed = m.at("seeds").at("init").get<uint64_t>();
    cfg.sample_seed = m.at("seeds").at("sample").get<uint64_t>();
    cfg.toggles.sam = m.at("toggles").at("sam").get<bool>();
    cfg.toggles.awl2 = m.at("toggles").at("awl2").get<bool>();
    cfg.toggles.md = m.at("toggles").at("md").get<bool>();
    cfg.toggles.gr = m.at("toggles").at("gr").get<bool>();
    cfg.toggles.anneal = m.at("toggles").at("anneal").get<bool>();
    const auto& f = m.at("field");
    cfg.field.base_depth = f.at("base_depth").get<int>();
    cfg.field.base_width = f.at("base_width").get<int>();
    cfg.field.head_depth = f.at("head_depth").get<int>();
    cfg.field.head_width = f.at("head_width").get<int>();
    cfg.field.L_pos = f.at("L_pos").get<int>();
    cfg.field.L_dir = f.at("L_dir").get<int>();
    cfg.field.channels = f.at("channels").get<int>();
    cfg.field.skip_layer = f.at("skip_layer").get<int>();
    cfg.field.scene_radius = f.at("scene_radius").get<double>();
    cfg.field.density_mode = f.at("per_channel").get<bool>()
                                 ? field::DensityMode::kPerChannel
                                 : field::DensityMode::kSingle;
    const auto& r = m.at("render");
    cfg.rs.n_coarse = r.at("n_coarse").get<int>();
    cfg.rs.n_fine = r.at("n_fine").get<int>();
    cfg.rs.anneal_iters = r.at("anneal_iters").get<int64_t>();
    cfg.rs.anneal_p_s = r.at("anneal_p_s").get<double>();
    cfg.rs.depth_mode = r.at("depth_sigma_literal").get<bool>()
                            ? render::DepthMode::kSigmaWeighted
                            : render::DepthMode::kDistance;
    cfg.rs.anneal = cfg.toggles.anneal;
    const auto& sc = m.at("sched");
    cfg.sched.lambda_c = sc.at("lambda_c").get<double>();
    cfg.sched.lambda_f = sc.at("lambda_f").get<double>();
    cfg.sched.lambda_sam = sc.at("lambda_sam").get<double>();
    cfg.sched.awl2_ramp_start = sc.at("awl2_ramp_start").get<int64_t>();
    cfg.sched.awl2_ramp_end = sc.at("awl2_ramp_end").get<int64_t>();
    cfg.sched.awl2_max = sc.at("awl2_max").get<double>();
    cfg.sched.gr_start = sc.at("gr_start").get<double>();
    cfg.sched.gr_end = sc.at("gr_end").get<double>();
    cfg.sched.gr_ramp_end = sc.at("gr_ramp_end").get<int64_t>();
    const auto& lr = m.at("lr");
    cfg.lr.lr_min = lr.at("min").get<double>();
    cfg.lr.lr_max = lr.at("max").get<double>();
    cfg.lr.warmup_iters = lr.at("warmup_iters").get<int64_t>();
    cfg.lr.decay_end_iter = lr.at("decay_end_iter").get<int64_t>();
    cfg.awl2_update_every = m.at("awl2_update_every").get<int64_t>();
    cfg.awl2_subsample = m.at("awl2_subsample").get<int>();
    cfg.gr_patches = m.at("gr").at("patches").get<int>();
    cfg.gr_patch_size = m.at("gr").at("patch_size").get<int>();
    cfg.gr_pool = m.at("gr").at("pool").get<int>();

    TrainerState& st = out.state;
    st.iteration = m.at("iteration").get<int64_t>();
    st.train_ids = m.at("train_ids").get<std::vector<int>>();
    st.eval_ids = m.at("eval_ids").get<std::vector<int>>();
    st.channel_weights.w = json_to_vec(m.at("channel_weights").at("w"));
    st.channel_weights.updated_at =
        m.at("channel_weights").at("updated_at").get<int64_t>();
    st.standardizer.mean = json_to_vec(m.at("standardizer").at("mean"));
    st.standardizer.sd = json_to_vec(m.at("standardizer").at("sd"));

    st.coarse = field::make_field_params<S>(cfg.field);
    st.fine = field::make_field_params<S>(cfg.field);
    st.adam_coarse.init_like(st.coarse);
    st.adam_fine.init_like(st.fine);
    st.adam_coarse.beta1 = st.adam_fine.beta1 =
        S(m.at("adam").at("beta1").get<double>());
    st.adam_coarse.beta2 = st.adam_fine.beta2 =
        S(m.at("adam").at("beta2").get<double>());
    st.adam_coarse.eps = st.adam_fine.eps =
        S(m.at("adam").at("eps").get<double>());
    st.adam_coarse.step = m.at("adam").at("step_coarse").get<int64_t>();
    st.adam_fine.step = m.at("adam").at("step_fine").get<int64_t>();

    auto refs = ckpt.tensors();
    auto find =
        [&](const std::string& name) -> const io::Checkpoint::TensorRef& {
      for (const auto& t : refs)
        if (t.name == name) return t;
      throw IoError("checkpoint: missing tensor '" + name + "'");
    };
    auto load_store = [&](const std::string& prefix, TrainScalarStore& p,
                          nn::AdamState<S>& adam) {
      for (size_t i = 0; i < p.entries.size(); ++i) {
        auto& e = p.entries[i];
        auto copy_mat = [&](const std::string& name, Mat<S>& dst) {
          const auto& t = find(name);
          if (t.rows != dst.rows() || t.cols != dst.cols())
            throw IoError("checkpoint: shape mismatch for '" + name + "'");
          std::copy(ckpt.tensor_data(t), ckpt.tensor_data(t) + dst.size(),
                    dst.data());
        };
        auto copy_vec = [&](const std::string& name, Vec<S>& dst) {
          const auto& t = find(name);
          if (t.rows != dst.size() || t.cols != 1)
            throw IoError("checkpoint: shape mismatch for '" + name + "'");
          std::copy(ckpt.tensor_data(t), ckpt.tensor_data(t) + dst.size(),
                    dst.data());
        };
        const std::string base = prefix + e.name;
        copy_mat(base + ".W", e.W);
        copy_mat(base + ".W.m", adam.mW[i]);
        copy_mat(base + ".W.v", adam.vW[i]);
        copy_vec(base + ".b", e.b);
        copy_vec(base + ".b.m", adam.mb[i]);
        copy_vec(base + ".b.v", adam.vb[i]);
      }
    };
    load_store("coarse/", st.coarse, st.adam_coarse);
    load_store("fine/", st.fine, st.adam_fine);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint manifest error: ") + e.what());
  }
  return out;
}

io::HsiCube render_view(const TrainerState& state, const TrainConfig& cfg,
                        const io::Frame& frame, int image_id,
                        const VecD& wavelengths, int threads) {
  render::Intrinsics intr{frame.width, frame.height, frame.focal_px};
  auto rays =
      render::rays_for_camera(frame.pose, intr, frame.near, frame.far, image_id);
  const int c = cfg.field.channels;
  Mat<S> colors(Eigen::Index(rays.size()), c);

  pipeline::RenderSettings rs = cfg.rs;
  rs.anneal = false;
  constexpr uint64_t kRenderSeed = 0x52454E44;  // fixed: renders are pure

  const int chunk_px = 128;
  const int n_chunks = int((rays.size() + chunk_px - 1) / chunk_px);
  std::vector<pipeline::Workspace<S>> wss(static_cast<size_t>(n_chunks));
  std::vector<pipeline::GroupRender<S>> renders(static_cast<size_t>(n_chunks));
  parallel_for_chunks(n_chunks, threads, [&](int chunk) {
    const int begin = chunk * chunk_px;
    const int end = std::min<int>(begin + chunk_px, int(rays.size()));
    std::vector<render::Ray> group(rays.begin() + begin, rays.begin() + end);
    pipeline::process_group<S>(state.coarse, state.fine, cfg.field, rs, group,
                               /*iteration=*/0, kRenderSeed,
                               /*density_only=*/false, nullptr,
                               renders[size_t(chunk)], wss[size_t(chunk)]);
  });
  for (int chunk = 0; chunk < n_chunks; ++chunk) {
    const int begin = chunk * chunk_px;
    colors.middleRows(begin, renders[size_t(chunk)].fine_color.rows()) =
        renders[size_t(chunk)].fine_color;
  }

  MatD dest = state.standardizer.invert(colors.template cast<double>().eval());
  return io::HsiCube::from_pixels(frame.height, frame.width, wavelengths, dest);
}

namespace {

struct TrainContext {
  const TrainConfig& cfg;
  const Dataset& ds;
  std::vector<ViewData> views;
  std::vector<PatchCamera> patch_pool;
  render::Intrinsics intr;
};

void refresh_channel_weights(const TrainContext& ctx, TrainerState& state,
                             int64_t k) {
  const auto& cfg = ctx.cfg;
  const int c = cfg.field.channels;
  const int hw = ctx.intr.width * ctx.intr.height;
  const int64_t total = int64_t(ctx.views.size()) * hw;
  std::vector<std::pair<int, int>> picks;  // (view, pixel)
  if (cfg.awl2_subsample > 0 && cfg.awl2_subsample < total) {
    rng::Stream rnd(rng::key({cfg.sample_seed, 0xA37, uint64_t(k)}));
    picks.reserve(size_t(cfg.awl2_subsample));
    for (int i = 0; i < cfg.awl2_subsample; ++i)
      picks.emplace_back(int(rnd.next_below(uint64_t(ctx.views.size()))),
                         int(rnd.next_below(uint64_t(hw))));
  } else {
    picks.reserve(size_t(total));
    for (size_t v = 0; v < ctx.views.size(); ++v)
      for (int p = 0; p < hw; ++p) picks.emplace_back(int(v), p);
  }

  const int chunk_px = 256;
  const int n_chunks = int((picks.size() + chunk_px - 1) / chunk_px);
  MatD rendered(Eigen::Index(picks.size()), c);
  MatD target(Eigen::Index(picks.size()), c);
  std::vector<pipeline::Workspace<S>> wss(static_cast<size_t>(n_chunks));
  std::vector<pipeline::GroupRender<S>> renders(static_cast<size_t>(n_chunks));
  pipeline::RenderSettings rs = cfg.rs;  // keep annealing state of iteration k
  parallel_for_chunks(n_chunks, cfg.threads, [&](int chunk) {
    const size_t begin = size_t(chunk) * chunk_px;
    const size_t end = std::min(begin + chunk_px, picks.size());
    std::vector<render::Ray> group;
    group.reserve(end - begin);
    for (size_t i = begin; i < end; ++i)
      group.push_back(ctx.views[size_t(picks[i].first)].rays[size_t(picks[i].second)]);
    pipeline::process_group<S>(state.coarse, state.fine, cfg.field, rs, group,
                               k, cfg.sample_seed, false, nullptr,
                               renders[size_t(chunk)], wss[size_t(chunk)]);
  });
  for (int chunk = 0; chunk < n_chunks; ++chunk) {
    const size_t begin = size_t(chunk) * chunk_px;
    const auto& r = renders[size_t(chunk)].fine_color;
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
      rendered.row(Eigen::Index(begin) + i) =
          r.row(i).template cast<double>();
      const auto& pick = picks[begin + size_t(i)];
      target.row(Eigen::Index(begin) + i) =
          ctx.views[size_t(pick.first)]
              .targets_std.row(pick.second)
              .template cast<double>();
    }
  }
  state.channel_weights = loss::channel_weights_from_residuals(rendered, target, k);
}

}  // namespace

TrainOutcome run_training(const TrainConfig& cfg_in, const Dataset& ds,
                          const std::string& resume_checkpoint) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  fs::create_directories(cfg.out_dir);

  TrainerState state;
  if (!resume_checkpoint.empty()) {
    auto loaded = load_checkpoint_file(resume_checkpoint);
    // The checkpoint is authoritative for everything that defines the
    // trajectory; only paths, thread count and the horizon may differ.
    std::string dataset_dir = cfg.dataset_dir.empty() ? loaded.cfg.dataset_dir
                                                      : cfg.dataset_dir;
    std::string out_dir = cfg.out_dir;
    int threads = cfg.threads;
    int64_t iterations = cfg.iterations;
    cfg = loaded.cfg;
    cfg.dataset_dir = dataset_dir;
    cfg.out_dir = out_dir;
    cfg.threads = threads;
    cfg.iterations = iterations;
    state = std::move(loaded.state);
  } else {
    auto split = select_views(ds.manifest, cfg.views, cfg.view_seed,
                              cfg.eval_views, cfg.eval_seed);
    state.train_ids = split.train_ids;
    state.eval_ids = split.eval_ids;

    // Standardize over every training pixel.
    int64_t total_px = 0;
    for (int id : state.train_ids)
      total_px += int64_t(ds.cubes[size_t(id)].pixel_count());
    MatD pixels(total_px, ds.cubes.front().channels());
    Eigen::Index row = 0;
    for (int id : state.train_ids) {
      MatD p = ds.cubes[size_t(id)].pixels();
      pixels.middleRows(row, p.rows()) = p;
      row += p.rows();
    }
    state.standardizer = field::Standardizer::fit(pixels);
    state.channel_weights = loss::ChannelWeights::uniform(cfg.field.channels);
    state.coarse = field::init_field<S>(cfg.field, rng::key({cfg.init_seed, 0xC}));
    state.fine = field::init_field<S>(cfg.field, rng::key({cfg.init_seed, 0xF}));
    state.adam_coarse.init_like(state.coarse);
    state.adam_fine.init_like(state.fine);
    state.iteration = 0;
  }
  check_config(cfg.field.channels == ds.cubes.front().channels(),
               "train: field channel count must match the dataset");

  TrainContext ctx{cfg, ds, {}, {}, {}};
  const auto& frame0 = ds.manifest.frames.front();
  ctx.intr = render::Intrinsics{frame0.width, frame0.height, frame0.focal_px};
  for (int id : state.train_ids) {
    const auto& f = ds.manifest.frames[size_t(id)];
    ViewData v;
    v.frame_id = id;
    v.rays = render::rays_for_camera(
        f.pose, render::Intrinsics{f.width, f.height, f.focal_px}, f.near,
        f.far, id);
    v.targets_std =
        state.standardizer.apply(ds.cubes[size_t(id)].pixels()).cast<S>();
    ctx.views.push_back(std::move(v));
  }
  if (cfg.toggles.gr) ctx.patch_pool = build_patch_pool(cfg, ds, state.train_ids);

  // Eval ground truth for the optional training-time eval loop.
  double eval_peak = 1.0;
  if (!state.eval_ids.empty()) {
    double lo = std::numeric_limits<double>::max(), hi = -lo;
    for (int id : state.eval_ids)
      for (float v : ds.cubes[size_t(id)].data) {
        lo = std::min(lo, double(v));
        hi = std::max(hi, double(v));
      }
    eval_peak = std::max(1e-12, hi - lo);
  }

  Logger log((fs::path(cfg.out_dir) / "train_log.jsonl").string());

  // Fixed work decomposition: batch chunks of 32 rays plus one item per
  // geometry patch; identical for every thread count.
  const int chunk_rays = 32;
  const int n_batch_chunks = (cfg.batch_rays + chunk_rays - 1) / chunk_rays;
  const int n_items = n_batch_chunks + (cfg.toggles.gr ? cfg.gr_patches : 0);
  std::vector<WorkItem> items(static_cast<size_t>(n_items));
  for (int i = 0; i < n_items; ++i) {
    items[size_t(i)].is_patch = i >= n_batch_chunks;
    items[size_t(i)].grads_coarse.init_like(state.coarse);
    items[size_t(i)].grads_fine.init_like(state.fine);
  }

  const int c = cfg.field.channels;
  const int hw = ctx.intr.width * ctx.intr.height;
  const int sp = cfg.gr_patch_size;
  pipeline::RenderSettings rs = cfg.rs;
  rs.anneal = cfg.toggles.anneal;

  loss::Terms last_terms;
  double last_lr = 0.0;
  bool stopped_early = false;
  double best_eval = -1e300;
  int64_t evals_since_best = 0;

  auto dump_crash = [&]() {
    try {
      save_checkpoint_file((fs::path(cfg.out_dir) / "crash.ckpt").string(), cfg,
                           state);
    } catch (...) {
    }
  };

  for (int64_t k = state.iteration; k < cfg.iterations; ++k) {
    if (cfg.toggles.awl2 && k > 0 && k % cfg.awl2_update_every == 0)
      refresh_channel_weights(ctx, state, k);

    // Draw the supervised ray batch.
    {
      rng::Stream rnd(rng::key({cfg.sample_seed, 0xBA7C4, uint64_t(k)}));
      for (int i = 0; i < n_batch_chunks; ++i) {
        auto& item = items[size_t(i)];
        const int begin = i * chunk_rays;
        const int count = std::min(chunk_rays, cfg.batch_rays - begin);
        item.rays.resize(size_t(count));
        item.targets.resize(count, c);
        for (int r = 0; r < count; ++r) {
          const int v = int(rnd.next_below(uint64_t(ctx.views.size())));
          const int p = int(rnd.next_below(uint64_t(hw)));
          item.rays[size_t(r)] = ctx.views[size_t(v)].rays[size_t(p)];
          item.targets.row(r) = ctx.views[size_t(v)].targets_std.row(p);
        }
      }
    }
    // Draw patches.
    if (cfg.toggles.gr) {
      for (int p = 0; p < cfg.gr_patches; ++p) {
        auto& item = items[size_t(n_batch_chunks + p)];
        rng::Stream rnd(
            rng::key({cfg.sample_seed, 0xD7A, uint64_t(k), uint64_t(p)}));
        const int cam_idx = int(rnd.next_below(uint64_t(ctx.patch_pool.size())));
        const auto& cam = ctx.patch_pool[size_t(cam_idx)];
        const int r0 = int(rnd.next_below(uint64_t(ctx.intr.height - sp + 1)));
        const int c0 = int(rnd.next_below(uint64_t(ctx.intr.width - sp + 1)));
        item.rays.clear();
        item.rays.reserve(size_t(sp) * sp);
        for (int rr = 0; rr < sp; ++rr)
          for (int cc = 0; cc < sp; ++cc) {
            render::Ray ray;
            ray.origin = cam.pose.origin();
            ray.dir = render::pixel_direction(cam.pose, ctx.intr, r0 + rr,
                                              c0 + cc);
            ray.t_near = cam.t_near;
            ray.t_far = cam.t_far;
            ray.row = r0 + rr;
            ray.col = c0 + cc;
            ray.image_id = 1000000 + cam_idx;
            item.rays.push_back(ray);
          }
      }
    }

    const double lam_awl2 = cfg.toggles.awl2 ? cfg.sched.lambda_awl2(k) : 0.0;
    const double lam_gr = cfg.sched.lambda_gr(k);
    const Vec<S> cw = state.channel_weights.w.cast<S>();
    const S inv_batch = S(1) / S(cfg.batch_rays);
    const S inv_patches = S(1) / S(std::max(1, cfg.gr_patches));

    parallel_for_chunks(n_items, cfg.threads, [&](int i) {
      auto& item = items[size_t(i)];
      item.terms = loss::Terms{};
      item.grads_coarse.set_zero();
      item.grads_fine.set_zero();
      if (!item.is_patch) {
        std::function<void(const pipeline::GroupRender<S>&,
                           pipeline::GroupCotangents<S>&)>
            loss_fn = [&](const pipeline::GroupRender<S>& gr,
                          pipeline::GroupCotangents<S>& cot) {
              item.terms.l2 = double(inv_batch) *
                              double(loss::l2_sum<S>(
                                  gr.coarse_color, gr.fine_color, item.targets,
                                  S(cfg.sched.lambda_c), S(cfg.sched.lambda_f),
                                  &cot.d_coarse, &cot.d_fine, inv_batch));
              if (cfg.toggles.sam)
                item.terms.sam =
                    double(inv_batch) *
                    double(loss::sam_sum<S>(
                        gr.fine_color, item.targets, &cot.d_fine,
                        S(cfg.sched.lambda_sam) * inv_batch));
              if (cfg.toggles.awl2)
                item.terms.awl2 = double(inv_batch) *
                                  double(loss::awl2_sum<S>(
                                      gr.fine_color, item.targets, cw,
                                      &cot.d_fine, S(lam_awl2) * inv_batch));
            };
        pipeline::process_group<S>(state.coarse, state.fine, cfg.field, rs,
                                   item.rays, k, cfg.sample_seed, false,
                                   nullptr, item.render, item.ws, &loss_fn,
                                   &item.grads_coarse, &item.grads_fine);
      } else {
        std::function<void(const pipeline::GroupRender<S>&,
                           pipeline::GroupCotangents<S>&)>
            loss_fn = [&](const pipeline::GroupRender<S>& gr,
                          pipeline::GroupCotangents<S>& cot) {
              Mat<S> grid(sp, sp), dgrid = Mat<S>::Zero(sp, sp);
              for (int rr = 0; rr < sp; ++rr)
                for (int cc = 0; cc < sp; ++cc)
                  grid(rr, cc) = gr.mean_depth(rr * sp + cc);
              item.terms.gr =
                  double(inv_patches) *
                  double(loss::gr_patch_sum<S>(grid, &dgrid,
                                               S(lam_gr) * inv_patches));
              for (int rr = 0; rr < sp; ++rr)
                for (int cc = 0; cc < sp; ++cc)
                  cot.d_depth(rr * sp + cc) = dgrid(rr, cc);
            };
        pipeline::process_group<S>(state.coarse, state.fine, cfg.field, rs,
                                   item.rays, k, cfg.sample_seed, true, nullptr,
                                   item.render, item.ws, &loss_fn,
                                   &item.grads_coarse, &item.grads_fine);
      }
    });

    // Fixed-order reduction.
    loss::Terms terms;
    state.coarse.zero_grads();
    state.fine.zero_grads();
    for (auto& item : items) {
      terms.add(item.terms);
      item.grads_coarse.add_into(state.coarse);
      item.grads_fine.add_into(state.fine);
    }
    try {
      terms.combine(k, cfg.sched);
      const double lr = cfg.lr.at(k);
      nn::adam_step(state.coarse, state.adam_coarse, S(lr));
      nn::adam_step(state.fine, state.adam_fine, S(lr));
      last_lr = lr;
    } catch (const NumericError&) {
      dump_crash();
      throw;
    }
    last_terms = terms;
    state.iteration = k + 1;

    nlohmann::json jl = {{"iter", k},          {"lr", last_lr},
                         {"l2", terms.l2},     {"sam", terms.sam},
                         {"awl2", terms.awl2}, {"gr", terms.gr},
                         {"total", terms.total}};
    log.line(jl);

    if (cfg.eval_every > 0 && (k + 1) % cfg.eval_every == 0 &&
        !state.eval_ids.empty()) {
      double mean_psnr = 0.0;
      for (int id : state.eval_ids) {
        auto rendered = render_view(state, cfg, ds.manifest.frames[size_t(id)],
                                    id, ds.wavelengths, cfg.threads);
        double mse = 0.0;
        const auto& gt = ds.cubes[size_t(id)];
        for (size_t i = 0; i < gt.data.size(); ++i) {
          const double d = double(rendered.data[i]) - double(gt.data[i]);
          mse += d * d;
        }
        mse /= double(gt.data.size());
        mean_psnr += mse > 0 ? 10.0 * std::log10(eval_peak * eval_peak / mse)
                             : 99.0;
      }
      mean_psnr /= double(state.eval_ids.size());
      log.line({{"iter", k}, {"eval_psnr_mean", mean_psnr}});
      if (cfg.early_stop_patience > 0) {
        if (mean_psnr > best_eval) {
          best_eval = mean_psnr;
          evals_since_best = 0;
        } else if (++evals_since_best >= cfg.early_stop_patience) {
          log.line({{"iter", k}, {"early_stop", true}});
          stopped_early = true;
        }
      }
    }

    if (cfg.checkpoint_every > 0 && (k + 1) % cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt_%08ld.ckpt", long(k + 1));
      save_checkpoint_file((fs::path(cfg.out_dir) / name).string(), cfg, state);
    }
    if (stopped_early) break;
  }

  const std::string final_path = (fs::path(cfg.out_dir) / "final.ckpt").string();
  save_checkpoint_file(final_path, cfg, state);

  TrainOutcome outcome;
  outcome.iterations_done = state.iteration;
  outcome.final_total_loss = last_terms.total;
  outcome.final_checkpoint = final_path;
  outcome.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  outcome.peak_rss_kb = peak_rss_kb();

  nlohmann::json summary = {{"iterations", state.iteration},
                            {"wall_seconds", outcome.wall_seconds},
                            {"peak_rss_kb", outcome.peak_rss_kb},
                            {"final_total_loss", outcome.final_total_loss},
                            {"final_l2", last_terms.l2},
                            {"stopped_early", stopped_early},
                            {"checkpoint", "final.ckpt"},
                            {"toggles", cfg.toggles.describe()}};
  std::ofstream sj((fs::path(cfg.out_dir) / "train_summary.json").string(),
                   std::ios::trunc);
  sj << summary.dump(2) << "\n";
  return outcome;
}

}  // namespace hsnerf::train
