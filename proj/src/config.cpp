#include "hsnerf/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "hsnerf/checkpoint.hpp"

namespace hsnerf::config {

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "dataset.dir", "out.dir",
      // scene simulation
      "sim.poses", "sim.width", "sim.height", "sim.channels", "sim.radius_m",
      "sim.march_steps", "sim.tau_od", "sim.seed", "scene.seed",
      "scene.plume_strength", "scene.plume_contrast", "scene.cooling_length_m",
      "scene.puffs",
      // training
      "train.views", "train.eval_views", "train.iterations",
      "train.batch_rays", "train.checkpoint_every", "train.eval_every",
      "train.early_stop_patience", "train.view_seed", "train.eval_seed",
      "train.init_seed", "train.sample_seed",
      // field
      "field.base_depth", "field.base_width", "field.head_depth",
      "field.head_width", "field.l_pos", "field.l_dir", "field.skip_layer",
      // rendering
      "render.coarse_samples", "render.fine_samples", "render.anneal_iters",
      "render.anneal_p_s",
      // loss toggles and schedules
      "loss.sam", "loss.awl2", "loss.md", "loss.gr", "loss.anneal",
      "loss.lambda_c", "loss.lambda_f", "loss.lambda_sam",
      "loss.awl2_ramp_start", "loss.awl2_ramp_end", "loss.awl2_max",
      "loss.gr_start", "loss.gr_end", "loss.gr_ramp_end",
      "loss.awl2_update_every", "loss.awl2_subsample",
      // geometry regularization
      "gr.patches", "gr.patch_size", "gr.pool",
      // learning rate
      "lr.min", "lr.max", "lr.warmup_iters", "lr.decay_end_iter",
      // detection
      "detect.threshold", "detect.shrinkage", "detect.label_source",
      // ablation grid
      "ablate.views", "ablate.arms", "ablate.seeds", "ablate.iterations",
  };
  return keys;
}

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(uint8_t(s[a]))) ++a;
  while (b > a && std::isspace(uint8_t(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

std::string Config::get_str(const std::string& key,
                            const std::string& def) const {
  auto it = kv.find(key);
  return it == kv.end() ? def : it->second;
}

int64_t Config::get_int(const std::string& key, int64_t def) const {
  auto it = kv.find(key);
  if (it == kv.end()) return def;
  try {
    size_t pos = 0;
    int64_t v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' is not an integer: '" +
                      it->second + "'");
  }
}

double Config::get_double(const std::string& key, double def) const {
  auto it = kv.find(key);
  if (it == kv.end()) return def;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' is not a number: '" +
                      it->second + "'");
  }
}

bool Config::get_bool(const std::string& key, bool def) const {
  auto it = kv.find(key);
  if (it == kv.end()) return def;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: key '" + key + "' is not a boolean: '" +
                    it->second + "'");
}

Config parse_text(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(line_no) +
                        " is not 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!known_keys().count(key))
      throw ConfigError("config: unknown key '" + key + "'");
    cfg.kv[key] = value;
  }
  return cfg;
}

Config parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

scene::SceneParams scene_params(const Config& cfg) {
  scene::SceneParams p;
  p.plume_strength = cfg.get_double("scene.plume_strength", p.plume_strength);
  p.plume_contrast = cfg.get_double("scene.plume_contrast", p.plume_contrast);
  p.cooling_length_m =
      cfg.get_double("scene.cooling_length_m", p.cooling_length_m);
  p.n_puffs = int(cfg.get_int("scene.puffs", p.n_puffs));
  return p;
}

uint64_t scene_seed(const Config& cfg, uint64_t base_seed) {
  return uint64_t(cfg.get_int("scene.seed", int64_t(base_seed)));
}

int sim_channels(const Config& cfg) {
  return int(cfg.get_int("sim.channels", 8));
}

scene::EmitConfig emit_config(const Config& cfg, uint64_t base_seed,
                              int threads) {
  scene::EmitConfig e;
  e.n_poses = int(cfg.get_int("sim.poses", 64));
  e.width = int(cfg.get_int("sim.width", 32));
  e.height = int(cfg.get_int("sim.height", 32));
  e.hemisphere_radius = cfg.get_double("sim.radius_m", 1000.0);
  e.march_steps = int(cfg.get_int("sim.march_steps", 512));
  e.tau_od = cfg.get_double("sim.tau_od", 0.15);
  e.seed = uint64_t(cfg.get_int("sim.seed", int64_t(base_seed)));
  e.threads = threads;
  check_config(e.n_poses >= 4 && e.width > 0 && e.height > 0,
               "sim: invalid pose count or resolution");
  check_config(e.march_steps >= 256, "sim: march_steps must be >= 256");
  check_config(e.tau_od > 0, "sim: tau_od must be positive");
  return e;
}

train::TrainConfig train_config(const Config& cfg, uint64_t base_seed,
                                int threads, const train::Dataset& ds) {
  train::TrainConfig t;
  t.dataset_dir = ds.dir;
  t.views = int(cfg.get_int("train.views", 20));
  t.eval_views = int(cfg.get_int("train.eval_views", 8));
  t.iterations = cfg.get_int("train.iterations", 10000);
  t.batch_rays = int(cfg.get_int("train.batch_rays", 4096));
  t.checkpoint_every = cfg.get_int("train.checkpoint_every", 0);
  t.eval_every = cfg.get_int("train.eval_every", 0);
  t.early_stop_patience = cfg.get_int("train.early_stop_patience", 0);
  t.view_seed = uint64_t(cfg.get_int("train.view_seed", int64_t(base_seed)));
  t.eval_seed = uint64_t(cfg.get_int("train.eval_seed", 9001));
  t.init_seed = uint64_t(
      cfg.get_int("train.init_seed", int64_t(rng::key({base_seed, 0x171}))));
  t.sample_seed = uint64_t(
      cfg.get_int("train.sample_seed", int64_t(rng::key({base_seed, 0x5a0}))));

  t.field.base_depth = int(cfg.get_int("field.base_depth", 8));
  t.field.base_width = int(cfg.get_int("field.base_width", 256));
  t.field.head_depth = int(cfg.get_int("field.head_depth", 2));
  t.field.head_width = int(cfg.get_int("field.head_width", 128));
  t.field.L_pos = int(cfg.get_int("field.l_pos", 16));
  t.field.L_dir = int(cfg.get_int("field.l_dir", 4));
  t.field.skip_layer = int(cfg.get_int(
      "field.skip_layer", std::min<int64_t>(4, t.field.base_depth - 1)));
  t.field.channels = ds.cubes.front().channels();
  t.field.scene_radius = ds.manifest.bounding_radius;

  t.rs.n_coarse = int(cfg.get_int("render.coarse_samples", 64));
  t.rs.n_fine = int(cfg.get_int("render.fine_samples", 196));
  t.rs.anneal_iters = cfg.get_int("render.anneal_iters", 2000);
  t.rs.anneal_p_s = cfg.get_double("render.anneal_p_s", 0.85);

  t.toggles.sam = cfg.get_bool("loss.sam", false);
  t.toggles.awl2 = cfg.get_bool("loss.awl2", false);
  t.toggles.md = cfg.get_bool("loss.md", false);
  t.toggles.gr = cfg.get_bool("loss.gr", false);
  t.toggles.anneal = cfg.get_bool("loss.anneal", false);
  t.rs.anneal = t.toggles.anneal;
  t.field.density_mode = t.toggles.md ? field::DensityMode::kPerChannel
                                      : field::DensityMode::kSingle;

  t.sched.lambda_c = cfg.get_double("loss.lambda_c", 0.1);
  t.sched.lambda_f = cfg.get_double("loss.lambda_f", 1.0);
  t.sched.lambda_sam = cfg.get_double("loss.lambda_sam", 2.0);
  t.sched.awl2_ramp_start = cfg.get_int("loss.awl2_ramp_start", 5000);
  t.sched.awl2_ramp_end = cfg.get_int("loss.awl2_ramp_end", 25000);
  t.sched.awl2_max = cfg.get_double("loss.awl2_max", 100.0);
  t.sched.gr_start = cfg.get_double("loss.gr_start", 10000.0);
  t.sched.gr_end = cfg.get_double("loss.gr_end", 1.0);
  t.sched.gr_ramp_end = cfg.get_int("loss.gr_ramp_end", 6000);
  t.awl2_update_every = cfg.get_int("loss.awl2_update_every", 5000);
  t.awl2_subsample = int(cfg.get_int("loss.awl2_subsample", 4096));

  t.gr_patches = int(cfg.get_int("gr.patches", 16));
  t.gr_patch_size = int(cfg.get_int("gr.patch_size", 8));
  t.gr_pool = int(cfg.get_int("gr.pool", 10000));

  t.lr.lr_min = cfg.get_double("lr.min", 1e-5);
  t.lr.lr_max = cfg.get_double("lr.max", 1e-3);
  t.lr.warmup_iters = cfg.get_int("lr.warmup_iters", 2000);
  t.lr.decay_end_iter = cfg.get_int("lr.decay_end_iter", 150000);

  t.threads = threads;
  t.config_hash = short_hash(train_config_canonical(t));
  return t;
}

std::string train_config_canonical(const train::TrainConfig& t) {
  std::ostringstream os;
  os.precision(17);
  os << "awl2=" << t.toggles.awl2 << "\n"
     << "awl2_ramp_end=" << t.sched.awl2_ramp_end << "\n"
     << "awl2_ramp_start=" << t.sched.awl2_ramp_start << "\n"
     << "awl2_max=" << t.sched.awl2_max << "\n"
     << "awl2_subsample=" << t.awl2_subsample << "\n"
     << "awl2_update_every=" << t.awl2_update_every << "\n"
     << "anneal=" << t.toggles.anneal << "\n"
     << "anneal_iters=" << t.rs.anneal_iters << "\n"
     << "anneal_p_s=" << t.rs.anneal_p_s << "\n"
     << "base_depth=" << t.field.base_depth << "\n"
     << "base_width=" << t.field.base_width << "\n"
     << "batch_rays=" << t.batch_rays << "\n"
     << "dataset_dir=" << t.dataset_dir << "\n"
     << "eval_seed=" << t.eval_seed << "\n"
     << "eval_views=" << t.eval_views << "\n"
     << "gr=" << t.toggles.gr << "\n"
     << "gr_end=" << t.sched.gr_end << "\n"
     << "gr_patch_size=" << t.gr_patch_size << "\n"
     << "gr_patches=" << t.gr_patches << "\n"
     << "gr_pool=" << t.gr_pool << "\n"
     << "gr_ramp_end=" << t.sched.gr_ramp_end << "\n"
     << "gr_start=" << t.sched.gr_start << "\n"
     << "head_depth=" << t.field.head_depth << "\n"
     << "head_width=" << t.field.head_width << "\n"
     << "init_seed=" << t.init_seed << "\n"
     << "iterations=" << t.iterations << "\n"
     << "l_dir=" << t.field.L_dir << "\n"
     << "l_pos=" << t.field.L_pos << "\n"
     << "lambda_c=" << t.sched.lambda_c << "\n"
     << "lambda_f=" << t.sched.lambda_f << "\n"
     << "lambda_sam=" << t.sched.lambda_sam << "\n"
     << "lr_decay_end=" << t.lr.decay_end_iter << "\n"
     << "lr_max=" << t.lr.lr_max << "\n"
     << "lr_min=" << t.lr.lr_min << "\n"
     << "lr_warmup=" << t.lr.warmup_iters << "\n"
     << "md=" << t.toggles.md << "\n"
     << "n_coarse=" << t.rs.n_coarse << "\n"
     << "n_fine=" << t.rs.n_fine << "\n"
     << "sam=" << t.toggles.sam << "\n"
     << "sample_seed=" << t.sample_seed << "\n"
     << "skip_layer=" << t.field.skip_layer << "\n"
     << "view_seed=" << t.view_seed << "\n"
     << "views=" << t.views << "\n";
  return os.str();
}

std::string short_hash(const std::string& text) {
  return io::sha256_hex(text.data(), text.size()).substr(0, 16);
}

DetectSettings detect_settings(const Config& cfg) {
  DetectSettings d;
  d.threshold = cfg.get_double("detect.threshold", 0.6);
  d.shrinkage = cfg.get_double("detect.shrinkage", 1e-3);
  d.label_source = cfg.get_str("detect.label_source", "truth");
  check_config(d.label_source == "truth" || d.label_source == "ace",
               "detect.label_source must be 'truth' or 'ace'");
  check_config(d.threshold >= 0.0 && d.threshold <= 1.0,
               "detect.threshold must be in [0,1]");
  return d;
}

}  // namespace hsnerf::config
