// hsnerf command-line tool: simulate | train | render | detect | evaluate |
// ablate. Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numeric failure.
#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "hsnerf/config.hpp"
#include "hsnerf/detect.hpp"
#include "hsnerf/evaluate.hpp"
#include "hsnerf/scene.hpp"
#include "hsnerf/trainer.hpp"

namespace fs = std::filesystem;
using namespace hsnerf;

namespace {

struct CommonArgs {
  std::string config_path;
  uint64_t seed = 1;
  std::string out_dir;
  int threads = 0;  // 0 = hardware concurrency

  int resolved_threads() const {
    if (threads > 0) return threads;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? int(hc) : 1;
  }
  config::Config load() const {
    return config_path.empty() ? config::Config{}
                               : config::parse_file(config_path);
  }
};

void add_common(CLI::App* cmd, CommonArgs& args, bool out_required = true) {
  cmd->add_option("--config", args.config_path, "Configuration file");
  cmd->add_option("--seed", args.seed, "Base seed for derived RNG streams");
  auto* out = cmd->add_option("--out", args.out_dir, "Output directory");
  if (out_required) out->required();
  cmd->add_option("--threads", args.threads,
                  "Worker threads (default: hardware concurrency)");
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stoi(tok));
  }
  return out;
}

std::vector<std::string> parse_str_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

train::Toggles arm_toggles(const std::string& arm) {
  train::Toggles t;
  if (arm == "baseline") return t;
  if (arm == "full") {
    t.sam = t.awl2 = t.md = t.gr = t.anneal = true;
    return t;
  }
  // "gr" bundles annealing with the patch regularizer; "losses" is SAM+AWL2;
  // otherwise a '+'-separated list of toggle names.
  std::string expanded = arm;
  if (arm == "gr") expanded = "gr+anneal";
  if (arm == "losses") expanded = "sam+awl2";
  std::stringstream ss(expanded);
  std::string tok;
  while (std::getline(ss, tok, '+')) {
    if (tok == "sam") t.sam = true;
    else if (tok == "awl2") t.awl2 = true;
    else if (tok == "md") t.md = true;
    else if (tok == "gr") t.gr = true;
    else if (tok == "anneal") t.anneal = true;
    else throw ConfigError("ablate: unknown toggle '" + tok + "' in arm '" + arm + "'");
  }
  return t;
}

int extract_index(const std::string& filename) {
  std::string digits;
  for (char c : filename)
    if (std::isdigit(uint8_t(c))) digits += c;
    else if (!digits.empty() && c == '.') break;
  return digits.empty() ? -1 : std::stoi(digits);
}

VecD load_target_spectrum(const std::string& path, int channels) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open target spectrum '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("target spectrum '" + path + "': " + e.what());
  }
  std::vector<double> t;
  if (j.contains("gas_absorption"))
    t = j.at("gas_absorption").get<std::vector<double>>();
  else if (j.is_array())
    t = j.get<std::vector<double>>();
  else
    throw IoError("target spectrum '" + path +
                  "': expected array or gas_absorption field");
  check_config(int(t.size()) == channels,
               "target spectrum channel count does not match cubes");
  return Eigen::Map<const VecD>(t.data(), Eigen::Index(t.size()));
}

// ---------------------------------------------------------------------------

int cmd_simulate(const CommonArgs& args) {
  auto cfg = args.load();
  auto params = config::scene_params(cfg);
  auto emit = config::emit_config(cfg, args.seed, args.resolved_threads());
  auto scene = scene::make_default_scene(config::sim_channels(cfg),
                                         config::scene_seed(cfg, args.seed),
                                         params);
  scene::emit_dataset(scene, emit, args.out_dir);
  std::printf("simulate: wrote %d poses to %s\n", emit.n_poses,
              args.out_dir.c_str());
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_dir,
              const std::string& resume) {
  auto cfg = args.load();
  std::string dir = !data_dir.empty() ? data_dir : cfg.get_str("dataset.dir", "");
  if (!resume.empty() && dir.empty())
    dir = train::load_checkpoint_file(resume).cfg.dataset_dir;
  check_config(!dir.empty(), "train: no dataset (use --data or dataset.dir)");
  auto ds = train::load_dataset(dir);
  auto tc = config::train_config(cfg, args.seed, args.resolved_threads(), ds);
  tc.out_dir = args.out_dir;
  tc.dataset_dir = dir;
  auto outcome = train::run_training(tc, ds, resume);
  std::printf("train: %ld iterations, final loss %.6g, %.1fs, ckpt %s\n",
              long(outcome.iterations_done), outcome.final_total_loss,
              outcome.wall_seconds, outcome.final_checkpoint.c_str());
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& ckpt_path,
                 const std::string& data_dir, bool write_renders) {
  auto cfg = args.load();
  const auto t0 = std::chrono::steady_clock::now();
  auto loaded = train::load_checkpoint_file(ckpt_path);
  const std::string dir =
      !data_dir.empty() ? data_dir
                        : cfg.get_str("dataset.dir", loaded.cfg.dataset_dir);
  auto ds = train::load_dataset(dir);
  check_config(loaded.cfg.field.channels == ds.cubes.front().channels(),
               "evaluate: checkpoint channels do not match the dataset");
  auto det = config::detect_settings(cfg);
  loaded.cfg.threads = args.resolved_threads();
  auto report =
      eval::evaluate_checkpoint(loaded.cfg, loaded.state, ds, det,
                                args.resolved_threads(), args.out_dir,
                                write_renders);
  eval::write_metrics_csv((fs::path(args.out_dir) / "metrics.csv").string(),
                          report);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  eval::write_summary_json((fs::path(args.out_dir) / "summary.json").string(),
                           report, wall, train::peak_rss_kb());
  std::printf("evaluate (%zu views, labels=%s):\n", report.rows.size(),
              report.label_source.c_str());
  std::printf("  PSNR %.2f +- %.2f dB  [min %.2f, max %.2f]\n",
              report.psnr.mean, report.psnr.sd, report.psnr.min,
              report.psnr.max);
  std::printf("  SSIM %.4f +- %.4f  [min %.4f, max %.4f]\n", report.ssim.mean,
              report.ssim.sd, report.ssim.min, report.ssim.max);
  if (report.auc.count > 0) {
    std::printf("  AUC  %.4f +- %.4f  [min %.4f, max %.4f]\n", report.auc.mean,
                report.auc.sd, report.auc.min, report.auc.max);
    std::printf("  TPR  %.4f +- %.4f   FPR %.5f +- %.5f\n", report.tpr.mean,
                report.tpr.sd, report.fpr.mean, report.fpr.sd);
  }
  return 0;
}

int cmd_render(const CommonArgs& args, const std::string& ckpt_path,
               const std::string& data_dir, const std::string& views_arg,
               const std::string& orbit_arg, int orbit_frames, bool all_views) {
  auto loaded = train::load_checkpoint_file(ckpt_path);
  const std::string dir = !data_dir.empty() ? data_dir : loaded.cfg.dataset_dir;
  auto ds = train::load_dataset(dir, /*load_masks=*/false);
  check_config(loaded.cfg.field.channels == ds.cubes.front().channels(),
               "render: checkpoint channels do not match the dataset");
  loaded.cfg.threads = args.resolved_threads();
  fs::create_directories(args.out_dir);

  std::vector<io::Frame> frames;
  std::vector<int> ids;
  if (!orbit_arg.empty()) {
    auto keys = parse_int_list(orbit_arg);
    check_config(keys.size() >= 2, "render: orbit needs at least 2 keyframes");
    check_config(orbit_frames >= 2, "render: orbit needs --frames >= 2");
    for (int id : keys)
      check_config(id >= 0 && id < ds.n_views(), "render: orbit id out of range");
    // Great-circle interpolation between keyframe camera positions on the
    // hemisphere, all looking at the stack base.
    const io::Frame& proto = ds.manifest.frames[size_t(keys.front())];
    const Vec3 center = ds.manifest.stack_base;
    for (int f = 0; f < orbit_frames; ++f) {
      const double u = double(f) / double(orbit_frames - 1);
      const double scaled = u * double(keys.size() - 1);
      const int seg = std::min<int>(int(scaled), int(keys.size()) - 2);
      const double s = scaled - seg;
      const Vec3 a =
          ds.manifest.frames[size_t(keys[size_t(seg)])].pose.origin() - center;
      const Vec3 b =
          ds.manifest.frames[size_t(keys[size_t(seg) + 1])].pose.origin() -
          center;
      const double ra = a.norm(), rb = b.norm();
      Vec3 ua = a / ra, ub = b / rb;
      const double ang = std::acos(std::clamp(ua.dot(ub), -1.0, 1.0));
      Vec3 dirv;
      if (ang < 1e-9) {
        dirv = ua;
      } else {
        dirv = (std::sin((1 - s) * ang) * ua + std::sin(s * ang) * ub) /
               std::sin(ang);
      }
      const double radius = (1 - s) * ra + s * rb;
      io::Frame fr = proto;
      fr.pose = render::CameraPose::look_at(center + radius * dirv, center,
                                            Vec3::UnitZ());
      frames.push_back(fr);
      ids.push_back(f);
    }
  } else {
    std::vector<int> sel;
    if (all_views) {
      sel.resize(size_t(ds.n_views()));
      std::iota(sel.begin(), sel.end(), 0);
    } else if (!views_arg.empty()) {
      sel = parse_int_list(views_arg);
    } else {
      sel = loaded.state.eval_ids;
    }
    for (int id : sel) {
      check_config(id >= 0 && id < ds.n_views(), "render: view id out of range");
      frames.push_back(ds.manifest.frames[size_t(id)]);
      ids.push_back(id);
    }
  }

  for (size_t i = 0; i < frames.size(); ++i) {
    auto cube = train::render_view(loaded.state, loaded.cfg, frames[i],
                                   ids[i], ds.wavelengths,
                                   args.resolved_threads());
    char name[64];
    std::snprintf(name, sizeof(name), "render_%03d.hsic", ids[i]);
    io::write_hsic((fs::path(args.out_dir) / name).string(), cube);
    // False color uses the band's reference wavelengths when they fit.
    const double lo = ds.wavelengths.minCoeff(), hi = ds.wavelengths.maxCoeff();
    auto clampw = [&](double w) { return std::clamp(w, lo, hi); };
    auto png = detect::falsecolor(cube, clampw(10.4), clampw(8.1), clampw(8.5));
    std::snprintf(name, sizeof(name), "falsecolor_%03d.png", ids[i]);
    io::write_png((fs::path(args.out_dir) / name).string(), png);
  }
  std::printf("render: wrote %zu views to %s\n", frames.size(),
              args.out_dir.c_str());
  return 0;
}

int cmd_detect(const CommonArgs& args, const std::string& in_dir,
               const std::string& target_path, const std::string& ref_dir) {
  auto cfg = args.load();
  auto det = config::detect_settings(cfg);
  fs::create_directories(args.out_dir);

  std::vector<std::string> cubes;
  for (const auto& entry : fs::directory_iterator(in_dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.path().extension() == ".hsic" && name.rfind("scores_", 0) != 0)
      cubes.push_back(name);
  }
  std::sort(cubes.begin(), cubes.end());
  check_input(!cubes.empty(), "detect: no .hsic cubes in '" + in_dir + "'");

  const std::string tpath =
      !target_path.empty() ? target_path
                           : (fs::path(in_dir) / "scene.json").string();
  auto first = io::read_hsic((fs::path(in_dir) / cubes.front()).string());
  const VecD target = load_target_spectrum(tpath, first.channels());

  const std::string refs = ref_dir.empty() ? in_dir : ref_dir;
  std::vector<std::string> rows;
  bool any_ref = false;
  for (const auto& name : cubes) {
    auto cube = io::read_hsic((fs::path(in_dir) / name).string());
    check_config(cube.channels() == int(target.size()),
                 "detect: channel mismatch for " + name);
    auto res = eval::run_ace(cube, target, det.threshold, det.shrinkage);

    const int idx = extract_index(name);
    char out_name[96];
    std::snprintf(out_name, sizeof(out_name), "scores_%03d.hsic",
                  idx >= 0 ? idx : 0);
    io::HsiCube score_cube;
    score_cube.height = cube.height;
    score_cube.width = cube.width;
    score_cube.wavelengths_um = VecD::Zero(1);
    score_cube.data.assign(res.scores.data(),
                           res.scores.data() + res.scores.size());
    io::write_hsic((fs::path(args.out_dir) / out_name).string(), score_cube);

    std::snprintf(out_name, sizeof(out_name), "pred_mask_%03d.png",
                  idx >= 0 ? idx : 0);
    io::PngImage mask_png;
    mask_png.width = cube.width;
    mask_png.height = cube.height;
    mask_png.channels = 1;
    mask_png.data = res.mask;
    io::write_png((fs::path(args.out_dir) / out_name).string(), mask_png);

    char ref_name[64];
    std::snprintf(ref_name, sizeof(ref_name), "mask_%03d.png",
                  idx >= 0 ? idx : 0);
    const fs::path ref_path = fs::path(refs) / ref_name;
    if (fs::exists(ref_path)) {
      auto ref = io::read_png(ref_path.string());
      bool has_pos = false, has_neg = false;
      for (uint8_t v : ref.data) (v ? has_pos : has_neg) = true;
      if (has_pos && has_neg) {
        any_ref = true;
        const double auc = detect::roc_auc(res.scores, ref.data);
        auto rates = detect::tpr_fpr(res.mask, ref.data);
        rows.push_back(std::to_string(idx) + "," + name + "," +
                       eval::format_double(auc) + "," +
                       eval::format_double(rates.first) + "," +
                       eval::format_double(rates.second));
      }
    }
  }
  if (any_ref) {
    std::ofstream out((fs::path(args.out_dir) / "detect_metrics.csv").string(),
                      std::ios::trunc);
    out << "image_id,file,auc,tpr,fpr\n";
    for (const auto& r : rows) out << r << "\n";
    std::printf("detect: %zu cubes scored, %zu with reference metrics\n",
                cubes.size(), rows.size());
  } else {
    std::printf(
        "detect: %zu cubes scored; no reference masks found, metrics "
        "omitted\n",
        cubes.size());
  }
  return 0;
}

int run_subprocess(const std::string& command) {
  std::fprintf(stderr, "[ablate] %s\n", command.c_str());
  const int rc = std::system(command.c_str());
  if (rc == -1) throw IoError("ablate: failed to spawn subprocess");
  if (WIFEXITED(rc)) return WEXITSTATUS(rc);
  return 4;
}

int cmd_ablate(const CommonArgs& args, const std::string& data_dir) {
  auto cfg = args.load();
  const std::string dir =
      !data_dir.empty() ? data_dir : cfg.get_str("dataset.dir", "");
  check_config(!dir.empty(), "ablate: no dataset (use --data or dataset.dir)");
  auto views = parse_int_list(cfg.get_str("ablate.views", "10,20"));
  auto arms = parse_str_list(cfg.get_str("ablate.arms", "baseline,full"));
  auto seeds = parse_int_list(cfg.get_str("ablate.seeds", "1,2,3"));
  const int64_t iters = cfg.get_int("ablate.iterations", 0);
  check_config(!views.empty() && !arms.empty() && !seeds.empty(),
               "ablate: empty grid");
  for (const auto& arm : arms) arm_toggles(arm);  // validate names up front

  auto ds = train::load_dataset(dir, /*load_masks=*/false);
  const std::string exe = fs::read_symlink("/proc/self/exe").string();
  fs::create_directories(fs::path(args.out_dir) / "cells");

  struct Row {
    int views, seed;
    std::string arm, cell;
    nlohmann::json eval_summary, train_summary;
  };
  std::vector<Row> rows;

  for (int v : views)
    for (const auto& arm : arms)
      for (int seed : seeds) {
        // Build the cell's effective config to key the cell directory.
        config::Config cell_cfg = cfg;
        cell_cfg.kv.erase("ablate.views");
        cell_cfg.kv.erase("ablate.arms");
        cell_cfg.kv.erase("ablate.seeds");
        cell_cfg.kv.erase("ablate.iterations");
        cell_cfg.kv["train.views"] = std::to_string(v);
        if (iters > 0) cell_cfg.kv["train.iterations"] = std::to_string(iters);
        auto t = arm_toggles(arm);
        cell_cfg.kv["loss.sam"] = t.sam ? "on" : "off";
        cell_cfg.kv["loss.awl2"] = t.awl2 ? "on" : "off";
        cell_cfg.kv["loss.md"] = t.md ? "on" : "off";
        cell_cfg.kv["loss.gr"] = t.gr ? "on" : "off";
        cell_cfg.kv["loss.anneal"] = t.anneal ? "on" : "off";
        cell_cfg.kv.erase("dataset.dir");

        auto tc = config::train_config(cell_cfg, uint64_t(seed),
                                       args.resolved_threads(), ds);
        const std::string cell = tc.config_hash;
        const fs::path cell_dir = fs::path(args.out_dir) / "cells" / cell;
        const fs::path done = cell_dir / "eval" / "summary.json";
        if (!fs::exists(done)) {
          fs::create_directories(cell_dir);
          std::ofstream cf((cell_dir / "config.cfg").string(), std::ios::trunc);
          for (const auto& [k, val] : cell_cfg.kv) cf << k << " = " << val << "\n";
          cf.close();

          std::ostringstream train_cmd;
          train_cmd << "'" << exe << "' train --config '"
                    << (cell_dir / "config.cfg").string() << "' --data '" << dir
                    << "' --out '" << (cell_dir / "train").string()
                    << "' --seed " << seed << " --threads "
                    << args.resolved_threads();
          int rc = run_subprocess(train_cmd.str());
          if (rc != 0) throw NumericError("ablate: training cell failed: " + cell);

          std::ostringstream eval_cmd;
          eval_cmd << "'" << exe << "' evaluate --ckpt '"
                   << (cell_dir / "train" / "final.ckpt").string()
                   << "' --data '" << dir << "' --out '"
                   << (cell_dir / "eval").string() << "' --threads "
                   << args.resolved_threads();
          if (!args.config_path.empty())
            eval_cmd << " --config '" << args.config_path << "'";
          rc = run_subprocess(eval_cmd.str());
          if (rc != 0) throw NumericError("ablate: evaluate cell failed: " + cell);
        }

        Row row;
        row.views = v;
        row.seed = seed;
        row.arm = arm;
        row.cell = cell;
        std::ifstream es(done.string());
        es >> row.eval_summary;
        std::ifstream ts((cell_dir / "train" / "train_summary.json").string());
        ts >> row.train_summary;
        rows.push_back(std::move(row));
      }

  std::ofstream out((fs::path(args.out_dir) / "ablate.csv").string(),
                    std::ios::trunc);
  out << "views,arm,seed,cell,psnr_mean,ssim_mean,auc_mean,tpr_mean,fpr_mean,"
         "train_wall_s,train_peak_rss_mb\n";
  for (const auto& r : rows) {
    auto mean_of = [&](const char* metric) {
      return r.eval_summary.at(metric).at("mean").get<double>();
    };
    out << r.views << "," << r.arm << "," << r.seed << "," << r.cell << ","
        << eval::format_double(mean_of("psnr_db")) << ","
        << eval::format_double(mean_of("ssim")) << ","
        << eval::format_double(mean_of("auc")) << ","
        << eval::format_double(mean_of("tpr")) << ","
        << eval::format_double(mean_of("fpr")) << ","
        << eval::format_double(
               r.train_summary.at("wall_seconds").get<double>())
        << ","
        << eval::format_double(
               r.train_summary.at("peak_rss_kb").get<double>() / 1024.0)
        << "\n";
  }
  std::printf("ablate: %zu cells -> %s/ablate.csv\n", rows.size(),
              args.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hsnerf: hyperspectral neural radiance field toolkit"};
  app.require_subcommand(1);

  CommonArgs sim_args, train_args, render_args, detect_args, eval_args,
      ablate_args;
  std::string data_dir, resume, ckpt, views_arg, orbit_arg, target_path,
      ref_dir, in_dir;
  int orbit_frames = 0;
  bool all_views = false, write_renders = false;

  auto* sim = app.add_subcommand("simulate", "Emit an analytic scene dataset");
  add_common(sim, sim_args);

  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  add_common(tr, train_args);
  tr->add_option("--data", data_dir, "Dataset directory");
  tr->add_option("--resume", resume, "Checkpoint to resume from");

  auto* re = app.add_subcommand("render", "Render views from a checkpoint");
  add_common(re, render_args);
  re->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  re->add_option("--data", data_dir, "Dataset directory");
  re->add_option("--views", views_arg, "Comma-separated frame ids");
  re->add_flag("--all", all_views, "Render every dataset view");
  re->add_option("--orbit", orbit_arg, "Keyframe ids for an orbit path");
  re->add_option("--frames", orbit_frames, "Frame count for --orbit");

  auto* de = app.add_subcommand("detect", "ACE detection over cube files");
  add_common(de, detect_args);
  de->add_option("--in", in_dir, "Directory of .hsic cubes")->required();
  de->add_option("--target", target_path,
                 "Target spectrum JSON (default: <in>/scene.json)");
  de->add_option("--ref", ref_dir,
                 "Directory of reference masks (default: --in)");

  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  add_common(ev, eval_args);
  ev->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  ev->add_option("--data", data_dir, "Dataset directory");
  ev->add_flag("--renders", write_renders, "Also write rendered eval cubes");

  auto* ab = app.add_subcommand("ablate", "Run a train/evaluate grid");
  add_common(ab, ablate_args);
  ab->add_option("--data", data_dir, "Dataset directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_args);
    if (tr->parsed()) return cmd_train(train_args, data_dir, resume);
    if (re->parsed())
      return cmd_render(render_args, ckpt, data_dir, views_arg, orbit_arg,
                        orbit_frames, all_views);
    if (de->parsed()) return cmd_detect(detect_args, in_dir, target_path, ref_dir);
    if (ev->parsed()) return cmd_evaluate(eval_args, ckpt, data_dir, write_renders);
    if (ab->parsed()) return cmd_ablate(ablate_args, data_dir);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error (config): %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error (io): %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 0;
}
