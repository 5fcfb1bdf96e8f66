// Held-out evaluation: render every eval view from a checkpoint, compute
// PSNR/SSIM against ground truth, run the ACE detection pipeline, and emit a
// fixed-column CSV plus a JSON summary.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hsnerf/config.hpp"
#include "hsnerf/detect.hpp"
#include "hsnerf/trainer.hpp"

namespace hsnerf::eval {

struct ImageRow {
  int id = 0;
  std::string file;
  double psnr = 0, ssim = 0;
  double auc = 0, tpr = 0, fpr = 0;
  bool detect_valid = false;
};

struct Aggregate {
  double mean = 0, sd = 0, min = 0, max = 0;
  int64_t count = 0;
};

struct EvalReport {
  std::vector<ImageRow> rows;
  Aggregate psnr, ssim, auc, tpr, fpr;
  std::string label_source;
  double peak = 0;  // PSNR peak / SSIM dynamic range used
};

// Per-image ACE detection with a background model fit on that image.
struct DetectResult {
  VecD scores;
  std::vector<uint8_t> mask;
};
DetectResult run_ace(const io::HsiCube& cube, const VecD& target,
                     double threshold, double shrinkage);

Aggregate aggregate(const std::vector<double>& values);

// Renders and scores the checkpoint's eval views. Train/eval disjointness is
// verified (ConfigError otherwise). Writes renders as render_###.hsic when
// write_renders is set.
EvalReport evaluate_checkpoint(const train::TrainConfig& cfg,
                               const train::TrainerState& state,
                               const train::Dataset& ds,
                               const config::DetectSettings& det, int threads,
                               const std::string& out_dir,
                               bool write_renders = false);

void write_metrics_csv(const std::string& path, const EvalReport& report);
void write_summary_json(const std::string& path, const EvalReport& report,
                        double wall_seconds, int64_t peak_rss_kb);

std::string format_double(double v);  // shortest round-trip decimal

}  // namespace hsnerf::eval
