#include "hsnerf/evaluate.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace hsnerf::eval {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

DetectResult run_ace(const io::HsiCube& cube, const VecD& target,
                     double threshold, double shrinkage) {
  DetectResult out;
  const MatD pixels = cube.pixels();
  auto bg = detect::BackgroundModel::fit(pixels, shrinkage);
  out.scores = detect::ace_scores(pixels, target, bg);
  out.mask = detect::threshold_mask(out.scores, threshold);
  return out;
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.count = int64_t(values.size());
  if (values.empty()) return a;
  double sum = 0, mn = values[0], mx = values[0];
  for (double v : values) {
    sum += v;
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  a.mean = sum / double(values.size());
  double var = 0;
  for (double v : values) var += (v - a.mean) * (v - a.mean);
  a.sd = values.size() > 1 ? std::sqrt(var / double(values.size() - 1)) : 0.0;
  a.min = mn;
  a.max = mx;
  return a;
}

EvalReport evaluate_checkpoint(const train::TrainConfig& cfg,
                               const train::TrainerState& state,
                               const train::Dataset& ds,
                               const config::DetectSettings& det, int threads,
                               const std::string& out_dir, bool write_renders) {
  // Disjointness is enforced, never assumed.
  for (int e : state.eval_ids)
    for (int t : state.train_ids)
      check_config(e != t, "evaluate: eval view " + std::to_string(e) +
                               " overlaps the training set");
  check_config(!state.eval_ids.empty(), "evaluate: checkpoint has no eval views");

  std::error_code ec;
  fs::create_directories(out_dir, ec);

  // Peak / dynamic range over the ground-truth evaluation set.
  double lo = std::numeric_limits<double>::max(), hi = -lo;
  for (int id : state.eval_ids)
    for (float v : ds.cubes[size_t(id)].data) {
      lo = std::min(lo, double(v));
      hi = std::max(hi, double(v));
    }
  const double peak = std::max(1e-12, hi - lo);

  const bool use_truth_labels = det.label_source == "truth";
  EvalReport report;
  report.label_source = det.label_source;
  report.peak = peak;

  for (int id : state.eval_ids) {
    const auto& frame = ds.manifest.frames[size_t(id)];
    io::HsiCube rendered =
        train::render_view(state, cfg, frame, id, ds.wavelengths, threads);
    if (write_renders) {
      char name[64];
      std::snprintf(name, sizeof(name), "render_%03d.hsic", id);
      io::write_hsic((fs::path(out_dir) / name).string(), rendered);
    }

    ImageRow row;
    row.id = id;
    row.file = frame.file;
    row.psnr = detect::psnr(rendered, ds.cubes[size_t(id)], peak);
    row.ssim = detect::ssim(rendered, ds.cubes[size_t(id)], peak);

    if (ds.gas_absorption.size() == rendered.channels()) {
      std::vector<uint8_t> ref;
      if (use_truth_labels) {
        if (size_t(id) < ds.truth_masks.size() &&
            !ds.truth_masks[size_t(id)].empty())
          ref = ds.truth_masks[size_t(id)];
      } else {
        ref = run_ace(ds.cubes[size_t(id)], ds.gas_absorption, det.threshold,
                      det.shrinkage)
                  .mask;
      }
      if (!ref.empty()) {
        bool has_pos = false, has_neg = false;
        for (uint8_t v : ref) (v ? has_pos : has_neg) = true;
        if (has_pos && has_neg) {
          auto res = run_ace(rendered, ds.gas_absorption, det.threshold,
                             det.shrinkage);
          row.auc = detect::roc_auc(res.scores, ref);
          auto rates = detect::tpr_fpr(res.mask, ref);
          row.tpr = rates.first;
          row.fpr = rates.second;
          row.detect_valid = true;
        } else {
          std::fprintf(stderr,
                       "[notice] evaluate: view %d reference mask has a "
                       "single class; detection metrics skipped\n",
                       id);
        }
      } else {
        std::fprintf(stderr,
                     "[notice] evaluate: view %d has no reference mask; "
                     "detection metrics skipped\n",
                     id);
      }
    } else {
      std::fprintf(stderr,
                   "[notice] evaluate: dataset has no target spectrum; "
                   "detection metrics skipped\n");
    }
    report.rows.push_back(row);
  }

  std::vector<double> psnrs, ssims, aucs, tprs, fprs;
  for (const auto& r : report.rows) {
    psnrs.push_back(r.psnr);
    ssims.push_back(r.ssim);
    if (r.detect_valid) {
      aucs.push_back(r.auc);
      tprs.push_back(r.tpr);
      fprs.push_back(r.fpr);
    }
  }
  report.psnr = aggregate(psnrs);
  report.ssim = aggregate(ssims);
  report.auc = aggregate(aucs);
  report.tpr = aggregate(tprs);
  report.fpr = aggregate(fprs);
  return report;
}

void write_metrics_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("write_metrics_csv: cannot open '" + path + "'");
  out << "image_id,file,psnr_db,ssim,auc,tpr,fpr\n";
  auto cell = [](bool valid, double v) {
    return valid ? format_double(v) : std::string("");
  };
  for (const auto& r : report.rows) {
    out << r.id << "," << r.file << "," << format_double(r.psnr) << ","
        << format_double(r.ssim) << "," << cell(r.detect_valid, r.auc) << ","
        << cell(r.detect_valid, r.tpr) << "," << cell(r.detect_valid, r.fpr)
        << "\n";
  }
  auto agg_row = [&](const char* name, double psnr, double ssim, double auc,
                     double tpr, double fpr) {
    const bool dv = report.auc.count > 0;
    out << name << ",," << format_double(psnr) << "," << format_double(ssim)
        << "," << cell(dv, auc) << "," << cell(dv, tpr) << "," << cell(dv, fpr)
        << "\n";
  };
  agg_row("mean", report.psnr.mean, report.ssim.mean, report.auc.mean,
          report.tpr.mean, report.fpr.mean);
  agg_row("sd", report.psnr.sd, report.ssim.sd, report.auc.sd, report.tpr.sd,
          report.fpr.sd);
  agg_row("min", report.psnr.min, report.ssim.min, report.auc.min,
          report.tpr.min, report.fpr.min);
  agg_row("max", report.psnr.max, report.ssim.max, report.auc.max,
          report.tpr.max, report.fpr.max);
  if (!out) throw IoError("write_metrics_csv: write failed");
}

void write_summary_json(const std::string& path, const EvalReport& report,
                        double wall_seconds, int64_t peak_rss_kb) {
  nlohmann::json j;
  auto agg = [](const Aggregate& a) {
    return nlohmann::json{{"mean", a.mean},
                          {"sd", a.sd},
                          {"min", a.min},
                          {"max", a.max},
                          {"count", a.count}};
  };
  j["psnr_db"] = agg(report.psnr);
  j["ssim"] = agg(report.ssim);
  j["auc"] = agg(report.auc);
  j["tpr"] = agg(report.tpr);
  j["fpr"] = agg(report.fpr);
  j["label_source"] = report.label_source;
  j["peak"] = report.peak;
  j["wall_seconds"] = wall_seconds;
  j["peak_rss_kb"] = peak_rss_kb;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("write_summary_json: cannot open '" + path + "'");
  out << j.dump(2) << "\n";
}

}  // namespace hsnerf::eval
