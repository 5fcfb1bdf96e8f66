// Training orchestration: dataset loading, view selection, the iteration
// loop (ray batches, geometry-regularization patches, schedules, annealing,
// channel-weight refreshes, Adam), checkpointing, and full-image rendering
// for evaluation. Training runs in 32-bit; all randomness is counter-based,
// so a resumed checkpoint continues the trajectory bit-identically.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hsnerf/field.hpp"
#include "hsnerf/hsic.hpp"
#include "hsnerf/losses.hpp"
#include "hsnerf/nn.hpp"
#include "hsnerf/pipeline.hpp"
#include "hsnerf/poses_io.hpp"
#include "hsnerf/standardize.hpp"

namespace hsnerf::train {

struct Toggles {
  bool sam = false;
  bool awl2 = false;
  bool md = false;
  bool gr = false;
  bool anneal = false;

  std::string describe() const;
};

struct TrainConfig {
  std::string dataset_dir;
  std::string out_dir;

  int views = 20;
  int eval_views = 8;
  uint64_t view_seed = 1;
  uint64_t eval_seed = 9001;
  uint64_t init_seed = 1;
  uint64_t sample_seed = 1;

  int64_t iterations = 10000;
  int batch_rays = 4096;
  int64_t checkpoint_every = 0;  // 0 = final only
  int64_t eval_every = 0;        // 0 = never
  int64_t early_stop_patience = 0;

  field::FieldConfig field;  // channels/scene_radius filled from the dataset
  Toggles toggles;
  pipeline::RenderSettings rs;
  loss::Schedules sched;
  nn::LrSchedule lr;

  int64_t awl2_update_every = 5000;
  int awl2_subsample = 4096;  // 0 = full training set
  int gr_patches = 16;
  int gr_patch_size = 8;
  int gr_pool = 10000;

  int threads = 1;
  std::string config_hash;  // recorded in checkpoints

  void validate() const;
};

struct Dataset {
  std::string dir;
  io::PoseManifest manifest;
  std::vector<io::HsiCube> cubes;
  std::vector<std::vector<uint8_t>> truth_masks;  // empty if absent
  VecD wavelengths;
  VecD gas_absorption;  // from scene.json when present
  double tau_od = 0.0;

  int n_views() const { return int(manifest.frames.size()); }
};

Dataset load_dataset(const std::string& dir, bool load_masks = true);

struct ViewSplit {
  std::vector<int> train_ids;
  std::vector<int> eval_ids;
};

// Eval views are a seeded simple random sample; training views come from
// biased farthest-point sampling over the remaining pool.
ViewSplit select_views(const io::PoseManifest& manifest, int n_train,
                       uint64_t view_seed, int n_eval, uint64_t eval_seed);

using TrainScalarStore = nn::ParamStore<TrainScalar>;

struct TrainerState {
  TrainScalarStore coarse, fine;
  nn::AdamState<TrainScalar> adam_coarse, adam_fine;
  loss::ChannelWeights channel_weights;
  field::Standardizer standardizer;
  std::vector<int> train_ids, eval_ids;
  int64_t iteration = 0;
};

struct TrainOutcome {
  int64_t iterations_done = 0;
  double final_total_loss = 0;
  std::string final_checkpoint;
  double wall_seconds = 0;
  int64_t peak_rss_kb = 0;
};

// Runs (or resumes) training; writes train_log.jsonl, checkpoints and
// train_summary.json into cfg.out_dir. On a non-finite loss the last state
// is dumped to crash.ckpt and NumericError propagates.
TrainOutcome run_training(const TrainConfig& cfg, const Dataset& dataset,
                          const std::string& resume_checkpoint = "");

// Checkpoint round-trip.
void save_checkpoint_file(const std::string& path, const TrainConfig& cfg,
                          const TrainerState& state);
struct LoadedCheckpoint {
  TrainConfig cfg;  // training-relevant fields reconstructed from manifest
  TrainerState state;
};
LoadedCheckpoint load_checkpoint_file(const std::string& path);

// Renders one posed view through the fine network and destandardizes.
io::HsiCube render_view(const TrainerState& state, const TrainConfig& cfg,
                        const io::Frame& frame, int image_id,
                        const VecD& wavelengths, int threads);

int64_t peak_rss_kb();

}  // namespace hsnerf::train
