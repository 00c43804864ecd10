#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "puicl/model.hpp"
#include "puicl/optim.hpp"
#include "puicl/prior.hpp"
#include "puicl/pusplit.hpp"

namespace puicl {

struct LrSchedule {
  std::int64_t warmup = 4000;
  double peak = 1.6e-4;
  double floor = 1.6e-5;
  double power = 1.5;
};

struct TrainConfig {
  int batch_size = 48;
  int stages = 100;          // K
  int stage_steps = 750;
  std::int64_t phase2_steps = 25000;
  LrSchedule phase1_lr{4000, 1.6e-4, 1.6e-5, 1.5};
  LrSchedule phase2_lr{2000, 4e-5, 4e-6, 1.5};
  AdamWConfig adamw{};
  double clip_norm = 1.0;
  double ema_decay = 0.95;
  int features_min = 5, features_max = 20;
  int positives_min = 100, positives_max = 300;
  int depth_min = 4, depth_max = 12;
  int width_min = 12, width_max = 36;
  std::vector<double> noise_levels{0.005, 0.01, 0.02};
  double scm_weight_scale = 1.0;
  std::int64_t log_interval = 100;
  std::int64_t checkpoint_interval = 1000;
  int keep_checkpoints = 3;
  int workers = 0;  // background batch producers; 0 generates inline

  std::int64_t phase1_steps() const { return static_cast<std::int64_t>(stages) * stage_steps; }
  std::int64_t total_steps() const { return phase1_steps() + phase2_steps; }

  void validate() const;
  nlohmann::json to_json() const;
  /// Unspecified fields keep their defaults; unknown keys are errors.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct CurriculumState {
  int phase = 1;
  int stage = 1;                   // 1..K; K throughout phase 2
  std::int64_t step_in_stage = 0;
  std::int64_t global_step = 0;
  std::int64_t arch_block = 0;     // index of the 750-step block fixing SCM depth/width
};

CurriculumState curriculum_at(std::int64_t global_step, const TrainConfig& config);

struct StageParams {
  double eta_lo, eta_hi;
  double pi_lo, pi_hi;
  double p_causal;
};

/// Linear endpoint interpolation in (s-1)/(K-1): eta [1,1] -> [0.5,2],
/// pi [0.5,0.5] -> [0.1,0.9]; p_causal = s / (2K).
StageParams stage_params(int stage, int stages = 100);

/// Schedule value at global step `global_step` of `phase` (phase 2 starts
/// at phase1_steps()). The update that completes step t uses lr_at(t).
double lr_at(std::int64_t global_step, int phase, const TrainConfig& config);

struct BatchSpec {
  std::size_t features = 0;
  std::size_t positives = 0;
  double eta = 1.0;
  double pi = 0.5;
  bool causal = false;
  int depth = 4;
  int width = 16;
};

struct SampledBatch {
  BatchSpec spec;
  std::vector<PuInstance> instances;
};

/// Shared per-batch draws (d, P, eta, pi, causal) plus per-stage SCM
/// architecture, all keyed by (seed, global step).
BatchSpec draw_batch_spec(const CurriculumState& state, const TrainConfig& config, std::uint64_t seed);

/// One PU instance from the prior; per-dataset factors keyed by `seed`.
/// Redraws on degenerate samples.
PuInstance sample_instance(const BatchSpec& spec, const TrainConfig& config, std::uint64_t seed);

SampledBatch sample_batch(const CurriculumState& state, const TrainConfig& config, std::uint64_t seed);

/// Throws std::logic_error when an instance breaks the PU allocation contract.
void check_pu_invariants(const PuInstance& instance, const BatchSpec& spec);

/// Held-out tasks drawn from the final-stage prior with pi restricted to
/// [pi_lo, pi_hi]. Shapes vary per task.
PuInstance sample_heldout_task(const TrainConfig& config, std::uint64_t seed, std::size_t index,
                               double pi_lo, double pi_hi);

/// Standalone instance generation (the `gen` command). Each instance draws
/// its own SCM; shapes and composition are fixed by the config.
struct GenConfig {
  std::size_t features = 10;
  std::size_t positives = 100;
  double eta = 1.0;
  double pi = 0.5;
  double p_causal = 0.5;
  int depth = 4;
  int width = 16;
  std::vector<double> noise_levels{0.005, 0.01, 0.02};
  double scm_weight_scale = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static GenConfig from_json(const nlohmann::json& j);
};

/// Instance `index` of a generation run keyed by `seed`.
PuInstance generate_instance(const GenConfig& config, std::uint64_t seed, std::size_t index);

struct StepResult {
  double loss = 0;
  double grad_norm = 0;     // before clipping
  double clipped_norm = 0;  // after clipping
  double lr = 0;
};

/// forward -> cross-entropy on unlabeled rows -> backward -> clip ->
/// AdamW -> EMA. Throws NumericalError (parameters untouched) on a
/// non-finite loss or gradient.
StepResult train_step(ModelParams<float>& params, ModelParams<float>& ema,
                      AdamWState<float>& opt, const PreparedBatch& batch, double lr,
                      const TrainConfig& config);

class Trainer {
 public:
  Trainer(TrainConfig config, ModelConfig model_config, std::uint64_t seed);

  /// Runs the step at global_step() and advances.
  StepResult step();
  bool done() const { return global_step_ >= config_.total_steps(); }

  std::int64_t global_step() const { return global_step_; }
  const TrainConfig& config() const { return config_; }
  const ModelConfig& model_config() const { return model_config_; }
  std::uint64_t seed() const { return seed_; }
  const ModelParams<float>& live() const { return live_; }
  const ModelParams<float>& ema() const { return ema_; }
  const AdamWState<float>& optimizer() const { return opt_; }

  /// live + EMA + optimizer moments + curriculum position.
  void save_state(const std::filesystem::path& path) const;
  /// Refuses (ConfigError with a per-field diff) when the stored configs
  /// or seed differ from this trainer's.
  void load_state(const std::filesystem::path& path);

 private:
  SampledBatch next_batch();

  TrainConfig config_;
  ModelConfig model_config_;
  std::uint64_t seed_;
  ModelParams<float> live_;
  ModelParams<float> ema_;
  AdamWState<float> opt_;
  std::int64_t global_step_ = 0;
  struct Prefetch;
  std::shared_ptr<Prefetch> prefetch_;
};

struct TrainRunOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume_from;
  /// Stop (after checkpointing) once this many steps are complete; -1 runs to the end.
  std::int64_t stop_at = -1;
  std::function<void(std::int64_t step, const StepResult&)> on_step;
};

struct TrainSummary {
  std::int64_t steps_completed = 0;
  double final_loss = 0;
  std::filesystem::path model_path;  // EMA weights
  std::filesystem::path state_path;  // latest training state
};

/// Full run: periodic state checkpoints, metrics CSV
/// `step,phase,stage,lr,loss,grad_norm,seconds`, and a final EMA model
/// checkpoint `model.ckpt` in out_dir.
TrainSummary train(const TrainConfig& config, const ModelConfig& model_config, std::uint64_t seed,
                   const TrainRunOptions& options);

/// Field-by-field differences between two JSON objects, one line each.
std::vector<std::string> json_diff(const nlohmann::json& expected, const nlohmann::json& actual,
                                   const std::string& path = "");

}  // namespace puicl
