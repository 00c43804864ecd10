#include "puicl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <future>
#include <numeric>
#include <sstream>

#include "puicl/checkpoint.hpp"
#include "puicl/error.hpp"

namespace puicl {

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("TrainConfig: " + m); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (stages < 1) fail("stages must be >= 1");
  if (stage_steps < 1) fail("stage_steps must be >= 1");
  if (phase2_steps < 0) fail("phase2_steps must be >= 0");
  for (const auto* s : {&phase1_lr, &phase2_lr}) {
    if (s->warmup < 0 || !(s->peak > 0) || !(s->floor > 0) || s->floor > s->peak || !(s->power > 0)) {
      fail("learning-rate schedule needs warmup >= 0 and 0 < floor <= peak, power > 0");
    }
  }
  if (phase1_lr.warmup >= phase1_steps()) fail("phase1 warmup must be shorter than phase 1");
  if (phase2_steps > 0 && phase2_lr.warmup >= phase2_steps) fail("phase2 warmup must be shorter than phase 2");
  if (!(adamw.beta1 >= 0 && adamw.beta1 < 1) || !(adamw.beta2 >= 0 && adamw.beta2 < 1)) fail("adamw betas must lie in [0, 1)");
  if (adamw.weight_decay < 0 || !(adamw.eps > 0)) fail("adamw weight_decay >= 0 and eps > 0 required");
  if (!(clip_norm > 0)) fail("clip_norm must be > 0");
  if (!(ema_decay >= 0 && ema_decay < 1)) fail("ema_decay must lie in [0, 1)");
  if (features_min < 1 || features_max < features_min) fail("features range invalid");
  if (positives_min < 1 || positives_max < positives_min) fail("positives range invalid");
  if (depth_min < 2 || depth_max < depth_min) fail("depth range invalid");
  if (width_min < 1 || width_max < width_min) fail("width range invalid");
  if ((depth_min - 1) * width_min < features_max + 1) fail("smallest SCM cannot supply causal features");
  if (noise_levels.empty()) fail("noise_levels is empty");
  for (double s : noise_levels) {
    if (s < 0) fail("noise_levels must be non-negative");
  }
  if (!(scm_weight_scale >= 0)) fail("scm_weight_scale must be >= 0");
  if (log_interval < 1 || checkpoint_interval < 1) fail("log/checkpoint intervals must be >= 1");
  if (keep_checkpoints < 1) fail("keep_checkpoints must be >= 1");
  if (workers < 0) fail("workers must be >= 0");
}

namespace {

nlohmann::json schedule_json(const LrSchedule& s) {
  return {{"warmup", s.warmup}, {"peak", s.peak}, {"floor", s.floor}, {"power", s.power}};
}

template <typename V>
void read_field(const nlohmann::json& j, const std::string& path, V& out) {
  try {
    if constexpr (std::is_integral_v<V>) {
      if (!j.is_number_integer()) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!j.is_number()) throw ConfigError("");
    }
    out = j.get<V>();
  } catch (const std::exception&) {
    throw ConfigError("config field '" + path + "' has the wrong type");
  }
}

void read_schedule(const nlohmann::json& j, const std::string& path, LrSchedule& s) {
  if (!j.is_object()) throw ConfigError("config field '" + path + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string p = path + "." + it.key();
    if (it.key() == "warmup") read_field(*it, p, s.warmup);
    else if (it.key() == "peak") read_field(*it, p, s.peak);
    else if (it.key() == "floor") read_field(*it, p, s.floor);
    else if (it.key() == "power") read_field(*it, p, s.power);
    else throw ConfigError("unknown config field '" + p + "'");
  }
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
  return {
      {"batch_size", batch_size},
      {"stages", stages},
      {"stage_steps", stage_steps},
      {"phase2_steps", phase2_steps},
      {"phase1_lr", schedule_json(phase1_lr)},
      {"phase2_lr", schedule_json(phase2_lr)},
      {"adamw", {{"beta1", adamw.beta1}, {"beta2", adamw.beta2}, {"weight_decay", adamw.weight_decay}, {"eps", adamw.eps}}},
      {"clip_norm", clip_norm},
      {"ema_decay", ema_decay},
      {"features_min", features_min},
      {"features_max", features_max},
      {"positives_min", positives_min},
      {"positives_max", positives_max},
      {"depth_min", depth_min},
      {"depth_max", depth_max},
      {"width_min", width_min},
      {"width_max", width_max},
      {"noise_levels", noise_levels},
      {"scm_weight_scale", scm_weight_scale},
      {"log_interval", log_interval},
      {"checkpoint_interval", checkpoint_interval},
      {"keep_checkpoints", keep_checkpoints},
      {"workers", workers},
  };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = *it;
    if (k == "batch_size") read_field(v, k, c.batch_size);
    else if (k == "stages") read_field(v, k, c.stages);
    else if (k == "stage_steps") read_field(v, k, c.stage_steps);
    else if (k == "phase2_steps") read_field(v, k, c.phase2_steps);
    else if (k == "phase1_lr") read_schedule(v, k, c.phase1_lr);
    else if (k == "phase2_lr") read_schedule(v, k, c.phase2_lr);
    else if (k == "adamw") {
      if (!v.is_object()) throw ConfigError("config field 'adamw' must be an object");
      for (auto a = v.begin(); a != v.end(); ++a) {
        const std::string p = "adamw." + a.key();
        if (a.key() == "beta1") read_field(*a, p, c.adamw.beta1);
        else if (a.key() == "beta2") read_field(*a, p, c.adamw.beta2);
        else if (a.key() == "weight_decay") read_field(*a, p, c.adamw.weight_decay);
        else if (a.key() == "eps") read_field(*a, p, c.adamw.eps);
        else throw ConfigError("unknown config field '" + p + "'");
      }
    }
    else if (k == "clip_norm") read_field(v, k, c.clip_norm);
    else if (k == "ema_decay") read_field(v, k, c.ema_decay);
    else if (k == "features_min") read_field(v, k, c.features_min);
    else if (k == "features_max") read_field(v, k, c.features_max);
    else if (k == "positives_min") read_field(v, k, c.positives_min);
    else if (k == "positives_max") read_field(v, k, c.positives_max);
    else if (k == "depth_min") read_field(v, k, c.depth_min);
    else if (k == "depth_max") read_field(v, k, c.depth_max);
    else if (k == "width_min") read_field(v, k, c.width_min);
    else if (k == "width_max") read_field(v, k, c.width_max);
    else if (k == "noise_levels") read_field(v, k, c.noise_levels);
    else if (k == "scm_weight_scale") read_field(v, k, c.scm_weight_scale);
    else if (k == "log_interval") read_field(v, k, c.log_interval);
    else if (k == "checkpoint_interval") read_field(v, k, c.checkpoint_interval);
    else if (k == "keep_checkpoints") read_field(v, k, c.keep_checkpoints);
    else if (k == "workers") read_field(v, k, c.workers);
    else throw ConfigError("unknown config field '" + k + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- schedules

CurriculumState curriculum_at(std::int64_t global_step, const TrainConfig& config) {
  CurriculumState s;
  s.global_step = global_step;
  s.arch_block = global_step / config.stage_steps;
  if (global_step < config.phase1_steps()) {
    s.phase = 1;
    s.stage = static_cast<int>(global_step / config.stage_steps) + 1;
    s.step_in_stage = global_step % config.stage_steps;
  } else {
    s.phase = 2;
    s.stage = config.stages;
    s.step_in_stage = (global_step - config.phase1_steps()) % config.stage_steps;
  }
  return s;
}

StageParams stage_params(int stage, int stages) {
  if (stages < 1 || stage < 1 || stage > stages) {
    throw ConfigError("stage_params: stage " + std::to_string(stage) + " outside 1.." + std::to_string(stages));
  }
  const double t = stages == 1 ? 1.0 : static_cast<double>(stage - 1) / static_cast<double>(stages - 1);
  // std::lerp is exact at both endpoints.
  auto lerp = [t](double a, double b) { return std::lerp(a, b, t); };
  StageParams p;
  p.eta_lo = lerp(1.0, 0.5);
  p.eta_hi = lerp(1.0, 2.0);
  p.pi_lo = lerp(0.5, 0.1);
  p.pi_hi = lerp(0.5, 0.9);
  p.p_causal = static_cast<double>(stage) / (2.0 * stages);
  return p;
}

double lr_at(std::int64_t global_step, int phase, const TrainConfig& config) {
  if (phase != 1 && phase != 2) throw ConfigError("lr_at: phase must be 1 or 2");
  const LrSchedule& s = phase == 1 ? config.phase1_lr : config.phase2_lr;
  const std::int64_t start = phase == 1 ? 0 : config.phase1_steps();
  const std::int64_t length = phase == 1 ? config.phase1_steps() : config.phase2_steps;
  const std::int64_t t = std::clamp<std::int64_t>(global_step - start, 0, length);
  if (t < s.warmup) return s.peak * (static_cast<double>(t) / static_cast<double>(s.warmup));
  const double span = static_cast<double>(length - s.warmup);
  const double progress = span > 0 ? static_cast<double>(t - s.warmup) / span : 1.0;
  // floor + (peak - floor) * (1 - progress)^power, exact at both ends.
  const double lr = std::lerp(s.floor, s.peak, std::pow(1.0 - progress, s.power));
  return std::max(lr, s.floor);
}

// ---------------------------------------------------------------- sampling

namespace {

double draw_range(Rng& rng, double lo, double hi) { return lo == hi ? lo : rng.uniform(lo, hi); }

constexpr int kMaxAttempts = 64;

PriorSpace space_for(const BatchSpec& spec, const TrainConfig& config) {
  PriorSpace space;
  space.depth = spec.depth;
  space.width = spec.width;
  space.noise_levels = config.noise_levels;
  space.weight_scale = config.scm_weight_scale;
  return space;
}

}  // namespace

BatchSpec draw_batch_spec(const CurriculumState& state, const TrainConfig& config, std::uint64_t seed) {
  BatchSpec spec;
  Rng arch(derive_seed(seed, {stream::kStageArch, static_cast<std::uint64_t>(state.arch_block)}));
  spec.depth = static_cast<int>(arch.uniform_int(config.depth_min, config.depth_max));
  spec.width = static_cast<int>(arch.uniform_int(config.width_min, config.width_max));

  Rng rng(derive_seed(seed, {stream::kBatch, static_cast<std::uint64_t>(state.global_step)}));
  const StageParams sp = stage_params(state.stage, config.stages);
  spec.features = static_cast<std::size_t>(rng.uniform_int(config.features_min, config.features_max));
  spec.positives = static_cast<std::size_t>(rng.uniform_int(config.positives_min, config.positives_max));
  spec.eta = draw_range(rng, sp.eta_lo, sp.eta_hi);
  spec.pi = draw_range(rng, sp.pi_lo, sp.pi_hi);
  spec.causal = rng.bernoulli(sp.p_causal);
  return spec;
}

PuInstance sample_instance(const BatchSpec& spec, const TrainConfig& config, std::uint64_t seed) {
  const PriorSpace space = space_for(spec, config);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const std::uint64_t s = derive_seed(seed, {static_cast<std::uint64_t>(attempt)});
    Rng rng(s);
    const ScmConfig scm = draw_scm_config(space, static_cast<int>(spec.features), spec.causal, rng);
    try {
      PuInstance inst = synth_pu(scm, spec.positives, spec.eta, spec.pi, rng);
      // Random feature ordering.
      std::vector<Eigen::Index> perm(spec.features);
      std::iota(perm.begin(), perm.end(), Eigen::Index{0});
      rng.shuffle(perm);
      RowMatrix lab(inst.labeled.rows(), inst.labeled.cols());
      RowMatrix unl(inst.unlabeled.rows(), inst.unlabeled.cols());
      for (std::size_t j = 0; j < perm.size(); ++j) {
        lab.col(static_cast<Eigen::Index>(j)) = inst.labeled.col(perm[j]);
        unl.col(static_cast<Eigen::Index>(j)) = inst.unlabeled.col(perm[j]);
      }
      inst.labeled = std::move(lab);
      inst.unlabeled = std::move(unl);
      inst.seed = s;
      return inst;
    } catch (const DegenerateSampleError&) {
      continue;
    }
  }
  throw DegenerateSampleError("sample_instance: no usable dataset after " + std::to_string(kMaxAttempts) +
                              " attempts");
}

SampledBatch sample_batch(const CurriculumState& state, const TrainConfig& config, std::uint64_t seed) {
  SampledBatch b;
  b.spec = draw_batch_spec(state, config, seed);
  b.instances.reserve(static_cast<std::size_t>(config.batch_size));
  for (int i = 0; i < config.batch_size; ++i) {
    const std::uint64_t s = derive_seed(
        seed, {stream::kDataset, static_cast<std::uint64_t>(state.global_step), static_cast<std::uint64_t>(i)});
    b.instances.push_back(sample_instance(b.spec, config, s));
  }
  return b;
}

void check_pu_invariants(const PuInstance& instance, const BatchSpec& spec) {
  const PuComposition c = pu_composition(spec.positives, spec.eta, spec.pi);
  auto fail = [](const std::string& m) { throw std::logic_error("PU invariant violated: " + m); };
  if (instance.num_labeled() != c.labeled()) fail("labeled count");
  if (instance.num_unlabeled() != c.n_unlabeled) fail("n_u != ceil(P * eta)");
  if (instance.hidden_labels.size() != c.n_unlabeled) fail("hidden label count");
  if (instance.hidden_negatives() != c.neg_unlabeled) fail("unlabeled negative count");
  if (instance.num_features() != spec.features) fail("feature count");
}

PuInstance sample_heldout_task(const TrainConfig& config, std::uint64_t seed, std::size_t index,
                               double pi_lo, double pi_hi) {
  Rng rng(derive_seed(seed, {stream::kHeldOut, index}));
  const StageParams last = stage_params(config.stages, config.stages);
  BatchSpec spec;
  spec.depth = static_cast<int>(rng.uniform_int(config.depth_min, config.depth_max));
  spec.width = static_cast<int>(rng.uniform_int(config.width_min, config.width_max));
  spec.features = static_cast<std::size_t>(rng.uniform_int(config.features_min, config.features_max));
  spec.positives = static_cast<std::size_t>(rng.uniform_int(config.positives_min, config.positives_max));
  spec.eta = draw_range(rng, last.eta_lo, last.eta_hi);
  spec.pi = draw_range(rng, pi_lo, pi_hi);
  spec.causal = rng.bernoulli(last.p_causal);
  return sample_instance(spec, config, derive_seed(seed, {stream::kHeldOut, index, 1}));
}

void GenConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("GenConfig: " + m); };
  if (features < 1) fail("features must be >= 1");
  if (positives < 1) fail("positives must be >= 1");
  if (!(eta > 0)) fail("eta must be > 0");
  if (!(pi > 0 && pi < 1)) fail("pi must lie in (0, 1), got " + std::to_string(pi));
  if (!(p_causal >= 0 && p_causal <= 1)) fail("p_causal must lie in [0, 1]");
  if (depth < 2) fail("depth must be >= 2");
  if (width < 1) fail("width must be >= 1");
  if (p_causal > 0 && static_cast<std::size_t>((depth - 1) * width) < features + 1) {
    fail("causal generation needs (depth - 1) * width >= features + 1");
  }
  if (noise_levels.empty()) fail("noise_levels is empty");
  for (double s : noise_levels) {
    if (s < 0) fail("noise_levels must be non-negative");
  }
  if (!(scm_weight_scale >= 0)) fail("scm_weight_scale must be >= 0");
}

nlohmann::json GenConfig::to_json() const {
  return {{"features", features}, {"positives", positives}, {"eta", eta},
          {"pi", pi}, {"p_causal", p_causal}, {"depth", depth},
          {"width", width}, {"noise_levels", noise_levels}, {"scm_weight_scale", scm_weight_scale}};
}

GenConfig GenConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("gen config must be a JSON object");
  GenConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = *it;
    if (k == "features") read_field(v, k, c.features);
    else if (k == "positives") read_field(v, k, c.positives);
    else if (k == "eta") read_field(v, k, c.eta);
    else if (k == "pi") read_field(v, k, c.pi);
    else if (k == "p_causal") read_field(v, k, c.p_causal);
    else if (k == "depth") read_field(v, k, c.depth);
    else if (k == "width") read_field(v, k, c.width);
    else if (k == "noise_levels") read_field(v, k, c.noise_levels);
    else if (k == "scm_weight_scale") read_field(v, k, c.scm_weight_scale);
    else throw ConfigError("unknown config field '" + k + "'");
  }
  c.validate();
  return c;
}

PuInstance generate_instance(const GenConfig& config, std::uint64_t seed, std::size_t index) {
  config.validate();
  Rng rng(derive_seed(seed, {stream::kGen, index}));
  BatchSpec spec;
  spec.features = config.features;
  spec.positives = config.positives;
  spec.eta = config.eta;
  spec.pi = config.pi;
  spec.causal = rng.bernoulli(config.p_causal);
  spec.depth = config.depth;
  spec.width = config.width;
  TrainConfig tc;
  tc.noise_levels = config.noise_levels;
  tc.scm_weight_scale = config.scm_weight_scale;
  return sample_instance(spec, tc, derive_seed(seed, {stream::kGen, index, 1}));
}

// ---------------------------------------------------------------- step

StepResult train_step(ModelParams<float>& params, ModelParams<float>& ema,
                      AdamWState<float>& opt, const PreparedBatch& batch, double lr,
                      const TrainConfig& config) {
  params.zero_grad();
  StepResult r;
  r.lr = lr;
  {
    auto loss = training_loss(params, batch);
    r.loss = loss.item();
    if (!std::isfinite(r.loss)) {
      throw NumericalError("non-finite training loss " + std::to_string(r.loss) + " (batch " +
                           std::to_string(batch.batch) + " x P=" + std::to_string(batch.labeled) +
                           ", n_u=" + std::to_string(batch.unlabeled) + ", d=" +
                           std::to_string(batch.features) + ", lr=" + std::to_string(lr) + ")");
    }
    loss.backward();
  }
  auto tensors = params.tensors();
  r.grad_norm = global_grad_norm<float>(tensors);
  if (!std::isfinite(r.grad_norm)) {
    throw NumericalError("non-finite gradient norm at loss " + std::to_string(r.loss));
  }
  const double factor = clip_global_norm<float>(tensors, config.clip_norm);
  r.clipped_norm = r.grad_norm * factor;
  adamw_step<float>(tensors, opt, lr, config.adamw);
  auto ema_tensors = ema.tensors();
  ema_update<float>(ema_tensors, tensors, config.ema_decay);
  return r;
}

// ---------------------------------------------------------------- trainer

struct Trainer::Prefetch {
  std::deque<std::pair<std::int64_t, std::future<SampledBatch>>> queue;
};

Trainer::Trainer(TrainConfig config, ModelConfig model_config, std::uint64_t seed)
    : config_(std::move(config)), model_config_(model_config), seed_(seed) {
  config_.validate();
  model_config_.validate();
  Rng init(derive_seed(seed_, {stream::kInit}));
  live_ = ModelParams<float>::init(model_config_, init);
  ema_ = live_.clone(false);
  const auto tensors = live_.tensors();
  opt_ = AdamWState<float>::zeros_like(tensors);
}

SampledBatch Trainer::next_batch() {
  if (config_.workers == 0) return sample_batch(curriculum_at(global_step_, config_), config_, seed_);
  if (!prefetch_) prefetch_ = std::make_shared<Prefetch>();
  auto& q = prefetch_->queue;
  while (!q.empty() && q.front().first != global_step_) q.pop_front();
  std::int64_t next = q.empty() ? global_step_ : q.back().first + 1;
  while (static_cast<int>(q.size()) < config_.workers + 1 && next < config_.total_steps()) {
    const CurriculumState st = curriculum_at(next, config_);
    q.emplace_back(next, std::async(std::launch::async,
                                    [st, cfg = config_, seed = seed_] { return sample_batch(st, cfg, seed); }));
    ++next;
  }
  SampledBatch b = q.front().second.get();
  q.pop_front();
  return b;
}

StepResult Trainer::step() {
  if (done()) throw std::logic_error("Trainer::step: training already complete");
  const CurriculumState st = curriculum_at(global_step_, config_);
  SampledBatch batch = next_batch();
  if (global_step_ % 1000 == 0) {
    for (const auto& inst : batch.instances) check_pu_invariants(inst, batch.spec);
  }
  const PreparedBatch prepared = prepare_batch(batch.instances, true);
  const double lr = lr_at(global_step_ + 1, st.phase, config_);
  StepResult r = train_step(live_, ema_, opt_, prepared, lr, config_);
  ++global_step_;
  return r;
}

void Trainer::save_state(const std::filesystem::path& path) const {
  const CurriculumState st = curriculum_at(global_step_, config_);
  nlohmann::json h;
  h["kind"] = "train_state";
  h["model_config"] = to_json(model_config_);
  h["channel_order"] = {"positive", "negative"};
  h["training_step"] = global_step_;
  h["ema"] = true;
  h["param_count"] = count_params(model_config_).total;
  h["trained_features"] = {config_.features_min, config_.features_max};
  h["train"] = {{"config", config_.to_json()},
                {"seed", seed_},
                {"adam_step", opt_.step_count},
                {"curriculum", {{"phase", st.phase}, {"stage", st.stage}, {"step_in_stage", st.step_in_stage}, {"global_step", st.global_step}}}};
  std::vector<NamedArray> arrays;
  append_arrays(arrays, live_, "live.");
  append_arrays(arrays, ema_, "ema.");
  const auto names = live_.names();
  const auto tensors = live_.tensors();
  for (std::size_t i = 0; i < names.size(); ++i) {
    arrays.push_back({"adam_m." + names[i], tensors[i].shape(), std::vector<float>(opt_.first_moment[i].begin(), opt_.first_moment[i].end())});
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    arrays.push_back({"adam_v." + names[i], tensors[i].shape(), std::vector<float>(opt_.second_moment[i].begin(), opt_.second_moment[i].end())});
  }
  write_checkpoint(path, h, arrays);
}

std::vector<std::string> json_diff(const nlohmann::json& expected, const nlohmann::json& actual,
                                   const std::string& path) {
  std::vector<std::string> out;
  if (expected.is_object() && actual.is_object()) {
    for (auto it = expected.begin(); it != expected.end(); ++it) {
      const std::string p = path.empty() ? it.key() : path + "." + it.key();
      if (!actual.contains(it.key())) {
        out.push_back(p + ": missing in checkpoint");
      } else {
        auto sub = json_diff(*it, actual[it.key()], p);
        out.insert(out.end(), sub.begin(), sub.end());
      }
    }
    for (auto it = actual.begin(); it != actual.end(); ++it) {
      if (!expected.contains(it.key())) out.push_back((path.empty() ? it.key() : path + "." + it.key()) + ": only in checkpoint");
    }
  } else if (expected != actual) {
    out.push_back(path + ": run has " + expected.dump() + ", checkpoint has " + actual.dump());
  }
  return out;
}

void Trainer::load_state(const std::filesystem::path& path) {
  const CheckpointFile file = read_checkpoint(path);
  const auto& h = file.header;
  if (h.value("kind", "") != "train_state" || !h.contains("train")) {
    throw CheckpointError(path.string() + ": not a training-state checkpoint");
  }
  const auto& tr = h["train"];
  std::vector<std::string> diffs;
  for (auto& d : json_diff(config_.to_json(), tr.value("config", nlohmann::json::object()), "config")) diffs.push_back(d);
  for (auto& d : json_diff(to_json(model_config_), h.value("model_config", nlohmann::json::object()), "model_config")) diffs.push_back(d);
  if (tr.value("seed", std::uint64_t{0}) != seed_) {
    diffs.push_back("seed: run has " + std::to_string(seed_) + ", checkpoint has " +
                    std::to_string(tr.value("seed", std::uint64_t{0})));
  }
  if (!diffs.empty()) {
    std::ostringstream os;
    os << "resume refused, configuration differs from " << path.string() << ":";
    for (const auto& d : diffs) os << "\n  " << d;
    throw ConfigError(os.str());
  }
  load_arrays(file, live_, "live.");
  load_arrays(file, ema_, "ema.");
  const auto names = live_.names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const NamedArray* m = file.find("adam_m." + names[i]);
    const NamedArray* v = file.find("adam_v." + names[i]);
    if (!m || !v || m->data.size() != opt_.first_moment[i].size() || v->data.size() != opt_.second_moment[i].size()) {
      throw CheckpointError(path.string() + ": optimizer state for '" + names[i] + "' missing or malformed");
    }
    opt_.first_moment[i].assign(m->data.begin(), m->data.end());
    opt_.second_moment[i].assign(v->data.begin(), v->data.end());
  }
  opt_.step_count = tr.value("adam_step", std::int64_t{0});
  global_step_ = h.value("training_step", std::int64_t{0});
  prefetch_.reset();
}

// ---------------------------------------------------------------- run

namespace {

std::filesystem::path state_path(const std::filesystem::path& dir, std::int64_t step) {
  char name[64];
  std::snprintf(name, sizeof(name), "state-%08lld.ckpt", static_cast<long long>(step));
  return dir / name;
}

void prune_states(const std::filesystem::path& dir, int keep) {
  std::vector<std::filesystem::path> states;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("state-", 0) == 0 && entry.path().extension() == ".ckpt") states.push_back(entry.path());
  }
  std::sort(states.begin(), states.end());
  while (states.size() > static_cast<std::size_t>(keep)) {
    std::filesystem::remove(states.front());
    states.erase(states.begin());
  }
}

constexpr const char* kMetricsHeader = "step,phase,stage,lr,loss,grad_norm,seconds";

// Keeps metric rows for steps <= `step` so a resumed run appends cleanly.
void truncate_metrics(const std::filesystem::path& path, std::int64_t step) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream is(path);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line == kMetricsHeader) continue;
    if (std::stoll(line.substr(0, line.find(','))) <= step) keep.push_back(line);
  }
  is.close();
  std::ofstream os(path, std::ios::trunc);
  os << kMetricsHeader << '\n';
  for (const auto& l : keep) os << l << '\n';
}

}  // namespace

TrainSummary train(const TrainConfig& config, const ModelConfig& model_config, std::uint64_t seed,
                   const TrainRunOptions& options) {
  namespace fs = std::filesystem;
  fs::create_directories(options.out_dir);
  Trainer trainer(config, model_config, seed);
  const fs::path metrics = options.out_dir / "metrics.csv";
  if (options.resume_from) {
    trainer.load_state(*options.resume_from);
    truncate_metrics(metrics, trainer.global_step());
  } else {
    std::ofstream(metrics, std::ios::trunc) << kMetricsHeader << '\n';
  }
  std::ofstream log(metrics, std::ios::app);
  if (!log) throw IoError("cannot open " + metrics.string());

  TrainSummary summary;
  const auto start = std::chrono::steady_clock::now();
  std::int64_t last_saved = -1;
  while (!trainer.done() && (options.stop_at < 0 || trainer.global_step() < options.stop_at)) {
    const CurriculumState st = curriculum_at(trainer.global_step(), config);
    StepResult r;
    try {
      r = trainer.step();
    } catch (const NumericalError& ex) {
      throw NumericalError("step " + std::to_string(st.global_step) + " (phase " + std::to_string(st.phase) +
                           ", stage " + std::to_string(st.stage) + "): " + ex.what());
    }
    const std::int64_t done = trainer.global_step();
    summary.final_loss = r.loss;
    if (done % config.log_interval == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      char row[256];
      std::snprintf(row, sizeof(row), "%lld,%d,%d,%.9g,%.9g,%.9g,%.3f", static_cast<long long>(done), st.phase,
                    st.stage, r.lr, r.loss, r.grad_norm, secs);
      log << row << '\n' << std::flush;
    }
    if (done % config.checkpoint_interval == 0) {
      try {
        trainer.save_state(state_path(options.out_dir, done));
        prune_states(options.out_dir, config.keep_checkpoints);
      } catch (const std::exception& ex) {
        throw IoError("checkpoint at step " + std::to_string(done) + " failed: " + ex.what());
      }
      last_saved = done;
    }
    if (options.on_step) options.on_step(done, r);
  }
  summary.steps_completed = trainer.global_step();
  summary.state_path = state_path(options.out_dir, trainer.global_step());
  if (last_saved != trainer.global_step()) {
    trainer.save_state(summary.state_path);
    prune_states(options.out_dir, config.keep_checkpoints);
  }
  summary.model_path = options.out_dir / "model.ckpt";
  save_model(summary.model_path, trainer.ema(),
             {trainer.global_step(), true, config.features_min, config.features_max});
  return summary;
}

}  // namespace puicl
