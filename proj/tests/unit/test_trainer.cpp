#include <doctest.h>

#include <cmath>
#include <fstream>
#include <string>

#include "puicl/error.hpp"
#include "puicl/trainer.hpp"
#include "support.hpp"

using namespace puicl;
using namespace puicl::test;

namespace {

TrainConfig tiny_config() {
  TrainConfig tc;
  tc.batch_size = 2;
  tc.stages = 3;
  tc.stage_steps = 4;
  tc.phase2_steps = 6;
  tc.phase1_lr = {3, 1e-3, 1e-4, 1.5};
  tc.phase2_lr = {2, 3e-4, 3e-5, 1.5};
  tc.features_min = 3;
  tc.features_max = 4;
  tc.positives_min = 8;
  tc.positives_max = 12;
  tc.log_interval = 3;
  tc.checkpoint_interval = 5;
  tc.keep_checkpoints = 2;
  return tc;
}

const ModelConfig kTinyModel{8, 1, 2, 16};

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::size_t n = 0;
  for (std::string line; std::getline(is, line);) ++n;
  return n;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults are the full-scale values") {
    const TrainConfig tc;
    CHECK(tc.batch_size == 48);
    CHECK(tc.phase1_steps() == 75000);
    CHECK(tc.total_steps() == 100000);
    CHECK(tc.phase1_lr.warmup == 4000);
    CHECK(tc.phase1_lr.peak == 1.6e-4);
    CHECK(tc.phase2_lr.floor == 4e-6);
    CHECK(tc.adamw.beta2 == 0.95);
    CHECK(tc.adamw.weight_decay == 1e-4);
    CHECK(tc.clip_norm == 1.0);
    CHECK(tc.ema_decay == 0.95);
    CHECK(tc.features_max == 20);
    CHECK(tc.positives_min == 100);
    CHECK(tc.depth_max == 12);
    CHECK(tc.width_min == 12);
  }

  TEST_CASE("json round trip and partial files") {
    const TrainConfig tc = tiny_config();
    CHECK(TrainConfig::from_json(tc.to_json()).to_json() == tc.to_json());
    const TrainConfig partial = TrainConfig::from_json({{"batch_size", 7}, {"phase1_lr", {{"peak", 2e-3}}}});
    CHECK(partial.batch_size == 7);
    CHECK(partial.phase1_lr.peak == 2e-3);
    CHECK(partial.phase1_lr.warmup == 4000);
  }

  TEST_CASE("unknown keys and bad values name the field") {
    try {
      TrainConfig::from_json({{"batch_sise", 7}});
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("batch_sise") != std::string::npos);
    }
    CHECK_THROWS_AS(TrainConfig::from_json({{"batch_size", "many"}}), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_json({{"features_min", 9}, {"features_max", 4}}), ConfigError);
  }
}

TEST_SUITE("curriculum") {
  TEST_CASE("stage_params endpoints and midpoint") {
    const StageParams s1 = stage_params(1);
    CHECK(s1.eta_lo == 1.0);
    CHECK(s1.eta_hi == 1.0);
    CHECK(s1.pi_lo == 0.5);
    CHECK(s1.pi_hi == 0.5);
    CHECK(s1.p_causal == 0.005);
    const StageParams sk = stage_params(100);
    CHECK(sk.eta_lo == 0.5);
    CHECK(sk.eta_hi == 2.0);
    CHECK(sk.pi_lo == 0.1);
    CHECK(sk.pi_hi == 0.9);
    CHECK(sk.p_causal == 0.5);
    const StageParams mid = stage_params(50);
    CHECK(mid.eta_lo == doctest::Approx(1.0 - 0.5 * 49.0 / 99.0).epsilon(1e-12));
    CHECK(mid.eta_lo == doctest::Approx(0.75253).epsilon(1e-5));
    CHECK(mid.eta_hi == doctest::Approx(1.49494).epsilon(1e-5));
    CHECK(mid.p_causal == 0.25);
  }

  TEST_CASE("phase transition under defaults") {
    const TrainConfig tc;
    const auto a = curriculum_at(74999, tc), b = curriculum_at(75000, tc);
    CHECK(a.phase == 1);
    CHECK(a.stage == 100);
    CHECK(a.step_in_stage == 749);
    CHECK(b.phase == 2);
    CHECK(b.stage == 100);
    CHECK(curriculum_at(0, tc).stage == 1);
    CHECK(curriculum_at(750, tc).stage == 2);
  }

  TEST_CASE("lr_at reference values") {
    const TrainConfig tc;
    CHECK(lr_at(4000, 1, tc) == 1.6e-4);
    CHECK(lr_at(75000, 1, tc) == 1.6e-5);
    CHECK(lr_at(2000, 1, tc) == doctest::Approx(8e-5).epsilon(1e-12));
    CHECK(lr_at(0, 1, tc) == 0.0);
    CHECK(lr_at(77000, 2, tc) == 4e-5);
    CHECK(lr_at(100000, 2, tc) == 4e-6);
  }

  TEST_CASE("lr_at is continuous at the warmup boundary and never below the floor after it") {
    const TrainConfig tc;
    CHECK(std::abs(lr_at(4001, 1, tc) - lr_at(4000, 1, tc)) < 1e-8);
    CHECK(std::abs(lr_at(3999, 1, tc) - lr_at(4000, 1, tc)) < 1e-7);
    for (std::int64_t t = 4000; t <= 75000; t += 97) CHECK(lr_at(t, 1, tc) >= tc.phase1_lr.floor);
    for (std::int64_t t = 77000; t <= 100000; t += 89) CHECK(lr_at(t, 2, tc) >= tc.phase2_lr.floor);
  }
}

TEST_SUITE("sampling") {
  TEST_CASE("stage one batches: pi fixed, shared shapes, deterministic") {
    TrainConfig tc = tiny_config();
    tc.batch_size = 4;
    const auto state = curriculum_at(1, tc);
    const SampledBatch a = sample_batch(state, tc, 11), b = sample_batch(state, tc, 11);
    CHECK(a.spec.pi == 0.5);
    CHECK(a.spec.eta == 1.0);
    REQUIRE(a.instances.size() == 4);
    for (const auto& inst : a.instances) {
      CHECK(inst.num_labeled() == a.instances[0].num_labeled());
      CHECK(inst.num_unlabeled() == a.instances[0].num_unlabeled());
      CHECK(inst.num_features() == a.spec.features);
      CHECK_NOTHROW(check_pu_invariants(inst, a.spec));
    }
    for (std::size_t i = 0; i < 4; ++i) CHECK(a.instances[i].unlabeled == b.instances[i].unlabeled);
  }

  TEST_CASE("batches in one stage share the SCM architecture but not the data") {
    TrainConfig tc = tiny_config();
    const auto s0 = curriculum_at(0, tc), s1 = curriculum_at(1, tc);
    const BatchSpec a = draw_batch_spec(s0, tc, 5), b = draw_batch_spec(s1, tc, 5);
    CHECK(a.depth == b.depth);
    CHECK(a.width == b.width);
    const auto x = sample_batch(s0, tc, 5), y = sample_batch(s1, tc, 5);
    CHECK_FALSE(x.instances[0].labeled == y.instances[0].labeled);
  }

  TEST_CASE("final-stage batches cover the prior ranges") {
    TrainConfig tc = tiny_config();
    const auto last = curriculum_at(tc.total_steps() - 1, tc);
    double lo = 1, hi = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
      const BatchSpec spec = draw_batch_spec(last, tc, s);
      lo = std::min(lo, spec.pi);
      hi = std::max(hi, spec.pi);
      CHECK(spec.pi >= 0.1);
      CHECK(spec.pi <= 0.9);
      CHECK(spec.eta >= 0.5);
      CHECK(spec.eta <= 2.0);
    }
    CHECK(lo < 0.2);
    CHECK(hi > 0.8);
  }
}

TEST_SUITE("train_step") {
  TEST_CASE("initial loss near ln 2, clipped norm at most 1, replayed batch improves") {
    TrainConfig tc = tiny_config();
    const SampledBatch batch = sample_batch(curriculum_at(0, tc), tc, 3);
    const PreparedBatch pb = prepare_batch(batch.instances, true);
    Rng rng(4);
    auto live = ModelParams<float>::init(kTinyModel, rng);
    auto ema = live.clone(false);
    auto opt = AdamWState<float>::zeros_like(live.tensors());
    double first = 0, last = 0;
    for (int i = 0; i < 50; ++i) {
      const StepResult r = train_step(live, ema, opt, pb, 1e-3, tc);
      if (i == 0) first = r.loss;
      last = r.loss;
      CHECK(r.clipped_norm <= 1.0 + 1e-9);
      CHECK(r.clipped_norm <= r.grad_norm + 1e-12);
    }
    CHECK(std::abs(first - std::log(2.0)) < 0.2);
    CHECK(last < first);
    CHECK(opt.step_count == 50);
  }

  TEST_CASE("ema follows the live weights with decay 0.95") {
    TrainConfig tc = tiny_config();
    const PreparedBatch pb = prepare_batch(sample_batch(curriculum_at(0, tc), tc, 3).instances, true);
    Rng rng(5);
    auto live = ModelParams<float>::init(kTinyModel, rng);
    auto ema = live.clone(false);
    auto opt = AdamWState<float>::zeros_like(live.tensors());
    const auto before = values(ema.dec1_weight);
    train_step(live, ema, opt, pb, 1e-3, tc);
    const auto now = values(live.dec1_weight), after = values(ema.dec1_weight);
    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK(after[i] == doctest::Approx(0.95 * before[i] + 0.05 * now[i]).epsilon(1e-6));
    }
  }

  TEST_CASE("non-finite loss aborts without touching parameters") {
    TrainConfig tc = tiny_config();
    PreparedBatch pb = prepare_batch(sample_batch(curriculum_at(0, tc), tc, 3).instances, true);
    pb.x[0] = std::nan("");
    Rng rng(6);
    auto live = ModelParams<float>::init(kTinyModel, rng);
    auto ema = live.clone(false);
    auto opt = AdamWState<float>::zeros_like(live.tensors());
    const auto before = values(live.feature_weight);
    CHECK_THROWS_AS(train_step(live, ema, opt, pb, 1e-3, tc), NumericalError);
    CHECK(values(live.feature_weight) == before);
    CHECK(opt.step_count == 0);
  }
}

TEST_SUITE("train") {
  TEST_CASE("metrics rows, checkpoint pruning and final model") {
    const auto dir = scratch("train");
    const TrainConfig tc = tiny_config();
    TrainRunOptions opts;
    opts.out_dir = dir;
    const TrainSummary s = train(tc, kTinyModel, 1, opts);
    CHECK(s.steps_completed == tc.total_steps());
    CHECK(count_lines(dir / "metrics.csv") == 1 + static_cast<std::size_t>(tc.total_steps() / tc.log_interval));
    std::size_t states = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.path().filename().string().rfind("state-", 0) == 0) ++states;
    }
    CHECK(states == static_cast<std::size_t>(tc.keep_checkpoints));
    CHECK(std::filesystem::exists(s.model_path));
  }

  TEST_CASE("resume matches an uninterrupted run") {
    const auto dir = scratch("resume");
    const TrainConfig tc = tiny_config();
    TrainRunOptions full;
    full.out_dir = dir / "full";
    const TrainSummary a = train(tc, kTinyModel, 2, full);
    TrainRunOptions first;
    first.out_dir = dir / "split";
    first.stop_at = 10;
    const TrainSummary b1 = train(tc, kTinyModel, 2, first);
    CHECK(b1.steps_completed == 10);
    TrainRunOptions second;
    second.out_dir = dir / "split";
    second.resume_from = b1.state_path;
    const TrainSummary b2 = train(tc, kTinyModel, 2, second);
    CHECK(b2.final_loss == a.final_loss);
  }

  TEST_CASE("resume with different settings is refused with a diff") {
    const auto dir = scratch("refuse");
    TrainConfig tc = tiny_config();
    TrainRunOptions first;
    first.out_dir = dir;
    first.stop_at = 5;
    const TrainSummary s = train(tc, kTinyModel, 3, first);
    tc.batch_size = 3;
    TrainRunOptions again;
    again.out_dir = dir;
    again.resume_from = s.state_path;
    try {
      train(tc, kTinyModel, 3, again);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("batch_size") != std::string::npos);
    }
  }

  TEST_CASE("background producers do not change the result") {
    const auto dir = scratch("workers");
    TrainConfig tc = tiny_config();
    tc.phase2_steps = 0;
    TrainRunOptions inline_run;
    inline_run.out_dir = dir / "inline";
    const TrainSummary a = train(tc, kTinyModel, 4, inline_run);
    tc.workers = 2;
    TrainRunOptions threaded;
    threaded.out_dir = dir / "threaded";
    const TrainSummary b = train(tc, kTinyModel, 4, threaded);
    CHECK(a.final_loss == b.final_loss);
  }
}
