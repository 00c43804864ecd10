#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "puicl/checkpoint.hpp"
#include "puicl/error.hpp"
#include "puicl/eval.hpp"
#include "puicl/io.hpp"
#include "puicl/model.hpp"
#include "puicl/trainer.hpp"

#ifndef PUICL_VERSION
#define PUICL_VERSION "0.0.0"
#endif

namespace puicl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------- logging

enum class Level { kQuiet = 0, kInfo = 1, kDebug = 2 };

Level log_level() {
  const char* env = std::getenv("PUICL_LOG");
  if (!env) return Level::kInfo;
  const std::string v = env;
  if (v == "quiet" || v == "0") return Level::kQuiet;
  if (v == "debug" || v == "2") return Level::kDebug;
  return Level::kInfo;
}

template <typename... Args>
void log(Level level, const char* f, Args... args) {
  if (static_cast<int>(log_level()) < static_cast<int>(level)) return;
  std::fprintf(stderr, f, args...);
  std::fputc('\n', stderr);
}

void warn(const std::string& msg) { std::fprintf(stderr, "warning: %s\n", msg.c_str()); }

// ---------------------------------------------------------------- manifest

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Manifest {
 public:
  explicit Manifest(const std::string& command) : start_(std::chrono::steady_clock::now()) {
    j_["command"] = command;
    j_["version"] = PUICL_VERSION;
    j_["started_at"] = utc_now();
    j_["inputs"] = json::object();
    j_["outputs"] = json::array();
  }
  json& operator[](const char* key) { return j_[key]; }
  void input(const std::string& role, const fs::path& p) { j_["inputs"][role] = p.string(); }
  void output(const fs::path& p) { j_["outputs"].push_back(p.string()); }
  void write(const fs::path& path) {
    j_["finished_at"] = utc_now();
    j_["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_text_file(path, j_.dump(2) + "\n");
  }

 private:
  json j_;
  std::chrono::steady_clock::time_point start_;
};

// Manifest path for commands whose output is a single file.
fs::path manifest_beside(const fs::path& out) {
  fs::path p = out;
  p.replace_extension(".manifest.json");
  return p;
}

json load_config(const std::string& path) { return path.empty() ? json::object() : read_json_file(path); }

// ---------------------------------------------------------------- gen

struct GenArgs {
  std::string config, out;
  std::size_t count = 1;
  std::uint64_t seed = 0;
  std::optional<double> pi, eta;
  bool truth = true;
};

int cmd_gen(const GenArgs& a) {
  json raw = load_config(a.config);
  if (a.pi) raw["pi"] = *a.pi;
  if (a.eta) raw["eta"] = *a.eta;
  const GenConfig cfg = GenConfig::from_json(raw);
  if (a.count < 1) throw ConfigError("--count must be >= 1");
  fs::create_directories(a.out);
  Manifest m("gen");
  m["seed"] = a.seed;
  m["config"] = cfg.to_json();
  m["count"] = a.count;
  if (!a.config.empty()) m.input("config", a.config);
  for (std::size_t i = 0; i < a.count; ++i) {
    const PuInstance inst = generate_instance(cfg, a.seed, i);
    char name[64];
    std::snprintf(name, sizeof(name), "instance-%04zu.json", i);
    const fs::path path = fs::path(a.out) / name;
    write_instance(path, inst, a.truth);
    m.output(path);
    if (a.truth) m.output(truth_path_for(path));
    log(Level::kDebug, "wrote %s (P=%zu, n_u=%zu, d=%zu)", path.c_str(), inst.num_labeled(), inst.num_unlabeled(),
        inst.num_features());
  }
  m.write(fs::path(a.out) / "manifest.json");
  log(Level::kInfo, "generated %zu instances in %s", a.count, a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config, model_config, out, resume;
  std::uint64_t seed = 0;
  std::int64_t stop_at = -1;
  std::optional<int> workers;
};

int cmd_train(const TrainArgs& a) {
  json raw = load_config(a.config);
  if (a.workers) raw["workers"] = *a.workers;
  const TrainConfig tc = TrainConfig::from_json(raw);
  const ModelConfig mc = a.model_config.empty() ? ModelConfig{} : model_config_from_json(read_json_file(a.model_config));
  mc.validate();
  const fs::path out = a.out;
  fs::create_directories(out);

  Manifest m("train");
  m["seed"] = a.seed;
  m["config"] = {{"train", tc.to_json()}, {"model", to_json(mc)}};
  if (!a.config.empty()) m.input("config", a.config);
  if (!a.model_config.empty()) m.input("model_config", a.model_config);
  if (!a.resume.empty()) m.input("resume", a.resume);

  TrainRunOptions opts;
  opts.out_dir = out;
  opts.stop_at = a.stop_at;
  if (!a.resume.empty()) opts.resume_from = fs::path(a.resume);
  const auto start = std::chrono::steady_clock::now();
  opts.on_step = [&](std::int64_t step, const StepResult& r) {
    if (step % tc.log_interval != 0) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log(Level::kInfo, "step %lld/%lld loss %.4f lr %.3g grad_norm %.3f (%.0fs)", static_cast<long long>(step),
        static_cast<long long>(tc.total_steps()), r.loss, r.lr, r.grad_norm, secs);
  };
  log(Level::kInfo, "training %lld parameters for %lld steps", static_cast<long long>(count_params(mc).total),
      static_cast<long long>(tc.total_steps()));
  const TrainSummary s = train(tc, mc, a.seed, opts);

  // The final checkpoint must load back.
  load_model(s.model_path);
  m["steps_completed"] = s.steps_completed;
  m["final_loss"] = s.final_loss;
  m.output(s.model_path);
  m.output(s.state_path);
  m.output(out / "metrics.csv");
  m.write(out / "manifest.json");
  log(Level::kInfo, "wrote %s after %lld steps", s.model_path.c_str(), static_cast<long long>(s.steps_completed));
  return 0;
}

// ---------------------------------------------------------------- infer

struct InferArgs {
  std::string checkpoint, data, out;
};

int cmd_infer(const InferArgs& a) {
  const LoadedModel model = load_model(a.checkpoint);
  const PuInstance inst = read_instance(a.data);
  const int d = static_cast<int>(inst.num_features());
  if (model.info.features_max > 0 && (d < model.info.features_min || d > model.info.features_max)) {
    warn("instance has " + std::to_string(d) + " features; the model was trained on " +
         std::to_string(model.info.features_min) + ".." + std::to_string(model.info.features_max));
  }
  const RowMatrix probs = predict_proba(model.params, inst);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (!probs.row(i).allFinite() || std::abs(probs.row(i).sum() - 1.0) > 1e-6) {
      throw NumericalError("row " + std::to_string(i) + " probabilities do not sum to 1");
    }
  }
  write_predictions_csv(a.out, probs);
  Manifest m("infer");
  m["config"] = {{"model", to_json(model.params.config)}, {"training_step", model.info.training_step}};
  m.input("checkpoint", a.checkpoint);
  m.input("data", a.data);
  m.output(a.out);
  m.write(manifest_beside(a.out));
  log(Level::kInfo, "wrote %lld predictions to %s", static_cast<long long>(probs.rows()), a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string pred, truth, out;
  double threshold = 0.5;
};

int cmd_eval(const EvalArgs& a) {
  const RowMatrix probs = read_predictions_csv(a.pred);
  const std::vector<int> truth = read_truth(a.truth);
  if (static_cast<std::size_t>(probs.rows()) != truth.size()) {
    throw IoError("row-count mismatch: " + std::to_string(probs.rows()) + " predictions vs " +
                  std::to_string(truth.size()) + " truth labels");
  }
  const std::vector<double> scores(probs.col(kPositiveChannel).begin(), probs.col(kPositiveChannel).end());
  const MetricsReport r = evaluate(scores, truth, a.threshold);
  write_text_file(a.out, to_json(r).dump(2) + "\n");
  Manifest m("eval");
  m["config"] = {{"threshold", a.threshold}};
  m.input("pred", a.pred);
  m.input("truth", a.truth);
  m.output(a.out);
  m.write(manifest_beside(a.out));
  log(Level::kInfo, "AUC %.4f  Acc %.4f  F1 %.4f", r.auc, r.acc, r.f1);
  return 0;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  std::string checkpoint, tasks_dir, out;
  int repeats = 10;
  std::uint64_t seed = 0;
};

int cmd_bench(const BenchArgs& a) {
  if (!fs::is_directory(a.tasks_dir)) throw IoError("tasks directory " + a.tasks_dir + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.tasks_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .csv benchmark tasks in " + a.tasks_dir);
  const LoadedModel model = load_model(a.checkpoint);

  std::vector<BenchmarkDataset> sets;
  std::vector<TaskSummary> unreadable;
  for (const auto& f : files) {
    try {
      sets.push_back(read_benchmark_csv(f));
    } catch (const std::exception& ex) {
      TaskSummary t;
      t.dataset = f.stem().string();
      t.error = ex.what();
      unreadable.push_back(std::move(t));
    }
  }
  BenchmarkReport report;
  if (!sets.empty()) {
    report = run_benchmark(model.params, sets, a.repeats, a.seed);
  } else {
    report.seed = a.seed;
    report.repeats = a.repeats;
    report.average.dataset = "average";
    report.average.error = "every benchmark task failed";
  }
  for (auto& t : unreadable) report.tasks.push_back(std::move(t));
  std::sort(report.tasks.begin(), report.tasks.end(),
            [](const TaskSummary& x, const TaskSummary& y) { return x.dataset < y.dataset; });

  const fs::path out = a.out;
  fs::create_directories(out);
  write_report_csv(out / "report.csv", report);
  write_text_file(out / "report.json", to_json(report).dump(2) + "\n");
  Manifest m("bench");
  m["seed"] = a.seed;
  m["config"] = {{"repeats", a.repeats}, {"threshold", 0.5}, {"model", to_json(model.params.config)}};
  m.input("checkpoint", a.checkpoint);
  m.input("tasks_dir", a.tasks_dir);
  m.output(out / "report.csv");
  m.output(out / "report.json");
  m.write(out / "manifest.json");

  std::size_t failed = 0;
  for (const auto& t : report.tasks) {
    if (t.ok()) {
      log(Level::kInfo, "%-24s AUC %.3f +- %.3f  Acc %.3f  F1 %.3f%s", t.dataset.c_str(), t.auc_mean, t.auc_std,
          t.acc_mean, t.f1_mean, t.negative_shortfall ? "  (negative shortfall)" : "");
    } else {
      ++failed;
      warn(t.dataset + " failed: " + t.error);
    }
  }
  if (!report.average.ok()) {
    std::fprintf(stderr, "error: %s\n", report.average.error.c_str());
    return 1;
  }
  log(Level::kInfo, "%-24s AUC %.3f  Acc %.3f  F1 %.3f (%zu failed)", "average", report.average.auc_mean,
      report.average.acc_mean, report.average.f1_mean, failed);
  return 0;
}

// ---------------------------------------------------------------- params

int cmd_params(const std::string& model_config) {
  const ModelConfig mc = model_config.empty() ? ModelConfig{} : model_config_from_json(read_json_file(model_config));
  mc.validate();
  const ParamCounts c = count_params(mc);
  std::printf("%s\n", json({{"model", to_json(mc)},
                            {"encoders", c.encoders},
                            {"blocks", c.blocks},
                            {"decoder", c.decoder},
                            {"total", c.total}})
                          .dump(2)
                          .c_str());
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"In-context positive-unlabeled classification for tabular data"};
  app.set_version_flag("--version", PUICL_VERSION);
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate synthetic PU instances from the prior");
  g->add_option("--config", gen.config, "Generation config (JSON)")->check(CLI::ExistingFile);
  g->add_option("--count", gen.count, "Number of instances")->default_val(1);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Master seed")->default_val(0);
  g->add_option("--pi", gen.pi, "Override the negative prevalence");
  g->add_option("--eta", gen.eta, "Override the unlabeled-to-positive ratio");
  g->add_flag("!--no-truth", gen.truth, "Do not write truth files");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Pretrain a model on the synthetic prior");
  t->add_option("--config", tr.config, "Training config (JSON); defaults to the full-scale schedule")
      ->check(CLI::ExistingFile);
  t->add_option("--model-config", tr.model_config, "Model config (JSON)")->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--seed", tr.seed, "Master seed")->default_val(0);
  t->add_option("--resume", tr.resume, "Training-state checkpoint to continue from")->check(CLI::ExistingFile);
  t->add_option("--stop-at", tr.stop_at, "Stop after this many completed steps");
  t->add_option("--workers", tr.workers, "Background batch producers");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Predict class probabilities for an instance's unlabeled rows");
  i->add_option("--checkpoint", inf.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  i->add_option("--data", inf.data, "PU instance file (JSON)")->required()->check(CLI::ExistingFile);
  i->add_option("--out", inf.out, "Predictions CSV")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score predictions against truth labels");
  e->add_option("--pred", ev.pred, "Predictions CSV")->required()->check(CLI::ExistingFile);
  e->add_option("--truth", ev.truth, "Truth file (JSON)")->required()->check(CLI::ExistingFile);
  e->add_option("--out", ev.out, "Metrics report (JSON)")->required();
  e->add_option("--threshold", ev.threshold, "Positive-class threshold")->default_val(0.5);

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Run the PU benchmark over a directory of labeled CSV tables");
  b->add_option("--checkpoint", be.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  b->add_option("--tasks-dir", be.tasks_dir, "Directory of CSV files whose last column is 'label'")->required();
  b->add_option("--repeats", be.repeats, "Repeats per task")->default_val(10)->check(CLI::PositiveNumber);
  b->add_option("--seed", be.seed, "Master seed")->default_val(0);
  b->add_option("--out", be.out, "Report directory")->required();

  std::string params_model;
  auto* p = app.add_subcommand("params", "Print parameter counts for a model config");
  p->add_option("--model-config", params_model, "Model config (JSON)")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex);
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(tr);
    if (*i) return cmd_infer(inf);
    if (*e) return cmd_eval(ev);
    if (*b) return cmd_bench(be);
    if (*p) return cmd_params(params_model);
  } catch (const ConfigError& ex) {
    std::fprintf(stderr, "config error: %s\n", ex.what());
    return 2;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return 1;
}

}  // namespace puicl::cli
