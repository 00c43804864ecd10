#include "puicl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "puicl/error.hpp"

namespace puicl {

double auc(std::span<const double> scores, std::span<const int> truth) {
  if (scores.size() != truth.size()) {
    throw MetricError("auc: " + std::to_string(scores.size()) + " scores for " + std::to_string(truth.size()) +
                      " labels");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Ranks are kept doubled (2 * midrank) so they stay integral.
  std::uint64_t pos = 0, rank_sum2 = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t midrank2 = static_cast<std::uint64_t>(i + 1 + j);  // 2 * (i+1 + j) / 2
    for (std::size_t k = i; k < j; ++k) {
      if (truth[order[k]] == 1) {
        ++pos;
        rank_sum2 += midrank2;
      }
    }
    i = j;
  }
  const std::uint64_t neg = n - pos;
  if (pos == 0 || neg == 0) throw MetricError("auc: undefined, truth contains a single class");
  // U = R+ - pos(pos+1)/2, doubled.
  const std::uint64_t u2 = rank_sum2 - pos * (pos + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

std::vector<int> classify(std::span<const double> scores, double threshold) {
  std::vector<int> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= threshold ? 1 : 0;
  return out;
}

ConfusionCounts confusion(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) {
    throw MetricError("confusion: " + std::to_string(pred.size()) + " predictions for " +
                      std::to_string(truth.size()) + " labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool t = truth[i] == 1, p = pred[i] == 1;
    (t ? c.positives : c.negatives)++;
    if (t && p) ++c.tp;
    else if (!t && p) ++c.fp;
    else if (t && !p) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double accuracy(std::span<const int> pred, std::span<const int> truth) {
  const ConfusionCounts c = confusion(pred, truth);
  if (pred.empty()) throw MetricError("accuracy: empty input");
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(pred.size());
}

double f1(std::span<const int> pred, std::span<const int> truth) {
  const ConfusionCounts c = confusion(pred, truth);
  if (c.tp == 0) return 0.0;
  const double precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  const double recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return 2.0 * precision * recall / (precision + recall);
}

MetricsReport evaluate(std::span<const double> scores, std::span<const int> truth, double threshold) {
  MetricsReport r;
  r.threshold = threshold;
  r.auc = auc(scores, truth);
  const auto pred = classify(scores, threshold);
  r.counts = confusion(pred, truth);
  r.acc = accuracy(pred, truth);
  r.f1 = f1(pred, truth);
  return r;
}

BenchmarkTask build_benchmark_task(const BenchmarkDataset& dataset, Rng& rng) {
  const std::size_t n = dataset.labels.size();
  if (static_cast<std::size_t>(dataset.x.rows()) != n) {
    throw ShapeError("build_benchmark_task: " + dataset.name + " has " + std::to_string(dataset.x.rows()) +
                     " rows but " + std::to_string(n) + " labels");
  }
  std::vector<std::size_t> ones, zeros;
  for (std::size_t i = 0; i < n; ++i) {
    if (dataset.labels[i] == 1) ones.push_back(i);
    else if (dataset.labels[i] == 0) zeros.push_back(i);
    else throw ConfigError("build_benchmark_task: " + dataset.name + " has a label outside {0, 1}");
  }
  BenchmarkTask task;
  task.positive_label = ones.size() > zeros.size() ? 1 : 0;
  std::vector<std::size_t>& pos = task.positive_label == 1 ? ones : zeros;
  std::vector<std::size_t>& neg = task.positive_label == 1 ? zeros : ones;
  task.available_positives = pos.size();
  task.available_negatives = neg.size();
  if (pos.size() < 3 || neg.empty()) {
    throw DegenerateSampleError("build_benchmark_task: " + dataset.name + " is too small (" +
                                std::to_string(pos.size()) + " positives, " + std::to_string(neg.size()) +
                                " negatives; need >= 3 and >= 1)");
  }
  rng.shuffle(pos);
  rng.shuffle(neg);
  const std::size_t m = std::min(kBenchmarkMaxPositives, pos.size());
  const std::size_t labeled = m / 3;
  const std::size_t pos_u = m - labeled;
  const std::size_t neg_u = std::min(neg.size(), pos_u);
  task.negative_shortfall = pos_u - neg_u;

  std::vector<std::pair<std::size_t, int>> unl;
  unl.reserve(pos_u + neg_u);
  for (std::size_t i = 0; i < pos_u; ++i) unl.emplace_back(pos[labeled + i], 1);
  for (std::size_t i = 0; i < neg_u; ++i) unl.emplace_back(neg[i], 0);
  rng.shuffle(unl);

  PuInstance& inst = task.instance;
  const Eigen::Index d = dataset.x.cols();
  inst.labeled.resize(static_cast<Eigen::Index>(labeled), d);
  for (std::size_t i = 0; i < labeled; ++i) inst.labeled.row(static_cast<Eigen::Index>(i)) = dataset.x.row(static_cast<Eigen::Index>(pos[i]));
  inst.unlabeled.resize(static_cast<Eigen::Index>(unl.size()), d);
  inst.hidden_labels.resize(unl.size());
  for (std::size_t i = 0; i < unl.size(); ++i) {
    inst.unlabeled.row(static_cast<Eigen::Index>(i)) = dataset.x.row(static_cast<Eigen::Index>(unl[i].first));
    inst.hidden_labels[i] = unl[i].second;
  }
  inst.pi = static_cast<double>(neg_u) / static_cast<double>(unl.size());
  inst.eta = static_cast<double>(unl.size()) / static_cast<double>(labeled);
  return task;
}

namespace {

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) {
    sd = 0.0;
    return;
  }
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

void summarize(TaskSummary& task) {
  if (task.repeats.empty()) return;
  std::vector<double> a, c, f;
  for (const auto& r : task.repeats) {
    a.push_back(r.auc);
    c.push_back(r.acc);
    f.push_back(r.f1);
  }
  mean_std(a, task.auc_mean, task.auc_std);
  mean_std(c, task.acc_mean, task.acc_std);
  mean_std(f, task.f1_mean, task.f1_std);
}

BenchmarkReport run_benchmark(const ModelParams<float>& params, const std::vector<BenchmarkDataset>& datasets,
                              int repeats, std::uint64_t seed) {
  if (repeats < 1) throw ConfigError("run_benchmark: repeats must be >= 1");
  if (datasets.empty()) throw ConfigError("run_benchmark: no benchmark tasks");
  BenchmarkReport report;
  report.seed = seed;
  report.repeats = repeats;
  for (std::size_t t = 0; t < datasets.size(); ++t) {
    TaskSummary task;
    task.dataset = datasets[t].name;
    try {
      for (int r = 0; r < repeats; ++r) {
        Rng rng(derive_seed(seed, {stream::kTask, t, stream::kRepeat, static_cast<std::uint64_t>(r)}));
        const BenchmarkTask bt = build_benchmark_task(datasets[t], rng);
        task.negative_shortfall = std::max(task.negative_shortfall, bt.negative_shortfall);
        const RowMatrix probs = predict_proba(params, bt.instance);
        const std::vector<double> scores(probs.col(kPositiveChannel).begin(), probs.col(kPositiveChannel).end());
        task.repeats.push_back(evaluate(scores, bt.instance.hidden_labels));
      }
      summarize(task);
    } catch (const std::exception& ex) {
      task.repeats.clear();
      task.error = ex.what();
    }
    report.tasks.push_back(std::move(task));
  }

  TaskSummary& avg = report.average;
  avg.dataset = "average";
  std::size_t ok = 0;
  for (const auto& t : report.tasks) {
    if (!t.ok()) continue;
    ++ok;
    avg.auc_mean += t.auc_mean;
    avg.auc_std += t.auc_std;
    avg.acc_mean += t.acc_mean;
    avg.acc_std += t.acc_std;
    avg.f1_mean += t.f1_mean;
    avg.f1_std += t.f1_std;
  }
  if (ok == 0) {
    avg.error = "every benchmark task failed";
    return report;
  }
  const double k = static_cast<double>(ok);
  for (double* v : {&avg.auc_mean, &avg.auc_std, &avg.acc_mean, &avg.acc_std, &avg.f1_mean, &avg.f1_std}) *v /= k;
  return report;
}

std::vector<double> naive_baseline(const PuInstance& instance) {
  const Eigen::Index p = instance.labeled.rows();
  const Eigen::Index nu = instance.unlabeled.rows();
  const Eigen::Index d = instance.labeled.cols();
  RowMatrix x(p + nu, d);
  x.topRows(p) = instance.labeled;
  x.bottomRows(nu) = instance.unlabeled;
  Eigen::VectorXd y = Eigen::VectorXd::Zero(p + nu);
  y.head(p).setOnes();

  const Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::RowVectorXd sd = ((x.rowwise() - mean).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(sd(j) > kStdFloor)) sd(j) = 1.0;
  }
  const RowMatrix z = (x.rowwise() - mean).array().rowwise() / sd.array();

  constexpr int kIterations = 500;
  constexpr double kStep = 0.5;
  constexpr double kL2 = 1e-3;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  double b = 0;
  const double inv_n = 1.0 / static_cast<double>(p + nu);
  for (int it = 0; it < kIterations; ++it) {
    const Eigen::VectorXd logits = (z * w).array() + b;
    const Eigen::VectorXd prob = (1.0 / (1.0 + (-logits.array()).exp())).matrix();
    const Eigen::VectorXd err = prob - y;
    w -= kStep * (inv_n * (z.transpose() * err) + kL2 * w);
    b -= kStep * inv_n * err.sum();
  }
  std::vector<double> out(static_cast<std::size_t>(nu));
  for (Eigen::Index i = 0; i < nu; ++i) {
    const double logit = z.row(p + i).dot(w) + b;
    out[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-logit));
  }
  return out;
}

}  // namespace puicl
