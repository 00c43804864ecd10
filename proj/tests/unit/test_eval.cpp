#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "puicl/error.hpp"
#include "puicl/eval.hpp"
#include "puicl/model.hpp"
#include "puicl/pusplit.hpp"

using namespace puicl;

namespace {

// Fraction of (positive, negative) pairs ordered correctly, ties counted half.
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double hits = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1;
      hits += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return hits / pairs;
}

BenchmarkDataset counted_dataset(std::size_t ones, std::size_t zeros, std::uint64_t seed = 1) {
  Rng rng(seed);
  BenchmarkDataset ds;
  ds.name = "counted";
  ds.x.resize(static_cast<Eigen::Index>(ones + zeros), 3);
  for (std::size_t i = 0; i < ones + zeros; ++i) {
    const int label = i < ones ? 1 : 0;
    ds.labels.push_back(label);
    for (Eigen::Index j = 0; j < 3; ++j) ds.x(static_cast<Eigen::Index>(i), j) = rng.normal() + 1.5 * label;
  }
  return ds;
}

PuInstance gaussian_instance(double shift, std::uint64_t seed) {
  Rng rng(seed);
  PuInstance inst;
  inst.labeled.resize(60, 4);
  inst.unlabeled.resize(120, 4);
  for (Eigen::Index i = 0; i < 60; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) inst.labeled(i, j) = rng.normal() + shift;
  for (Eigen::Index i = 0; i < 120; ++i) {
    const int label = i % 2;
    inst.hidden_labels.push_back(label);
    for (Eigen::Index j = 0; j < 4; ++j) inst.unlabeled(i, j) = rng.normal() + (label ? shift : 0.0);
  }
  return inst;
}

}  // namespace

TEST_SUITE("auc") {
  TEST_CASE("worked example and extremes") {
    const std::vector<double> s{0.9, 0.4, 0.6, 0.2};
    const std::vector<int> y{1, 1, 0, 0};
    CHECK(auc(s, y) == doctest::Approx(0.75));
    CHECK(auc(std::vector<double>{0.1, 0.9}, std::vector<int>{0, 1}) == 1.0);
    CHECK(auc(std::vector<double>{0.9, 0.1}, std::vector<int>{0, 1}) == 0.0);
    CHECK(auc(std::vector<double>(6, 0.3), std::vector<int>{1, 0, 1, 0, 1, 0}) == 0.5);
  }

  TEST_CASE("matches the pairwise count, flips under negation, ignores monotone maps") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
      const auto n = static_cast<std::size_t>(rng.uniform_int(2, 60));
      std::vector<double> s(n), neg(n), mapped(n);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = std::round(rng.normal() * 4) / 4;
        y[i] = rng.bernoulli(0.5) ? 1 : 0;
      }
      y[0] = 1;
      y[1] = 0;
      for (std::size_t i = 0; i < n; ++i) {
        neg[i] = -s[i];
        mapped[i] = std::exp(s[i]) * 3 - 1;
      }
      const double a = auc(s, y);
      CHECK(a == doctest::Approx(pairwise_auc(s, y)).epsilon(1e-12));
      CHECK(auc(neg, y) == doctest::Approx(1 - a).epsilon(1e-12));
      CHECK(auc(mapped, y) == doctest::Approx(a).epsilon(1e-12));
    }
  }

  TEST_CASE("single class and length mismatch are metric errors") {
    CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), MetricError);
    CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}), MetricError);
    CHECK_THROWS_AS(auc(std::vector<double>{0.1}, std::vector<int>{0, 1}), MetricError);
  }
}

TEST_SUITE("threshold metrics") {
  TEST_CASE("classification at the threshold is positive") {
    CHECK(classify(std::vector<double>{0.5, 0.49, 0.51}) == std::vector<int>{1, 0, 1});
    CHECK(classify(std::vector<double>{0.2, 0.3}, 0.25) == std::vector<int>{0, 1});
  }

  TEST_CASE("worked example") {
    const std::vector<int> pred{1, 1, 0, 0}, truth{1, 0, 1, 0};
    CHECK(accuracy(pred, truth) == 0.5);
    CHECK(f1(pred, truth) == 0.5);
    const auto c = confusion(pred, truth);
    CHECK(c.tp == 1);
    CHECK(c.fp == 1);
    CHECK(c.fn == 1);
    CHECK(c.tn == 1);
    CHECK(f1(std::vector<int>{0, 0}, std::vector<int>{1, 0}) == 0.0);
  }

  TEST_CASE("every 4-element labelling agrees with the counting definitions") {
    for (int p = 0; p < 16; ++p) {
      for (int t = 0; t < 16; ++t) {
        std::vector<int> pred(4), truth(4);
        for (int i = 0; i < 4; ++i) {
          pred[i] = (p >> i) & 1;
          truth[i] = (t >> i) & 1;
        }
        int tp = 0, fp = 0, fn = 0, same = 0;
        for (int i = 0; i < 4; ++i) {
          tp += pred[i] && truth[i];
          fp += pred[i] && !truth[i];
          fn += !pred[i] && truth[i];
          same += pred[i] == truth[i];
        }
        CHECK(accuracy(pred, truth) == same / 4.0);
        const double expect = tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
        CHECK(f1(pred, truth) == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
}

TEST_SUITE("benchmark tasks") {
  TEST_CASE("small positive class splits one third labeled") {
    Rng rng(3);
    const auto task = build_benchmark_task(counted_dataset(90, 80), rng);
    CHECK(task.positive_label == 1);
    CHECK(task.instance.num_labeled() == 30);
    CHECK(task.instance.num_unlabeled() == 120);
    CHECK(task.negative_shortfall == 0);
    CHECK(std::count(task.instance.hidden_labels.begin(), task.instance.hidden_labels.end(), 1) == 60);
  }

  TEST_CASE("large positive class is capped and negative shortfall reported") {
    Rng rng(4);
    const auto task = build_benchmark_task(counted_dataset(1000, 90), rng);
    CHECK(task.instance.num_labeled() == 200);
    CHECK(task.instance.num_unlabeled() == 490);
    CHECK(task.negative_shortfall == 310);
    CHECK(task.available_negatives == 90);
  }

  TEST_CASE("majority label becomes positive, ties go to the lower label") {
    Rng rng(5);
    CHECK(build_benchmark_task(counted_dataset(40, 100), rng).positive_label == 0);
    CHECK(build_benchmark_task(counted_dataset(10, 10), rng).positive_label == 0);
  }

  TEST_CASE("too few positives or no negatives is degenerate") {
    Rng rng(6);
    CHECK_THROWS_AS(build_benchmark_task(counted_dataset(2, 1), rng), DegenerateSampleError);
    CHECK_THROWS_AS(build_benchmark_task(counted_dataset(20, 0), rng), DegenerateSampleError);
  }
}

TEST_SUITE("run_benchmark") {
  TEST_CASE("deterministic, averaged over tasks, failures recorded") {
    Rng rng(7);
    const auto params = ModelParams<float>::init(ModelConfig{8, 1, 2, 16}, rng);
    std::vector<BenchmarkDataset> sets{counted_dataset(40, 30, 1), counted_dataset(2, 1, 2), counted_dataset(50, 50, 3)};
    sets[1].name = "tiny";
    const auto a = run_benchmark(params, sets, 3, 11);
    const auto b = run_benchmark(params, sets, 3, 11);
    REQUIRE(a.tasks.size() == 3);
    CHECK_FALSE(a.tasks[1].ok());
    CHECK(a.tasks[0].ok());
    CHECK(a.tasks[0].repeats.size() == 3);
    CHECK(a.tasks[0].auc_mean == b.tasks[0].auc_mean);
    CHECK(a.tasks[2].f1_mean == b.tasks[2].f1_mean);
    CHECK(a.average.auc_mean == doctest::Approx((a.tasks[0].auc_mean + a.tasks[2].auc_mean) / 2).epsilon(1e-12));
    double mean = 0;
    for (const auto& r : a.tasks[0].repeats) mean += r.auc / 3;
    CHECK(a.tasks[0].auc_mean == doctest::Approx(mean).epsilon(1e-12));
  }

  TEST_CASE("summarize uses the sample standard deviation") {
    TaskSummary t;
    for (double v : {0.6, 0.8}) {
      MetricsReport r;
      r.auc = v;
      t.repeats.push_back(r);
    }
    summarize(t);
    CHECK(t.auc_mean == doctest::Approx(0.7));
    CHECK(t.auc_std == doctest::Approx(std::sqrt(0.02)));
  }
}

TEST_SUITE("naive_baseline") {
  TEST_CASE("separable data ranks well and repeats exactly") {
    const auto inst = gaussian_instance(3.0, 8);
    const auto s = naive_baseline(inst);
    REQUIRE(s.size() == 120);
    CHECK(auc(s, inst.hidden_labels) > 0.9);
    CHECK(naive_baseline(inst) == s);
    for (double p : s) CHECK((p >= 0 && p <= 1));
  }

  TEST_CASE("indistinguishable classes average near chance") {
    double total = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto inst = gaussian_instance(0.0, 100 + seed);
      total += auc(naive_baseline(inst), inst.hidden_labels);
    }
    CHECK(std::abs(total / 20 - 0.5) < 0.1);
  }
}
