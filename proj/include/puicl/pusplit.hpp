#pragma once

#include <cstdint>
#include <vector>

#include "puicl/prior.hpp"
#include "puicl/rng.hpp"

namespace puicl {

/// One PU task. Rows of `labeled` are all true positives; `hidden_labels`
/// (1 = positive, 0 = negative) align with `unlabeled` and are for
/// evaluation and the training loss only, never model input.
struct PuInstance {
  RowMatrix labeled;    // P x d
  RowMatrix unlabeled;  // n_u x d
  std::vector<int> hidden_labels;
  double pi = 0.5;
  double eta = 1.0;
  std::uint64_t seed = 0;

  std::size_t num_labeled() const { return static_cast<std::size_t>(labeled.rows()); }
  std::size_t num_unlabeled() const { return static_cast<std::size_t>(unlabeled.rows()); }
  std::size_t num_features() const { return static_cast<std::size_t>(labeled.cols()); }
  std::size_t hidden_negatives() const;
};

/// Sizes fixed by (P, eta, pi) before any rows are drawn.
struct PuComposition {
  std::size_t n_train = 0;      // ceil(P / (1 - pi))
  std::size_t neg_train = 0;    // round(pi * n_train)
  std::size_t n_unlabeled = 0;  // ceil(P * eta)
  std::size_t neg_unlabeled = 0;  // round(pi * n_unlabeled)

  std::size_t labeled() const { return n_train - neg_train; }
  std::size_t pos_unlabeled() const { return n_unlabeled - neg_unlabeled; }
  std::size_t positives_needed() const { return labeled() + pos_unlabeled(); }
  std::size_t negatives_needed() const { return neg_train + neg_unlabeled; }
  std::size_t total() const { return n_train + n_unlabeled; }
};

/// Validates P >= 1, eta > 0, 0 < pi < 1 and computes the allocation.
PuComposition pu_composition(std::size_t positives, double eta, double pi);

/// Round half up.
std::size_t round_count(double x);

/// Allocates rows from separately shuffled class pools into a training
/// portion (whose negatives are then discarded) and an unlabeled portion.
PuInstance make_pu(const RowMatrix& positives, const RowMatrix& negatives, std::size_t p,
                   double eta, double pi, Rng& rng);

/// Generates one labeled dataset of size n_train + n_unlabeled and splits it.
/// The dataset's negative count is set to exactly what the allocation needs.
PuInstance synth_pu(const ScmConfig& config, std::size_t p, double eta, double pi, Rng& rng);

/// Splits a labeled dataset into its positive and negative rows.
std::pair<RowMatrix, RowMatrix> partition_by_class(const RowMatrix& x, const std::vector<int>& y);

}  // namespace puicl
