#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "puicl/rng.hpp"

namespace puicl {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Hidden-layer nonlinearities, numbered 1..10.
enum class Activation : int {
  kTanh = 1,
  kRelu = 2,
  kGelu = 3,
  kIdentity = 4,
  kSign = 5,
  kHeaviside = 6,
  kRbf = 7,
  kSin = 8,
  kSquare = 9,
  kAbs = 10,
};

inline constexpr int kNumActivations = 10;

double activation(int id, double x);
inline double activation(Activation a, double x) { return activation(static_cast<int>(a), x); }
std::string activation_name(int id);

enum class InputDistribution { kGaussian, kUniform01 };
enum class GenerationMode { kNoncausalReadout, kNoncausalIdentity, kCausal };
enum class LabelBlock { kFirst, kLast };
enum class FeatureSelect { kClique, kRandom };

std::string to_string(InputDistribution v);
std::string to_string(GenerationMode v);
std::string to_string(LabelBlock v);
std::string to_string(FeatureSelect v);

struct ScmConfig {
  int exogenous_dim = 10;  // k
  int num_features = 10;   // d
  int depth = 4;           // L_g: W_0 plus depth-1 hidden-to-hidden layers
  int width = 16;          // h
  double sigma_init = 0.25;
  double sigma_noise = 0.01;
  /// activations[l-1] is applied to h^(l-1) inside layer l, l = 1..depth-1.
  std::vector<int> activations;
  InputDistribution input_dist = InputDistribution::kGaussian;
  GenerationMode mode = GenerationMode::kNoncausalReadout;
  LabelBlock causal_label_block = LabelBlock::kLast;
  FeatureSelect causal_feature_select = FeatureSelect::kClique;

  /// Throws ConfigError on violated invariants.
  void validate() const;
};

/// One sampled causal generator. Matrices act on row-vector samples
/// (hidden = input * W^T), i.e. W_0 is width x k as in h = W_0 u.
struct Scm {
  ScmConfig config;
  RowMatrix w0;                  // h x k
  std::vector<RowMatrix> layers;  // depth-1 matrices, h x h
  RowMatrix feature_readout;     // d x h, readout mode only
  Eigen::VectorXd label_readout;  // h, non-causal modes only
};

struct LabeledDataset {
  RowMatrix x;                 // n x d
  std::vector<int> y;          // 1 = positive, 0 = negative
  double pi = 0.5;
  ScmConfig provenance;

  std::size_t rows() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t negatives() const;
};

Scm sample_scm(const ScmConfig& config, Rng& rng);

/// Exogenous draws u (n x k) from the configured input distribution.
RowMatrix sample_exogenous(const ScmConfig& config, std::size_t n, Rng& rng);

/// Hidden states h^(0) .. h^(depth-1), each n x width. Noise is added to
/// every layer except h^(0).
std::vector<RowMatrix> scm_forward(const Scm& scm, const RowMatrix& u, Rng& rng);

struct FeaturesAndScore {
  RowMatrix x;                      // n x d
  Eigen::VectorXd score;            // n
  std::vector<std::size_t> feature_nodes;  // causal mode: pool indices
  std::size_t label_node = 0;              // causal mode: pool index
};

FeaturesAndScore extract_features_and_score(const Scm& scm, const RowMatrix& u,
                                            const std::vector<RowMatrix>& hidden, Rng& rng);

/// d pool indices nearest to `label` by index distance, excluding it, ties
/// broken toward the lower index, restricted to [0, pool_size). Sorted.
std::vector<std::size_t> clique_window(std::size_t label, std::size_t d, std::size_t pool_size);

/// Population standardization then clipping; zero variance maps to zeros.
std::vector<double> standardize_clip(std::span<const double> v, double clip);

/// ceil(pi * n), robust to floating error in pi * n.
std::size_t negative_count(double pi, std::size_t n);

/// Labels the ceil(pi n) highest scores negative (0), the rest positive (1).
/// Ties go to the lower index first.
std::vector<int> assign_labels(std::span<const double> scores, double pi);

inline constexpr double kPriorClip = 20.0;

/// Full composition: exogenous draw, forward pass, extraction,
/// standardize/clip of every feature column and the score, rank labels.
/// Throws DegenerateSampleError on non-finite values.
LabeledDataset generate_dataset(const ScmConfig& config, std::size_t n, double pi, Rng& rng);

/// Ranges from which per-dataset SCM configurations are drawn.
struct PriorSpace {
  int depth = 4;
  int width = 16;
  std::vector<double> noise_levels{0.005, 0.01, 0.02};
  /// sigma_init = weight_scale / sqrt(width).
  double weight_scale = 1.0;
};

/// Draws the per-dataset factors: noise level, input distribution,
/// activation schedule and feature-source mode. `causal` selects the causal
/// family; within it label block and feature selection are fair coins.
ScmConfig draw_scm_config(const PriorSpace& space, int num_features, bool causal, Rng& rng);

}  // namespace puicl
