#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "puicl/ops.hpp"
#include "puicl/pusplit.hpp"
#include "puicl/rng.hpp"
#include "puicl/tensor.hpp"

namespace puicl {

struct ModelConfig {
  int embed = 128;  // e
  int blocks = 6;   // L
  int heads = 8;
  int ff = 256;     // e_ff, also the decoder hidden width

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct ParamCounts {
  std::int64_t encoders = 0;  // feature and label projections plus the unlabeled token
  std::int64_t blocks = 0;
  std::int64_t decoder = 0;
  std::int64_t total = 0;
};

ParamCounts count_params(const ModelConfig& config);

/// Logit channels. Positive is channel 0.
inline constexpr int kPositiveChannel = 0;
inline constexpr int kNegativeChannel = 1;

template <typename T>
struct BlockParams {
  AttentionWeights<T> row_attn;  // across the d+1 cells of one row
  AttentionWeights<T> col_attn;  // across the n rows of one column
  BasicTensor<T> ff1_weight, ff1_bias, ff2_weight, ff2_bias;
  BasicTensor<T> norm_row_gamma, norm_row_beta;
  BasicTensor<T> norm_col_gamma, norm_col_beta;
  BasicTensor<T> norm_ff_gamma, norm_ff_beta;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  BasicTensor<T> feature_weight, feature_bias;  // scalar -> e
  BasicTensor<T> label_weight, label_bias;      // scalar -> e, labeled rows
  BasicTensor<T> unlabeled_token;               // e, unlabeled rows
  std::vector<BlockParams<T>> blocks;
  BasicTensor<T> dec1_weight, dec1_bias, dec2_weight, dec2_bias;

  /// Truncated-normal(0.02) projections, zero biases, identity layer norms,
  /// normal(0.02) unlabeled token.
  static ModelParams init(const ModelConfig& config, Rng& rng);
  /// Every tensor zero, layer-norm gammas one.
  static ModelParams zeros(const ModelConfig& config);

  /// Calls f(name, tensor&) over all parameters in checkpoint order.
  template <typename F>
  void for_each(F&& f);
  template <typename F>
  void for_each(F&& f) const;

  std::vector<BasicTensor<T>> tensors() const;
  std::vector<std::string> names() const;
  ModelParams clone(bool requires_grad) const;
  void set_requires_grad(bool flag);
  void zero_grad();

  template <typename U>
  ModelParams<U> cast() const;
};

/// Standardized model input for a batch of PU instances sharing (P, n_u, d).
struct PreparedBatch {
  std::size_t batch = 0;
  std::size_t labeled = 0;    // P
  std::size_t unlabeled = 0;  // n_u
  std::size_t features = 0;   // d
  std::vector<double> x;      // [batch, P + n_u, d], labeled rows first
  std::vector<int> targets;   // [batch * n_u] class channel, empty without truth

  std::size_t rows() const { return labeled + unlabeled; }
};

inline constexpr double kInputClip = 100.0;
inline constexpr double kStdFloor = 1e-6;

/// Per-column standardization with labeled-row statistics (population std,
/// replaced by 1 below kStdFloor), clipped to +-kInputClip. Output is
/// (P + n_u) x d with labeled rows first.
RowMatrix standardize_by_labeled(const PuInstance& instance);

/// `with_targets` reads hidden labels into channel targets for the loss;
/// inference passes false so truth never reaches the model.
PreparedBatch prepare_batch(std::span<const PuInstance> instances, bool with_targets);

/// H0 of shape [B, n, d+1, e].
template <typename T>
BasicTensor<T> encode_input(const ModelParams<T>& params, const PreparedBatch& batch);

template <typename T>
struct ForwardProbe {
  std::vector<AttentionProbe<T>> row;  // one per block
  std::vector<AttentionProbe<T>> col;
};

/// One dual-axis block on H [B, n, d+1, e].
template <typename T>
BasicTensor<T> block_forward(const BasicTensor<T>& h, const BlockParams<T>& block, int heads,
                             AttentionProbe<T>* row_probe = nullptr,
                             AttentionProbe<T>* col_probe = nullptr);

/// Logits [B * n_u, 2] from the label-column embeddings of the unlabeled rows.
template <typename T>
BasicTensor<T> decode(const BasicTensor<T>& h, const ModelParams<T>& params, std::size_t labeled);

template <typename T>
BasicTensor<T> forward_logits(const ModelParams<T>& params, const PreparedBatch& batch,
                              ForwardProbe<T>* probe = nullptr);

/// Mean cross-entropy over unlabeled rows against the batch targets.
template <typename T>
BasicTensor<T> training_loss(const ModelParams<T>& params, const PreparedBatch& batch);

/// Single forward pass without gradient recording. Rows are unlabeled rows,
/// columns are (P(y=+), P(y=-)).
template <typename T>
RowMatrix predict_proba(const ModelParams<T>& params, const PuInstance& instance);

// ---------------------------------------------------------------- inline

template <typename T>
template <typename F>
void ModelParams<T>::for_each(F&& f) {
  f(std::string("encoder.feature.weight"), feature_weight);
  f(std::string("encoder.feature.bias"), feature_bias);
  f(std::string("encoder.label.weight"), label_weight);
  f(std::string("encoder.label.bias"), label_bias);
  f(std::string("encoder.unlabeled_token"), unlabeled_token);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& b = blocks[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    for (auto [tag, a] : {std::pair<const char*, AttentionWeights<T>*>{"row_attn", &b.row_attn},
                          {"col_attn", &b.col_attn}}) {
      const std::string q = p + tag + ".";
      f(q + "q.weight", a->q_weight);
      f(q + "q.bias", a->q_bias);
      f(q + "k.weight", a->k_weight);
      f(q + "k.bias", a->k_bias);
      f(q + "v.weight", a->v_weight);
      f(q + "v.bias", a->v_bias);
      f(q + "o.weight", a->o_weight);
      f(q + "o.bias", a->o_bias);
    }
    f(p + "ff.1.weight", b.ff1_weight);
    f(p + "ff.1.bias", b.ff1_bias);
    f(p + "ff.2.weight", b.ff2_weight);
    f(p + "ff.2.bias", b.ff2_bias);
    f(p + "norm_row.gamma", b.norm_row_gamma);
    f(p + "norm_row.beta", b.norm_row_beta);
    f(p + "norm_col.gamma", b.norm_col_gamma);
    f(p + "norm_col.beta", b.norm_col_beta);
    f(p + "norm_ff.gamma", b.norm_ff_gamma);
    f(p + "norm_ff.beta", b.norm_ff_beta);
  }
  f(std::string("decoder.1.weight"), dec1_weight);
  f(std::string("decoder.1.bias"), dec1_bias);
  f(std::string("decoder.2.weight"), dec2_weight);
  f(std::string("decoder.2.bias"), dec2_bias);
}

template <typename T>
template <typename F>
void ModelParams<T>::for_each(F&& f) const {
  const_cast<ModelParams*>(this)->for_each(
      [&f](const std::string& name, BasicTensor<T>& t) { f(name, static_cast<const BasicTensor<T>&>(t)); });
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out = ModelParams<U>::zeros(config);
  std::vector<BasicTensor<U>> dst = out.tensors();
  std::size_t i = 0;
  for_each([&](const std::string&, const BasicTensor<T>& src) {
    auto d = dst[i++].data();
    const auto s = src.data();
    for (std::size_t j = 0; j < s.size(); ++j) d[j] = static_cast<U>(s[j]);
  });
  return out;
}

extern template struct ModelParams<float>;
extern template struct ModelParams<double>;

}  // namespace puicl
