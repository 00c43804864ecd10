#pragma once

#include <span>
#include <vector>

#include "puicl/tensor.hpp"

namespace puicl {

/// Batched matrix product a[..., m, k] x b[..., k, n] -> [..., m, n].
/// Leading batch extents broadcast numpy-style.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Affine map over the last axis: x[..., in] * weight[in, out] + bias[out].
/// `bias` may be an undefined tensor.
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);

/// Sum of all elements, as a scalar tensor.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);

/// Exact GELU, 0.5 x (1 + erf(x / sqrt 2)).
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x);

double gelu_value(double x);

/// Max-subtracted softmax along `axis` (negative counts from the end).
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, int axis);

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes over the last axis with population variance, then applies
/// gamma and beta.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps = kLayerNormEps);

/// Mean over rows of -log softmax(logits)[target]. logits is [m, classes].
template <typename T>
BasicTensor<T> cross_entropy_with_logits(const BasicTensor<T>& logits,
                                         std::span<const int> targets);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

/// [a, b, c, d] -> [a, c, b, d].
template <typename T>
BasicTensor<T> transpose12(const BasicTensor<T>& x);

/// Captures pre-softmax scores and attention weights, laid out
/// [sequences, heads, tokens, tokens].
template <typename T>
struct AttentionProbe {
  std::size_t sequences = 0;
  std::size_t heads = 0;
  std::size_t tokens = 0;
  Buffer<T> scores;
  Buffer<T> weights;
};

/// Unmasked scaled dot-product attention on already-projected q, k, v of
/// shape [sequences, tokens, e], split into `heads` contiguous slices of e.
template <typename T>
BasicTensor<T> scaled_dot_product_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                            const BasicTensor<T>& v, std::size_t heads,
                                            AttentionProbe<T>* probe = nullptr);

/// Q, K, V, O projections (each e x e plus bias), stored as [in, out].
template <typename T>
struct AttentionWeights {
  BasicTensor<T> q_weight, q_bias;
  BasicTensor<T> k_weight, k_bias;
  BasicTensor<T> v_weight, v_bias;
  BasicTensor<T> o_weight, o_bias;
};

/// Self-attention over axis 1 of x[sequences, tokens, e]. No mask, no
/// positional information; the caller adds the residual.
template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& x, const AttentionWeights<T>& w,
                                    std::size_t heads, AttentionProbe<T>* probe = nullptr);

}  // namespace puicl
