#include "puicl/model.hpp"

#include <algorithm>
#include <cmath>

#include "puicl/error.hpp"

namespace puicl {

void ModelConfig::validate() const {
  if (embed < 1 || blocks < 0 || heads < 1 || ff < 1) {
    throw ConfigError("ModelConfig: embed, heads and ff must be positive and blocks non-negative");
  }
  if (embed % heads != 0) {
    throw ConfigError("ModelConfig: embed " + std::to_string(embed) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

ParamCounts count_params(const ModelConfig& config) {
  config.validate();
  const std::int64_t e = config.embed, f = config.ff, L = config.blocks;
  ParamCounts c;
  c.encoders = 2 * (e + e) + e;
  const std::int64_t attention = 4 * (e * e + e);
  const std::int64_t per_block = 2 * attention + (e * f + f) + (f * e + e) + 3 * 2 * e;
  c.blocks = L * per_block;
  c.decoder = (e * f + f) + (f * 2 + 2);
  c.total = c.encoders + c.blocks + c.decoder;
  return c;
}

namespace {

template <typename T>
BasicTensor<T> trunc_normal(Shape shape, double stddev, Rng& rng) {
  BasicTensor<T> t(std::move(shape));
  for (T& v : t.data()) {
    double z;
    do {
      z = rng.normal();
    } while (std::abs(z) > 2.0);
    v = static_cast<T>(stddev * z);
  }
  return t;
}

template <typename T>
BasicTensor<T> filled(Shape shape, T value) {
  BasicTensor<T> t(std::move(shape));
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

constexpr double kInitStd = 0.02;

template <typename T>
AttentionWeights<T> make_attention(std::size_t e, Rng* rng) {
  auto w = [&] { return rng ? trunc_normal<T>({e, e}, kInitStd, *rng) : BasicTensor<T>(Shape{e, e}); };
  AttentionWeights<T> a;
  a.q_weight = w();
  a.q_bias = BasicTensor<T>(Shape{e});
  a.k_weight = w();
  a.k_bias = BasicTensor<T>(Shape{e});
  a.v_weight = w();
  a.v_bias = BasicTensor<T>(Shape{e});
  a.o_weight = w();
  a.o_bias = BasicTensor<T>(Shape{e});
  return a;
}

template <typename T>
ModelParams<T> build(const ModelConfig& config, Rng* rng) {
  config.validate();
  const auto e = static_cast<std::size_t>(config.embed);
  const auto f = static_cast<std::size_t>(config.ff);
  auto w = [&](Shape s) { return rng ? trunc_normal<T>(std::move(s), kInitStd, *rng) : BasicTensor<T>(std::move(s)); };
  ModelParams<T> p;
  p.config = config;
  p.feature_weight = w({1, e});
  p.feature_bias = BasicTensor<T>(Shape{e});
  p.label_weight = w({1, e});
  p.label_bias = BasicTensor<T>(Shape{e});
  p.unlabeled_token = BasicTensor<T>(Shape{e});
  if (rng) {
    for (T& v : p.unlabeled_token.data()) v = static_cast<T>(kInitStd * rng->normal());
  }
  for (int i = 0; i < config.blocks; ++i) {
    BlockParams<T> b;
    b.row_attn = make_attention<T>(e, rng);
    b.col_attn = make_attention<T>(e, rng);
    b.ff1_weight = w({e, f});
    b.ff1_bias = BasicTensor<T>(Shape{f});
    b.ff2_weight = w({f, e});
    b.ff2_bias = BasicTensor<T>(Shape{e});
    b.norm_row_gamma = filled<T>({e}, T(1));
    b.norm_row_beta = BasicTensor<T>(Shape{e});
    b.norm_col_gamma = filled<T>({e}, T(1));
    b.norm_col_beta = BasicTensor<T>(Shape{e});
    b.norm_ff_gamma = filled<T>({e}, T(1));
    b.norm_ff_beta = BasicTensor<T>(Shape{e});
    p.blocks.push_back(std::move(b));
  }
  p.dec1_weight = w({e, f});
  p.dec1_bias = BasicTensor<T>(Shape{f});
  p.dec2_weight = w({f, 2});
  p.dec2_bias = BasicTensor<T>(Shape{2});
  return p;
}

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& config, Rng& rng) {
  auto p = build<T>(config, &rng);
  p.set_requires_grad(true);
  return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& config) {
  return build<T>(config, nullptr);
}

template <typename T>
std::vector<BasicTensor<T>> ModelParams<T>::tensors() const {
  std::vector<BasicTensor<T>> out;
  for_each([&](const std::string&, const BasicTensor<T>& t) { out.push_back(t); });
  return out;
}

template <typename T>
std::vector<std::string> ModelParams<T>::names() const {
  std::vector<std::string> out;
  for_each([&](const std::string& name, const BasicTensor<T>&) { out.push_back(name); });
  return out;
}

template <typename T>
ModelParams<T> ModelParams<T>::clone(bool requires_grad) const {
  ModelParams out = *this;
  out.for_each([&](const std::string&, BasicTensor<T>& t) { t = t.clone(requires_grad); });
  return out;
}

template <typename T>
void ModelParams<T>::set_requires_grad(bool flag) {
  for_each([&](const std::string&, BasicTensor<T>& t) { t.set_requires_grad(flag); });
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for_each([](const std::string&, BasicTensor<T>& t) { t.zero_grad(); });
}

// ---------------------------------------------------------------- input

RowMatrix standardize_by_labeled(const PuInstance& instance) {
  const auto P = instance.num_labeled();
  const auto nu = instance.num_unlabeled();
  const auto d = instance.num_features();
  if (P == 0) throw ShapeError("standardize_by_labeled: PU instance has no labeled rows");
  if (static_cast<std::size_t>(instance.unlabeled.cols()) != d && nu > 0) {
    throw ShapeError("standardize_by_labeled: labeled and unlabeled feature counts differ");
  }
  RowMatrix out(static_cast<Eigen::Index>(P + nu), static_cast<Eigen::Index>(d));
  out.topRows(static_cast<Eigen::Index>(P)) = instance.labeled;
  if (nu > 0) out.bottomRows(static_cast<Eigen::Index>(nu)) = instance.unlabeled;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const auto lab = instance.labeled.col(j);
    const double mean = lab.mean();
    const double var = (lab.array() - mean).square().mean();
    double sd = std::sqrt(var);
    if (!(sd >= kStdFloor)) sd = 1.0;
    out.col(j) = ((out.col(j).array() - mean) / sd).max(-kInputClip).min(kInputClip).matrix();
  }
  return out;
}

PreparedBatch prepare_batch(std::span<const PuInstance> instances, bool with_targets) {
  if (instances.empty()) throw ShapeError("prepare_batch: empty batch");
  PreparedBatch b;
  b.batch = instances.size();
  b.labeled = instances[0].num_labeled();
  b.unlabeled = instances[0].num_unlabeled();
  b.features = instances[0].num_features();
  if (b.labeled == 0) throw ShapeError("prepare_batch: PU instance requires at least one labeled row");
  const std::size_t n = b.rows();
  b.x.reserve(b.batch * n * b.features);
  for (const auto& inst : instances) {
    if (inst.num_labeled() != b.labeled || inst.num_unlabeled() != b.unlabeled ||
        inst.num_features() != b.features) {
      throw ShapeError("prepare_batch: instances must share (P, n_u, d)");
    }
    const RowMatrix z = standardize_by_labeled(inst);
    b.x.insert(b.x.end(), z.data(), z.data() + z.size());
    if (with_targets) {
      if (inst.hidden_labels.size() != b.unlabeled) {
        throw ShapeError("prepare_batch: hidden labels do not match unlabeled rows");
      }
      for (int y : inst.hidden_labels) b.targets.push_back(y == 1 ? kPositiveChannel : kNegativeChannel);
    }
  }
  return b;
}

template <typename T>
BasicTensor<T> encode_input(const ModelParams<T>& params, const PreparedBatch& batch) {
  const std::size_t B = batch.batch, n = batch.rows(), d = batch.features, P = batch.labeled;
  const std::size_t C = d + 1;
  const auto e = static_cast<std::size_t>(params.config.embed);
  if (P == 0) throw ShapeError("encode_input: PU instance requires at least one labeled row");
  if (batch.x.size() != B * n * d) throw ShapeError("encode_input: feature buffer size mismatch");

  const T* fw = params.feature_weight.data().data();
  const T* fb = params.feature_bias.data().data();
  const T* lw = params.label_weight.data().data();
  const T* lb = params.label_bias.data().data();
  const T* tok = params.unlabeled_token.data().data();
  constexpr T kLabeledScalar = T(1);

  Buffer<T> out(B * n * C * e);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      T* row = out.data() + ((b * n + i) * C) * e;
      const double* xr = batch.x.data() + (b * n + i) * d;
      for (std::size_t j = 0; j < d; ++j) {
        const T xv = static_cast<T>(xr[j]);
        for (std::size_t k = 0; k < e; ++k) row[j * e + k] = xv * fw[k] + fb[k];
      }
      T* label = row + d * e;
      if (i < P) {
        for (std::size_t k = 0; k < e; ++k) label[k] = kLabeledScalar * lw[k] + lb[k];
      } else {
        std::copy_n(tok, e, label);
      }
    }
  }
  Buffer<T> xs(batch.x.begin(), batch.x.end());
  return BasicTensor<T>::make_result(
      Shape{B, n, C, e}, std::move(out),
      {params.feature_weight, params.feature_bias, params.label_weight, params.label_bias,
       params.unlabeled_token},
      [B, n, d, C, e, P, xs = std::move(xs)](auto& self) {
        T* gfw = parent_grad(self, 0);
        T* gfb = parent_grad(self, 1);
        T* glw = parent_grad(self, 2);
        T* glb = parent_grad(self, 3);
        T* gtok = parent_grad(self, 4);
        const T* g = self.grad.data();
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t i = 0; i < n; ++i) {
            const T* row = g + ((b * n + i) * C) * e;
            for (std::size_t j = 0; j < d; ++j) {
              const T xv = xs[(b * n + i) * d + j];
              for (std::size_t k = 0; k < e; ++k) {
                if (gfw) gfw[k] += row[j * e + k] * xv;
                if (gfb) gfb[k] += row[j * e + k];
              }
            }
            const T* label = row + d * e;
            for (std::size_t k = 0; k < e; ++k) {
              if (i < P) {
                if (glw) glw[k] += label[k] * kLabeledScalar;
                if (glb) glb[k] += label[k];
              } else if (gtok) {
                gtok[k] += label[k];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------- blocks

template <typename T>
BasicTensor<T> block_forward(const BasicTensor<T>& h, const BlockParams<T>& blk, int heads,
                             AttentionProbe<T>* row_probe, AttentionProbe<T>* col_probe) {
  if (h.dim() != 4) throw ShapeError("block_forward: expected [B, n, C, e], got " + shape_to_string(h.shape()));
  const std::size_t B = h.extent(0), n = h.extent(1), C = h.extent(2), e = h.extent(3);
  const auto hd = static_cast<std::size_t>(heads);

  // Within-row attention: each row is a sequence of C cells.
  auto rows = reshape(h, {B * n, C, e});
  auto a1 = multi_head_attention(rows, blk.row_attn, hd, row_probe);
  auto h1 = layer_norm(add(rows, a1), blk.norm_row_gamma, blk.norm_row_beta);

  // Within-column attention over all n rows, unmasked.
  auto cols = reshape(transpose12(reshape(h1, {B, n, C, e})), {B * C, n, e});
  auto a2 = multi_head_attention(cols, blk.col_attn, hd, col_probe);
  auto h2 = layer_norm(add(cols, a2), blk.norm_col_gamma, blk.norm_col_beta);

  auto ff = linear(gelu(linear(h2, blk.ff1_weight, blk.ff1_bias)), blk.ff2_weight, blk.ff2_bias);
  auto h3 = layer_norm(add(h2, ff), blk.norm_ff_gamma, blk.norm_ff_beta);
  return transpose12(reshape(h3, {B, C, n, e}));
}

namespace {

// Label-column cells of rows [labeled, n): [B, n, C, e] -> [B * n_u, e].
template <typename T>
BasicTensor<T> unlabeled_label_cells(const BasicTensor<T>& h, std::size_t labeled) {
  const std::size_t B = h.extent(0), n = h.extent(1), C = h.extent(2), e = h.extent(3);
  if (labeled > n) throw ShapeError("decode: labeled row count exceeds table rows");
  const std::size_t nu = n - labeled;
  Buffer<T> out(B * nu * e);
  const T* src = h.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < nu; ++i) {
      std::copy_n(src + ((b * n + labeled + i) * C + (C - 1)) * e, e, out.data() + (b * nu + i) * e);
    }
  }
  return BasicTensor<T>::make_result(Shape{B * nu, e}, std::move(out), {h},
                                     [B, n, C, e, nu, labeled](auto& self) {
                                       T* g = parent_grad(self, 0);
                                       if (!g) return;
                                       for (std::size_t b = 0; b < B; ++b)
                                         for (std::size_t i = 0; i < nu; ++i) {
                                           T* dst = g + ((b * n + labeled + i) * C + (C - 1)) * e;
                                           const T* s = self.grad.data() + (b * nu + i) * e;
                                           for (std::size_t k = 0; k < e; ++k) dst[k] += s[k];
                                         }
                                     });
}

}  // namespace

template <typename T>
BasicTensor<T> decode(const BasicTensor<T>& h, const ModelParams<T>& params, std::size_t labeled) {
  auto z = unlabeled_label_cells(h, labeled);
  auto hidden = gelu(linear(z, params.dec1_weight, params.dec1_bias));
  return linear(hidden, params.dec2_weight, params.dec2_bias);
}

template <typename T>
BasicTensor<T> forward_logits(const ModelParams<T>& params, const PreparedBatch& batch,
                              ForwardProbe<T>* probe) {
  if (probe) {
    probe->row.assign(params.blocks.size(), {});
    probe->col.assign(params.blocks.size(), {});
  }
  auto h = encode_input(params, batch);
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    h = block_forward(h, params.blocks[i], params.config.heads, probe ? &probe->row[i] : nullptr,
                      probe ? &probe->col[i] : nullptr);
  }
  return decode(h, params, batch.labeled);
}

template <typename T>
BasicTensor<T> training_loss(const ModelParams<T>& params, const PreparedBatch& batch) {
  if (batch.unlabeled == 0) throw ShapeError("training_loss: no unlabeled rows to score");
  if (batch.targets.size() != batch.batch * batch.unlabeled) {
    throw ShapeError("training_loss: batch was prepared without targets");
  }
  auto logits = forward_logits(params, batch);
  return cross_entropy_with_logits(logits, std::span<const int>(batch.targets));
}

template <typename T>
RowMatrix predict_proba(const ModelParams<T>& params, const PuInstance& instance) {
  NoGradGuard no_grad;
  const PreparedBatch batch = prepare_batch(std::span<const PuInstance>(&instance, 1), false);
  const auto logits = forward_logits(params, batch);
  const std::size_t nu = batch.unlabeled;
  RowMatrix probs(static_cast<Eigen::Index>(nu), 2);
  const auto z = logits.data();
  for (std::size_t i = 0; i < nu; ++i) {
    const double a = z[2 * i], b = z[2 * i + 1];
    const double m = std::max(a, b);
    const double ea = std::exp(a - m), eb = std::exp(b - m);
    probs(static_cast<Eigen::Index>(i), kPositiveChannel) = ea / (ea + eb);
    probs(static_cast<Eigen::Index>(i), kNegativeChannel) = eb / (ea + eb);
  }
  return probs;
}

template struct ModelParams<float>;
template struct ModelParams<double>;

#define PUICL_INSTANTIATE(T)                                                                     \
  template BasicTensor<T> encode_input(const ModelParams<T>&, const PreparedBatch&);             \
  template BasicTensor<T> block_forward(const BasicTensor<T>&, const BlockParams<T>&, int,       \
                                        AttentionProbe<T>*, AttentionProbe<T>*);                 \
  template BasicTensor<T> decode(const BasicTensor<T>&, const ModelParams<T>&, std::size_t);     \
  template BasicTensor<T> forward_logits(const ModelParams<T>&, const PreparedBatch&,            \
                                         ForwardProbe<T>*);                                      \
  template BasicTensor<T> training_loss(const ModelParams<T>&, const PreparedBatch&);            \
  template RowMatrix predict_proba(const ModelParams<T>&, const PuInstance&);

PUICL_INSTANTIATE(float)
PUICL_INSTANTIATE(double)

#undef PUICL_INSTANTIATE

}  // namespace puicl
