#include "puicl/ops.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "puicl/error.hpp"

namespace puicl {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;
// Column slice of a row-major [rows, e] buffer.
template <typename T>
using StridedR = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedR = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

template <typename T>
bool needs_tape(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a) + " vs " +
                     shape_to_string(b));
  }
}

std::size_t normalize_axis(int axis, std::size_t nd) {
  const int a = axis < 0 ? axis + static_cast<int>(nd) : axis;
  if (a < 0 || a >= static_cast<int>(nd)) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(nd));
  }
  return static_cast<std::size_t>(a);
}

}  // namespace

// ---------------------------------------------------------------- matmul

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2 || sa[sa.size() - 1] != sb[sb.size() - 2]) {
    throw ShapeError("matmul: incompatible shapes " + shape_to_string(sa) + " and " +
                     shape_to_string(sb));
  }
  const std::size_t m = sa[sa.size() - 2], k = sa.back(), n = sb.back();

  // Broadcast batch extents, right-aligned.
  const std::size_t ba = sa.size() - 2, bb = sb.size() - 2;
  const std::size_t nb = std::max(ba, bb);
  Shape batch(nb, 1);
  std::vector<std::size_t> ext_a(nb, 1), ext_b(nb, 1);
  for (std::size_t i = 0; i < nb; ++i) {
    if (i + ba >= nb) ext_a[i] = sa[i + ba - nb];
    if (i + bb >= nb) ext_b[i] = sb[i + bb - nb];
    if (ext_a[i] != ext_b[i] && ext_a[i] != 1 && ext_b[i] != 1) {
      throw ShapeError("matmul: batch extents not broadcastable " + shape_to_string(sa) +
                       " and " + shape_to_string(sb));
    }
    batch[i] = std::max(ext_a[i], ext_b[i]);
  }
  const std::size_t nbatch = shape_numel(batch);
  std::vector<std::size_t> off_a(nbatch), off_b(nbatch);
  for (std::size_t idx = 0; idx < nbatch; ++idx) {
    std::size_t rem = idx, ia = 0, ib = 0, stride_a = 1, stride_b = 1;
    for (std::size_t d = nb; d-- > 0;) {
      const std::size_t coord = rem % batch[d];
      rem /= batch[d];
      ia += (ext_a[d] == 1 ? 0 : coord) * stride_a;
      ib += (ext_b[d] == 1 ? 0 : coord) * stride_b;
      stride_a *= ext_a[d];
      stride_b *= ext_b[d];
    }
    off_a[idx] = ia * m * k;
    off_b[idx] = ib * k * n;
  }

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Buffer<T> out(nbatch * m * n);
  for (std::size_t i = 0; i < nbatch; ++i) {
    MapR<T>(out.data() + i * m * n, m, n).noalias() =
        CMapR<T>(a.data().data() + off_a[i], m, k) * CMapR<T>(b.data().data() + off_b[i], k, n);
  }

  return BasicTensor<T>::make_result(
      std::move(out_shape), std::move(out), {a, b},
      [m, k, n, nbatch, off_a = std::move(off_a), off_b = std::move(off_b)](auto& self) {
        const T* g = self.grad.data();
        const T* pa = self.parents[0]->data.data();
        const T* pb = self.parents[1]->data.data();
        T* ga = parent_grad(self, 0);
        T* gb = parent_grad(self, 1);
        for (std::size_t i = 0; i < nbatch; ++i) {
          CMapR<T> gi(g + i * m * n, m, n);
          if (ga) {
            MapR<T>(ga + off_a[i], m, k).noalias() +=
                gi * CMapR<T>(pb + off_b[i], k, n).transpose();
          }
          if (gb) {
            MapR<T>(gb + off_b[i], k, n).noalias() +=
                CMapR<T>(pa + off_a[i], m, k).transpose() * gi;
          }
        }
      });
}

// ---------------------------------------------------------------- linear

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  if (weight.dim() != 2 || x.dim() < 1 || x.shape().back() != weight.extent(0)) {
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + " incompatible with weight " +
                     shape_to_string(weight.shape()));
  }
  const std::size_t in = weight.extent(0), out_f = weight.extent(1);
  if (bias.defined() && (bias.size() != out_f)) {
    throw ShapeError("linear: bias " + shape_to_string(bias.shape()) + " does not match " +
                     std::to_string(out_f) + " outputs");
  }
  const std::size_t rows = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  Buffer<T> out(rows * out_f);
  MapR<T> y(out.data(), rows, out_f);
  y.noalias() = CMapR<T>(x.data().data(), rows, in) * CMapR<T>(weight.data().data(), in, out_f);
  if (bias.defined()) {
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), out_f);
  }
  std::vector<BasicTensor<T>> inputs{x, weight};
  const bool has_bias = bias.defined();
  if (has_bias) inputs.push_back(bias);
  return BasicTensor<T>::make_result(
      std::move(out_shape), std::move(out), std::move(inputs),
      [rows, in, out_f, has_bias](auto& self) {
        CMapR<T> g(self.grad.data(), rows, out_f);
        if (T* gx = parent_grad(self, 0)) {
          MapR<T>(gx, rows, in).noalias() +=
              g * CMapR<T>(self.parents[1]->data.data(), in, out_f).transpose();
        }
        if (T* gw = parent_grad(self, 1)) {
          MapR<T>(gw, in, out_f).noalias() +=
              CMapR<T>(self.parents[0]->data.data(), rows, in).transpose() * g;
        }
        if (has_bias) {
          if (T* gb = parent_grad(self, 2)) {
            // Row-by-row accumulation vectorizes; a colwise reduction over a
            // row-major map does not.
            Eigen::Map<Eigen::Array<T, 1, Eigen::Dynamic>> acc(gb, out_f);
            for (std::size_t r = 0; r < rows; ++r) acc += g.row(r).array();
          }
        }
      });
}

// ---------------------------------------------------------------- elementwise

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Buffer<T> out(a.size());
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return BasicTensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](auto& self) {
    const std::size_t n = self.grad.size();
    for (std::size_t p = 0; p < 2; ++p) {
      if (T* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Buffer<T> out(a.size());
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return BasicTensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](auto& self) {
    const std::size_t n = self.grad.size();
    const auto& va = self.parents[0]->data;
    const auto& vb = self.parents[1]->data;
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * vb[i];
    }
    if (T* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * va[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  Buffer<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v *= factor;
  return BasicTensor<T>::make_result(x.shape(), std::move(out), {x}, [factor](auto& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return BasicTensor<T>::make_result(Shape{}, {total}, {x}, [](auto& self) {
    if (T* g = parent_grad(self, 0)) {
      const T s = self.grad[0];
      const std::size_t n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += s;
    }
  });
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const auto n = static_cast<Eigen::Index>(x.size());
  Buffer<T> out(x.size());
  Eigen::Map<const Arr> in(x.data().data(), n);
  Eigen::Map<Arr>(out.data(), n) = T(0.5) * in * (T(1) + (in * T(1.0 / std::numbers::sqrt2)).erf());
  return BasicTensor<T>::make_result(x.shape(), std::move(out), {x}, [n](auto& self) {
    T* g = parent_grad(self, 0);
    if (!g) return;
    const T inv_sqrt2pi = T(1.0 / std::sqrt(2.0 * std::numbers::pi));
    Eigen::Map<const Arr> v(self.parents[0]->data.data(), n);
    Eigen::Map<const Arr> gy(self.grad.data(), n);
    const Arr cdf = T(0.5) * (T(1) + (v * T(1.0 / std::numbers::sqrt2)).erf());
    Eigen::Map<Arr>(g, n) += gy * (cdf + v * inv_sqrt2pi * (T(-0.5) * v.square()).exp());
  });
}

// ---------------------------------------------------------------- softmax

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, int axis) {
  const Shape& s = x.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[ax];

  Buffer<T> out(x.size());
  const T* in = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * len * inner + j;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t t = 0; t < len; ++t) mx = std::max(mx, in[base + t * inner]);
      T z = 0;
      for (std::size_t t = 0; t < len; ++t) {
        const T e = std::exp(in[base + t * inner] - mx);
        out[base + t * inner] = e;
        z += e;
      }
      for (std::size_t t = 0; t < len; ++t) out[base + t * inner] /= z;
    }
  }
  return BasicTensor<T>::make_result(
      s, std::move(out), {x}, [outer, inner, len](auto& self) {
        T* g = parent_grad(self, 0);
        if (!g) return;
        const auto& y = self.data;
        const auto& gy = self.grad;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < inner; ++j) {
            const std::size_t base = o * len * inner + j;
            T dot = 0;
            for (std::size_t t = 0; t < len; ++t) dot += gy[base + t * inner] * y[base + t * inner];
            for (std::size_t t = 0; t < len; ++t) {
              const std::size_t i = base + t * inner;
              g[i] += y[i] * (gy[i] - dot);
            }
          }
        }
      });
}

// ---------------------------------------------------------------- layer_norm

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps) {
  if (x.dim() < 1) throw ShapeError("layer_norm: scalar input");
  const std::size_t e = x.shape().back();
  if (gamma.size() != e || beta.size() != e) {
    throw ShapeError("layer_norm: gamma/beta extents " + shape_to_string(gamma.shape()) + "/" +
                     shape_to_string(beta.shape()) + " do not match last axis " +
                     std::to_string(e));
  }
  const std::size_t rows = x.size() / e;
  Buffer<T> out(x.size());
  Buffer<T> xhat(x.size());
  Buffer<T> rstd(rows);
  const T* in = x.data().data();
  const T* gm = gamma.data().data();
  const T* bt = beta.data().data();
  using RowA = Eigen::Array<T, 1, Eigen::Dynamic>;
  Eigen::Map<const RowA> gmv(gm, e), btv(bt, e);
  for (std::size_t r = 0; r < rows; ++r) {
    Eigen::Map<const RowA> xr(in + r * e, e);
    const T mean = xr.mean();
    const T var = (xr - mean).square().mean();
    const T rs = T(1) / std::sqrt(var + T(eps));
    rstd[r] = rs;
    Eigen::Map<RowA> h(xhat.data() + r * e, e);
    h = (xr - mean) * rs;
    Eigen::Map<RowA>(out.data() + r * e, e) = h * gmv + btv;
  }
  const bool tape = needs_tape<T>({&x, &gamma, &beta});
  return BasicTensor<T>::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [rows, e, xhat = tape ? std::move(xhat) : Buffer<T>{},
       rstd = tape ? std::move(rstd) : Buffer<T>{}](auto& self) {
        const T* gy = self.grad.data();
        const T* gm = self.parents[1]->data.data();
        T* gx = parent_grad(self, 0);
        T* gg = parent_grad(self, 1);
        T* gb = parent_grad(self, 2);
        using RowA = Eigen::Array<T, 1, Eigen::Dynamic>;
        Eigen::Map<const RowA> gmv(gm, e);
        RowA dxhat(e);
        for (std::size_t r = 0; r < rows; ++r) {
          Eigen::Map<const RowA> gr(gy + r * e, e);
          Eigen::Map<const RowA> hr(xhat.data() + r * e, e);
          if (gg) Eigen::Map<RowA>(gg, e) += gr * hr;
          if (gb) Eigen::Map<RowA>(gb, e) += gr;
          if (!gx) continue;
          dxhat = gr * gmv;
          const T mean_d = dxhat.mean();
          const T mean_dh = (dxhat * hr).mean();
          Eigen::Map<RowA>(gx + r * e, e) += rstd[r] * (dxhat - mean_d - hr * mean_dh);
        }
      });
}

// ---------------------------------------------------------------- cross entropy

template <typename T>
BasicTensor<T> cross_entropy_with_logits(const BasicTensor<T>& logits,
                                         std::span<const int> targets) {
  if (logits.dim() != 2) {
    throw ShapeError("cross_entropy_with_logits: expected [m, classes], got " +
                     shape_to_string(logits.shape()));
  }
  const std::size_t m = logits.extent(0), c = logits.extent(1);
  if (m == 0) throw ShapeError("cross_entropy_with_logits: no rows to score");
  if (targets.size() != m) {
    throw ShapeError("cross_entropy_with_logits: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(m) + " rows");
  }
  Buffer<T> probs(m * c);
  std::vector<int> tg(targets.begin(), targets.end());
  const T* z = logits.data().data();
  double loss = 0;
  for (std::size_t r = 0; r < m; ++r) {
    if (tg[r] < 0 || static_cast<std::size_t>(tg[r]) >= c) {
      throw ShapeError("cross_entropy_with_logits: target " + std::to_string(tg[r]) +
                       " out of range");
    }
    const T* zr = z + r * c;
    T mx = *std::max_element(zr, zr + c);
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(zr[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(zr[j] - lse);
    loss += static_cast<double>(lse - zr[tg[r]]);
  }
  loss /= static_cast<double>(m);
  return BasicTensor<T>::make_result(
      Shape{}, {static_cast<T>(loss)}, {logits},
      [m, c, probs = std::move(probs), tg = std::move(tg)](auto& self) {
        T* g = parent_grad(self, 0);
        if (!g) return;
        const T s = self.grad[0] / T(m);
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const T onehot = static_cast<std::size_t>(tg[r]) == j ? T(1) : T(0);
            g[r * c + j] += s * (probs[r * c + j] - onehot);
          }
        }
      });
}

// ---------------------------------------------------------------- layout

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                     shape_to_string(shape));
  }
  Buffer<T> out(x.data().begin(), x.data().end());
  return BasicTensor<T>::make_result(std::move(shape), std::move(out), {x}, [](auto& self) {
    if (T* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> transpose12(const BasicTensor<T>& x) {
  if (x.dim() != 4) throw ShapeError("transpose12: expected rank 4, got " + shape_to_string(x.shape()));
  const std::size_t a = x.extent(0), b = x.extent(1), c = x.extent(2), d = x.extent(3);
  Buffer<T> out(x.size());
  const T* in = x.data().data();
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      for (std::size_t l = 0; l < c; ++l) {
        std::copy_n(in + ((i * b + j) * c + l) * d, d, out.data() + ((i * c + l) * b + j) * d);
      }
    }
  }
  return BasicTensor<T>::make_result(Shape{a, c, b, d}, std::move(out), {x},
                                     [a, b, c, d](auto& self) {
                                       T* g = parent_grad(self, 0);
                                       if (!g) return;
                                       const T* gy = self.grad.data();
                                       for (std::size_t i = 0; i < a; ++i)
                                         for (std::size_t j = 0; j < b; ++j)
                                           for (std::size_t l = 0; l < c; ++l) {
                                             T* dst = g + ((i * b + j) * c + l) * d;
                                             const T* src = gy + ((i * c + l) * b + j) * d;
                                             for (std::size_t q = 0; q < d; ++q) dst[q] += src[q];
                                           }
                                     });
}

// ---------------------------------------------------------------- attention

template <typename T>
BasicTensor<T> scaled_dot_product_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                            const BasicTensor<T>& v, std::size_t heads,
                                            AttentionProbe<T>* probe) {
  if (q.dim() != 3) throw ShapeError("attention: expected [sequences, tokens, e], got " + shape_to_string(q.shape()));
  require_same_shape(q.shape(), k.shape(), "attention");
  require_same_shape(q.shape(), v.shape(), "attention");
  const std::size_t S = q.extent(0), Tn = q.extent(1), e = q.extent(2);
  if (heads == 0 || e % heads != 0) {
    throw ConfigError("attention: embedding size " + std::to_string(e) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = e / heads;
  const T sc = T(1) / std::sqrt(T(dh));
  const bool tape = needs_tape<T>({&q, &k, &v});
  const std::size_t block = Tn * Tn;
  // Short sequences skip the blocked GEMM path, whose setup cost dominates.
  const bool small = Tn <= 32;

  Buffer<T> out(q.size());
  Buffer<T> probs(tape ? S * heads * block : 0);
  if (probe) {
    probe->sequences = S;
    probe->heads = heads;
    probe->tokens = Tn;
    probe->scores.assign(S * heads * block, T(0));
    probe->weights.assign(S * heads * block, T(0));
  }
  MatR<T> scratch(Tn, Tn);
  const T* pq = q.data().data();
  const T* pk = k.data().data();
  const T* pv = v.data().data();
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = s * Tn * e + h * dh;
      CStridedR<T> qh(pq + off, Tn, dh, Eigen::OuterStride<>(e));
      CStridedR<T> kh(pk + off, Tn, dh, Eigen::OuterStride<>(e));
      CStridedR<T> vh(pv + off, Tn, dh, Eigen::OuterStride<>(e));
      T* pbuf = tape ? probs.data() + (s * heads + h) * block : scratch.data();
      MapR<T> p(pbuf, Tn, Tn);
      if (small) p.noalias() = qh.lazyProduct(kh.transpose()) * sc;
      else p.noalias() = (qh * kh.transpose()) * sc;
      if (probe) std::copy_n(pbuf, block, probe->scores.data() + (s * heads + h) * block);
      for (std::size_t r = 0; r < Tn; ++r) {
        auto row = p.row(r);
        row.array() = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
      }
      if (probe) std::copy_n(pbuf, block, probe->weights.data() + (s * heads + h) * block);
      StridedR<T> oh(out.data() + off, Tn, dh, Eigen::OuterStride<>(e));
      if (small) oh.noalias() = p.lazyProduct(vh);
      else oh.noalias() = p * vh;
    }
  }

  return BasicTensor<T>::make_result(
      q.shape(), std::move(out), {q, k, v},
      [S, Tn, e, heads, dh, sc, block, small, probs = std::move(probs)](auto& self) {
        const T* pq = self.parents[0]->data.data();
        const T* pk = self.parents[1]->data.data();
        const T* pv = self.parents[2]->data.data();
        T* gq = parent_grad(self, 0);
        T* gk = parent_grad(self, 1);
        T* gv = parent_grad(self, 2);
        MatR<T> dp(Tn, Tn);
        for (std::size_t s = 0; s < S; ++s) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = s * Tn * e + h * dh;
            const Eigen::OuterStride<> st(e);
            CStridedR<T> go(self.grad.data() + off, Tn, dh, st);
            CMapR<T> p(probs.data() + (s * heads + h) * block, Tn, Tn);
            CStridedR<T> vh(pv + off, Tn, dh, st);
            if (gv) {
              StridedR<T> gvh(gv + off, Tn, dh, st);
              if (small) gvh.noalias() += p.transpose().lazyProduct(go);
              else gvh.noalias() += p.transpose() * go;
            }
            if (!gq && !gk) continue;
            if (small) dp.noalias() = go.lazyProduct(vh.transpose());
            else dp.noalias() = go * vh.transpose();
            for (std::size_t r = 0; r < Tn; ++r) {
              const T dot = dp.row(r).dot(p.row(r));
              dp.row(r).array() = p.row(r).array() * (dp.row(r).array() - dot) * sc;
            }
            CStridedR<T> kh(pk + off, Tn, dh, st);
            CStridedR<T> qh(pq + off, Tn, dh, st);
            if (gq) {
              StridedR<T> gqh(gq + off, Tn, dh, st);
              if (small) gqh.noalias() += dp.lazyProduct(kh);
              else gqh.noalias() += dp * kh;
            }
            if (gk) {
              StridedR<T> gkh(gk + off, Tn, dh, st);
              if (small) gkh.noalias() += dp.transpose().lazyProduct(qh);
              else gkh.noalias() += dp.transpose() * qh;
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& x, const AttentionWeights<T>& w,
                                    std::size_t heads, AttentionProbe<T>* probe) {
  if (x.dim() != 3) {
    throw ShapeError("multi_head_attention: expected [sequences, tokens, e], got " +
                     shape_to_string(x.shape()));
  }
  const std::size_t e = x.extent(2);
  if (heads == 0 || e % heads != 0) {
    throw ConfigError("multi_head_attention: embedding size " + std::to_string(e) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
  auto q = linear(x, w.q_weight, w.q_bias);
  auto k = linear(x, w.k_weight, w.k_bias);
  auto v = linear(x, w.v_weight, w.v_bias);
  auto a = scaled_dot_product_attention(q, k, v, heads, probe);
  return linear(a, w.o_weight, w.o_bias);
}

#define PUICL_INSTANTIATE(T)                                                                   \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                 const BasicTensor<T>&);                                       \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                     \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                          \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                         \
  template BasicTensor<T> softmax(const BasicTensor<T>&, int);                                 \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                     const BasicTensor<T>&, double);                           \
  template BasicTensor<T> cross_entropy_with_logits(const BasicTensor<T>&,                     \
                                                    std::span<const int>);                     \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                               \
  template BasicTensor<T> transpose12(const BasicTensor<T>&);                                  \
  template BasicTensor<T> scaled_dot_product_attention(                                        \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, std::size_t,        \
      AttentionProbe<T>*);                                                                     \
  template BasicTensor<T> multi_head_attention(const BasicTensor<T>&, const AttentionWeights<T>&, \
                                               std::size_t, AttentionProbe<T>*);

PUICL_INSTANTIATE(float)
PUICL_INSTANTIATE(double)

#undef PUICL_INSTANTIATE

}  // namespace puicl
