#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "puicl/error.hpp"
#include "puicl/tensor.hpp"

namespace puicl {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 1e-4;
  double eps = 1e-8;
};

/// First/second moments laid out one-to-one with the parameter list.
template <typename T>
struct AdamWState {
  std::vector<Buffer<T>> first_moment;
  std::vector<Buffer<T>> second_moment;
  std::int64_t step_count = 0;

  static AdamWState zeros_like(std::span<const BasicTensor<T>> params) {
    AdamWState s;
    for (const auto& p : params) {
      s.first_moment.emplace_back(p.size(), T(0));
      s.second_moment.emplace_back(p.size(), T(0));
    }
    return s;
  }
};

/// Global L2 norm over all parameter gradients (missing gradients count as zero).
template <typename T>
double global_grad_norm(std::span<const BasicTensor<T>> params) {
  double sq = 0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

/// Rescales every gradient by max_norm / norm when the global norm exceeds
/// max_norm. Returns the factor applied (1 when unchanged).
template <typename T>
double clip_global_norm(std::span<BasicTensor<T>> params, double max_norm) {
  if (!(max_norm > 0)) throw ConfigError("clip_global_norm: max_norm must be positive");
  const double norm = global_grad_norm<T>(params);
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (T& g : p.mutable_grad()) g = static_cast<T>(g * factor);
  }
  return factor;
}

/// Decoupled weight decay Adam with bias correction:
///   theta <- theta * (1 - lr * wd)
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
template <typename T>
void adamw_step(std::span<BasicTensor<T>> params, AdamWState<T>& state, double lr,
                const AdamWConfig& cfg = {}) {
  if (!(lr > 0)) throw ConfigError("adamw_step: learning rate must be positive, got " + std::to_string(lr));
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adamw_step: optimizer state does not match parameter list");
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - lr * cfg.weight_decay;
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != theta.size() || v.size() != theta.size()) {
      throw ShapeError("adamw_step: moment size mismatch for parameter " + std::to_string(i));
    }
    const auto grad = params[i].grad();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const T g = grad.empty() ? T(0) : grad[j];
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      const double updated = theta[j] * decay - lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
      theta[j] = static_cast<T>(updated);
    }
  }
}

/// ema <- decay * ema + (1 - decay) * live, elementwise.
template <typename T>
void ema_update(std::span<BasicTensor<T>> ema, std::span<const BasicTensor<T>> live,
                double decay) {
  if (ema.size() != live.size()) throw ShapeError("ema_update: parameter lists differ in length");
  const T a = static_cast<T>(decay), b = static_cast<T>(1.0 - decay);
  for (std::size_t i = 0; i < ema.size(); ++i) {
    auto e = ema[i].data();
    const auto l = live[i].data();
    if (e.size() != l.size()) throw ShapeError("ema_update: size mismatch at parameter " + std::to_string(i));
    for (std::size_t j = 0; j < e.size(); ++j) e[j] = a * e[j] + b * l[j];
  }
}

}  // namespace puicl
