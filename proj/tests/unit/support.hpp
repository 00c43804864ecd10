#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "puicl/ops.hpp"
#include "puicl/rng.hpp"
#include "puicl/tensor.hpp"

namespace puicl::test {

inline Tensor64 random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Buffer<double> data(shape_numel(shape));
  for (double& v : data) v = scale * rng.normal();
  return Tensor64(shape, std::move(data), true);
}

inline Tensor64 constant(const Shape& shape, std::vector<double> values, bool requires_grad = false) {
  return Tensor64(shape, Buffer<double>(values.begin(), values.end()), requires_grad);
}

template <typename T>
std::vector<double> values(const BasicTensor<T>& t) {
  const auto d = t.data();
  return {d.begin(), d.end()};
}

/// Sum of out * w for a fixed random w, so every output element carries a
/// distinct weight in the gradient.
inline Tensor64 weighted_sum(const Tensor64& out, std::uint64_t seed = 7) {
  Rng rng(seed);
  Buffer<double> w(out.size());
  for (double& v : w) v = rng.normal();
  return sum(mul(out, Tensor64(out.shape(), std::move(w))));
}

/// Largest |numeric - analytic| / max(|numeric|, |analytic|, floor) over
/// every element of every input, with central differences of step h.
inline double gradient_error(std::vector<Tensor64> inputs, const std::function<Tensor64()>& loss_fn,
                             double h = 1e-4, double floor = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  loss_fn().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) {
    std::vector<double> g(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), g.begin());
    analytic.push_back(std::move(g));
  }
  NoGradGuard guard;
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto data = inputs[i].data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double saved = data[j];
      data[j] = saved + h;
      const double up = loss_fn().item();
      data[j] = saved - h;
      const double down = loss_fn().item();
      data[j] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[i][j];
      worst = std::max(worst, std::abs(numeric - a) / std::max({std::abs(numeric), std::abs(a), floor}));
    }
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("puicl_unit_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace puicl::test
