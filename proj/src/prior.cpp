#include "puicl/prior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "puicl/error.hpp"
#include "puicl/ops.hpp"

namespace puicl {

double activation(int id, double x) {
  switch (id) {
    case 1: return std::tanh(x);
    case 2: return x > 0 ? x : 0.0;
    case 3: return gelu_value(x);
    case 4: return x;
    case 5: return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
    case 6: return x > 0 ? 1.0 : 0.0;
    case 7: return std::exp(-x * x);
    case 8: return std::sin(x);
    case 9: return x * x;
    case 10: return std::abs(x);
    default: throw ConfigError("unknown activation id " + std::to_string(id) + " (expected 1..10)");
  }
}

std::string activation_name(int id) {
  static const char* names[] = {"tanh", "relu", "gelu", "identity", "sign",
                                "heaviside", "rbf", "sin", "square", "abs"};
  if (id < 1 || id > kNumActivations) throw ConfigError("unknown activation id " + std::to_string(id));
  return names[id - 1];
}

std::string to_string(InputDistribution v) {
  return v == InputDistribution::kGaussian ? "gaussian" : "uniform01";
}
std::string to_string(GenerationMode v) {
  switch (v) {
    case GenerationMode::kNoncausalReadout: return "noncausal_readout";
    case GenerationMode::kNoncausalIdentity: return "noncausal_identity";
    case GenerationMode::kCausal: return "causal";
  }
  return "?";
}
std::string to_string(LabelBlock v) { return v == LabelBlock::kFirst ? "first" : "last"; }
std::string to_string(FeatureSelect v) { return v == FeatureSelect::kClique ? "clique" : "random"; }

void ScmConfig::validate() const {
  if (exogenous_dim < 1) throw ConfigError("ScmConfig: exogenous_dim must be >= 1");
  if (num_features < 1) throw ConfigError("ScmConfig: num_features must be >= 1");
  if (depth < 2) throw ConfigError("ScmConfig: depth must be >= 2");
  if (width < 1) throw ConfigError("ScmConfig: width must be >= 1");
  if (sigma_init < 0 || sigma_noise < 0) throw ConfigError("ScmConfig: negative standard deviation");
  if (activations.size() != static_cast<std::size_t>(depth - 1)) {
    throw ConfigError("ScmConfig: expected " + std::to_string(depth - 1) + " activations, got " +
                      std::to_string(activations.size()));
  }
  for (int a : activations) activation_name(a);
  if (mode == GenerationMode::kNoncausalIdentity && exogenous_dim != num_features) {
    throw ConfigError("ScmConfig: noncausal_identity requires num_features == exogenous_dim");
  }
  if (mode == GenerationMode::kCausal) {
    const auto pool = static_cast<std::size_t>(depth - 1) * static_cast<std::size_t>(width);
    if (pool < static_cast<std::size_t>(num_features) + 1) {
      throw ConfigError("ScmConfig: causal node pool of " + std::to_string(pool) +
                        " cannot supply " + std::to_string(num_features) + " features plus a label");
    }
  }
}

std::size_t LabeledDataset::negatives() const {
  return static_cast<std::size_t>(std::count(y.begin(), y.end(), 0));
}

namespace {

RowMatrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

}  // namespace

Scm sample_scm(const ScmConfig& config, Rng& rng) {
  config.validate();
  Scm scm;
  scm.config = config;
  const double s = config.sigma_init;
  scm.w0 = gaussian_matrix(config.width, config.exogenous_dim, s, rng);
  for (int l = 1; l < config.depth; ++l) scm.layers.push_back(gaussian_matrix(config.width, config.width, s, rng));
  if (config.mode == GenerationMode::kNoncausalReadout) {
    scm.feature_readout = gaussian_matrix(config.num_features, config.width, s, rng);
  }
  if (config.mode != GenerationMode::kCausal) {
    scm.label_readout.resize(config.width);
    for (Eigen::Index i = 0; i < scm.label_readout.size(); ++i) scm.label_readout[i] = s * rng.normal();
  }
  return scm;
}

RowMatrix sample_exogenous(const ScmConfig& config, std::size_t n, Rng& rng) {
  RowMatrix u(static_cast<Eigen::Index>(n), config.exogenous_dim);
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    u.data()[i] = config.input_dist == InputDistribution::kGaussian ? rng.normal() : rng.uniform();
  }
  return u;
}

std::vector<RowMatrix> scm_forward(const Scm& scm, const RowMatrix& u, Rng& rng) {
  const auto& cfg = scm.config;
  if (u.cols() != cfg.exogenous_dim) {
    throw ShapeError("scm_forward: exogenous input has " + std::to_string(u.cols()) +
                     " columns, SCM expects " + std::to_string(cfg.exogenous_dim));
  }
  std::vector<RowMatrix> hidden;
  hidden.reserve(static_cast<std::size_t>(cfg.depth));
  hidden.push_back(u * scm.w0.transpose());
  for (int l = 1; l < cfg.depth; ++l) {
    const int act = cfg.activations[static_cast<std::size_t>(l - 1)];
    RowMatrix phi = hidden.back().unaryExpr([act](double v) { return activation(act, v); });
    RowMatrix h = phi * scm.layers[static_cast<std::size_t>(l - 1)].transpose();
    if (cfg.sigma_noise > 0) {
      for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] += cfg.sigma_noise * rng.normal();
    }
    hidden.push_back(std::move(h));
  }
  return hidden;
}

std::vector<std::size_t> clique_window(std::size_t label, std::size_t d, std::size_t pool_size) {
  if (label >= pool_size || pool_size < d + 1) {
    throw ConfigError("clique_window: pool of " + std::to_string(pool_size) + " cannot hold " +
                      std::to_string(d) + " features around node " + std::to_string(label));
  }
  std::vector<std::size_t> picked;
  for (std::size_t dist = 1; picked.size() < d; ++dist) {
    if (dist <= label && picked.size() < d) picked.push_back(label - dist);
    if (label + dist < pool_size && picked.size() < d) picked.push_back(label + dist);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

FeaturesAndScore extract_features_and_score(const Scm& scm, const RowMatrix& u,
                                            const std::vector<RowMatrix>& hidden, Rng& rng) {
  const auto& cfg = scm.config;
  if (hidden.size() != static_cast<std::size_t>(cfg.depth)) {
    throw ShapeError("extract_features_and_score: expected " + std::to_string(cfg.depth) +
                     " hidden states, got " + std::to_string(hidden.size()));
  }
  const Eigen::Index n = u.rows();
  const auto d = static_cast<std::size_t>(cfg.num_features);
  FeaturesAndScore out;
  const RowMatrix& last = hidden.back();
  switch (cfg.mode) {
    case GenerationMode::kNoncausalReadout:
      out.x = last * scm.feature_readout.transpose();
      out.score = last * scm.label_readout;
      break;
    case GenerationMode::kNoncausalIdentity:
      if (u.cols() != cfg.num_features) {
        throw ConfigError("noncausal_identity requires d == k");
      }
      out.x = u;
      out.score = last * scm.label_readout;
      break;
    case GenerationMode::kCausal: {
      const auto h = static_cast<std::size_t>(cfg.width);
      const std::size_t pool = (static_cast<std::size_t>(cfg.depth) - 1) * h;
      if (pool < d + 1) {
        throw ConfigError("causal mode: pool of " + std::to_string(pool) + " nodes < d + 1 = " +
                          std::to_string(d + 1));
      }
      const std::size_t block_start = cfg.causal_label_block == LabelBlock::kFirst ? 0 : pool - h;
      out.label_node = block_start + static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(h) - 1));
      if (cfg.causal_feature_select == FeatureSelect::kClique) {
        out.feature_nodes = clique_window(out.label_node, d, pool);
      } else {
        std::vector<std::size_t> rest;
        rest.reserve(pool - 1);
        for (std::size_t i = 0; i < pool; ++i) {
          if (i != out.label_node) rest.push_back(i);
        }
        // Partial Fisher-Yates: first d entries are a uniform draw without replacement.
        for (std::size_t i = 0; i < d; ++i) {
          const auto j = static_cast<std::size_t>(
              rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(rest.size()) - 1));
          std::swap(rest[i], rest[j]);
        }
        out.feature_nodes.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(d));
        std::sort(out.feature_nodes.begin(), out.feature_nodes.end());
      }
      // Pool node p lives in h^(1 + p / h), column p % h.
      auto node = [&](std::size_t p) -> Eigen::VectorXd {
        return hidden[1 + p / h].col(static_cast<Eigen::Index>(p % h));
      };
      out.score = node(out.label_node);
      out.x.resize(n, static_cast<Eigen::Index>(d));
      for (std::size_t j = 0; j < d; ++j) out.x.col(static_cast<Eigen::Index>(j)) = node(out.feature_nodes[j]);
      break;
    }
  }
  return out;
}

std::vector<double> standardize_clip(std::span<const double> v, double clip) {
  const auto n = static_cast<double>(v.size());
  std::vector<double> out(v.size(), 0.0);
  if (v.empty()) return out;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= n;
  if (!(var > 0)) return out;
  const double sd = std::sqrt(var);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp((v[i] - mean) / sd, -clip, clip);
  return out;
}

std::size_t negative_count(double pi, std::size_t n) {
  const double target = pi * static_cast<double>(n);
  // Products like 0.1 * 30 land a hair above the integer they represent.
  return static_cast<std::size_t>(std::ceil(target - 1e-9 * std::max(1.0, target)));
}

std::vector<int> assign_labels(std::span<const double> scores, double pi) {
  if (!(pi > 0 && pi < 1)) throw ConfigError("assign_labels: pi must lie in (0, 1)");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const std::size_t negatives = std::min(n, negative_count(pi, n));
  std::vector<int> labels(n, 1);
  for (std::size_t i = 0; i < negatives; ++i) labels[order[i]] = 0;
  return labels;
}

LabeledDataset generate_dataset(const ScmConfig& config, std::size_t n, double pi, Rng& rng) {
  if (n < 4) throw ConfigError("generate_dataset: n must be >= 4, got " + std::to_string(n));
  if (!(pi > 0 && pi < 1)) throw ConfigError("generate_dataset: pi must lie in (0, 1)");
  const Scm scm = sample_scm(config, rng);
  const RowMatrix u = sample_exogenous(config, n, rng);
  const auto hidden = scm_forward(scm, u, rng);
  FeaturesAndScore fs = extract_features_and_score(scm, u, hidden, rng);

  if (!fs.x.allFinite() || !fs.score.allFinite()) {
    throw DegenerateSampleError("generate_dataset: SCM produced non-finite values");
  }

  LabeledDataset ds;
  ds.pi = pi;
  ds.provenance = config;
  ds.x.resize(fs.x.rows(), fs.x.cols());
  std::vector<double> column(n);
  for (Eigen::Index j = 0; j < fs.x.cols(); ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = fs.x(static_cast<Eigen::Index>(i), j);
    const auto z = standardize_clip(column, kPriorClip);
    for (std::size_t i = 0; i < n; ++i) ds.x(static_cast<Eigen::Index>(i), j) = z[i];
  }
  const std::vector<double> raw(fs.score.data(), fs.score.data() + fs.score.size());
  const auto score = standardize_clip(raw, kPriorClip);
  // Finite but astronomically large values can still overflow the variance.
  if (!ds.x.allFinite() ||
      !std::all_of(score.begin(), score.end(), [](double v) { return std::isfinite(v); })) {
    throw DegenerateSampleError("generate_dataset: standardization overflowed");
  }
  ds.y = assign_labels(score, pi);
  return ds;
}

ScmConfig draw_scm_config(const PriorSpace& space, int num_features, bool causal, Rng& rng) {
  if (space.noise_levels.empty()) throw ConfigError("PriorSpace: noise_levels is empty");
  ScmConfig c;
  c.num_features = num_features;
  c.exogenous_dim = num_features;
  c.depth = space.depth;
  c.width = space.width;
  c.sigma_init = space.weight_scale / std::sqrt(static_cast<double>(space.width));
  c.sigma_noise = space.noise_levels[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(space.noise_levels.size()) - 1))];
  c.input_dist = rng.bernoulli(0.5) ? InputDistribution::kGaussian : InputDistribution::kUniform01;
  c.activations.resize(static_cast<std::size_t>(space.depth - 1));
  for (int& a : c.activations) a = static_cast<int>(rng.uniform_int(1, kNumActivations));
  if (causal) {
    c.mode = GenerationMode::kCausal;
    c.causal_label_block = rng.bernoulli(0.5) ? LabelBlock::kFirst : LabelBlock::kLast;
    c.causal_feature_select = rng.bernoulli(0.5) ? FeatureSelect::kClique : FeatureSelect::kRandom;
  } else {
    c.mode = rng.bernoulli(0.5) ? GenerationMode::kNoncausalReadout
                                : GenerationMode::kNoncausalIdentity;
  }
  return c;
}

}  // namespace puicl
