#include "puicl/pusplit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "puicl/error.hpp"

namespace puicl {

std::size_t PuInstance::hidden_negatives() const {
  return static_cast<std::size_t>(std::count(hidden_labels.begin(), hidden_labels.end(), 0));
}

std::size_t round_count(double x) {
  return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9 * std::max(1.0, std::abs(x))));
}

namespace {
std::size_t ceil_count(double x) {
  return static_cast<std::size_t>(std::ceil(x - 1e-9 * std::max(1.0, std::abs(x))));
}
}  // namespace

PuComposition pu_composition(std::size_t positives, double eta, double pi) {
  if (positives < 1) throw ConfigError("PU composition: P must be >= 1");
  if (!(eta > 0)) throw ConfigError("PU composition: eta must be > 0, got " + std::to_string(eta));
  if (!(pi > 0 && pi < 1)) {
    throw ConfigError("PU composition: pi must lie in (0, 1), got " + std::to_string(pi));
  }
  PuComposition c;
  const auto p = static_cast<double>(positives);
  c.n_train = ceil_count(p / (1.0 - pi));
  c.neg_train = round_count(pi * static_cast<double>(c.n_train));
  c.n_unlabeled = ceil_count(p * eta);
  c.neg_unlabeled = round_count(pi * static_cast<double>(c.n_unlabeled));
  return c;
}

namespace {

RowMatrix gather_rows(const RowMatrix& src, std::span<const std::size_t> idx) {
  RowMatrix out(static_cast<Eigen::Index>(idx.size()), src.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = src.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

}  // namespace

PuInstance make_pu(const RowMatrix& positives, const RowMatrix& negatives, std::size_t p,
                   double eta, double pi, Rng& rng) {
  const PuComposition c = pu_composition(p, eta, pi);
  if (positives.cols() != negatives.cols() && positives.rows() > 0 && negatives.rows() > 0) {
    throw ShapeError("make_pu: positive and negative pools differ in feature count");
  }
  const auto have_pos = static_cast<std::size_t>(positives.rows());
  const auto have_neg = static_cast<std::size_t>(negatives.rows());
  if (have_pos < c.positives_needed() || have_neg < c.negatives_needed()) {
    throw CapacityError("make_pu: need " + std::to_string(c.positives_needed()) + " positives and " +
                        std::to_string(c.negatives_needed()) + " negatives, pools hold " +
                        std::to_string(have_pos) + " and " + std::to_string(have_neg));
  }
  if (c.n_unlabeled < 2) {
    throw DegenerateSampleError("make_pu: unlabeled portion of " + std::to_string(c.n_unlabeled) +
                                " row(s) is too small to hold both classes");
  }

  std::vector<std::size_t> pos_idx(have_pos), neg_idx(have_neg);
  std::iota(pos_idx.begin(), pos_idx.end(), 0);
  std::iota(neg_idx.begin(), neg_idx.end(), 0);
  rng.shuffle(pos_idx);
  rng.shuffle(neg_idx);

  // Training portion takes the first rows of each pool; its negatives
  // (neg_idx[0 .. neg_train)) are discarded.
  const std::span<const std::size_t> labeled_idx(pos_idx.data(), c.labeled());
  const std::span<const std::size_t> u_pos(pos_idx.data() + c.labeled(), c.pos_unlabeled());
  const std::span<const std::size_t> u_neg(neg_idx.data() + c.neg_train, c.neg_unlabeled);

  // Mix the unlabeled portion so row position carries no class signal.
  std::vector<std::pair<int, std::size_t>> unl;
  unl.reserve(c.n_unlabeled);
  for (std::size_t i : u_pos) unl.emplace_back(1, i);
  for (std::size_t i : u_neg) unl.emplace_back(0, i);
  rng.shuffle(unl);

  PuInstance inst;
  inst.pi = pi;
  inst.eta = eta;
  inst.labeled = gather_rows(positives, labeled_idx);
  const Eigen::Index d = positives.rows() > 0 ? positives.cols() : negatives.cols();
  inst.unlabeled.resize(static_cast<Eigen::Index>(unl.size()), d);
  inst.hidden_labels.resize(unl.size());
  for (std::size_t r = 0; r < unl.size(); ++r) {
    const auto [label, idx] = unl[r];
    const RowMatrix& src = label == 1 ? positives : negatives;
    inst.unlabeled.row(static_cast<Eigen::Index>(r)) = src.row(static_cast<Eigen::Index>(idx));
    inst.hidden_labels[r] = label;
  }
  return inst;
}

std::pair<RowMatrix, RowMatrix> partition_by_class(const RowMatrix& x, const std::vector<int>& y) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw ShapeError("partition_by_class: " + std::to_string(x.rows()) + " rows vs " +
                     std::to_string(y.size()) + " labels");
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < y.size(); ++i) (y[i] == 1 ? pos : neg).push_back(i);
  return {gather_rows(x, pos), gather_rows(x, neg)};
}

PuInstance synth_pu(const ScmConfig& config, std::size_t p, double eta, double pi, Rng& rng) {
  const PuComposition c = pu_composition(p, eta, pi);
  if (c.n_unlabeled < 2) {
    throw DegenerateSampleError("synth_pu: n_u = " + std::to_string(c.n_unlabeled) + " cannot hold both classes");
  }
  const std::size_t n = c.total();
  // Label prevalence chosen so ceil(prevalence * n) equals the negatives the
  // allocation needs; differs from pi by at most 1/n.
  const double prevalence = static_cast<double>(c.negatives_needed()) / static_cast<double>(n);
  if (!(prevalence > 0 && prevalence < 1)) {
    throw DegenerateSampleError("synth_pu: allocation leaves one class empty");
  }
  const LabeledDataset ds = generate_dataset(config, n, prevalence, rng);
  const auto [pos, neg] = partition_by_class(ds.x, ds.y);
  PuInstance inst = make_pu(pos, neg, p, eta, pi, rng);
  return inst;
}

}  // namespace puicl
