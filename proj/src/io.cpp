#include "puicl/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "puicl/error.hpp"

namespace puicl {

namespace fs = std::filesystem;

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(path.string() + ": invalid JSON: " + ex.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed for " + path.string());
}

namespace {

nlohmann::json matrix_json(const RowMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

RowMatrix matrix_from_json(const nlohmann::json& j, const std::string& what, std::size_t cols) {
  if (!j.is_array()) throw IoError(what + " must be an array of rows");
  RowMatrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& row = j[i];
    if (!row.is_array() || row.size() != cols) {
      throw IoError(what + " row " + std::to_string(i) + " does not have " + std::to_string(cols) + " values");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (!row[c].is_number()) throw IoError(what + " row " + std::to_string(i) + " has a non-numeric value");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c].get<double>();
    }
  }
  return m;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw IoError(where + ": '" + s + "' is not a finite number");
  }
  return v;
}

}  // namespace

fs::path truth_path_for(const fs::path& instance_path) {
  fs::path p = instance_path;
  p.replace_extension(".truth.json");
  return p;
}

void write_instance(const fs::path& path, const PuInstance& instance, bool with_truth) {
  nlohmann::json j;
  j["labeled"] = matrix_json(instance.labeled);
  j["unlabeled"] = matrix_json(instance.unlabeled);
  j["meta"] = {{"pi", instance.pi}, {"eta", instance.eta}, {"d", instance.num_features()}, {"seed", instance.seed}};
  write_text_file(path, j.dump() + "\n");
  if (with_truth && !instance.hidden_labels.empty()) {
    write_text_file(truth_path_for(path), nlohmann::json({{"truth", instance.hidden_labels}}).dump() + "\n");
  }
}

PuInstance read_instance(const fs::path& path) {
  const nlohmann::json j = read_json_file(path);
  const std::string w = path.string();
  if (!j.is_object()) throw IoError(w + ": instance file must be a JSON object");
  if (j.contains("truth")) throw IoError(w + ": instance file embeds a truth section; store it separately");
  for (const char* key : {"labeled", "unlabeled", "meta"}) {
    if (!j.contains(key)) throw IoError(w + ": missing '" + key + "'");
  }
  const auto& meta = j["meta"];
  PuInstance inst;
  std::size_t d = 0;
  try {
    d = meta.at("d").get<std::size_t>();
    inst.pi = meta.at("pi").get<double>();
    inst.eta = meta.at("eta").get<double>();
    inst.seed = meta.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(w + ": invalid meta: " + ex.what());
  }
  if (d == 0) throw IoError(w + ": meta.d must be >= 1");
  inst.labeled = matrix_from_json(j["labeled"], w + ": labeled", d);
  inst.unlabeled = matrix_from_json(j["unlabeled"], w + ": unlabeled", d);
  if (inst.labeled.rows() == 0 || inst.unlabeled.rows() == 0) {
    throw IoError(w + ": needs at least one labeled and one unlabeled row");
  }
  return inst;
}

std::vector<int> read_truth(const fs::path& path) {
  const nlohmann::json j = read_json_file(path);
  if (!j.is_object() || !j.contains("truth") || !j["truth"].is_array()) {
    throw IoError(path.string() + ": expected {\"truth\": [...]}");
  }
  std::vector<int> out;
  for (const auto& v : j["truth"]) {
    if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
      throw IoError(path.string() + ": truth labels must be 0 or 1");
    }
    out.push_back(v.get<int>());
  }
  return out;
}

nlohmann::json to_json(const ScmConfig& c) {
  std::vector<std::string> acts;
  for (int a : c.activations) acts.push_back(activation_name(a));
  return {{"exogenous_dim", c.exogenous_dim},
          {"num_features", c.num_features},
          {"depth", c.depth},
          {"width", c.width},
          {"sigma_init", c.sigma_init},
          {"sigma_noise", c.sigma_noise},
          {"activations", acts},
          {"input_dist", to_string(c.input_dist)},
          {"mode", to_string(c.mode)},
          {"causal_label_block", to_string(c.causal_label_block)},
          {"causal_feature_select", to_string(c.causal_feature_select)}};
}

void write_dataset_csv(const fs::path& path, const LabeledDataset& dataset, std::uint64_t seed) {
  std::ostringstream os;
  const Eigen::Index d = dataset.x.cols();
  for (Eigen::Index j = 0; j < d; ++j) os << 'f' << j << ',';
  os << "y\n";
  for (Eigen::Index i = 0; i < dataset.x.rows(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) os << fmt(dataset.x(i, j)) << ',';
    os << dataset.y[static_cast<std::size_t>(i)] << '\n';
  }
  write_text_file(path, os.str());
  nlohmann::json side = {{"scm", to_json(dataset.provenance)},
                         {"pi", dataset.pi},
                         {"rows", dataset.rows()},
                         {"negatives", dataset.negatives()},
                         {"seed", seed}};
  write_text_file(fs::path(path.string() + ".json"), side.dump(2) + "\n");
}

BenchmarkDataset read_benchmark_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw IoError(path.string() + ": empty file");
  const auto header = split_csv(line);
  if (header.size() < 2 || header.back() != "label") {
    throw IoError(path.string() + ": header must end with a 'label' column after at least one feature");
  }
  const std::size_t d = header.size() - 1;
  std::vector<double> values;
  BenchmarkDataset ds;
  ds.name = path.stem().string();
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != header.size()) {
      throw IoError(where + ": expected " + std::to_string(header.size()) + " columns, got " +
                    std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < d; ++c) values.push_back(parse_double(cells[c], where));
    const double label = parse_double(cells.back(), where);
    if (label != 0.0 && label != 1.0) throw IoError(where + ": label must be 0 or 1");
    ds.labels.push_back(static_cast<int>(label));
  }
  ds.x = Eigen::Map<RowMatrix>(values.data(), static_cast<Eigen::Index>(ds.labels.size()),
                               static_cast<Eigen::Index>(d));
  return ds;
}

void write_predictions_csv(const fs::path& path, const RowMatrix& probs) {
  std::ostringstream os;
  os << "row,p_positive,p_negative\n";
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    os << i << ',' << fmt(probs(i, kPositiveChannel)) << ',' << fmt(probs(i, kNegativeChannel)) << '\n';
  }
  write_text_file(path, os.str());
}

RowMatrix read_predictions_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || split_csv(line) != std::vector<std::string>{"row", "p_positive", "p_negative"}) {
    throw IoError(path.string() + ": expected header row,p_positive,p_negative");
  }
  std::vector<double> values;
  std::size_t lineno = 1, rows = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != 3) throw IoError(where + ": expected 3 columns");
    if (parse_double(cells[0], where) != static_cast<double>(rows)) throw IoError(where + ": row index out of order");
    values.push_back(parse_double(cells[1], where));
    values.push_back(parse_double(cells[2], where));
    ++rows;
  }
  return Eigen::Map<RowMatrix>(values.data(), static_cast<Eigen::Index>(rows), 2);
}

nlohmann::json to_json(const MetricsReport& r) {
  return {{"auc", r.auc},
          {"acc", r.acc},
          {"f1", r.f1},
          {"threshold", r.threshold},
          {"counts",
           {{"n_u_pos", r.counts.positives},
            {"n_u_neg", r.counts.negatives},
            {"tp", r.counts.tp},
            {"fp", r.counts.fp},
            {"fn", r.counts.fn},
            {"tn", r.counts.tn}}}};
}

namespace {

std::string report_row(const TaskSummary& t) {
  std::string row = t.dataset;
  for (double v : {t.auc_mean, t.auc_std, t.acc_mean, t.acc_std, t.f1_mean, t.f1_std}) row += "," + fmt(v);
  return row + "\n";
}

nlohmann::json summary_json(const TaskSummary& t) {
  nlohmann::json j = {{"dataset", t.dataset}};
  if (!t.ok()) {
    j["error"] = t.error;
    return j;
  }
  j["auc_mean"] = t.auc_mean;
  j["auc_std"] = t.auc_std;
  j["acc_mean"] = t.acc_mean;
  j["acc_std"] = t.acc_std;
  j["f1_mean"] = t.f1_mean;
  j["f1_std"] = t.f1_std;
  j["negative_shortfall"] = t.negative_shortfall;
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& r : t.repeats) reps.push_back(to_json(r));
  if (!reps.empty()) j["repeats"] = std::move(reps);
  return j;
}

}  // namespace

void write_report_csv(const fs::path& path, const BenchmarkReport& report) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& t : report.tasks) {
    if (t.ok()) out += report_row(t);
  }
  if (report.average.ok()) out += report_row(report.average);
  write_text_file(path, out);
}

nlohmann::json to_json(const BenchmarkReport& report) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : report.tasks) tasks.push_back(summary_json(t));
  return {{"seed", report.seed},
          {"repeats", report.repeats},
          {"threshold", 0.5},
          {"tasks", tasks},
          {"average", summary_json(report.average)}};
}

}  // namespace puicl
