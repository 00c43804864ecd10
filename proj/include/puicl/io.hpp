#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "puicl/eval.hpp"
#include "puicl/prior.hpp"
#include "puicl/pusplit.hpp"

namespace puicl {

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// PU instance file: {"labeled": [[...]], "unlabeled": [[...]],
/// "meta": {"pi", "eta", "d", "seed"}}. Hidden labels go to a separate
/// truth file that read_instance never opens.
std::filesystem::path truth_path_for(const std::filesystem::path& instance_path);

/// Writes the instance file and, when the instance carries hidden labels
/// and `with_truth` is set, its truth file {"truth": [...]}.
void write_instance(const std::filesystem::path& path, const PuInstance& instance, bool with_truth = true);

/// Model-facing loader. The result has no hidden labels; a "truth" key
/// inside the instance file is rejected.
PuInstance read_instance(const std::filesystem::path& path);

/// Labels from a truth file (1 = positive, 0 = negative).
std::vector<int> read_truth(const std::filesystem::path& path);

/// Dataset dump: CSV `f0,...,f{d-1},y` plus `<path>.json` describing the
/// generator configuration and seed.
void write_dataset_csv(const std::filesystem::path& path, const LabeledDataset& dataset, std::uint64_t seed);

nlohmann::json to_json(const ScmConfig& config);

/// Numeric CSV with a header whose final column is `label` in {0, 1}.
/// The dataset name is the file stem.
BenchmarkDataset read_benchmark_csv(const std::filesystem::path& path);

/// `row,p_positive,p_negative`, one line per unlabeled row.
void write_predictions_csv(const std::filesystem::path& path, const RowMatrix& probs);
RowMatrix read_predictions_csv(const std::filesystem::path& path);

nlohmann::json to_json(const MetricsReport& report);

inline constexpr const char* kReportHeader = "dataset,auc_mean,auc_std,acc_mean,acc_std,f1_mean,f1_std";

/// One row per successful task plus the average row; failed tasks are
/// listed only in the JSON report.
void write_report_csv(const std::filesystem::path& path, const BenchmarkReport& report);
nlohmann::json to_json(const BenchmarkReport& report);

}  // namespace puicl
