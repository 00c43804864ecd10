#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "puicl/model.hpp"

namespace puicl {

/// Checkpoint container, little-endian:
///
///   bytes 0..7   magic "PUICLCKP"
///   bytes 8..15  uint64 header length H
///   next H bytes JSON header
///   remainder    float32 arrays; header "arrays" lists name, shape,
///                offset (bytes from the start of this section) and count
inline constexpr char kCheckpointMagic[8] = {'P', 'U', 'I', 'C', 'L', 'C', 'K', 'P'};
inline constexpr int kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct CheckpointFile {
  nlohmann::json header;  // without the "arrays" table
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                      const std::vector<NamedArray>& arrays);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Appends the model's arrays, each name prefixed with `prefix`.
void append_arrays(std::vector<NamedArray>& out, const ModelParams<float>& params,
                   const std::string& prefix = "");
/// Fills `params` (already shaped for the config) from arrays named
/// prefix + parameter name. Validates every shape.
void load_arrays(const CheckpointFile& file, ModelParams<float>& params,
                 const std::string& prefix = "");

struct ModelCheckpointInfo {
  std::int64_t training_step = 0;
  bool ema = true;
  /// Feature-count range seen in training; 0 when unknown.
  int features_min = 0;
  int features_max = 0;
};

/// Inference checkpoint (kind "model").
void save_model(const std::filesystem::path& path, const ModelParams<float>& params,
                const ModelCheckpointInfo& info);

struct LoadedModel {
  ModelParams<float> params;
  ModelCheckpointInfo info;
};

/// Loads a "model" checkpoint, or the EMA weights of a "train_state"
/// checkpoint. Validates count_params against the header config.
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace puicl
