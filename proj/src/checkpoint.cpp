#include "puicl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "puicl/error.hpp"

namespace puicl {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

const NamedArray* CheckpointFile::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                      const std::vector<NamedArray>& arrays) {
  nlohmann::json h = header;
  h["format_version"] = kCheckpointVersion;
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : arrays) {
    if (a.data.size() != shape_numel(a.shape)) {
      throw CheckpointError("array '" + a.name + "' data does not match its shape");
    }
    table.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.data.size()}});
    offset += a.data.size() * sizeof(float);
  }
  h["arrays"] = std::move(table);
  const std::string text = h.dump();

  // Write to a sibling temp file and rename so readers never see a torn file.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint64_t len = text.size();
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : arrays) {
      os.write(reinterpret_cast<const char*>(a.data.data()),
               static_cast<std::streamsize>(a.data.size() * sizeof(float)));
    }
    if (!os) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  if (len > bytes.size() - 16) throw CheckpointError(path.string() + ": truncated header");
  CheckpointFile file;
  try {
    file.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& ex) {
    throw CheckpointError(path.string() + ": corrupt header: " + ex.what());
  }
  if (!file.header.is_object() || file.header.value("format_version", -1) != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported or missing format_version");
  }
  if (!file.header.contains("arrays") || !file.header["arrays"].is_array()) {
    throw CheckpointError(path.string() + ": header has no array table");
  }
  const std::size_t data_start = 16 + len;
  const std::size_t data_len = bytes.size() - data_start;
  try {
    for (const auto& entry : file.header["arrays"]) {
      NamedArray a;
      a.name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto count = entry.at("count").get<std::uint64_t>();
      if (count != shape_numel(a.shape)) {
        throw CheckpointError(path.string() + ": array '" + a.name + "' count/shape mismatch");
      }
      if (offset % sizeof(float) != 0 || offset > data_len || count * sizeof(float) > data_len - offset) {
        throw CheckpointError(path.string() + ": array '" + a.name + "' lies outside the data section");
      }
      a.data.resize(count);
      std::memcpy(a.data.data(), bytes.data() + data_start + offset, count * sizeof(float));
      file.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw CheckpointError(path.string() + ": malformed array table: " + ex.what());
  }
  file.header.erase("arrays");
  return file;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"embed", c.embed}, {"blocks", c.blocks}, {"heads", c.heads}, {"ff", c.ff}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (!it.value().is_number_integer()) throw ConfigError("model config field '" + k + "' must be an integer");
    const int v = it.value().get<int>();
    if (k == "embed") c.embed = v;
    else if (k == "blocks") c.blocks = v;
    else if (k == "heads") c.heads = v;
    else if (k == "ff") c.ff = v;
    else throw ConfigError("unknown model config field '" + k + "'");
  }
  c.validate();
  return c;
}

void append_arrays(std::vector<NamedArray>& out, const ModelParams<float>& params,
                   const std::string& prefix) {
  params.for_each([&](const std::string& name, const Tensor& t) {
    out.push_back({prefix + name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
  });
}

void load_arrays(const CheckpointFile& file, ModelParams<float>& params, const std::string& prefix) {
  params.for_each([&](const std::string& name, Tensor& t) {
    const NamedArray* a = file.find(prefix + name);
    if (!a) throw CheckpointError("checkpoint is missing array '" + prefix + name + "'");
    if (a->shape != t.shape()) {
      throw CheckpointError("array '" + prefix + name + "' has shape " + shape_to_string(a->shape) +
                            ", model expects " + shape_to_string(t.shape()));
    }
    std::copy(a->data.begin(), a->data.end(), t.data().begin());
  });
}

void save_model(const std::filesystem::path& path, const ModelParams<float>& params,
                const ModelCheckpointInfo& info) {
  nlohmann::json h;
  h["kind"] = "model";
  h["model_config"] = to_json(params.config);
  h["channel_order"] = {"positive", "negative"};
  h["training_step"] = info.training_step;
  h["ema"] = info.ema;
  h["param_count"] = count_params(params.config).total;
  if (info.features_max > 0) h["trained_features"] = {info.features_min, info.features_max};
  std::vector<NamedArray> arrays;
  append_arrays(arrays, params);
  write_checkpoint(path, h, arrays);
}

LoadedModel load_model(const std::filesystem::path& path) {
  const CheckpointFile file = read_checkpoint(path);
  const auto& h = file.header;
  if (!h.contains("model_config")) throw CheckpointError(path.string() + ": header has no model_config");
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(h["model_config"]);
  } catch (const ConfigError& ex) {
    throw CheckpointError(path.string() + ": invalid model_config: " + ex.what());
  }
  if (h.value("channel_order", nlohmann::json::array()) != nlohmann::json({"positive", "negative"})) {
    throw CheckpointError(path.string() + ": unexpected logit channel order");
  }
  const std::string kind = h.value("kind", "");
  std::string prefix;
  LoadedModel out{ModelParams<float>::zeros(cfg), {}};
  if (kind == "model") {
    out.info.training_step = h.value("training_step", std::int64_t{0});
    out.info.ema = h.value("ema", false);
  } else if (kind == "train_state") {
    prefix = "ema.";
    out.info.training_step = h.value("training_step", std::int64_t{0});
    out.info.ema = true;
  } else {
    throw CheckpointError(path.string() + ": unknown checkpoint kind '" + kind + "'");
  }
  if (h.contains("trained_features")) {
    try {
      out.info.features_min = h["trained_features"].at(0).get<int>();
      out.info.features_max = h["trained_features"].at(1).get<int>();
    } catch (const nlohmann::json::exception& ex) {
      throw CheckpointError(path.string() + ": malformed trained_features: " + ex.what());
    }
  }
  const std::int64_t expected = count_params(cfg).total;
  if (h.value("param_count", std::int64_t{-1}) != expected) {
    throw CheckpointError(path.string() + ": header param_count does not match count_params(" +
                          std::to_string(expected) + ")");
  }
  std::int64_t stored = 0;
  for (const auto& a : file.arrays) {
    if (a.name.compare(0, prefix.size(), prefix) == 0) stored += static_cast<std::int64_t>(a.data.size());
  }
  if (stored != expected) {
    throw CheckpointError(path.string() + ": stored parameters (" + std::to_string(stored) +
                          ") do not match count_params (" + std::to_string(expected) + ")");
  }
  load_arrays(file, out.params, prefix);
  return out;
}

}  // namespace puicl
