#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "attentron/adam.hpp"
#include "attentron/model.hpp"

namespace attentron {

struct CheckpointMeta {
  std::uint64_t step = 0;  // completed optimizer steps in `phase`
  std::uint8_t phase = 1;
};

/// One stored tensor, exactly as on disk.
struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct RawCheckpoint {
  CheckpointMeta meta;
  std::vector<StoredTensor> tensors;
};

/// "ATRN" v1: u64 step, u8 phase, u32 count, then per tensor u16 name
/// length, name, u8 dtype (0 = f32), u8 rank, u32 dims, f32 payload.
/// Parameters come first in model order, then `<param>.m` and `<param>.v`.
std::vector<unsigned char> encode_checkpoint(const ParameterSet<float>& params,
                                             const AdamState<float>* optimizer,
                                             CheckpointMeta meta);
/// Throws FormatError on a bad magic, version or dtype.
RawCheckpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

struct LoadedCheckpoint {
  CheckpointMeta meta;
  Model<float> model;
  AdamState<float> optimizer;  // zeros when the file holds no moments
  bool has_optimizer = false;
};

/// Matches stored tensors against the parameters `config` implies. Throws
/// IncompatibilityError listing missing, unexpected or mis-shaped tensors.
LoadedCheckpoint restore_checkpoint(const RawCheckpoint& raw, const ModelConfig& config);

/// Writes `path` and its model-config sidecar `path + ".config"`.
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const AdamState<float>* optimizer, CheckpointMeta meta);

std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint);

/// Uses the sidecar config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

/// Parses a sidecar (`key = value` model keys).
ModelConfig parse_model_config(const std::string& text, const std::string& source);

}  // namespace attentron

namespace attentron {

/// Model for `config` built from the same-named tensors of `source`. Lets
/// inference-time ablations drop parts of a trained model (for example the
/// coarse encoder). Throws IncompatibilityError naming any tensor `config`
/// needs that `source` lacks or shapes differently.
Model<float> select_parameters(const Model<float>& source, const ModelConfig& config);

}  // namespace attentron
