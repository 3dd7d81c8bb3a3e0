#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "genrelens/nn.hpp"

namespace genrelens::nn {

/// Checkpoints are a pair of files: `<prefix>.json` (manifest: format
/// version, dtype, tensor names/shapes/offsets, caller extras) and
/// `<prefix>.bin` (little-endian raw arrays in manifest order).
inline constexpr int kCheckpointFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void save_tensors(const std::vector<NamedTensor>& tensors,
                  const std::string& prefix, const nlohmann::json& extra);

struct LoadedCheckpoint {
  std::vector<NamedTensor> tensors;
  nlohmann::json extra;
};

LoadedCheckpoint load_tensors(const std::string& prefix);

void save_parameters(const ParameterStore& store, const std::string& prefix,
                     const nlohmann::json& extra);

/// Copies checkpointed values into matching parameters; throws on a missing
/// name or shape mismatch. Returns the manifest extras.
nlohmann::json load_parameters(ParameterStore& store, const std::string& prefix);

}  // namespace genrelens::nn
