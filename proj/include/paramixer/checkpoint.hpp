#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "paramixer/network.hpp"

namespace paramixer {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Array2d value;
};

struct Checkpoint {
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
  std::vector<NamedTensor> tensors;
};

// File layout:
//   8 bytes   magic "PMXCKPT1"
//   8 bytes   manifest length L, little-endian u64
//   L bytes   JSON manifest {format, version, metadata, tensors:[{name, shape, offset}]}
//   payload   little-endian IEEE-754 f64 values, row-major, offsets relative to payload start
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes);

/// Model weights plus the config echoed under metadata["config"].
Checkpoint model_checkpoint(const ModelConfig& config, const ModelParams<double>& params,
                            nlohmann::ordered_json extra = nlohmann::ordered_json::object());

struct RestoredModel {
  ModelConfig config;
  ModelParams<double> params;
};
RestoredModel restore_model(const Checkpoint& checkpoint);

}  // namespace paramixer
