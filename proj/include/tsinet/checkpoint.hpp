#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsinet/model.hpp"

namespace tsinet {

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

/// One JSON header line {format, version, model, tensors[name, shape], meta},
/// then each tensor's raw little-endian float32 data in header order.
struct Checkpoint {
  ModelConfig model;
  std::vector<NamedTensor> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const NamedTensor* find(const std::string& name) const;
};

inline constexpr const char* kCheckpointFormat = "TSINET-CKPT";
inline constexpr int kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Every model parameter in store order.
Checkpoint capture(const TsiNet<float>& net, nlohmann::json meta = nlohmann::json::object());
/// Builds a network from the checkpoint's config and copies its parameters in.
TsiNet<float> restore(const Checkpoint& ckpt);
/// Copies matching parameters into `net`; every parameter must be present with the same shape.
void load_parameters(TsiNet<float>& net, const Checkpoint& ckpt);

}  // namespace tsinet
