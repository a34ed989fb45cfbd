#pragma once

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "tsinet/data.hpp"
#include "tsinet/loss.hpp"
#include "tsinet/model.hpp"
#include "tsinet/training.hpp"

namespace tsinet {

/// Everything a command needs. `seed` drives training; `data.seed` drives generation.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  DatasetSpec data;
};

nlohmann::json to_json(const DatasetSpec& d);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

/// Strict: unknown keys anywhere are a ConfigError. Missing keys keep defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

/// Writes `config.json` (the fully resolved config) into `dir`.
void write_resolved_config(const RunConfig& c, const std::filesystem::path& dir);

}  // namespace tsinet
