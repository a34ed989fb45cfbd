#include "tsinet/config.hpp"

#include <fstream>

#include "tsinet/errors.hpp"

namespace tsinet {

nlohmann::json to_json(const DatasetSpec& d) {
  return {{"seed", d.seed},           {"count", d.count},         {"frames", d.frames},
          {"height", d.height},       {"width", d.width},         {"split_ratio", d.split_ratio},
          {"generator", to_json(d.generator)}};
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("data config must be an object");
  DatasetSpec d;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "seed") d.seed = v.get<std::uint64_t>();
      else if (key == "count") d.count = v.get<std::size_t>();
      else if (key == "frames") d.frames = v.get<std::size_t>();
      else if (key == "height") d.height = v.get<std::size_t>();
      else if (key == "width") d.width = v.get<std::size_t>();
      else if (key == "split_ratio") d.split_ratio = v.get<std::array<std::size_t, 3>>();
      else if (key == "generator") d.generator = vessel_spec_from_json(v);
      else throw ConfigError("unknown data config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("data." + key + ": " + e.what());
    }
  }
  if (d.count < 1) throw ConfigError("data.count must be >= 1");
  if (d.frames < 2) throw ConfigError("data.frames must be >= 2");
  d.generator.validate();
  return d;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "model") c.model = model_config_from_json(v);
      else if (key == "loss") c.loss = loss_config_from_json(v);
      else if (key == "train") c.train = train_config_from_json(v);
      else if (key == "data") c.data = dataset_spec_from_json(v);
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
  c.train.seed = c.seed;
  if (c.model.arch == Architecture::drm) c.model.drm_frames = int(c.train.crop_frames);
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json train = to_json(c.train);
  if (c.train.stop_after_epochs) train["stop_after_epochs"] = c.train.stop_after_epochs;
  return {{"seed", c.seed},
          {"model", to_json(c.model)},
          {"loss", to_json(c.loss)},
          {"train", train},
          {"data", to_json(c.data)}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void write_resolved_config(const RunConfig& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream f(dir / "config.json");
  if (!f) throw DataError("cannot write config.json in " + dir.string());
  f << to_json(c).dump(2) << "\n";
}

}  // namespace tsinet
