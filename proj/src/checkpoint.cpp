#include "tsinet/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>

#include "tsinet/errors.hpp"

namespace tsinet {

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& t : ckpt.tensors) table.push_back({{"name", t.name}, {"shape", t.value.shape()}});
  nlohmann::json header{{"format", kCheckpointFormat},
                        {"version", kCheckpointVersion},
                        {"dtype", "float32-le"},
                        {"model", to_json(ckpt.model)},
                        {"tensors", table},
                        {"meta", ckpt.meta}};
  const std::string line = header.dump() + "\n";
  std::vector<std::uint8_t> out(line.begin(), line.end());
  for (const auto& t : ckpt.tensors) {
    for (float v : t.value.data()) {
      const std::uint32_t u = std::bit_cast<std::uint32_t>(v);
      for (int b = 0; b < 4; ++b) out.push_back(std::uint8_t((u >> (8 * b)) & 0xff));
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  const auto nl = std::find(bytes.begin(), bytes.end(), std::uint8_t('\n'));
  if (nl == bytes.end()) throw DataError("checkpoint: header line not terminated", 0);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.begin(), nl);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed header: ") + e.what(), 0);
  }
  if (!h.is_object() || h.value("format", "") != kCheckpointFormat) throw DataError("checkpoint: bad magic", 0);
  if (h.value("version", -1) != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + h.value("version", nlohmann::json()).dump(), 0);
  }
  Checkpoint ckpt;
  ckpt.model = model_config_from_json(h.at("model"));
  ckpt.meta = h.value("meta", nlohmann::json::object());
  std::size_t offset = std::size_t(nl - bytes.begin()) + 1;
  try {
    for (const auto& e : h.at("tensors")) {
      NamedTensor t{e.at("name").get<std::string>(), Tensor<float>(e.at("shape").get<Shape>())};
      const std::size_t need = t.value.size() * 4;
      if (bytes.size() - offset < need) {
        throw DataError("checkpoint: truncated tensor '" + t.name + "': expected " + std::to_string(need) +
                            " bytes, found " + std::to_string(bytes.size() - offset),
                        std::int64_t(offset));
      }
      for (std::size_t i = 0; i < t.value.size(); ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= std::uint32_t(bytes[offset + 4 * i + std::size_t(b)]) << (8 * b);
        t.value[i] = std::bit_cast<float>(u);
      }
      offset += need;
      ckpt.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad tensor table: ") + e.what(), 0);
  }
  if (offset != bytes.size()) {
    throw DataError("checkpoint: " + std::to_string(bytes.size() - offset) + " trailing bytes", std::int64_t(offset));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  // Write-then-rename so an interrupted save never leaves a torn file.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw DataError("cannot open " + tmp.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint not found: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what(), e.byte_offset());
  }
}

Checkpoint capture(const TsiNet<float>& net, nlohmann::json meta) {
  Checkpoint c;
  c.model = net.config();
  for (const auto& p : net.params()) c.tensors.push_back({p.name, p.value});
  c.meta = std::move(meta);
  return c;
}

void load_parameters(TsiNet<float>& net, const Checkpoint& ckpt) {
  for (auto& p : net.params()) {
    const NamedTensor* t = ckpt.find(p.name);
    if (!t) throw DataError("checkpoint is missing parameter '" + p.name + "'");
    if (t->value.shape() != p.value.shape()) {
      throw DataError("checkpoint parameter '" + p.name + "' has shape " + to_string(t->value.shape()) +
                      ", model expects " + to_string(p.value.shape()));
    }
    p.value = t->value;
  }
}

TsiNet<float> restore(const Checkpoint& ckpt) {
  TsiNet<float> net(ckpt.model);
  load_parameters(net, ckpt);
  return net;
}

}  // namespace tsinet
