#include "tsinet/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace tsinet {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Point {
  double x, y;
};

// Recursive midpoint displacement between a and b.
void displace(const Point& a, const Point& b, double amplitude, int depth, Rng& rng, std::vector<Point>& out) {
  if (depth == 0) {
    out.push_back(b);
    return;
  }
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len = std::hypot(dx, dy);
  Point mid{(a.x + b.x) / 2, (a.y + b.y) / 2};
  if (len > 0) {
    const double off = rng.uniform(-amplitude, amplitude);
    mid.x += -dy / len * off;
    mid.y += dx / len * off;
  }
  displace(a, mid, amplitude / 2, depth - 1, rng, out);
  displace(mid, b, amplitude / 2, depth - 1, rng, out);
}

class TreeBuilder {
 public:
  TreeBuilder(const VesselTreeSpec& spec, std::size_t T, std::size_t H, std::size_t W, Rng& rng)
      : spec_(spec), T_(double(T)), H_(H), W_(W), rng_(rng), field_{} {
    field_.height = H;
    field_.width = W;
    field_.mask = BinaryMask(H, W);
    field_.arrival.assign(H * W, kInf);
    field_.dip.assign(H * W, 0.0);
  }

  void grow(Point start, double angle, double radius, int depth, int max_depth, double length, double path0) {
    const Point end{start.x + length * std::cos(angle), start.y + length * std::sin(angle)};
    std::vector<Point> poly{start};
    displace(start, end, spec_.tortuosity * length, 3, rng_, poly);
    double path = path0;
    for (std::size_t i = 1; i < poly.size(); ++i) {
      const Point a = poly[i - 1], b = poly[i];
      const double seg = std::hypot(b.x - a.x, b.y - a.y);
      const int steps = std::max(1, int(std::ceil(seg / 0.5)));
      for (int s = 0; s <= steps; ++s) {
        const double f = double(s) / steps;
        if (!stamp({a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)}, radius, path + f * seg)) return;
      }
      path += seg;
    }
    if (depth >= max_depth) return;
    const int children = rng_.integer(spec_.branches_min, spec_.branches_max);
    for (int c = 0; c < children; ++c) {
      const double spread = children == 1 ? 0.0 : -0.7 + 1.4 * double(c) / double(children - 1);
      const double child_angle = angle + spread + rng_.uniform(-0.35, 0.35);
      grow(end, child_angle, radius * spec_.radius_decay, depth + 1, max_depth, length * spec_.length_decay, path);
    }
  }

  VesselField take() { return std::move(field_); }

 private:
  // Returns false once the bolus can no longer reach this path length
  // within the acquisition window.
  bool stamp(Point c, double radius, double path) {
    const double arrival = spec_.bolus_speed > 0 ? path / spec_.bolus_speed : 0.0;
    if (arrival > T_) return false;
    const double thickness = 0.55 + 0.45 * std::min(1.0, radius / spec_.root_radius);
    const int y0 = int(std::floor(c.y - radius)), y1 = int(std::ceil(c.y + radius));
    const int x0 = int(std::floor(c.x - radius)), x1 = int(std::ceil(c.x + radius));
    for (int y = std::max(0, y0); y <= std::min(int(H_) - 1, y1); ++y) {
      for (int x = std::max(0, x0); x <= std::min(int(W_) - 1, x1); ++x) {
        const double d = std::hypot(double(x) - c.x, double(y) - c.y);
        if (d > radius) continue;
        const std::size_t i = std::size_t(y) * W_ + std::size_t(x);
        field_.mask.set(std::size_t(y), std::size_t(x));
        field_.arrival[i] = std::min(field_.arrival[i], arrival);
        // Projected thickness thins toward the vessel wall.
        const double profile = 0.6 + 0.4 * std::sqrt(std::max(0.0, 1.0 - (d * d) / ((radius + 0.5) * (radius + 0.5))));
        field_.dip[i] = std::max(field_.dip[i], spec_.contrast_depth * thickness * profile);
      }
    }
    return true;
  }

  const VesselTreeSpec& spec_;
  double T_;
  std::size_t H_, W_;
  Rng& rng_;
  VesselField field_;
};

void put_le_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(std::uint8_t((u >> (8 * b)) & 0xff));
}

float get_le_f32(const std::uint8_t* p) {
  std::uint32_t u = 0;
  for (int b = 0; b < 4; ++b) u |= std::uint32_t(p[b]) << (8 * b);
  return std::bit_cast<float>(u);
}

template <typename Get>
auto field_or(const nlohmann::json& j, const char* key, Get get) {
  try {
    return get(j.at(key));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("DSEQ header field '") + key + "': " + e.what(), 0);
  }
}

}  // namespace

void VesselTreeSpec::validate() const {
  if (roots_min < 1 || roots_max < roots_min) throw ConfigError("generator: root count range is empty");
  if (branches_min < 1 || branches_max < branches_min) throw ConfigError("generator: branching range is empty");
  if (depth_min < 0 || depth_max < depth_min) throw ConfigError("generator: depth range is empty");
  if (!(root_radius > 0)) throw ConfigError("generator: root radius must be positive");
  if (!(radius_decay > 0 && radius_decay <= 1)) throw ConfigError("generator: radius_decay must be in (0,1]");
  if (root_radius * std::pow(radius_decay, depth_max) < 1.0) {
    throw ConfigError("generator: radius at maximum depth falls below 1 pixel");
  }
  if (!(segment_length > 0) || !(length_decay > 0)) throw ConfigError("generator: segment lengths must be positive");
  if (tortuosity < 0) throw ConfigError("generator: tortuosity must be >= 0");
  if (washout_frames != 0 && !(washout_frames > 1)) {
    throw ConfigError("generator: washout_frames must be 0 (disabled) or > 1");
  }
  if (!(contrast_depth > 0)) throw ConfigError("generator: contrast_depth must be positive");
  if (noise_sigma < 0 || background_variation < 0) throw ConfigError("generator: noise levels must be >= 0");
}

nlohmann::json to_json(const VesselTreeSpec& s) {
  return {{"roots_min", s.roots_min},
          {"roots_max", s.roots_max},
          {"branches_min", s.branches_min},
          {"branches_max", s.branches_max},
          {"depth_min", s.depth_min},
          {"depth_max", s.depth_max},
          {"root_radius", s.root_radius},
          {"radius_decay", s.radius_decay},
          {"segment_length", s.segment_length},
          {"length_decay", s.length_decay},
          {"tortuosity", s.tortuosity},
          {"bolus_speed", s.bolus_speed},
          {"washout_frames", s.washout_frames},
          {"contrast_depth", s.contrast_depth},
          {"noise_sigma", s.noise_sigma},
          {"background_variation", s.background_variation}};
}

VesselTreeSpec vessel_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("generator config must be an object");
  VesselTreeSpec s;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "roots_min") s.roots_min = v.get<int>();
      else if (key == "roots_max") s.roots_max = v.get<int>();
      else if (key == "branches_min") s.branches_min = v.get<int>();
      else if (key == "branches_max") s.branches_max = v.get<int>();
      else if (key == "depth_min") s.depth_min = v.get<int>();
      else if (key == "depth_max") s.depth_max = v.get<int>();
      else if (key == "root_radius") s.root_radius = v.get<double>();
      else if (key == "radius_decay") s.radius_decay = v.get<double>();
      else if (key == "segment_length") s.segment_length = v.get<double>();
      else if (key == "length_decay") s.length_decay = v.get<double>();
      else if (key == "tortuosity") s.tortuosity = v.get<double>();
      else if (key == "bolus_speed") s.bolus_speed = v.get<double>();
      else if (key == "washout_frames") s.washout_frames = v.get<double>();
      else if (key == "contrast_depth") s.contrast_depth = v.get<double>();
      else if (key == "noise_sigma") s.noise_sigma = v.get<double>();
      else if (key == "background_variation") s.background_variation = v.get<double>();
      else throw ConfigError("unknown generator config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("generator." + key + ": " + e.what());
    }
  }
  s.validate();
  return s;
}

bool opacified(const VesselTreeSpec& spec, double arrival, std::size_t t) {
  const double sample = double(t) + 1.0;
  if (arrival > sample) return false;
  return spec.washout_frames == 0 || sample < arrival + spec.washout_frames;
}

VesselField generate_vessel_field(const VesselTreeSpec& spec, std::uint64_t seed, std::size_t T, std::size_t H,
                                  std::size_t W) {
  spec.validate();
  if (H < 8 || W < 8) throw ConfigError("generator: frames must be at least 8x8");
  Rng rng(mix_seed(seed, 0xd5a));
  TreeBuilder builder(spec, T, H, W, rng);
  const double size = double(std::min(H, W));
  const int roots = rng.integer(spec.roots_min, spec.roots_max);
  for (int r = 0; r < roots; ++r) {
    const int side = rng.integer(0, 3);
    const double along = rng.uniform(0.2, 0.8);
    Point start;
    double angle;
    switch (side) {
      case 0: start = {along * double(W), 0.0}, angle = std::numbers::pi / 2; break;            // top, heading down
      case 1: start = {double(W) - 1.0, along * double(H)}, angle = std::numbers::pi; break;    // right
      case 2: start = {along * double(W), double(H) - 1.0}, angle = -std::numbers::pi / 2; break;  // bottom
      default: start = {0.0, along * double(H)}, angle = 0.0; break;                             // left
    }
    angle += rng.uniform(-0.3, 0.3);
    const int depth = rng.integer(spec.depth_min, spec.depth_max);
    builder.grow(start, angle, spec.root_radius, 0, depth, spec.segment_length * size, 0.0);
  }
  VesselField field = builder.take();
  // Low-frequency background: a few random plane waves.
  field.background.assign(H * W, 1.0);
  for (int k = 0; k < 3; ++k) {
    const double fx = rng.uniform(-2.0, 2.0) * std::numbers::pi / double(W);
    const double fy = rng.uniform(-2.0, 2.0) * std::numbers::pi / double(H);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        field.background[y * W + x] += spec.background_variation / 3.0 * std::sin(fx * double(x) + fy * double(y) + phase);
  }
  return field;
}

DsaSequence generate_sequence(const VesselTreeSpec& spec, std::uint64_t seed, std::size_t T, std::size_t H,
                              std::size_t W, std::string id) {
  if (T < 2) throw ConfigError("generator: sequences need at least 2 frames");
  VesselField field = generate_vessel_field(spec, seed, T, H, W);
  Rng noise(mix_seed(seed, 0x5e9));
  DsaSequence seq;
  seq.frames = Tensor<float>({T, H, W});
  for (std::size_t t = 0; t < T; ++t) {
    float* frame = seq.frames.raw() + t * H * W;
    for (std::size_t i = 0; i < H * W; ++i) {
      double v = field.background[i];
      if (field.mask[i] && opacified(spec, field.arrival[i], t)) v -= field.dip[i];
      v += spec.noise_sigma * noise.normal();
      frame[i] = static_cast<float>(v);
    }
  }
  seq.mask = std::move(field.mask);
  seq.id = std::move(id);
  seq.seed = seed;
  return seq;
}

Tensor<float> zscore(const Tensor<float>& seq) {
  const std::size_t n = seq.size();
  if (n == 0) throw DataError("zscore: empty sequence");
  double mean = 0;
  for (float v : seq.data()) mean += v;
  mean /= double(n);
  double var = 0;
  for (float v : seq.data()) var += (double(v) - mean) * (double(v) - mean);
  var /= double(n);
  if (!(var > 0)) throw DataError("zscore: sequence has zero variance");
  const double inv = 1.0 / std::sqrt(var);
  Tensor<float> out(seq.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>((double(seq[i]) - mean) * inv);
  return out;
}

CropWindow draw_crop(const DsaSequence& seq, std::size_t frames, std::size_t height, std::size_t width, Rng& rng,
                     std::size_t temporal_origin) {
  if (seq.height() < height || seq.width() < width || seq.length() < temporal_origin + frames) {
    throw DataError("random_crop: sequence [" + std::to_string(seq.length()) + "," + std::to_string(seq.height()) +
                    "," + std::to_string(seq.width()) + "] is smaller than crop [" + std::to_string(frames) + "," +
                    std::to_string(height) + "," + std::to_string(width) + "]");
  }
  CropWindow w;
  w.t0 = temporal_origin;
  w.frames = frames;
  w.height = height;
  w.width = width;
  w.y0 = rng.index(seq.height() - height + 1);
  w.x0 = rng.index(seq.width() - width + 1);
  return w;
}

BinaryMask crop_mask(const BinaryMask& m, const CropWindow& w) {
  BinaryMask out(w.height, w.width);
  for (std::size_t y = 0; y < w.height; ++y)
    for (std::size_t x = 0; x < w.width; ++x) out.set(y, x, m.get(w.y0 + y, w.x0 + x));
  return out;
}

DsaSequence apply_crop(const DsaSequence& seq, const CropWindow& w) {
  if (w.t0 + w.frames > seq.length() || w.y0 + w.height > seq.height() || w.x0 + w.width > seq.width()) {
    throw DataError("crop window exceeds sequence bounds");
  }
  DsaSequence out;
  out.id = seq.id;
  out.seed = seq.seed;
  out.frames = Tensor<float>({w.frames, w.height, w.width});
  const std::size_t H = seq.height(), W = seq.width();
  for (std::size_t t = 0; t < w.frames; ++t)
    for (std::size_t y = 0; y < w.height; ++y)
      std::copy_n(seq.frames.raw() + ((w.t0 + t) * H + w.y0 + y) * W + w.x0, w.width,
                  out.frames.raw() + (t * w.height + y) * w.width);
  out.mask = crop_mask(seq.mask, w);
  return out;
}

DsaSequence random_crop(const DsaSequence& seq, std::size_t frames, std::size_t height, std::size_t width, Rng& rng,
                        std::size_t temporal_origin) {
  return apply_crop(seq, draw_crop(seq, frames, height, width, rng, temporal_origin));
}

DsaSequence center_crop_to_multiple(const DsaSequence& seq, std::size_t multiple) {
  const std::size_t H = seq.height() / multiple * multiple, W = seq.width() / multiple * multiple;
  if (H == 0 || W == 0) throw DataError("sequence is smaller than the required multiple " + std::to_string(multiple));
  CropWindow w{0, (seq.height() - H) / 2, (seq.width() - W) / 2, seq.length(), H, W};
  return apply_crop(seq, w);
}

AugmentDraw draw_augment(Rng& rng, bool allow_rotation) {
  AugmentDraw d;
  d.hflip = rng.coin();
  d.vflip = rng.coin();
  const bool rot = rng.coin();
  d.rot90 = allow_rotation && rot;
  return d;
}

namespace {

// Maps output (y,x) to the source pixel under the drawn transform.
// Order: h-flip, then v-flip, then counter-clockwise rotation.
template <typename Plane>
void transform_plane(std::size_t H, std::size_t W, const AugmentDraw& d, Plane copy) {
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      std::size_t sy = y, sx = x;
      if (d.rot90) {
        // out(y,x) = in(x, W-1-y)
        const std::size_t ty = sx, tx = W - 1 - sy;
        sy = ty;
        sx = tx;
      }
      if (d.vflip) sy = H - 1 - sy;
      if (d.hflip) sx = W - 1 - sx;
      copy(y * W + x, sy * W + sx);
    }
  }
}

}  // namespace

Tensor<float> apply_augment(const Tensor<float>& frames, const AugmentDraw& d) {
  if (frames.rank() != 3) throw ShapeError("augment: frames must be [T,H,W]");
  const std::size_t T = frames.dim(0), H = frames.dim(1), W = frames.dim(2);
  if (d.rot90 && H != W) throw ShapeError("augment: 90-degree rotation needs square frames, got " + to_string(frames.shape()));
  Tensor<float> out(frames.shape());
  for (std::size_t t = 0; t < T; ++t) {
    const float* src = frames.raw() + t * H * W;
    float* dst = out.raw() + t * H * W;
    transform_plane(H, W, d, [&](std::size_t o, std::size_t i) { dst[o] = src[i]; });
  }
  return out;
}

BinaryMask apply_augment(const BinaryMask& mask, const AugmentDraw& d) {
  const std::size_t H = mask.height(), W = mask.width();
  if (d.rot90 && H != W) throw ShapeError("augment: 90-degree rotation needs a square mask");
  std::vector<std::uint8_t> bits(H * W);
  const auto& src = mask.bits();
  transform_plane(H, W, d, [&](std::size_t o, std::size_t i) { bits[o] = src[i]; });
  return BinaryMask(H, W, std::move(bits));
}

Augmented augment(const Tensor<float>& frames, const BinaryMask& mask, Rng& rng, bool allow_rotation) {
  if (allow_rotation && frames.dim(1) != frames.dim(2)) {
    throw ShapeError("augment: rotation enabled on non-square input " + to_string(frames.shape()));
  }
  const AugmentDraw d = draw_augment(rng, allow_rotation);
  return {apply_augment(frames, d), apply_augment(mask, d)};
}

std::vector<std::uint8_t> encode_dseq(const DsaSequence& seq) {
  const std::size_t T = seq.length(), H = seq.height(), W = seq.width();
  if (seq.mask.height() != H || seq.mask.width() != W) throw ShapeError("write_dseq: mask does not match frames");
  nlohmann::json header{{"format", "DSEQ"}, {"version", 1}, {"T", T},        {"H", H},
                        {"W", W},           {"dtype", "float32-le"}, {"id", seq.id}, {"seed", seq.seed}};
  const std::string line = header.dump() + "\n";
  std::vector<std::uint8_t> out(line.begin(), line.end());
  out.reserve(out.size() + T * H * W * 4 + H * W);
  for (float v : seq.frames.data()) put_le_f32(out, v);
  for (auto b : seq.mask.bits()) out.push_back(b);
  return out;
}

void write_dseq(const DsaSequence& seq, const std::filesystem::path& path) {
  const auto bytes = encode_dseq(seq);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw DataError("write failed for " + path.string());
}

DsaSequence decode_dseq(const std::vector<std::uint8_t>& bytes) {
  const std::size_t limit = std::min<std::size_t>(bytes.size(), 1 << 16);
  const auto nl = std::find(bytes.begin(), bytes.begin() + std::ptrdiff_t(limit), std::uint8_t('\n'));
  if (nl == bytes.begin() + std::ptrdiff_t(limit)) throw DataError("DSEQ: header line not terminated", 0);
  const std::size_t header_len = std::size_t(nl - bytes.begin()) + 1;
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.begin(), nl);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("DSEQ: malformed header: ") + e.what(), 0);
  }
  if (!h.is_object() || !h.contains("format") || h["format"] != "DSEQ") throw DataError("DSEQ: bad magic", 0);
  const int version = field_or(h, "version", [](const nlohmann::json& v) { return v.get<int>(); });
  if (version != 1) throw DataError("DSEQ: unsupported version " + std::to_string(version), 0);
  const std::string dtype = field_or(h, "dtype", [](const nlohmann::json& v) { return v.get<std::string>(); });
  if (dtype != "float32-le") throw DataError("DSEQ: unsupported dtype " + dtype, 0);
  auto dim = [](const nlohmann::json& v) { return v.get<std::size_t>(); };
  const std::size_t T = field_or(h, "T", dim), H = field_or(h, "H", dim), W = field_or(h, "W", dim);
  const std::size_t expected = T * H * W * 4 + H * W;
  const std::size_t actual = bytes.size() - header_len;
  if (actual < expected) {
    throw DataError("DSEQ: truncated payload: expected " + std::to_string(expected) + " bytes after header, found " +
                        std::to_string(actual),
                    std::int64_t(bytes.size()));
  }
  if (actual > expected) {
    throw DataError("DSEQ: " + std::to_string(actual - expected) + " trailing bytes after payload",
                    std::int64_t(header_len + expected));
  }
  DsaSequence seq;
  seq.id = field_or(h, "id", [](const nlohmann::json& v) { return v.get<std::string>(); });
  seq.seed = field_or(h, "seed", [](const nlohmann::json& v) { return v.get<std::uint64_t>(); });
  seq.frames = Tensor<float>({T, H, W});
  const std::uint8_t* p = bytes.data() + header_len;
  for (std::size_t i = 0; i < T * H * W; ++i) seq.frames[i] = get_le_f32(p + 4 * i);
  const std::uint8_t* m = p + 4 * T * H * W;
  std::vector<std::uint8_t> bits(m, m + H * W);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] > 1) {
      throw DataError("DSEQ: mask byte " + std::to_string(bits[i]) + " is not 0/1",
                      std::int64_t(header_len + 4 * T * H * W + i));
    }
  }
  seq.mask = BinaryMask(H, W, std::move(bits));
  return seq;
}

DsaSequence read_dseq(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open DSEQ file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_dseq(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what(), e.byte_offset());
  }
}

const std::vector<std::string>& DatasetManifest::split(const std::string& name) const {
  if (name == "train") return splits.train;
  if (name == "val") return splits.val;
  if (name == "test") return splits.test;
  throw ConfigError("unknown split '" + name + "' (expected train|val|test)");
}

std::array<std::size_t, 3> split_sizes(std::size_t count, std::array<std::size_t, 3> ratio) {
  const std::size_t total = ratio[0] + ratio[1] + ratio[2];
  if (total == 0) throw ConfigError("split ratio must not be all zero");
  std::array<std::size_t, 3> sizes{};
  sizes[1] = count * ratio[1] / total;
  sizes[2] = count * ratio[2] / total;
  sizes[0] = count - sizes[1] - sizes[2];
  return sizes;
}

std::vector<DsaSequence> generate_dataset(const DatasetSpec& spec) {
  std::vector<DsaSequence> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    std::ostringstream id;
    id << "seq" << std::setw(4) << std::setfill('0') << i;
    out.push_back(
        generate_sequence(spec.generator, mix_seed(spec.seed, i), spec.frames, spec.height, spec.width, id.str()));
  }
  return out;
}

SplitManifest assign_splits(const std::vector<std::string>& ids, const DatasetSpec& spec) {
  std::vector<std::string> order = ids;
  Rng rng(mix_seed(spec.seed, 0x5b1));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  const auto sizes = split_sizes(order.size(), spec.split_ratio);
  SplitManifest m;
  m.train.assign(order.begin(), order.begin() + std::ptrdiff_t(sizes[0]));
  m.val.assign(order.begin() + std::ptrdiff_t(sizes[0]), order.begin() + std::ptrdiff_t(sizes[0] + sizes[1]));
  m.test.assign(order.begin() + std::ptrdiff_t(sizes[0] + sizes[1]), order.end());
  for (auto* v : {&m.train, &m.val, &m.test}) std::sort(v->begin(), v->end());
  return m;
}

std::vector<std::string> write_dataset(const DatasetSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto seqs = generate_dataset(spec);
  std::vector<std::string> ids;
  for (const auto& s : seqs) ids.push_back(s.id);
  const SplitManifest splits = assign_splits(ids, spec);
  std::vector<std::string> warnings;
  nlohmann::json entries = nlohmann::json::array();
  auto split_of = [&splits](const std::string& id) {
    for (const auto& [name, v] : {std::pair{"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}})
      if (std::find(v->begin(), v->end(), id) != v->end()) return std::string(name);
    return std::string();
  };
  for (const auto& s : seqs) {
    const std::string file = s.id + ".dseq";
    write_dseq(s, dir / file);
    entries.push_back({{"id", s.id}, {"file", file}, {"split", split_of(s.id)}});
  }
  for (const auto& [name, v] : {std::pair{"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}}) {
    if (v->empty()) warnings.push_back(std::string("split '") + name + "' is empty");
  }
  nlohmann::json manifest{{"format", "TSINET-DATASET"},
                          {"version", 1},
                          {"seed", spec.seed},
                          {"count", spec.count},
                          {"frames", spec.frames},
                          {"height", spec.height},
                          {"width", spec.width},
                          {"split_ratio", spec.split_ratio},
                          {"generator", to_json(spec.generator)},
                          {"sequences", entries},
                          {"splits", {{"train", splits.train}, {"val", splits.val}, {"test", splits.test}}},
                          {"warnings", warnings}};
  std::ofstream f(dir / "manifest.json");
  if (!f) throw DataError("cannot write manifest in " + dir.string());
  f << manifest.dump(2) << "\n";
  return warnings;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream f(path);
  if (!f) throw DataError("dataset manifest not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "TSINET-DATASET") throw DataError("not a dataset manifest: " + path.string());
  DatasetManifest m;
  try {
    for (const auto& e : j.at("sequences")) {
      m.entries.push_back({e.at("id").get<std::string>(), e.at("file").get<std::string>(), e.at("split").get<std::string>()});
    }
    m.splits.train = j.at("splits").at("train").get<std::vector<std::string>>();
    m.splits.val = j.at("splits").at("val").get<std::vector<std::string>>();
    m.splits.test = j.at("splits").at("test").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  m.provenance = j;
  m.provenance.erase("sequences");
  return m;
}

Dataset Dataset::load(const std::filesystem::path& dir) {
  Dataset d;
  d.dir = dir;
  d.manifest = read_manifest(dir);
  for (const auto& e : d.manifest.entries) d.sequences.push_back(read_dseq(dir / e.file));
  return d;
}

const DsaSequence& Dataset::get(const std::string& id) const {
  for (const auto& s : sequences)
    if (s.id == id) return s;
  throw DataError("sequence '" + id + "' not in dataset " + dir.string());
}

}  // namespace tsinet
