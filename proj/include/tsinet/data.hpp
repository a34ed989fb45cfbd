#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsinet/morphology.hpp"
#include "tsinet/rng.hpp"
#include "tsinet/tensor.hpp"

namespace tsinet {

/// Parameters of the procedural vessel-tree phantom.
struct VesselTreeSpec {
  int roots_min = 1, roots_max = 2;
  int branches_min = 1, branches_max = 3;  // children per segment end
  int depth_min = 3, depth_max = 4;        // generations below the root segment
  double root_radius = 3.5;                // pixels
  double radius_decay = 0.75;              // radius multiplier per generation
  double segment_length = 0.30;            // root segment length as a fraction of min(H,W)
  double length_decay = 0.8;
  double tortuosity = 0.15;                // midpoint displacement relative to segment length
  double bolus_speed = 14.0;               // pixels of vessel path per frame; <= 0 means instantaneous
  double washout_frames = 3.0;             // how long a pixel stays opacified; 0 disables washout
  double contrast_depth = 0.4;             // intensity dip of a thick vessel
  double noise_sigma = 0.05;
  double background_variation = 0.05;

  void validate() const;
  bool operator==(const VesselTreeSpec&) const = default;
};

nlohmann::json to_json(const VesselTreeSpec& s);
VesselTreeSpec vessel_spec_from_json(const nlohmann::json& j);

struct DsaSequence {
  Tensor<float> frames;  // [T,H,W], vessels dark on bright background
  BinaryMask mask;       // union of vessel pixels over the sequence
  std::string id;
  std::uint64_t seed = 0;

  std::size_t length() const { return frames.dim(0); }
  std::size_t height() const { return frames.dim(1); }
  std::size_t width() const { return frames.dim(2); }
};

/// Noise-free geometry behind a generated sequence.
struct VesselField {
  std::size_t height = 0, width = 0;
  BinaryMask mask;
  std::vector<double> arrival;     // frames until contrast reaches the pixel (inf off-vessel)
  std::vector<double> dip;         // intensity drop while opacified
  std::vector<double> background;  // static bright background
};

VesselField generate_vessel_field(const VesselTreeSpec& spec, std::uint64_t seed, std::size_t T, std::size_t H,
                                  std::size_t W);

/// Whether frame t shows the pixel with the given arrival time. Frame t is
/// sampled at time t+1; a pixel is opacified during [arrival, arrival+washout).
bool opacified(const VesselTreeSpec& spec, double arrival, std::size_t t);

/// Deterministic in (spec, seed, T, H, W). T >= 2.
DsaSequence generate_sequence(const VesselTreeSpec& spec, std::uint64_t seed, std::size_t T, std::size_t H,
                              std::size_t W, std::string id = {});

/// (x - mean) / std over the whole sequence. Throws on zero variance.
Tensor<float> zscore(const Tensor<float>& seq);

struct CropWindow {
  std::size_t t0 = 0, y0 = 0, x0 = 0;
  std::size_t frames = 0, height = 0, width = 0;
};

/// Draws a spatial window; the temporal window starts at `temporal_origin`.
CropWindow draw_crop(const DsaSequence& seq, std::size_t frames, std::size_t height, std::size_t width, Rng& rng,
                     std::size_t temporal_origin = 0);
DsaSequence apply_crop(const DsaSequence& seq, const CropWindow& w);
BinaryMask crop_mask(const BinaryMask& m, const CropWindow& w);
DsaSequence random_crop(const DsaSequence& seq, std::size_t frames, std::size_t height, std::size_t width, Rng& rng,
                        std::size_t temporal_origin = 0);

/// Centered spatial crop to the largest multiple of `multiple` in each dimension.
DsaSequence center_crop_to_multiple(const DsaSequence& seq, std::size_t multiple);

struct AugmentDraw {
  bool hflip = false, vflip = false, rot90 = false;
};

/// Three independent fair coins, drawn in the order h-flip, v-flip, rot90.
AugmentDraw draw_augment(Rng& rng, bool allow_rotation = true);
Tensor<float> apply_augment(const Tensor<float>& frames, const AugmentDraw& d);
BinaryMask apply_augment(const BinaryMask& mask, const AugmentDraw& d);

struct Augmented {
  Tensor<float> frames;
  BinaryMask mask;
};
Augmented augment(const Tensor<float>& frames, const BinaryMask& mask, Rng& rng, bool allow_rotation = true);

/// DSEQ container: one JSON header line, raw little-endian float32 frames
/// [T,H,W], then one byte per mask pixel.
void write_dseq(const DsaSequence& seq, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_dseq(const DsaSequence& seq);
DsaSequence read_dseq(const std::filesystem::path& path);
DsaSequence decode_dseq(const std::vector<std::uint8_t>& bytes);

struct SplitManifest {
  std::vector<std::string> train, val, test;
};

struct DatasetEntry {
  std::string id;
  std::string file;
  std::string split;
};

struct DatasetManifest {
  std::vector<DatasetEntry> entries;
  SplitManifest splits;
  nlohmann::json provenance;  // generator spec, seed, dims

  const std::vector<std::string>& split(const std::string& name) const;
};

/// Split sizes for `count` sequences, proportional to `ratio` (train gets the rounding remainder).
std::array<std::size_t, 3> split_sizes(std::size_t count, std::array<std::size_t, 3> ratio = {30, 10, 20});

struct DatasetSpec {
  VesselTreeSpec generator;
  std::uint64_t seed = 2024;
  std::size_t count = 60;
  std::size_t frames = 8, height = 128, width = 128;
  std::array<std::size_t, 3> split_ratio = {30, 10, 20};
};

/// Sequence i gets seed mix_seed(seed, i) and id "seq0000"-style names.
std::vector<DsaSequence> generate_dataset(const DatasetSpec& spec);
SplitManifest assign_splits(const std::vector<std::string>& ids, const DatasetSpec& spec);

/// Writes DSEQ files plus manifest.json; returns warnings (e.g. empty splits).
std::vector<std::string> write_dataset(const DatasetSpec& spec, const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);

/// In-memory dataset with every sequence loaded.
struct Dataset {
  std::filesystem::path dir;
  DatasetManifest manifest;
  std::vector<DsaSequence> sequences;

  static Dataset load(const std::filesystem::path& dir);
  const DsaSequence& get(const std::string& id) const;
};

}  // namespace tsinet
