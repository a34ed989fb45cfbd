#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsinet/morphology.hpp"
#include "tsinet/params.hpp"
#include "tsinet/recurrent.hpp"

namespace tsinet {

enum class TemporalMode { none, ucm, bcm };
enum class SdbHead { aux, shared };
/// `tsinet` feeds frames through the recurrent encoder; `drm` squeezes frames
/// into input channels of a plain 2D U-Net.
enum class Architecture { tsinet, drm };

std::string to_string(TemporalMode m);
std::string to_string(SdbHead h);
std::string to_string(Architecture a);
TemporalMode parse_temporal_mode(const std::string& s);
SdbHead parse_sdb_head(const std::string& s);
Architecture parse_architecture(const std::string& s);

struct ModelConfig {
  Architecture arch = Architecture::tsinet;
  int base_channels = 8;
  int levels = 4;
  TemporalMode temporal = TemporalMode::bcm;
  bool sdb_enabled = true;
  SdbHead sdb_head = SdbHead::aux;
  /// Input channel count of the drm baseline (frames per sequence).
  int drm_frames = 8;

  /// Channels at encoder level i (level == levels is the bottleneck).
  int channels(int level) const { return base_channels << level; }
  /// Spatial dims must be a multiple of this.
  int spatial_multiple() const { return 1 << levels; }
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Strict conversion: unknown keys are rejected.
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

template <typename T>
struct DoubleConvWeights {
  ConvLayer<T> first, second;
};

template <typename T>
struct EncoderLevelWeights {
  DoubleConvWeights<T> conv;
  TemporalMode mode = TemporalMode::none;
  /// ucm uses `temporal.forward` only.
  BCMWeights<T> temporal;
};

template <typename T>
struct EncoderLevelOutput {
  Var<T> features;  // double_conv output per frame [T,C,H,W]
  Var<T> sequence;  // temporal module outputs [T,C,H,W]
  Var<T> skip;      // final temporal state [1,C,H,W]
  std::optional<Var<T>> pooled;  // [T,C,H/2,W/2]
};

/// (conv3x3 -> relu) twice, spatial dims preserved.
template <typename T>
Var<T> double_conv(const Var<T>& x, const DoubleConvWeights<T>& w);

/// Shared double_conv per frame, then the temporal module, then per-frame
/// 2x2 max pooling of the temporal outputs when `pool` is set.
template <typename T>
EncoderLevelOutput<T> encoder_level(const Var<T>& frames, const EncoderLevelWeights<T>& w, bool pool = true);

template <typename T>
struct ModelOutput {
  Var<T> logits_main;                  // [1,H,W]
  std::optional<Var<T>> logits_sdb;    // [1,H,W], aux head only
};

/// U-shaped network with per-level temporal modules and optional SDB head.
/// Parameters are named hierarchically, e.g. "enc0.bcm.fwd.update_x.weight".
template <typename T>
class TsiNet {
 public:
  explicit TsiNet(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  ParamStore<T>& params() noexcept { return params_; }
  const ParamStore<T>& params() const noexcept { return params_; }

  /// Kaiming-uniform (fan-in) kernels, zero biases, zero-initialized heads.
  void initialize(std::uint64_t seed);

  /// frames: [T,H,W] single-channel, already normalized. For drm the frame
  /// count must equal config().drm_frames.
  ModelOutput<T> forward(Tape<T>& tape, const Tensor<T>& frames, bool with_grad);
  /// Same, with the frames already on the tape (lets gradients reach the input).
  ModelOutput<T> forward(Tape<T>& tape, const Var<T>& frames, bool with_grad);

  /// Level weights bound to `bound` (from params().bind). level == levels is the bottleneck.
  EncoderLevelWeights<T> encoder_weights(const std::vector<Var<T>>& bound, int level) const;

 private:
  struct ConvIdx {
    std::size_t weight, bias;
  };
  struct DoubleConvIdx {
    ConvIdx first, second;
  };
  struct GruIdx {
    ConvIdx update_x, update_h, reset_x, reset_h, cand_x, cand_h;
  };
  struct EncoderIdx {
    DoubleConvIdx conv;
    std::optional<GruIdx> fwd, bwd;
    std::optional<ConvIdx> fuse_f, fuse_b;
  };
  struct DecoderIdx {
    ConvIdx up;
    DoubleConvIdx conv;
  };

  ConvIdx add_conv(const std::string& name, std::size_t cout, std::size_t cin, std::size_t k);
  ConvIdx add_transpose(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k);
  DoubleConvIdx add_double(const std::string& name, std::size_t cin, std::size_t cout);
  GruIdx add_gru(const std::string& name, std::size_t c);

  ModelConfig config_;
  ParamStore<T> params_;
  std::vector<EncoderIdx> encoders_;  // levels + 1 entries, last is the bottleneck
  std::vector<DecoderIdx> decoders_;  // decoders_[i] produces level i resolution
  ConvIdx head_main_{};
  std::optional<ConvIdx> head_sdb_;
  std::vector<std::size_t> transpose_params_;
  std::vector<std::size_t> head_params_;
};

/// Plain U-Net on the frame stack squeezed into channels. seq: [1,F,H,W].
template <typename T>
Var<T> drm_forward(Tape<T>& tape, const Tensor<T>& seq, TsiNet<T>& unet, bool with_grad = false);

/// sigmoid(logit) >= threshold marks vessel; exact ties count as vessel.
BinaryMask predict_mask(const Tensor<float>& logits, double threshold = 0.5);

double sigmoid_scalar(double x);

}  // namespace tsinet
