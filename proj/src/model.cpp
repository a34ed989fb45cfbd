#include "tsinet/model.hpp"

#include <algorithm>
#include <cmath>

#include "tsinet/rng.hpp"

namespace tsinet {

std::string to_string(TemporalMode m) {
  switch (m) {
    case TemporalMode::none: return "none";
    case TemporalMode::ucm: return "ucm";
    case TemporalMode::bcm: return "bcm";
  }
  return "?";
}
std::string to_string(SdbHead h) { return h == SdbHead::aux ? "aux" : "shared"; }
std::string to_string(Architecture a) { return a == Architecture::tsinet ? "tsinet" : "drm"; }

TemporalMode parse_temporal_mode(const std::string& s) {
  if (s == "none") return TemporalMode::none;
  if (s == "ucm") return TemporalMode::ucm;
  if (s == "bcm") return TemporalMode::bcm;
  throw ConfigError("temporal mode must be none|ucm|bcm, got '" + s + "'");
}
SdbHead parse_sdb_head(const std::string& s) {
  if (s == "aux") return SdbHead::aux;
  if (s == "shared") return SdbHead::shared;
  throw ConfigError("sdb_head must be aux|shared, got '" + s + "'");
}
Architecture parse_architecture(const std::string& s) {
  if (s == "tsinet") return Architecture::tsinet;
  if (s == "drm") return Architecture::drm;
  throw ConfigError("arch must be tsinet|drm, got '" + s + "'");
}

void ModelConfig::validate() const {
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (levels < 1 || levels > 8) throw ConfigError("levels must be in [1,8]");
  if (arch == Architecture::drm) {
    if (temporal != TemporalMode::none) throw ConfigError("drm baseline has no temporal module; set temporal=none");
    if (sdb_enabled) throw ConfigError("drm baseline has no SDB head; set sdb=false");
    if (drm_frames < 1) throw ConfigError("drm_frames must be >= 1");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"arch", to_string(c.arch)},         {"base_channels", c.base_channels}, {"levels", c.levels},
          {"temporal", to_string(c.temporal)}, {"sdb", c.sdb_enabled},             {"sdb_head", to_string(c.sdb_head)},
          {"drm_frames", c.drm_frames}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  ModelConfig c;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "arch") c.arch = parse_architecture(v.get<std::string>());
      else if (key == "base_channels") c.base_channels = v.get<int>();
      else if (key == "levels") c.levels = v.get<int>();
      else if (key == "temporal") c.temporal = parse_temporal_mode(v.get<std::string>());
      else if (key == "sdb") c.sdb_enabled = v.get<bool>();
      else if (key == "sdb_head") c.sdb_head = parse_sdb_head(v.get<std::string>());
      else if (key == "drm_frames") c.drm_frames = v.get<int>();
      else throw ConfigError("unknown model config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("model." + key + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

template <typename T>
Var<T> double_conv(const Var<T>& x, const DoubleConvWeights<T>& w) {
  return relu(w.second(relu(w.first(x))));
}

template <typename T>
EncoderLevelOutput<T> encoder_level(const Var<T>& frames, const EncoderLevelWeights<T>& w, bool pool) {
  const Shape& s = frames.shape();
  if (s.size() != 4) throw ShapeError("encoder_level: frames must be [T,C,H,W], got " + to_string(s));
  if (pool && (s[2] % 2 || s[3] % 2)) {
    throw ShapeError("encoder_level: odd spatial dims " + to_string(s) + " cannot be pooled");
  }
  EncoderLevelOutput<T> out;
  out.features = double_conv(frames, w.conv);
  const std::size_t steps = s[0];
  switch (w.mode) {
    case TemporalMode::none:
      out.sequence = out.features;
      out.skip = steps == 1 ? out.features : slice(out.features, 0, steps - 1, steps);
      break;
    case TemporalMode::ucm: {
      auto r = ucm_forward(out.features, w.temporal.forward);
      out.sequence = r.outputs;
      out.skip = r.final;
      break;
    }
    case TemporalMode::bcm: {
      auto r = bcm_forward(out.features, w.temporal);
      out.sequence = r.outputs;
      out.skip = r.final;
      break;
    }
  }
  if (pool) out.pooled = maxpool2d(out.sequence).output;
  return out;
}

template <typename T>
typename TsiNet<T>::ConvIdx TsiNet<T>::add_conv(const std::string& name, std::size_t cout, std::size_t cin,
                                                std::size_t k) {
  ConvIdx idx;
  idx.weight = params_.add(name + ".weight", {cout, cin, k, k});
  idx.bias = params_.add(name + ".bias", {cout});
  return idx;
}

template <typename T>
typename TsiNet<T>::ConvIdx TsiNet<T>::add_transpose(const std::string& name, std::size_t cin, std::size_t cout,
                                                     std::size_t k) {
  ConvIdx idx;
  idx.weight = params_.add(name + ".weight", {cin, cout, k, k});
  idx.bias = params_.add(name + ".bias", {cout});
  transpose_params_.push_back(idx.weight);
  return idx;
}

template <typename T>
typename TsiNet<T>::DoubleConvIdx TsiNet<T>::add_double(const std::string& name, std::size_t cin,
                                                        std::size_t cout) {
  DoubleConvIdx d;
  d.first = add_conv(name + ".conv1", cout, cin, 3);
  d.second = add_conv(name + ".conv2", cout, cout, 3);
  return d;
}

template <typename T>
typename TsiNet<T>::GruIdx TsiNet<T>::add_gru(const std::string& name, std::size_t c) {
  GruIdx g;
  g.update_x = add_conv(name + ".update_x", c, c, 3);
  g.update_h = add_conv(name + ".update_h", c, c, 3);
  g.reset_x = add_conv(name + ".reset_x", c, c, 3);
  g.reset_h = add_conv(name + ".reset_h", c, c, 3);
  g.cand_x = add_conv(name + ".cand_x", c, c, 3);
  g.cand_h = add_conv(name + ".cand_h", c, c, 3);
  return g;
}

template <typename T>
TsiNet<T>::TsiNet(ModelConfig config) : config_(config) {
  config_.validate();
  const int L = config_.levels;
  const bool drm = config_.arch == Architecture::drm;
  std::size_t cin = drm ? std::size_t(config_.drm_frames) : 1;
  for (int level = 0; level <= L; ++level) {
    const std::string prefix = level == L ? std::string("bottleneck") : "enc" + std::to_string(level);
    const auto c = std::size_t(config_.channels(level));
    EncoderIdx e;
    e.conv = add_double(prefix, cin, c);
    if (config_.temporal == TemporalMode::ucm) {
      e.fwd = add_gru(prefix + ".ucm", c);
    } else if (config_.temporal == TemporalMode::bcm) {
      e.fwd = add_gru(prefix + ".bcm.fwd", c);
      e.bwd = add_gru(prefix + ".bcm.bwd", c);
      e.fuse_f = add_conv(prefix + ".bcm.fuse_f", c, c, 3);
      e.fuse_b = add_conv(prefix + ".bcm.fuse_b", c, c, 3);
    }
    encoders_.push_back(e);
    cin = c;
  }
  decoders_.resize(std::size_t(L));
  for (int level = L - 1; level >= 0; --level) {
    const auto c = std::size_t(config_.channels(level));
    const std::string prefix = "dec" + std::to_string(level);
    DecoderIdx d;
    d.up = add_transpose(prefix + ".up", std::size_t(config_.channels(level + 1)), c, 2);
    d.conv = add_double(prefix, 2 * c, c);
    decoders_[std::size_t(level)] = d;
  }
  const auto c0 = std::size_t(config_.channels(0));
  head_main_ = add_conv("head.main", 1, c0, 1);
  head_params_ = {head_main_.weight, head_main_.bias};
  if (config_.sdb_enabled && config_.sdb_head == SdbHead::aux) {
    head_sdb_ = add_conv("head.sdb", 1, c0, 1);
    head_params_.push_back(head_sdb_->weight);
    head_params_.push_back(head_sdb_->bias);
  }
}

template <typename T>
void TsiNet<T>::initialize(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1417));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter<T>& p = params_[i];
    p.grad.fill(T{0});
    const bool is_head = std::find(head_params_.begin(), head_params_.end(), i) != head_params_.end();
    if (p.value.rank() != 4 || is_head) {
      p.value.fill(T{0});
      continue;
    }
    const bool transposed = std::find(transpose_params_.begin(), transpose_params_.end(), i) != transpose_params_.end();
    const Shape& s = p.value.shape();
    // transposed k=s=2 kernels: every output pixel sees exactly Cin inputs
    const double fan_in = transposed ? double(s[0]) : double(s[1] * s[2] * s[3]);
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& v : p.value.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  }
}

template <typename T>
EncoderLevelWeights<T> TsiNet<T>::encoder_weights(const std::vector<Var<T>>& bound, int level) const {
  const EncoderIdx& e = encoders_.at(std::size_t(level));
  auto layer = [&bound](const ConvIdx& c) { return ConvLayer<T>{bound[c.weight], bound[c.bias]}; };
  auto gru = [&layer](const GruIdx& g) {
    return ConvGRUWeights<T>{layer(g.update_x), layer(g.update_h), layer(g.reset_x),
                             layer(g.reset_h),  layer(g.cand_x),   layer(g.cand_h)};
  };
  EncoderLevelWeights<T> w;
  w.conv = {layer(e.conv.first), layer(e.conv.second)};
  w.mode = config_.arch == Architecture::drm ? TemporalMode::none : config_.temporal;
  if (e.fwd) w.temporal.forward = gru(*e.fwd);
  if (e.bwd) w.temporal.backward = gru(*e.bwd);
  if (e.fuse_f) w.temporal.fuse_f = layer(*e.fuse_f);
  if (e.fuse_b) w.temporal.fuse_b = layer(*e.fuse_b);
  return w;
}

template <typename T>
ModelOutput<T> TsiNet<T>::forward(Tape<T>& tape, const Tensor<T>& frames, bool with_grad) {
  return forward(tape, tape.constant(frames), with_grad);
}

template <typename T>
ModelOutput<T> TsiNet<T>::forward(Tape<T>& tape, const Var<T>& frames, bool with_grad) {
  const Shape& s = frames.shape();
  if (s.size() != 3 || s[0] == 0) throw ShapeError("forward: frames must be [T,H,W] with T >= 1, got " + to_string(s));
  const std::size_t steps = s[0], H = s[1], W = s[2];
  const auto multiple = std::size_t(config_.spatial_multiple());
  if (H % multiple || W % multiple || H == 0 || W == 0) {
    throw ShapeError("forward: spatial dims " + std::to_string(H) + "x" + std::to_string(W) +
                     " must be positive multiples of " + std::to_string(multiple));
  }
  Var<T> x;
  if (config_.arch == Architecture::drm) {
    if (steps != std::size_t(config_.drm_frames)) {
      throw ShapeError("drm model expects " + std::to_string(config_.drm_frames) + " frames, got " +
                       std::to_string(steps));
    }
    x = reshape(frames, {1, steps, H, W});
  } else {
    x = reshape(frames, {steps, 1, H, W});
  }

  const std::vector<Var<T>> bound = params_.bind(tape, with_grad);
  const int L = config_.levels;
  std::vector<Var<T>> skips;
  for (int level = 0; level < L; ++level) {
    auto out = encoder_level(x, encoder_weights(bound, level), true);
    skips.push_back(out.skip);
    x = *out.pooled;
  }
  Var<T> cur = encoder_level(x, encoder_weights(bound, L), false).skip;
  for (int level = L - 1; level >= 0; --level) {
    const DecoderIdx& d = decoders_[std::size_t(level)];
    const Var<T> up = conv_transpose2d(cur, bound[d.up.weight], std::optional<Var<T>>(bound[d.up.bias]), 2);
    const Var<T> cat = concat_channels(up, skips[std::size_t(level)]);
    cur = double_conv(cat, DoubleConvWeights<T>{{bound[d.conv.first.weight], bound[d.conv.first.bias]},
                                                {bound[d.conv.second.weight], bound[d.conv.second.bias]}});
  }
  ModelOutput<T> out;
  out.logits_main =
      reshape(conv2d(cur, bound[head_main_.weight], std::optional<Var<T>>(bound[head_main_.bias]), 1, 0), {1, H, W});
  if (head_sdb_) {
    out.logits_sdb = reshape(
        conv2d(cur, bound[head_sdb_->weight], std::optional<Var<T>>(bound[head_sdb_->bias]), 1, 0), {1, H, W});
  }
  return out;
}

template <typename T>
Var<T> drm_forward(Tape<T>& tape, const Tensor<T>& seq, TsiNet<T>& unet, bool with_grad) {
  if (seq.rank() != 4) throw ShapeError("drm_forward: expected [C,F,H,W], got " + to_string(seq.shape()));
  if (seq.dim(0) != 1) {
    throw ShapeError("drm_forward: channel axis must be 1 to squeeze, got " + to_string(seq.shape()));
  }
  if (unet.config().arch != Architecture::drm) throw ShapeError("drm_forward: model is not a drm baseline");
  // [1,F,H,W] -> [F,H,W]; the frames then act as input channels.
  Tensor<T> squeezed = seq.reshaped({seq.dim(1), seq.dim(2), seq.dim(3)});
  return unet.forward(tape, squeezed, with_grad).logits_main;
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

BinaryMask predict_mask(const Tensor<float>& logits, double threshold) {
  const Shape& s = logits.shape();
  std::size_t H, W;
  if (s.size() == 3 && s[0] == 1) {
    H = s[1];
    W = s[2];
  } else if (s.size() == 2) {
    H = s[0];
    W = s[1];
  } else {
    throw ShapeError("predict_mask: logits must be [1,H,W] or [H,W], got " + to_string(s));
  }
  BinaryMask m(H, W);
  for (std::size_t i = 0; i < H * W; ++i) m.set(i / W, i % W, sigmoid_scalar(double(logits[i])) >= threshold);
  return m;
}

template Var<float> double_conv(const Var<float>&, const DoubleConvWeights<float>&);
template Var<double> double_conv(const Var<double>&, const DoubleConvWeights<double>&);
template EncoderLevelOutput<float> encoder_level(const Var<float>&, const EncoderLevelWeights<float>&, bool);
template EncoderLevelOutput<double> encoder_level(const Var<double>&, const EncoderLevelWeights<double>&, bool);
template class TsiNet<float>;
template class TsiNet<double>;
template Var<float> drm_forward(Tape<float>&, const Tensor<float>&, TsiNet<float>&, bool);
template Var<double> drm_forward(Tape<double>&, const Tensor<double>&, TsiNet<double>&, bool);

}  // namespace tsinet
