#include "tsinet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "tsinet/errors.hpp"
#include "tsinet/ops.hpp"

namespace tsinet {

OptimState OptimState::for_params(const ParamStore<float>& params, AdamWConfig hp) {
  OptimState s;
  s.hp = hp;
  for (const auto& p : params) {
    s.m.emplace_back(p.value.shape());
    s.v.emplace_back(p.value.shape());
  }
  return s;
}

void adamw_step(ParamStore<float>& params, OptimState& state, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adamw_step: optimizer state does not match the parameter store");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = params[i].grad;
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (!std::isfinite(g[k])) {
        throw NumericError("non-finite gradient in parameter '" + params[i].name + "' at index " + std::to_string(k));
      }
    }
  }
  const auto& hp = state.hp;
  state.step += 1;
  const double t = double(state.step);
  const double bc1 = 1.0 - std::pow(hp.beta1, t);
  const double bc2 = 1.0 - std::pow(hp.beta2, t);
  const double decay = 1.0 - lr * hp.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    float* w = p.value.raw();
    const float* g = p.grad.raw();
    float* m = state.m[i].raw();
    float* v = state.v[i].raw();
    if (p.value.shape() != state.m[i].shape()) throw ShapeError("adamw_step: moment shape mismatch for " + p.name);
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double gk = g[k];
      const double mk = hp.beta1 * double(m[k]) + (1.0 - hp.beta1) * gk;
      const double vk = hp.beta2 * double(v[k]) + (1.0 - hp.beta2) * gk * gk;
      m[k] = float(mk);
      v[k] = float(vk);
      double wk = double(w[k]) * decay;
      wk -= lr * (mk / bc1) / (std::sqrt(vk / bc2) + hp.eps);
      w[k] = float(wk);
    }
  }
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_max, double lr_min) {
  if (step < 0) throw std::invalid_argument("cosine_lr: negative step");
  if (total_steps <= 0 || step >= total_steps) return step >= total_steps ? lr_min : lr_max;
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * double(step) / double(total_steps)));
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (crops_per_epoch < 1) throw ConfigError("train.crops_per_epoch must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (lr_max < 0 || lr_min < 0) throw ConfigError("learning rates must be >= 0");
  if (lr_min > lr_max) throw ConfigError("train.lr_min exceeds train.lr_max");
  if (!(adamw.beta1 >= 0 && adamw.beta1 < 1) || !(adamw.beta2 >= 0 && adamw.beta2 < 1)) {
    throw ConfigError("AdamW betas must be in [0,1)");
  }
  if (!(adamw.eps > 0)) throw ConfigError("train.adam_eps must be > 0");
  if (adamw.weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
  if (crop_frames < 1 || crop_height < 1 || crop_width < 1) throw ConfigError("train crop size must be positive");
  if (val_every < 1) throw ConfigError("train.val_every must be >= 1");
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("train.threshold must be in (0,1)");
  if (stop_after_epochs < 0) throw ConfigError("train.stop_after_epochs must be >= 0");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"crops_per_epoch", c.crops_per_epoch},
          {"batch_size", c.batch_size},
          {"lr_max", c.lr_max},
          {"lr_min", c.lr_min},
          {"beta1", c.adamw.beta1},
          {"beta2", c.adamw.beta2},
          {"adam_eps", c.adamw.eps},
          {"weight_decay", c.adamw.weight_decay},
          {"crop_frames", c.crop_frames},
          {"crop_height", c.crop_height},
          {"crop_width", c.crop_width},
          {"temporal_origin", c.temporal_origin},
          {"augment", c.augment},
          {"val_every", c.val_every},
          {"threshold", c.threshold}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be an object");
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "crops_per_epoch") c.crops_per_epoch = v.get<int>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "lr_max") c.lr_max = v.get<double>();
      else if (key == "lr_min") c.lr_min = v.get<double>();
      else if (key == "beta1") c.adamw.beta1 = v.get<double>();
      else if (key == "beta2") c.adamw.beta2 = v.get<double>();
      else if (key == "adam_eps") c.adamw.eps = v.get<double>();
      else if (key == "weight_decay") c.adamw.weight_decay = v.get<double>();
      else if (key == "crop_frames") c.crop_frames = v.get<std::size_t>();
      else if (key == "crop_height") c.crop_height = v.get<std::size_t>();
      else if (key == "crop_width") c.crop_width = v.get<std::size_t>();
      else if (key == "temporal_origin") c.temporal_origin = v.get<std::size_t>();
      else if (key == "augment") c.augment = v.get<bool>();
      else if (key == "val_every") c.val_every = v.get<int>();
      else if (key == "threshold") c.threshold = v.get<double>();
      else if (key == "stop_after_epochs") c.stop_after_epochs = v.get<int>();
      else throw ConfigError("unknown train config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("train." + key + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const LossConfig& c) {
  return {{"lambda1", c.lambda1}, {"lambda2", c.lambda2}, {"clamp_eps", c.clamp_eps}, {"dice_eps", c.dice_eps}};
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("loss config must be an object");
  LossConfig c;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "lambda1") c.lambda1 = v.get<double>();
      else if (key == "lambda2") c.lambda2 = v.get<double>();
      else if (key == "clamp_eps") c.clamp_eps = v.get<double>();
      else if (key == "dice_eps") c.dice_eps = v.get<double>();
      else throw ConfigError("unknown loss config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("loss." + key + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

PreparedSequence prepare(const DsaSequence& seq) {
  return {seq.id, zscore(seq.frames), seq.mask, skeletonize(seq.mask)};
}

Sample draw_sample(const std::vector<PreparedSequence>& pool, const TrainConfig& cfg, Rng& rng) {
  if (pool.empty()) throw DataError("training split is empty");
  const PreparedSequence& seq = pool[rng.index(pool.size())];
  const std::size_t T = seq.frames.dim(0), H = seq.frames.dim(1), W = seq.frames.dim(2);
  if (T < cfg.temporal_origin + cfg.crop_frames || H < cfg.crop_height || W < cfg.crop_width) {
    throw DataError("sequence " + seq.id + " " + to_string(seq.frames.shape()) + " is smaller than the training crop");
  }
  CropWindow win;
  win.t0 = cfg.temporal_origin;
  win.frames = cfg.crop_frames;
  win.height = cfg.crop_height;
  win.width = cfg.crop_width;
  win.y0 = rng.index(H - cfg.crop_height + 1);
  win.x0 = rng.index(W - cfg.crop_width + 1);

  Tensor<float> frames({win.frames, win.height, win.width});
  for (std::size_t t = 0; t < win.frames; ++t)
    for (std::size_t y = 0; y < win.height; ++y)
      std::copy_n(seq.frames.raw() + ((win.t0 + t) * H + win.y0 + y) * W + win.x0, win.width,
                  frames.raw() + (t * win.height + y) * win.width);
  BinaryMask mask = crop_mask(seq.mask, win);
  BinaryMask skel = crop_mask(seq.skeleton, win);
  if (cfg.augment) {
    const AugmentDraw d = draw_augment(rng, win.height == win.width);
    frames = apply_augment(frames, d);
    mask = apply_augment(mask, d);
    skel = apply_augment(skel, d);
  }
  return {std::move(frames), mask_tensor<float>(mask), mask_tensor<float>(skel)};
}

LossBreakdown sample_loss(TsiNet<float>& net, const Sample& s, const LossConfig& loss, bool with_grad) {
  Tape<float> tape;
  const ModelOutput<float> out = net.forward(tape, s.frames, with_grad);
  const Var<float> p = sigmoid(out.logits_main);
  std::optional<Var<float>> sdb;
  if (net.config().sdb_enabled) sdb = out.logits_sdb ? sigmoid(*out.logits_sdb) : p;
  const TotalLoss<float> l = total_loss(p, sdb, s.target, &s.skeleton, loss);
  if (with_grad) tape.backward(l.total);
  return l.breakdown;
}

Tensor<float> predict_logits(TsiNet<float>& net, const Tensor<float>& frames) {
  Tape<float> tape;
  return net.forward(tape, frames, false).logits_main.value();
}

MetricsReport evaluate(TsiNet<float>& net, const std::vector<DsaSequence>& seqs, const EvalOptions& opt) {
  MetricsReport report;
  report.threshold = opt.threshold;
  report.connectivity = opt.connectivity;
  const std::size_t multiple = std::size_t(net.config().spatial_multiple());
  for (const auto& seq : seqs) {
    DsaSequence normalized{zscore(seq.frames), seq.mask, seq.id, seq.seed};
    if (seq.height() % multiple || seq.width() % multiple) {
      if (opt.warn) {
        opt.warn("sequence " + seq.id + " is " + std::to_string(seq.height()) + "x" + std::to_string(seq.width()) +
                 "; center-cropping to a multiple of " + std::to_string(multiple));
      }
      normalized = center_crop_to_multiple(normalized, multiple);
    }
    const Tensor<float> logits = predict_logits(net, normalized.frames);
    const BinaryMask pred = predict_mask(logits, opt.threshold);
    report.samples.push_back(evaluate_sample(seq.id, pred, normalized.mask, opt.connectivity));
  }
  return report;
}

MetricsReport evaluate(TsiNet<float>& net, const Dataset& data, const std::string& split, const EvalOptions& opt) {
  std::vector<DsaSequence> seqs;
  for (const auto& id : data.manifest.split(split)) seqs.push_back(data.get(id));
  return evaluate(net, seqs, opt);
}

std::uint64_t init_seed(std::uint64_t run_seed) { return mix_seed(run_seed, 0x1417); }

Checkpoint training_checkpoint(const TsiNet<float>& net, const OptimState& opt, const nlohmann::json& meta) {
  Checkpoint c = capture(net, meta);
  const auto& params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) c.tensors.push_back({"adam.m." + params[i].name, opt.m[i]});
  for (std::size_t i = 0; i < params.size(); ++i) c.tensors.push_back({"adam.v." + params[i].name, opt.v[i]});
  return c;
}

namespace {

nlohmann::json scores_json(const SampleMetrics& s) {
  return {{"dice", s.scores.dice},
          {"acc", s.scores.acc},
          {"sen", s.scores.sen},
          {"spe", s.scores.spe},
          {"iou", s.scores.iou},
          {"vc", s.vc ? nlohmann::json(*s.vc) : nlohmann::json(nullptr)}};
}

void restore_optimizer(const Checkpoint& ckpt, const TsiNet<float>& net, OptimState& opt) {
  const auto& params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedTensor* m = ckpt.find("adam.m." + params[i].name);
    const NamedTensor* v = ckpt.find("adam.v." + params[i].name);
    if (!m || !v) throw DataError("resume checkpoint lacks optimizer state for '" + params[i].name + "'");
    if (m->value.shape() != params[i].value.shape() || v->value.shape() != params[i].value.shape()) {
      throw DataError("resume checkpoint optimizer state for '" + params[i].name + "' has the wrong shape");
    }
    opt.m[i] = m->value;
    opt.v[i] = v->value;
  }
}

}  // namespace

TrainResult train(const ModelConfig& model, const LossConfig& loss, const TrainConfig& cfg,
                  const std::vector<DsaSequence>& train_set, const std::vector<DsaSequence>& val_set,
                  const std::filesystem::path& out_dir, const TrainOptions& opt) {
  model.validate();
  loss.validate();
  cfg.validate();
  if (train_set.empty()) throw DataError("training split is empty");
  if (model.arch == Architecture::drm && std::size_t(model.drm_frames) != cfg.crop_frames) {
    throw ConfigError("drm_frames (" + std::to_string(model.drm_frames) + ") must equal train.crop_frames (" +
                      std::to_string(cfg.crop_frames) + ")");
  }
  const std::size_t multiple = std::size_t(model.spatial_multiple());
  if (cfg.crop_height % multiple || cfg.crop_width % multiple) {
    throw ConfigError("training crop " + std::to_string(cfg.crop_height) + "x" + std::to_string(cfg.crop_width) +
                      " is not a multiple of " + std::to_string(multiple));
  }

  TsiNet<float> net(model);
  net.initialize(init_seed(cfg.seed));
  OptimState state = OptimState::for_params(net.params(), cfg.adamw);

  const nlohmann::json identity{{"seed", cfg.seed}, {"model", to_json(model)}, {"loss", to_json(loss)},
                                {"train", to_json(cfg)}};
  TrainResult result;
  int start_epoch = 0;
  if (opt.resume) {
    const Checkpoint ckpt = load_checkpoint(*opt.resume);
    const nlohmann::json& meta = ckpt.meta;
    if (ckpt.model != model || !meta.contains("run") || meta["run"] != identity) {
      throw ConfigError("resume checkpoint " + opt.resume->string() + " was produced by a different configuration");
    }
    load_parameters(net, ckpt);
    restore_optimizer(ckpt, net, state);
    state.step = meta.at("step").get<std::int64_t>();
    start_epoch = meta.at("epoch").get<int>();
    result.best_dice = meta.at("best_dice").get<double>();
    result.best_epoch = meta.at("best_epoch").get<int>();
  }

  std::ofstream log;
  if (opt.write_files) {
    std::filesystem::create_directories(out_dir);
    log.open(out_dir / "train_log.jsonl", opt.resume ? std::ios::app : std::ios::trunc);
    if (!log) throw DataError("cannot write training log in " + out_dir.string());
    result.last_checkpoint = out_dir / "last.ckpt";
    result.best_checkpoint = out_dir / "best.ckpt";
  }
  auto emit = [&](const nlohmann::json& rec) {
    if (log.is_open()) log << rec.dump() << "\n" << std::flush;
    if (opt.on_record) opt.on_record(rec);
  };
  if (!opt.resume) emit({{"kind", "start"}, {"run", identity}, {"params", net.params().element_count()}});

  std::vector<PreparedSequence> pool;
  for (const auto& s : train_set) pool.push_back(prepare(s));

  const int end_epoch = cfg.stop_after_epochs ? std::min(cfg.epochs, start_epoch + cfg.stop_after_epochs) : cfg.epochs;
  const std::int64_t total_steps = cfg.total_steps();
  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    Rng rng(mix_seed(cfg.seed, 0x7a11 + std::uint64_t(epoch)));
    for (int s = 0; s < cfg.steps_per_epoch(); ++s) {
      const int n = std::min(cfg.batch_size, cfg.crops_per_epoch - s * cfg.batch_size);
      net.params().zero_grad();
      LossBreakdown mean;
      for (int b = 0; b < n; ++b) {
        const Sample sample = draw_sample(pool, cfg, rng);
        const LossBreakdown l = sample_loss(net, sample, loss, true);
        if (!std::isfinite(l.total)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                             std::to_string(state.step + 1) + " (ce " + std::to_string(l.ce) + ", dice " +
                             std::to_string(l.dice) + ", sdb " + std::to_string(l.sdb) + ")");
        }
        mean.ce += l.ce / n;
        mean.dice += l.dice / n;
        mean.sdb += l.sdb / n;
        mean.total += l.total / n;
      }
      const float inv = 1.0f / float(n);
      for (auto& p : net.params())
        for (float& g : p.grad.storage()) g *= inv;
      const double lr = cosine_lr(state.step, total_steps, cfg.lr_max, cfg.lr_min);
      adamw_step(net.params(), state, lr);
      result.step_losses.push_back(mean.total);
      emit({{"kind", "step"},
            {"epoch", epoch + 1},
            {"step", state.step},
            {"lr", lr},
            {"ce", mean.ce},
            {"dice", mean.dice},
            {"sdb", mean.sdb},
            {"total", mean.total}});
    }

    const bool validate_now = !val_set.empty() && ((epoch + 1) % cfg.val_every == 0 || epoch + 1 == cfg.epochs);
    if (validate_now) {
      EvalOptions eo;
      eo.threshold = cfg.threshold;
      const SampleMetrics agg = evaluate(net, val_set, eo).aggregate();
      const bool improved = agg.scores.dice > result.best_dice;
      if (improved) {
        result.best_dice = agg.scores.dice;
        result.best_epoch = epoch + 1;
      }
      emit({{"kind", "epoch"},
            {"epoch", epoch + 1},
            {"step", state.step},
            {"seed", cfg.seed},
            {"val", scores_json(agg)},
            {"best_dice", result.best_dice},
            {"best_epoch", result.best_epoch}});
      if (improved && opt.write_files) {
        save_checkpoint(capture(net, {{"run", identity}, {"epoch", epoch + 1}, {"step", state.step},
                                      {"val_dice", agg.scores.dice}}),
                        result.best_checkpoint);
      }
    }
    if (opt.write_files) {
      save_checkpoint(training_checkpoint(net, state,
                                          {{"run", identity},
                                           {"epoch", epoch + 1},
                                           {"step", state.step},
                                           {"best_dice", result.best_dice},
                                           {"best_epoch", result.best_epoch}}),
                      result.last_checkpoint);
    }
    result.epochs_done = epoch + 1;
  }
  if (result.epochs_done == 0) result.epochs_done = start_epoch;
  result.steps_done = state.step;
  return result;
}

TrainResult train(const ModelConfig& model, const LossConfig& loss, const TrainConfig& cfg, const Dataset& data,
                  const std::filesystem::path& out_dir, const TrainOptions& opt) {
  std::vector<DsaSequence> tr, va;
  for (const auto& id : data.manifest.split("train")) tr.push_back(data.get(id));
  for (const auto& id : data.manifest.split("val")) va.push_back(data.get(id));
  return train(model, loss, cfg, tr, va, out_dir, opt);
}

}  // namespace tsinet
