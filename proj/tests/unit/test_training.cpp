#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "tsinet/training.hpp"

namespace tsinet {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("tsinet_train_" + name);
  fs::remove_all(d);
  return d;
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

ParamStore<float> one_param(std::vector<float> value, std::vector<float> grad) {
  const std::size_t n = value.size();
  ParamStore<float> p;
  p.add("w", {n});
  p[0].value = Tensor<float>({n}, std::move(value));
  p[0].grad = Tensor<float>({n}, std::move(grad));
  return p;
}

TEST(AdamW, ZeroGradientOnlyDecays) {
  auto p = one_param({1.0f, -2.0f, 0.5f}, {0, 0, 0});
  auto st = OptimState::for_params(p);
  adamw_step(p, st, 0.1);
  EXPECT_FLOAT_EQ(p[0].value[0], 1.0f * (1 - 0.1 * 0.01));
  EXPECT_FLOAT_EQ(p[0].value[1], -2.0f * (1 - 0.1 * 0.01));
  EXPECT_EQ(st.step, 1);
}

TEST(AdamW, FirstStepMovesByLearningRateAgainstGradient) {
  AdamWConfig hp;
  hp.weight_decay = 0;
  auto p = one_param({0.f, 0.f, 0.f}, {3.0f, -0.02f, 1e-3f});
  auto st = OptimState::for_params(p, hp);
  adamw_step(p, st, 0.01);
  // Bias correction makes the first update lr * g / (|g| + eps).
  EXPECT_NEAR(p[0].value[0], -0.01, 1e-7);
  EXPECT_NEAR(p[0].value[1], 0.01, 1e-7);
  EXPECT_NEAR(p[0].value[2], -0.01 * 1e-3 / (1e-3 + 1e-8), 1e-7);
}

TEST(AdamW, MatchesReferenceOverSeveralSteps) {
  AdamWConfig hp{0.8, 0.95, 1e-6, 0.1};
  auto p = one_param({0.7f}, {0});
  auto st = OptimState::for_params(p, hp);
  double w = 0.7, m = 0, v = 0;
  const double grads[] = {0.3, -1.2, 0.05, 0.9};
  for (int t = 1; t <= 4; ++t) {
    const double g = grads[t - 1], lr = 0.05 * t;
    p[0].grad[0] = float(g);
    adamw_step(p, st, lr);
    w *= 1 - lr * hp.weight_decay;
    m = hp.beta1 * m + (1 - hp.beta1) * g;
    v = hp.beta2 * v + (1 - hp.beta2) * g * g;
    const double mh = m / (1 - std::pow(hp.beta1, t)), vh = v / (1 - std::pow(hp.beta2, t));
    w -= lr * mh / (std::sqrt(vh) + hp.eps);
    EXPECT_NEAR(p[0].value[0], w, 1e-6) << t;
  }
}

TEST(AdamW, NonFiniteGradientNamesTheParameter) {
  auto p = one_param({1.f}, {std::nanf("")});
  auto st = OptimState::for_params(p);
  try {
    adamw_step(p, st, 0.1);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos) << e.what();
  }
  EXPECT_EQ(p[0].value[0], 1.f);
}

TEST(CosineSchedule, EndpointsAndMidpoint) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 5e-4, 1e-6), 5e-4);
  EXPECT_DOUBLE_EQ(cosine_lr(100, 100, 5e-4, 1e-6), 1e-6);
  EXPECT_DOUBLE_EQ(cosine_lr(500, 100, 5e-4, 1e-6), 1e-6);
  EXPECT_NEAR(cosine_lr(50, 100, 5e-4, 1e-6), (5e-4 + 1e-6) / 2, 1e-15);
  double prev = 1;
  for (int s = 0; s <= 100; ++s) {
    const double lr = cosine_lr(s, 100, 5e-4, 1e-6);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
  EXPECT_THROW(cosine_lr(-1, 100, 1, 0), std::invalid_argument);
}

TEST(TrainConfig, StepsAndValidation) {
  TrainConfig c;
  EXPECT_EQ(c.steps_per_epoch(), 16);
  EXPECT_EQ(c.total_steps(), 1600);
  c.crops_per_epoch = 10;
  c.batch_size = 4;
  EXPECT_EQ(c.steps_per_epoch(), 3);
  EXPECT_EQ(train_config_from_json(to_json(c)), c);
  EXPECT_THROW(train_config_from_json({{"lr", 1}}), ConfigError);
  c.lr_min = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(loss_config_from_json(to_json(LossConfig{})), LossConfig{});
}

DatasetSpec tiny_spec() {
  DatasetSpec d;
  d.count = 4;
  d.frames = 4;
  d.height = d.width = 32;
  d.seed = 12;
  return d;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.base_channels = 2;
  m.levels = 2;
  return m;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.epochs = 2;
  t.crops_per_epoch = 4;
  t.batch_size = 2;
  t.crop_frames = 4;
  t.crop_height = t.crop_width = 16;
  t.seed = 3;
  t.lr_max = 5e-3;
  return t;
}

TEST(Samples, DrawIsDeterministicAndConsistent) {
  const auto seqs = generate_dataset(tiny_spec());
  std::vector<PreparedSequence> pool;
  for (const auto& s : seqs) pool.push_back(prepare(s));
  const auto cfg = tiny_train();
  Rng a(1), b(1);
  for (int i = 0; i < 10; ++i) {
    const auto x = draw_sample(pool, cfg, a), y = draw_sample(pool, cfg, b);
    EXPECT_EQ(x.frames, y.frames);
    EXPECT_EQ(x.frames.shape(), (Shape{4, 16, 16}));
    EXPECT_EQ(x.target.shape(), (Shape{1, 16, 16}));
    for (std::size_t j = 0; j < 256; ++j) EXPECT_LE(x.skeleton[j], x.target[j]);
  }
}

TEST(Evaluate, UntrainedModelMarksEverythingVessel) {
  const auto seqs = generate_dataset(tiny_spec());
  TsiNet<float> net(tiny_model());
  net.initialize(1);
  const auto agg = evaluate(net, seqs).aggregate();
  EXPECT_EQ(agg.scores.sen, 1.0);
  EXPECT_EQ(agg.scores.spe, 0.0);
}

TEST(Evaluate, CropsToValidSizeAndWarns) {
  auto spec = tiny_spec();
  spec.height = 30;
  spec.count = 1;
  const auto seqs = generate_dataset(spec);
  TsiNet<float> net(tiny_model());
  net.initialize(1);
  int warned = 0;
  EvalOptions opt;
  opt.warn = [&](const std::string&) { ++warned; };
  const auto rep = evaluate(net, seqs, opt);
  EXPECT_EQ(rep.samples.size(), 1u);
  EXPECT_EQ(rep.samples[0].counts.total(), 28u * 32u);
  EXPECT_EQ(warned, 1);
}

TEST(Training, ZeroLearningRateKeepsInitialParameters) {
  const auto seqs = generate_dataset(tiny_spec());
  auto cfg = tiny_train();
  cfg.lr_max = cfg.lr_min = 0;
  cfg.epochs = 1;
  const auto dir = temp_dir("lr0");
  train(tiny_model(), LossConfig{}, cfg, seqs, {}, dir);
  TsiNet<float> ref(tiny_model());
  ref.initialize(init_seed(cfg.seed));
  const auto ckpt = load_checkpoint(dir / "last.ckpt");
  for (const auto& p : ref.params()) EXPECT_EQ(ckpt.find(p.name)->value, p.value) << p.name;
}

TEST(Training, LossDecreasesAndRunsAreDeterministic) {
  const auto seqs = generate_dataset(tiny_spec());
  std::vector<DsaSequence> tr(seqs.begin(), seqs.begin() + 3), va(seqs.begin() + 3, seqs.end());
  auto cfg = tiny_train();
  cfg.epochs = 6;
  const auto a = train(tiny_model(), LossConfig{}, cfg, tr, va, temp_dir("det_a"));
  const auto b = train(tiny_model(), LossConfig{}, cfg, tr, va, temp_dir("det_b"));
  EXPECT_EQ(a.step_losses, b.step_losses);
  EXPECT_EQ(slurp(a.last_checkpoint), slurp(b.last_checkpoint));
  EXPECT_EQ(a.steps_done, 12);
  EXPECT_LT(a.step_losses.back(), a.step_losses.front());
  EXPECT_GE(a.best_epoch, 1);
  EXPECT_TRUE(fs::exists(a.best_checkpoint));

  cfg.seed = 4;
  const auto c = train(tiny_model(), LossConfig{}, cfg, tr, va, temp_dir("det_c"));
  EXPECT_NE(c.step_losses, a.step_losses);
}

TEST(Training, ResumeMatchesUninterruptedRun) {
  const auto seqs = generate_dataset(tiny_spec());
  std::vector<DsaSequence> tr(seqs.begin(), seqs.begin() + 3), va(seqs.begin() + 3, seqs.end());
  auto cfg = tiny_train();
  cfg.epochs = 3;
  const auto full = train(tiny_model(), LossConfig{}, cfg, tr, va, temp_dir("full"));

  const auto dir = temp_dir("split");
  auto part = cfg;
  part.stop_after_epochs = 1;
  const auto first = train(tiny_model(), LossConfig{}, part, tr, va, dir);
  EXPECT_EQ(first.epochs_done, 1);
  TrainOptions opt;
  opt.resume = dir / "last.ckpt";
  const auto rest = train(tiny_model(), LossConfig{}, cfg, tr, va, dir, opt);
  EXPECT_EQ(rest.epochs_done, 3);

  std::vector<double> joined = first.step_losses;
  joined.insert(joined.end(), rest.step_losses.begin(), rest.step_losses.end());
  EXPECT_EQ(joined, full.step_losses);
  EXPECT_EQ(slurp(dir / "last.ckpt"), slurp(full.last_checkpoint));
  EXPECT_EQ(rest.best_dice, full.best_dice);

  // The log holds one start record and every step once.
  std::ifstream log(dir / "train_log.jsonl");
  std::string line;
  int starts = 0, steps = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    starts += j["kind"] == "start";
    steps += j["kind"] == "step";
  }
  EXPECT_EQ(starts, 1);
  EXPECT_EQ(steps, 6);

  auto other = cfg;
  other.lr_max = 1e-3;
  EXPECT_THROW(train(tiny_model(), LossConfig{}, other, tr, va, dir, opt), ConfigError);
}

TEST(Training, RejectsIncompatibleCrop) {
  const auto seqs = generate_dataset(tiny_spec());
  auto cfg = tiny_train();
  cfg.crop_height = 18;
  EXPECT_THROW(train(tiny_model(), LossConfig{}, cfg, seqs, {}, temp_dir("bad")), ConfigError);
}

TEST(Training, TrainingCheckpointCarriesMoments) {
  TsiNet<float> net(tiny_model());
  net.initialize(1);
  auto st = OptimState::for_params(net.params());
  const auto ck = training_checkpoint(net, st, {{"step", 0}});
  EXPECT_EQ(ck.tensors.size(), 3 * net.params().size());
  EXPECT_NE(ck.find("adam.m." + net.params()[0].name), nullptr);
  EXPECT_NE(ck.find("adam.v." + net.params()[0].name), nullptr);
}

}  // namespace
}  // namespace tsinet
