#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "tsinet/checkpoint.hpp"
#include "tsinet/config.hpp"
#include "tsinet/image_io.hpp"

namespace tsinet {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("tsinet_io_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

TEST(Pgm, GoldenBytesAndRoundTrip) {
  GrayImage img{2, 3, {0, 1, 2, 253, 254, 255}};
  const auto bytes = encode_pgm(img);
  const std::string head = "P5\n3 2\n255\n";
  ASSERT_EQ(bytes.size(), head.size() + 6);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + head.size()), head);
  const auto back = decode_pgm(bytes);
  EXPECT_EQ(back.height, 2u);
  EXPECT_EQ(back.width, 3u);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(Pgm, HeaderCommentsAndErrors) {
  std::string s = "P5\n# made by hand\n2 1\n255\n";
  std::vector<std::uint8_t> bytes(s.begin(), s.end());
  bytes.push_back(7);
  bytes.push_back(9);
  EXPECT_EQ(decode_pgm(bytes).pixels, (std::vector<std::uint8_t>{7, 9}));
  bytes.pop_back();
  EXPECT_THROW(decode_pgm(bytes), DataError);
  bytes[1] = '2';
  EXPECT_THROW(decode_pgm(bytes), DataError);
}

TEST(Ppm, RoundTripThroughFile) {
  RgbImage img{2, 2, {255, 0, 0, 0, 255, 0, 0, 0, 255, 9, 9, 9}};
  const auto dir = temp_dir("ppm");
  write_ppm(img, dir / "a.ppm");
  const auto back = read_ppm(dir / "a.ppm");
  EXPECT_EQ(back.pixels, img.pixels);
  EXPECT_EQ(back.width, 2u);
  EXPECT_THROW(read_pgm(temp_dir("pgm") / "x.pgm"), DataError);
}

TEST(MaskImage, VesselPixelsAreWhite) {
  BinaryMask m(1, 3, {1, 0, 1});
  EXPECT_EQ(mask_image(m).pixels, (std::vector<std::uint8_t>{255, 0, 255}));
}

TsiNet<float> small_net() {
  ModelConfig c;
  c.base_channels = 2;
  c.levels = 2;
  TsiNet<float> net(c);
  net.initialize(5);
  Rng rng(6);
  for (auto& p : net.params())
    for (auto& v : p.value.data()) v = float(rng.uniform(-1, 1));
  return net;
}

TEST(Checkpoint, ByteExactRoundTrip) {
  auto net = small_net();
  const auto ckpt = capture(net, {{"epoch", 3}});
  const auto bytes = encode_checkpoint(ckpt);
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(back.meta["epoch"], 3);
  ASSERT_EQ(back.tensors.size(), net.params().size());
  for (std::size_t i = 0; i < back.tensors.size(); ++i) {
    EXPECT_EQ(back.tensors[i].name, net.params()[i].name);
    EXPECT_EQ(back.tensors[i].value, net.params()[i].value);
  }

  const auto dir = temp_dir("ckpt");
  save_checkpoint(ckpt, dir / "m.ckpt");
  EXPECT_FALSE(fs::exists(dir / "m.ckpt.tmp"));
  std::ifstream f(dir / "m.ckpt", std::ios::binary);
  std::vector<std::uint8_t> disk((std::istreambuf_iterator<char>(f)), {});
  EXPECT_EQ(disk, bytes);
}

TEST(Checkpoint, CorruptionIsRejected) {
  const auto bytes = encode_checkpoint(capture(small_net()));
  auto cut = bytes;
  cut.resize(cut.size() - 4);
  EXPECT_THROW(decode_checkpoint(cut), DataError);
  auto extra = bytes;
  extra.push_back(1);
  EXPECT_THROW(decode_checkpoint(extra), DataError);
  auto magic = bytes;
  magic[std::string(bytes.begin(), bytes.begin() + 200).find("TSINET-CKPT")] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), DataError);
  EXPECT_THROW(load_checkpoint("/nonexistent.ckpt"), DataError);
}

TEST(Checkpoint, LoadParametersChecksNamesAndShapes) {
  auto net = small_net();
  auto ckpt = capture(net);
  auto other = small_net();
  other.initialize(99);
  load_parameters(other, ckpt);
  for (std::size_t i = 0; i < net.params().size(); ++i) EXPECT_EQ(other.params()[i].value, net.params()[i].value);

  auto missing = ckpt;
  missing.tensors.pop_back();
  EXPECT_THROW(load_parameters(other, missing), DataError);
  auto reshaped = ckpt;
  reshaped.tensors[0].value = Tensor<float>({1});
  EXPECT_THROW(load_parameters(other, reshaped), DataError);
}

TEST(RunConfig, DefaultsAndRoundTrip) {
  const auto c = run_config_from_json(nlohmann::json::object());
  EXPECT_EQ(c.model, ModelConfig{});
  EXPECT_EQ(c.train.epochs, 100);
  EXPECT_EQ(c.data.count, 60u);
  auto j = nlohmann::json::parse(R"({"seed": 5, "model": {"temporal": "ucm"}, "train": {"epochs": 3},
                                     "data": {"count": 4, "generator": {"noise_sigma": 0.1}}})");
  const auto r = run_config_from_json(j);
  EXPECT_EQ(r.seed, 5u);
  EXPECT_EQ(r.train.seed, 5u);
  EXPECT_EQ(r.model.temporal, TemporalMode::ucm);
  EXPECT_EQ(r.data.generator.noise_sigma, 0.1);
  const auto again = run_config_from_json(to_json(r));
  EXPECT_EQ(to_json(again), to_json(r));
}

TEST(RunConfig, StrictKeysAtEveryLevel) {
  for (const char* bad : {R"({"sed": 1})", R"({"model": {"chans": 4}})", R"({"train": {"lr": 1}})",
                          R"({"loss": {"lambda3": 1}})", R"({"data": {"generator": {"roots": 2}}})",
                          R"({"data": {"cnt": 2}})", R"({"train": {"epochs": "many"}})", R"([1, 2])"}) {
    EXPECT_THROW(run_config_from_json(nlohmann::json::parse(bad)), ConfigError) << bad;
  }
}

TEST(RunConfig, DrmUsesCropFrames) {
  const auto r = run_config_from_json(nlohmann::json::parse(
      R"({"model": {"arch": "drm", "temporal": "none", "sdb": false}, "train": {"crop_frames": 6}})"));
  EXPECT_EQ(r.model.drm_frames, 6);
}

TEST(RunConfig, FileLoadingAndResolvedOutput) {
  const auto dir = temp_dir("cfg");
  {
    std::ofstream f(dir / "in.json");
    f << R"({"seed": 3})";
  }
  EXPECT_EQ(load_run_config(dir / "in.json").seed, 3u);
  {
    std::ofstream f(dir / "bad.json");
    f << "{nope";
  }
  EXPECT_THROW(load_run_config(dir / "bad.json"), ConfigError);
  EXPECT_THROW(load_run_config(dir / "absent.json"), ConfigError);
  write_resolved_config(load_run_config(dir / "in.json"), dir);
  EXPECT_EQ(load_run_config(dir / "config.json").seed, 3u);
}

}  // namespace
}  // namespace tsinet
