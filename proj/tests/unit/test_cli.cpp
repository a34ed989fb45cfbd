#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tsinet/checkpoint.hpp"
#include "tsinet/data.hpp"
#include "tsinet/image_io.hpp"

namespace tsinet {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code = -1;
  std::string out, err;
};

Run cli(const std::string& args) {
  const fs::path err_file =
      fs::temp_directory_path() /
      ("tsinet_cli_stderr_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + ".txt");
  const std::string cmd = std::string(TSINET_CLI_PATH) + " " + args + " 2>" + err_file.string();
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream e(err_file);
  r.err.assign(std::istreambuf_iterator<char>(e), {});
  return r;
}

// Each test gets its own directory so ctest may run them in parallel.
class Cli : public ::testing::Test {
 protected:
  fs::path root_;
  fs::path root() const { return root_; }
  fs::path config() const { return root() / "tiny.json"; }
  fs::path data() const { return root() / "data"; }
  fs::path run() const { return root() / "run"; }

  void SetUp() override {
    root_ = fs::temp_directory_path() / ("tsinet_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root());
    fs::create_directories(root());
    std::ofstream(config()) << R"({
      "seed": 3,
      "model": {"base_channels": 2, "levels": 2},
      "train": {"epochs": 2, "crops_per_epoch": 4, "batch_size": 2, "crop_frames": 4, "crop_height": 16, "crop_width": 16},
      "data": {"count": 6, "frames": 4, "height": 32, "width": 32}
    })";
  }
};

TEST_F(Cli, FullWorkflow) {
  auto g = cli("gen --config " + config().string() + " --out " + data().string());
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_TRUE(fs::exists(data() / "manifest.json"));
  EXPECT_TRUE(fs::exists(data() / "config.json"));

  // A populated directory is not replaced silently.
  EXPECT_EQ(cli("gen --config " + config().string() + " --out " + data().string()).code, 3);
  EXPECT_EQ(cli("gen --config " + config().string() + " --out " + data().string() + " --overwrite").code, 0);

  auto t = cli("train --config " + config().string() + " --data " + data().string() + " --out " + run().string());
  ASSERT_EQ(t.code, 0) << t.err;
  const auto summary = nlohmann::json::parse(t.out);
  EXPECT_EQ(summary["epochs"], 2);
  EXPECT_TRUE(fs::exists(run() / "last.ckpt"));
  EXPECT_TRUE(fs::exists(run() / "train_log.jsonl"));
  EXPECT_TRUE(fs::exists(run() / "config.json"));

  auto again = cli("train --config " + config().string() + " --data " + data().string() + " --out " + run().string());
  EXPECT_EQ(again.code, 3);
  EXPECT_NE(again.err.find("--resume"), std::string::npos);

  const fs::path metrics = root() / "metrics";
  auto e = cli("eval --checkpoint " + (run() / "last.ckpt").string() + " --data " + data().string() +
               " --split val --out " + metrics.string());
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(nlohmann::json::parse(e.out)["kind"], "aggregate");
  EXPECT_TRUE(fs::exists(metrics / "metrics_val.jsonl"));
  EXPECT_TRUE(fs::exists(metrics / "config.json"));

  // Infer on a sequence with vessels writes the mask and an overlay whose colours match the counts.
  const fs::path seq = data() / "seq0000.dseq";
  const std::string prefix = (root() / "pred" / "s0").string();
  auto i = cli("infer --checkpoint " + (run() / "last.ckpt").string() + " --data " + seq.string() + " --out " + prefix);
  ASSERT_EQ(i.code, 0) << i.err;
  const auto info = nlohmann::json::parse(i.out);
  const auto mask = read_pgm(prefix + "_mask.pgm");
  EXPECT_EQ(mask.height, 32u);
  std::size_t white = 0;
  for (auto v : mask.pixels) white += v == 255;
  EXPECT_EQ(white, info["vessel_pixels"].get<std::size_t>());
  const auto overlay = read_ppm(prefix + "_overlay.ppm");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t k = 0; k < overlay.height * overlay.width; ++k) {
    const auto* px = &overlay.pixels[3 * k];
    tp += px[0] == 255 && px[1] == 255 && px[2] == 255;
    fp += px[0] == 255 && px[1] == 0 && px[2] == 0;
    fn += px[0] == 0 && px[1] == 255 && px[2] == 0;
  }
  EXPECT_EQ(tp, info["tp"].get<std::size_t>());
  EXPECT_EQ(fp, info["fp"].get<std::size_t>());
  EXPECT_EQ(fn, info["fn"].get<std::size_t>());
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("gen").code, 2);
  EXPECT_EQ(cli("gen --config /nonexistent.json --out " + (root() / "x").string()).code, 2);
  EXPECT_EQ(cli("--help").code, 0);

  std::ofstream(root() / "bad.json") << R"({"model": {"levels": 0}})";
  EXPECT_EQ(cli("gen --config " + (root() / "bad.json").string() + " --out " + (root() / "x").string()).code, 2);
  std::ofstream(root() / "typo.json") << R"({"modle": {}})";
  EXPECT_EQ(cli("gen --config " + (root() / "typo.json").string() + " --out " + (root() / "x").string()).code, 2);

  EXPECT_EQ(cli("eval --checkpoint /nonexistent.ckpt --data " + data().string()).code, 3);
  std::ofstream(root() / "junk.dseq") << "not a sequence";
  auto r = cli("infer --checkpoint /nonexistent.ckpt --data " + (root() / "junk.dseq").string() + " --out " +
               (root() / "j").string());
  EXPECT_EQ(r.code, 3);
}

TEST_F(Cli, SingleSequenceDatasetWarnsAboutEmptySplits) {
  std::ofstream(root() / "one.json") << R"({"data": {"count": 1, "frames": 2, "height": 16, "width": 16}})";
  auto r = cli("gen --config " + (root() / "one.json").string() + " --out " + (root() / "one").string());
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  EXPECT_TRUE(fs::exists(root() / "one" / "seq0000.dseq"));
  EXPECT_FALSE(fs::exists(root() / "one" / "seq0001.dseq"));
  std::ifstream f(root() / "one" / "manifest.json");
  const auto manifest = nlohmann::json::parse(f);
  EXPECT_EQ(manifest["splits"]["train"].size(), 1u);
  EXPECT_EQ(manifest["splits"]["val"].size(), 0u);
  EXPECT_EQ(manifest["splits"]["test"].size(), 0u);
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

TEST_F(Cli, GenIsDeterministic) {
  const auto a = root() / "a", b = root() / "b";
  ASSERT_EQ(cli("gen --config " + config().string() + " --out " + a.string() + " --seed 17").code, 0);
  ASSERT_EQ(cli("gen --config " + config().string() + " --out " + b.string() + " --seed 17").code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path().filename();
  }
  EXPECT_EQ(files, 6u + 2u);
  ASSERT_EQ(cli("gen --config " + config().string() + " --out " + (root() / "c").string() + " --seed 18").code, 0);
  EXPECT_NE(slurp(a / "seq0000.dseq"), slurp(root() / "c" / "seq0000.dseq"));
}

TEST_F(Cli, MissingDatasetNamesTheManifest) {
  auto r = cli("train --data " + (root() / "nowhere").string() + " --out " + run().string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("manifest"), std::string::npos) << r.err;
}

TEST_F(Cli, CorruptSequenceReportsByteOffset) {
  DsaSequence s = generate_sequence(VesselTreeSpec{}, 1, 2, 16, 16, "c");
  auto bytes = encode_dseq(s);
  bytes.back() = 9;
  const fs::path p = root() / "corrupt.dseq";
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  ModelConfig m;
  m.base_channels = 2;
  m.levels = 2;
  TsiNet<float> net(m);
  net.initialize(1);
  save_checkpoint(capture(net), root() / "m.ckpt");
  auto r = cli("infer --checkpoint " + (root() / "m.ckpt").string() + " --data " + p.string() + " --out " +
               (root() / "c").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("byte offset " + std::to_string(bytes.size() - 1)), std::string::npos) << r.err;
}

}  // namespace
}  // namespace tsinet
