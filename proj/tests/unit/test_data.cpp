#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include "tsinet/data.hpp"
#include "tsinet/metrics.hpp"

namespace tsinet {
namespace {

namespace fs = std::filesystem;

float px(const Tensor<float>& f, std::size_t t, std::size_t y, std::size_t x) {
  return f[(t * f.dim(1) + y) * f.dim(2) + x];
}

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("tsinet_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

BinaryMask dark_set(const VesselField& f, const VesselTreeSpec& spec, std::size_t t) {
  BinaryMask m(f.height, f.width);
  for (std::size_t i = 0; i < f.mask.size(); ++i)
    if (f.mask[i] && opacified(spec, f.arrival[i], t)) m.set(i / f.width, i % f.width);
  return m;
}

TEST(Generator, DeterministicInSeed) {
  VesselTreeSpec spec;
  const auto a = generate_sequence(spec, 7, 8, 64, 64);
  const auto b = generate_sequence(spec, 7, 8, 64, 64);
  const auto c = generate_sequence(spec, 8, 8, 64, 64);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_NE(a.frames, c.frames);
}

TEST(Generator, MaskIsUnionOfOpacifiedPixels) {
  VesselTreeSpec spec;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto f = generate_vessel_field(spec, seed, 8, 64, 64);
    EXPECT_GT(f.mask.count(), 0u);
    BinaryMask seen(64, 64);
    for (std::size_t t = 0; t < 8; ++t) {
      const auto d = dark_set(f, spec, t);
      for (std::size_t i = 0; i < d.size(); ++i)
        if (d[i]) seen.set(i / 64, i % 64);
    }
    EXPECT_EQ(seen, f.mask) << seed;
  }
}

TEST(Generator, InstantaneousBolusFillsEveryFrame) {
  VesselTreeSpec spec;
  spec.bolus_speed = 0;
  spec.washout_frames = 0;
  const auto f = generate_vessel_field(spec, 4, 8, 64, 64);
  for (std::size_t t = 0; t < 8; ++t) EXPECT_EQ(dark_set(f, spec, t), f.mask) << t;
}

TEST(Generator, FillOnlyDarkSetGrowsOverTime) {
  VesselTreeSpec spec;
  spec.washout_frames = 0;
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    const auto f = generate_vessel_field(spec, seed, 8, 64, 64);
    for (std::size_t t = 1; t < 8; ++t) EXPECT_TRUE(dark_set(f, spec, t - 1).subset_of(dark_set(f, spec, t)));
    const auto first = dark_set(f, spec, 0), last = dark_set(f, spec, 7);
    EXPECT_TRUE(first.subset_of(last));
    EXPECT_LT(first.count(), last.count());
    EXPECT_EQ(last, f.mask);
  }
}

TEST(Generator, NoSingleFrameShowsTheWholeTree) {
  const VesselTreeSpec spec;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto f = generate_vessel_field(spec, seed, 8, 128, 128);
    for (std::size_t t = 0; t < 8; ++t) EXPECT_NE(dark_set(f, spec, t), f.mask) << "seed " << seed << " frame " << t;
  }
}

TEST(Generator, OpacificationWindow) {
  VesselTreeSpec spec;
  spec.washout_frames = 3;
  // Frame t samples time t+1.
  EXPECT_FALSE(opacified(spec, 2.5, 0));
  EXPECT_FALSE(opacified(spec, 2.5, 1));
  EXPECT_TRUE(opacified(spec, 2.5, 2));
  EXPECT_TRUE(opacified(spec, 2.5, 4));
  EXPECT_FALSE(opacified(spec, 2.5, 5));
  EXPECT_FALSE(opacified(spec, std::numeric_limits<double>::infinity(), 3));
  spec.washout_frames = 0;
  EXPECT_TRUE(opacified(spec, 2.5, 100));
}

TEST(Generator, VesselsAreDarkerThanBackground) {
  VesselTreeSpec spec;
  spec.noise_sigma = 0;
  spec.bolus_speed = 0;
  const auto f = generate_vessel_field(spec, 9, 8, 64, 64);
  const auto s = generate_sequence(spec, 9, 8, 64, 64);
  for (std::size_t i = 0; i < f.mask.size(); ++i) {
    if (f.mask[i]) EXPECT_LT(s.frames[i], f.background[i]);
    else EXPECT_NEAR(s.frames[i], f.background[i], 1e-6);
  }
}

TEST(Generator, SpecValidation) {
  VesselTreeSpec spec;
  spec.washout_frames = 0.5;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = {};
  spec.root_radius = 1.2;
  spec.radius_decay = 0.5;
  EXPECT_THROW(spec.validate(), ConfigError);
  EXPECT_THROW(generate_sequence(VesselTreeSpec{}, 1, 1, 32, 32), ConfigError);
  EXPECT_THROW(vessel_spec_from_json({{"bogus", 1}}), ConfigError);
  EXPECT_EQ(vessel_spec_from_json(to_json(VesselTreeSpec{})), VesselTreeSpec{});
}

TEST(Zscore, ZeroMeanUnitVariance) {
  const auto s = generate_sequence(VesselTreeSpec{}, 3, 4, 32, 32);
  const auto z = zscore(s.frames);
  double mean = 0, sq = 0;
  for (float v : z.data()) mean += v;
  mean /= z.size();
  for (float v : z.data()) sq += (v - mean) * (v - mean);
  EXPECT_NEAR(mean, 0, 1e-5);
  EXPECT_NEAR(std::sqrt(sq / z.size()), 1, 1e-4);
  EXPECT_THROW(zscore(Tensor<float>({2, 3, 3}, 0.5f)), DataError);
  const auto again = zscore(z);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(again[i], z[i], 1e-6);
}

TEST(Crop, ExactSizeIsIdentityAndCropsCompose) {
  const auto s = generate_sequence(VesselTreeSpec{}, 6, 8, 64, 64);
  Rng rng(2);
  const auto w = draw_crop(s, 8, 64, 64, rng);
  EXPECT_EQ(w.y0, 0u);
  EXPECT_EQ(w.x0, 0u);
  EXPECT_EQ(apply_crop(s, w).frames, s.frames);

  const auto big = generate_sequence(VesselTreeSpec{}, 6, 8, 96, 96);
  const CropWindow outer{0, 10, 20, 8, 64, 64}, inner{0, 5, 7, 8, 32, 32};
  const auto twice = apply_crop(apply_crop(big, outer), inner);
  const auto once = apply_crop(big, CropWindow{0, 15, 27, 8, 32, 32});
  EXPECT_EQ(twice.frames, once.frames);
  EXPECT_EQ(twice.mask, once.mask);
}

TEST(Crop, WindowStaysInBoundsAndCopiesContent) {
  const auto s = generate_sequence(VesselTreeSpec{}, 5, 8, 48, 40);
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto w = draw_crop(s, 6, 16, 24, rng, 1);
    EXPECT_EQ(w.t0, 1u);
    EXPECT_LE(w.y0 + 16, 48u);
    EXPECT_LE(w.x0 + 24, 40u);
    const auto c = apply_crop(s, w);
    ASSERT_EQ(c.frames.shape(), (Shape{6, 16, 24}));
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 24; ++x) ASSERT_EQ(px(c.frames, t, y, x), px(s.frames, t + 1, y + w.y0, x + w.x0));
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 24; ++x) ASSERT_EQ(c.mask.get(y, x), s.mask.get(y + w.y0, x + w.x0));
  }
  EXPECT_THROW(draw_crop(s, 9, 16, 16, rng), DataError);
  EXPECT_THROW(draw_crop(s, 4, 64, 16, rng), DataError);
}

TEST(Crop, CenterCropToMultiple) {
  const auto s = generate_sequence(VesselTreeSpec{}, 5, 3, 37, 50);
  const auto c = center_crop_to_multiple(s, 16);
  EXPECT_EQ(c.frames.shape(), (Shape{3, 32, 48}));
  EXPECT_EQ(px(c.frames, 0, 0, 0), px(s.frames, 0, 2, 1));
  EXPECT_EQ(center_crop_to_multiple(c, 16).frames, c.frames);
}

Tensor<float> as_frames(const BinaryMask& m, std::size_t T) {
  Tensor<float> t({T, m.height(), m.width()});
  for (std::size_t k = 0; k < T; ++k)
    for (std::size_t i = 0; i < m.size(); ++i) t[k * m.size() + i] = m[i] ? float(k + 1) : 0.f;
  return t;
}

TEST(Augment, FramesAndMaskTransformTogether) {
  const auto s = generate_sequence(VesselTreeSpec{}, 2, 2, 24, 24);
  for (int bits = 0; bits < 8; ++bits) {
    AugmentDraw d{bool(bits & 1), bool(bits & 2), bool(bits & 4)};
    const auto f = apply_augment(as_frames(s.mask, 2), d);
    const auto m = apply_augment(s.mask, d);
    EXPECT_EQ(f, as_frames(m, 2)) << bits;
    EXPECT_EQ(m.count(), s.mask.count());
  }
}

TEST(Augment, ConfusionIsInvariant) {
  Rng rng(7);
  BinaryMask pred(16, 16), gt(16, 16);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) pred.set(y, x, rng.coin(0.4)), gt.set(y, x, rng.coin(0.3));
  for (int bits = 0; bits < 8; ++bits) {
    AugmentDraw d{bool(bits & 1), bool(bits & 2), bool(bits & 4)};
    EXPECT_EQ(confusion(apply_augment(pred, d), apply_augment(gt, d)), confusion(pred, gt));
    EXPECT_EQ(component_count(apply_augment(gt, d)), component_count(gt));
  }
  EXPECT_EQ(apply_augment(pred, AugmentDraw{}), pred);
}

TEST(Augment, GroupRelations) {
  const auto s = generate_sequence(VesselTreeSpec{}, 3, 2, 16, 16);
  const AugmentDraw rot{false, false, true}, h{true, false, false}, v{false, true, false};
  auto r = s.frames;
  for (int i = 0; i < 4; ++i) r = apply_augment(r, rot);
  EXPECT_EQ(r, s.frames);
  EXPECT_EQ(apply_augment(apply_augment(s.frames, h), h), s.frames);
  EXPECT_EQ(apply_augment(apply_augment(s.frames, v), v), s.frames);
  // Two rotations equal both flips.
  EXPECT_EQ(apply_augment(apply_augment(s.frames, rot), rot), apply_augment(s.frames, {true, true, false}));
  const auto hf = apply_augment(s.frames, h);
  EXPECT_EQ(px(hf, 1, 3, 0), px(s.frames, 1, 3, 15));
  const auto vf = apply_augment(s.frames, v);
  EXPECT_EQ(px(vf, 1, 0, 3), px(s.frames, 1, 15, 3));
}

TEST(Augment, RotationNeedsSquareInput) {
  const auto s = generate_sequence(VesselTreeSpec{}, 3, 2, 16, 24);
  EXPECT_THROW(apply_augment(s.frames, AugmentDraw{false, false, true}), ShapeError);
  EXPECT_NO_THROW(apply_augment(s.frames, AugmentDraw{true, true, false}));
}

TEST(Augment, DrawsAreFairAndOrdered) {
  Rng a(5), b(5);
  const auto d = draw_augment(a);
  EXPECT_EQ(d.hflip, b.coin());
  EXPECT_EQ(d.vflip, b.coin());
  EXPECT_EQ(d.rot90, b.coin());
  Rng rng(6);
  int h = 0, r = 0;
  for (int i = 0; i < 4000; ++i) {
    const auto x = draw_augment(rng);
    h += x.hflip;
    r += x.rot90;
  }
  EXPECT_NEAR(h / 4000.0, 0.5, 0.04);
  EXPECT_NEAR(r / 4000.0, 0.5, 0.04);
}

TEST(Dseq, RoundTripIsBitExact) {
  auto s = generate_sequence(VesselTreeSpec{}, 11, 4, 32, 24, "seq0042");
  s.frames[5] = -0.0f;
  s.frames[6] = std::nextafter(1.0f, 2.0f);
  const auto bytes = encode_dseq(s);
  const auto back = decode_dseq(bytes);
  ASSERT_EQ(back.frames.shape(), s.frames.shape());
  EXPECT_EQ(std::memcmp(back.frames.data().data(), s.frames.data().data(), s.frames.size() * 4), 0);
  EXPECT_EQ(back.mask, s.mask);
  EXPECT_EQ(back.id, "seq0042");
  EXPECT_EQ(back.seed, 11u);
  EXPECT_EQ(encode_dseq(back), bytes);

  const auto dir = temp_dir("dseq");
  write_dseq(s, dir / "a.dseq");
  EXPECT_EQ(encode_dseq(read_dseq(dir / "a.dseq")), bytes);
}

TEST(Dseq, GoldenLayout) {
  DsaSequence s;
  s.frames = Tensor<float>({2, 1, 2}, std::vector<float>{1.0f, -2.0f, 0.5f, 0.0f});
  s.mask = BinaryMask(1, 2, {1, 0});
  s.id = "g";
  s.seed = 3;
  const auto bytes = encode_dseq(s);
  const auto nl = std::find(bytes.begin(), bytes.end(), '\n');
  ASSERT_NE(nl, bytes.end());
  const auto header = nlohmann::json::parse(std::string(bytes.begin(), nl));
  EXPECT_EQ(header["format"], "DSEQ");
  EXPECT_EQ(header["version"], 1);
  EXPECT_EQ(header["T"], 2);
  EXPECT_EQ(header["H"], 1);
  EXPECT_EQ(header["W"], 2);
  EXPECT_EQ(header["dtype"], "float32-le");
  const std::vector<std::uint8_t> payload(nl + 1, bytes.end());
  const std::vector<std::uint8_t> expected{0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0, 0x00, 0x00,
                                           0x00, 0x3f, 0x00, 0x00, 0x00, 0x00, 0x01, 0x00};
  EXPECT_EQ(payload, expected);
}

std::string decode_error(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_dseq(bytes);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

TEST(Dseq, CorruptInputsReportWhatIsWrong) {
  const auto s = generate_sequence(VesselTreeSpec{}, 1, 2, 16, 16);
  const auto bytes = encode_dseq(s);
  const std::size_t header = std::find(bytes.begin(), bytes.end(), '\n') - bytes.begin() + 1;

  auto cut = bytes;
  cut.resize(bytes.size() - 10);
  const auto msg = decode_error(cut);
  EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
  EXPECT_NE(msg.find("expected " + std::to_string(bytes.size() - header)), std::string::npos) << msg;

  auto extra = bytes;
  extra.push_back(0);
  EXPECT_NE(decode_error(extra).find("trailing"), std::string::npos);

  auto bad_mask = bytes;
  bad_mask.back() = 7;
  try {
    decode_dseq(bad_mask);
    ADD_FAILURE();
  } catch (const DataError& e) {
    EXPECT_EQ(e.byte_offset(), bytes.size() - 1);
  }

  auto magic = bytes;
  const std::string h(bytes.begin(), bytes.begin() + header);
  const auto pos = h.find("DSEQ");
  magic[pos] = 'X';
  EXPECT_NE(decode_error(magic).find("magic"), std::string::npos);

  EXPECT_NE(decode_error(std::vector<std::uint8_t>{'{', '}'}).find("header"), std::string::npos);
  EXPECT_THROW(read_dseq("/nonexistent/x.dseq"), DataError);
}

TEST(Splits, SizesFollowRatio) {
  EXPECT_EQ(split_sizes(60), (std::array<std::size_t, 3>{30, 10, 20}));
  EXPECT_EQ(split_sizes(7), (std::array<std::size_t, 3>{4, 1, 2}));
  EXPECT_EQ(split_sizes(1), (std::array<std::size_t, 3>{1, 0, 0}));
  EXPECT_THROW(split_sizes(3, {0, 0, 0}), ConfigError);
}

TEST(Splits, DisjointCoveringAndDeterministic) {
  DatasetSpec spec;
  std::vector<std::string> ids;
  for (int i = 0; i < 60; ++i) ids.push_back("seq" + std::to_string(1000 + i));
  const auto a = assign_splits(ids, spec);
  const auto b = assign_splits(ids, spec);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  std::set<std::string> all;
  for (const auto* s : {&a.train, &a.val, &a.test}) all.insert(s->begin(), s->end());
  EXPECT_EQ(all.size(), 60u);
  EXPECT_EQ(a.train.size(), 30u);
  EXPECT_EQ(a.val.size(), 10u);
  spec.seed += 1;
  EXPECT_NE(assign_splits(ids, spec).train, a.train);
}

TEST(DatasetFiles, WriteAndLoad) {
  DatasetSpec spec;
  spec.count = 6;
  spec.frames = 4;
  spec.height = spec.width = 32;
  spec.seed = 77;
  const auto dir = temp_dir("dataset");
  write_dataset(spec, dir);
  const auto ds = Dataset::load(dir);
  ASSERT_EQ(ds.sequences.size(), 6u);
  const auto gen = generate_dataset(spec);
  for (const auto& g : gen) {
    const auto& l = ds.get(g.id);
    EXPECT_EQ(l.frames, g.frames);
    EXPECT_EQ(l.mask, g.mask);
  }
  EXPECT_EQ(ds.manifest.split("train").size() + ds.manifest.split("val").size() + ds.manifest.split("test").size(), 6u);
  EXPECT_THROW(ds.manifest.split("holdout"), ConfigError);
  EXPECT_THROW(ds.get("nope"), DataError);
  EXPECT_THROW(Dataset::load(dir / "missing"), DataError);
}

TEST(DatasetFiles, TinyDatasetWarnsAboutEmptySplits) {
  DatasetSpec spec;
  spec.count = 1;
  spec.frames = 2;
  spec.height = spec.width = 16;
  const auto warnings = write_dataset(spec, temp_dir("tiny"));
  EXPECT_FALSE(warnings.empty());
}

}  // namespace
}  // namespace tsinet
