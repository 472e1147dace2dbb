#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>

#include "urep/data.hpp"
#include "urep/error.hpp"
#include "urep/rng.hpp"

using namespace urep;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("urep_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SyntheticConfig small(GenMode mode, int count, std::uint64_t seed) {
  SyntheticConfig c;
  c.mode = mode;
  c.count = count;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Generate, Deterministic) {
  for (auto mode : {GenMode::seg_cls, GenMode::flow3, GenMode::quality}) {
    auto a = generate(small(mode, 12, 5));
    auto b = generate(small(mode, 12, 5));
    auto c = generate(small(mode, 12, 6));
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].image.storage(), b[i].image.storage());
      EXPECT_EQ(a[i].mask->storage(), b[i].mask->storage());
      EXPECT_EQ(a[i].class_label, b[i].class_label);
      EXPECT_EQ(a[i].quality, b[i].quality);
      differs = differs || a[i].image.storage() != c[i].image.storage();
    }
    EXPECT_TRUE(differs);
  }
}

TEST(Generate, SegClsConstruction) {
  auto samples = generate(small(GenMode::seg_cls, 200, 3));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    EXPECT_EQ(s.group_id, static_cast<int>(i) / kGroupSize);
    ASSERT_TRUE(s.mask.has_value());
    double mask_sum = 0;
    for (float v : s.mask->data()) {
      EXPECT_TRUE(v == 0.0f || v == 1.0f);
      mask_sum += v;
    }
    EXPECT_GT(mask_sum, 0);
    for (float v : s.image.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    EXPECT_EQ(s.blob_present, s.class_label == 1);
  }
}

TEST(Generate, BlobInsideOrganAudit) {
  // regenerate with texture off: any pixel brighter than the organ base
  // level can only be blob, and must lie inside the mask
  auto c = small(GenMode::seg_cls, 60, 4);
  c.texture_amplitude = 0;
  for (const auto& s : generate(c)) {
    bool bright = false;
    for (std::size_t i = 0; i < s.image.size(); ++i) {
      if (s.image[i] > 0.75f) {
        bright = true;
        EXPECT_EQ((*s.mask)[i], 1.0f);
      }
    }
    EXPECT_EQ(bright, s.blob_present);
  }
}

TEST(Generate, ClassBalance) {
  for (auto mode : {GenMode::seg_cls, GenMode::flow3}) {
    auto samples = generate(small(mode, 1000, 9));
    std::map<int, int> counts;
    for (const auto& s : samples) counts[*s.class_label]++;
    const int k = class_count(mode);
    ASSERT_EQ(static_cast<int>(counts.size()), k);
    for (const auto& [cls, n] : counts) EXPECT_NEAR(n / 1000.0, 1.0 / k, 0.05) << "class " << cls;
  }
}

TEST(Generate, QualityLabelsAndBlur) {
  auto samples = generate(small(GenMode::quality, 200, 2));
  int low = 0;
  for (const auto& s : samples) {
    ASSERT_TRUE(s.quality.has_value());
    ASSERT_TRUE(s.class_label.has_value());
    low += *s.quality == Quality::low;
  }
  EXPECT_GT(low, 60);
  EXPECT_LT(low, 140);
}

TEST(Blur, PreservesConstantAndMass) {
  auto c = Tensor<float>::full({16, 16}, 0.4f);
  const auto blurred = gaussian_blur(c, 2.0);
  for (float v : blurred.data()) EXPECT_NEAR(v, 0.4f, 1e-6);
  auto impulse = Tensor<float>::zeros({33, 33});
  impulse[16 * 33 + 16] = 1.0f;
  double total = 0;
  const auto spread = gaussian_blur(impulse, 1.5);
  for (float v : spread.data()) total += v;
  EXPECT_NEAR(total, 1.0, 1e-5);
}

TEST(Config, KeyValuesAndUnknownKey) {
  auto c = SyntheticConfig::from_key_values(parse_key_values("mode=flow3\ncount=40\nseed=3\nimage_size=32\n"));
  EXPECT_EQ(c.mode, GenMode::flow3);
  EXPECT_EQ(c.count, 40);
  EXPECT_EQ(c.image_size, 32);
  auto round = SyntheticConfig::from_key_values(parse_key_values(c.to_text()));
  EXPECT_EQ(round.to_text(), c.to_text());
  try {
    SyntheticConfig::from_key_values(parse_key_values("colour=red\n"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("colour"), std::string::npos);
  }
  EXPECT_THROW(SyntheticConfig::from_key_values(parse_key_values("image_size=48\n")), ConfigError);
  EXPECT_THROW(SyntheticConfig::from_key_values(parse_key_values("count=0\n")), ConfigError);
}

TEST(Pgm, ScalingAndRoundTrip) {
  std::string bytes = "P5\n3 2\n255\n";
  for (int v : {0, 128, 255, 1, 254, 77}) bytes.push_back(static_cast<char>(v));
  auto img = decode_pgm(bytes);
  EXPECT_EQ(img.shape(), (Shape{2, 3}));
  EXPECT_NEAR(img[1], 128.0 / 255.0, 1e-7);
  EXPECT_NEAR(img[1], 0.50196, 1e-5);
  EXPECT_EQ(encode_pgm(img), bytes);
  // comments and odd whitespace are accepted on read
  std::string commented = "P5 # made by hand\n# another\n3\t2 255\n" + bytes.substr(bytes.size() - 6);
  EXPECT_EQ(decode_pgm(commented).storage(), img.storage());
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    std::string b = "P5\n7 5\n255\n";
    for (int i = 0; i < 35; ++i) b.push_back(static_cast<char>(rng.below(256)));
    EXPECT_EQ(encode_pgm(decode_pgm(b)), b);
    const auto img2 = decode_pgm(b);
    for (float v : img2.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Pgm, ErrorKinds) {
  EXPECT_THROW(decode_pgm("P2\n1 1\n255\n0"), ImageFormatError);
  EXPECT_THROW(decode_pgm("GIF89a"), ImageFormatError);
  EXPECT_THROW(decode_pgm("P5\n2 2\n65535\n"), UnsupportedDepthError);
  EXPECT_THROW(decode_pgm("P5\n2 2\n255\nabc"), ImageTruncatedError);
  EXPECT_THROW(decode_pgm("P5\n2 2"), ImageTruncatedError);
  EXPECT_THROW(read_pgm("/nonexistent/file.pgm"), IoError);
}

TEST(Manifest, RoundTripAndEncoding) {
  Manifest m;
  m.records.push_back({"images/a.pgm", std::string("masks/a.pgm"), 1, std::nullopt, 0, Split::train});
  m.records.push_back({"images/b.pgm", std::nullopt, std::nullopt, Quality::low, 1, Split::val});
  m.records.push_back({"images/c.pgm", std::nullopt, 2, Quality::good, 2, Split::test});
  const auto text = format_manifest(m);
  EXPECT_NE(text.find("images/b.pgm\t-\t-\tlow\t1\tval\n"), std::string::npos);
  auto back = parse_manifest(text);
  EXPECT_EQ(format_manifest(back), text);
  ASSERT_EQ(back.records.size(), 3u);
  EXPECT_FALSE(back.records[1].mask_path.has_value());
  EXPECT_TRUE(back.warnings.empty());
}

TEST(Manifest, ParseErrorsAndDuplicates) {
  const std::string header = "path\tmask_path\tclass\tquality\tgroup_id\tsplit\n";
  try {
    parse_manifest(header + "a.pgm\t-\t1\t-\t0\ttrain\nb.pgm\t-\tone\t-\t0\ttrain\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
  EXPECT_THROW(parse_manifest(header + "a.pgm\t-\t1\n"), ParseError);
  EXPECT_THROW(parse_manifest("bogus header\n"), ParseError);
  auto dup = parse_manifest(header + "a.pgm\t-\t1\t-\t0\ttrain\na.pgm\t-\t0\t-\t1\tval\n");
  EXPECT_EQ(dup.records.size(), 2u);
  ASSERT_EQ(dup.warnings.size(), 1u);
  EXPECT_NE(dup.warnings[0].find("duplicate"), std::string::npos);
}

TEST(Split, TenEqualGroups) {
  Manifest m;
  for (int i = 0; i < 80; ++i) m.records.push_back({"x" + std::to_string(i), {}, {}, {}, i / 8, Split::none});
  assign_splits(m, 1);
  std::map<Split, std::set<int>> groups;
  for (const auto& r : m.records) groups[r.split].insert(r.group_id);
  EXPECT_EQ(groups[Split::train].size(), 7u);
  EXPECT_EQ(groups[Split::val].size(), 2u);
  EXPECT_EQ(groups[Split::test].size(), 1u);
  Manifest again = m;
  for (auto& r : again.records) r.split = Split::none;
  assign_splits(again, 1);
  EXPECT_EQ(format_manifest(again), format_manifest(m));
}

TEST(Split, TooFewGroups) {
  Manifest m;
  for (int i = 0; i < 9; ++i) m.records.push_back({"x" + std::to_string(i), {}, {}, {}, i, Split::none});
  EXPECT_THROW(assign_splits(m, 1), DataError);
}

TEST(Split, GroupDisjointAndFractions) {
  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    Manifest m;
    const int groups = 10 + static_cast<int>(rng.below(60));
    const int records = groups + static_cast<int>(rng.below(200));
    for (int i = 0; i < records; ++i) {
      const int g = i < groups ? i : static_cast<int>(rng.below(groups));
      m.records.push_back({"r" + std::to_string(i), {}, {}, {}, g * 3 + 11, Split::none});
    }
    assign_splits(m, rng.next());
    std::map<int, Split> of;
    std::map<Split, int> count;
    for (const auto& r : m.records) {
      auto [it, fresh] = of.emplace(r.group_id, r.split);
      if (fresh) count[r.split]++;
      else EXPECT_EQ(it->second, r.split);
    }
    EXPECT_LE(std::abs(count[Split::train] - 0.7 * groups), 1.0);
    EXPECT_LE(std::abs(count[Split::val] - 0.2 * groups), 1.0);
    EXPECT_LE(std::abs(count[Split::test] - 0.1 * groups), 1.0);
    EXPECT_GE(count[Split::test], 1);
  }
}

TEST(Dataset, WriteAndLoad) {
  const auto dir = temp_dir("write_load");
  auto samples = generate(small(GenMode::seg_cls, 96, 2));
  auto m = write_dataset(samples, dir.string(), 2);
  EXPECT_EQ(m.records.size(), 96u);
  auto d = load_dataset((dir / "manifest.tsv").string());
  ASSERT_EQ(d.size(), 96u);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(d.samples[i].image.storage(), samples[i].image.storage());
    EXPECT_EQ(d.samples[i].mask->storage(), samples[i].mask->storage());
    EXPECT_EQ(d.samples[i].class_label, samples[i].class_label);
  }
  EXPECT_FALSE(d.indices(Split::test).empty());
  fs::remove_all(dir);
}
