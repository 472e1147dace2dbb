#include <gtest/gtest.h>

#include <cmath>
#include <regex>

#include "urep/derivable.hpp"
#include "urep/error.hpp"

using namespace urep;

namespace {

HeadConfig cls_config(int k) {
  HeadConfig hc;
  hc.task_id = "cls";
  hc.kind = HeadKind::classification;
  hc.num_classes = k;
  hc.hidden = 6;
  hc.dropout = 0.25;
  return hc;
}

// Tiny random network with a classification head; biases are random so no
// unit sits exactly on a ReLU kink.
URepModel<double> tiny_model(BackboneArch arch, std::uint64_t seed, int k = 3) {
  Rng rng(seed);
  BackboneConfig c = arch == BackboneArch::cdae ? BackboneConfig::cdae(3) : BackboneConfig::dilated_cnn(3, 2);
  c.channels = arch == BackboneArch::cdae ? std::vector<int>{3, 3, 4, 4} : std::vector<int>{3, 3, 4, 4, 4, 4};
  URepModel<double> m;
  m.backbone = Backbone<double>(c, rng);
  m.input_size = 8;
  m.heads.push_back(make_head(m.backbone, cls_config(k), rng));
  for (auto& nt : m.backbone.parameters())
    if (nt.tensor->rank() == 1)
      for (auto& v : nt.tensor->data()) v = rng.uniform(0.05, 0.2);
  for (auto& nt : m.heads[0].layers.parameters())
    if (nt.tensor->rank() == 1)
      for (auto& v : nt.tensor->data()) v = rng.uniform(-0.2, 0.2);
  return m;
}

Tensor<double> image(std::uint64_t seed, int n = 8) {
  Rng rng(seed);
  return Tensor<double>::uniform({n, n}, 0.0, 1.0, rng);
}

double class_score(URepModel<double>& m, const Tensor<double>& features, int c) {
  Rng rng(0);
  Graph<double> g;
  g.set_grad_enabled(false);
  return head_logits(m.heads[0], g, g.constant(features), Mode::infer, rng).value()[c];
}

// Grad-CAM recomputed channel by channel with central differences on the
// feature maps.
Tensor<double> brute_force_cam(URepModel<double>& m, const Tensor<double>& img, int c) {
  Rng rng(0);
  Graph<double> g;
  g.set_grad_enabled(false);
  auto x = img.reshaped({1, 1, img.dim(0), img.dim(1)});
  const auto a = head_input(m.backbone, m.heads[0], g, g.constant(x), Mode::infer, rng).value().detached();
  const auto channels = a.dim(1), h = a.dim(2), w = a.dim(3);
  const double step = 1e-5;
  Tensor<double> raw = Tensor<double>::zeros({h, w});
  for (std::int64_t k = 0; k < channels; ++k) {
    double alpha = 0;
    for (std::int64_t i = 0; i < h * w; ++i) {
      auto plus = a.detached(), minus = a.detached();
      plus[k * h * w + i] += step;
      minus[k * h * w + i] -= step;
      alpha += (class_score(m, plus, c) - class_score(m, minus, c)) / (2 * step);
    }
    alpha /= static_cast<double>(h * w);
    for (std::int64_t i = 0; i < h * w; ++i) raw[i] += alpha * a[k * h * w + i];
  }
  for (auto& v : raw.data()) v = std::max(v, 0.0);
  return raw;
}

}  // namespace

TEST(GradCam, RawMapMatchesPerChannelFiniteDifferences) {
  int nonzero = 0;
  for (auto arch : {BackboneArch::cdae, BackboneArch::dilated_cnn}) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      auto m = tiny_model(arch, seed);
      const auto img = image(seed + 100);
      for (int c = 0; c < 3; ++c) {
        const auto fast = grad_cam_raw(m, m.heads[0], img, c);
        const auto slow = brute_force_cam(m, img, c);
        ASSERT_EQ(fast.shape(), slow.shape());
        double scale = 0;
        for (double v : slow.data()) scale = std::max(scale, std::abs(v));
        for (std::size_t i = 0; i < fast.size(); ++i) {
          EXPECT_NEAR(fast.data()[i], slow.data()[i], 1e-5 * std::max(1.0, scale)) << "seed " << seed << " class " << c;
        }
        if (scale > 0) ++nonzero;
      }
    }
  }
  EXPECT_GT(nonzero, 4);
}

TEST(GradCam, HeatmapIsInputSizedAndInUnitRange) {
  for (auto arch : {BackboneArch::cdae, BackboneArch::dilated_cnn}) {
    auto m = tiny_model(arch, 7);
    const auto img = image(8, 16);
    const auto h = grad_cam(m, m.heads[0], img, 1);
    EXPECT_EQ(h.values.shape(), img.shape());
    double hi = 0;
    for (double v : h.values.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      hi = std::max(hi, v);
    }
    EXPECT_EQ(hi, h.raw_max > 0 ? 1.0 : 0.0);
    EXPECT_EQ(h.class_index, 1);
    EXPECT_EQ(h.task_id, "cls");
    ASSERT_EQ(h.probabilities.size(), 3u);
    EXPECT_NEAR(h.probabilities[0] + h.probabilities[1] + h.probabilities[2], 1.0, 1e-12);
  }
}

TEST(GradCam, InvariantToPositiveScalingOfTheScorePathway) {
  for (auto arch : {BackboneArch::cdae, BackboneArch::dilated_cnn}) {
    auto m = tiny_model(arch, 9);
    const auto img = image(10);
    for (int c = 0; c < 3; ++c) {
      const auto base = grad_cam(m, m.heads[0], img, c);
      for (double factor : {0.25, 3.0, 40.0}) {
        auto scaled = m;
        auto params = scaled.heads[0].layers.parameters();
        // last dense layer: weight then bias
        for (std::size_t i = params.size() - 2; i < params.size(); ++i)
          for (auto& v : params[i].tensor->data()) v *= factor;
        const auto h = grad_cam(scaled, scaled.heads[0], img, c);
        for (std::size_t i = 0; i < h.values.size(); ++i) {
          EXPECT_NEAR(h.values.data()[i], base.values.data()[i], 1e-5) << "factor " << factor;
        }
      }
    }
  }
}

TEST(GradCam, LeavesTheModelUntouchedAndRepeats) {
  auto m = tiny_model(BackboneArch::dilated_cnn, 11);
  auto before = m.heads[0].layers.state();
  std::vector<std::vector<double>> values;
  for (auto& nt : before) values.push_back(nt.tensor->values());
  const auto img = image(12);
  const auto a = grad_cam(m, m.heads[0], img, 0);
  const auto b = grad_cam(m, m.heads[0], img, 0);
  EXPECT_EQ(a.values.values(), b.values.values());
  auto after = m.heads[0].layers.state();
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(after[i].tensor->values(), values[i]);
}

TEST(GradCam, SingleMapWithUniformPositiveGradientIsNormalizedRelu) {
  Rng rng(13);
  auto a = Tensor<double>::uniform({1, 1, 5, 7}, -1.0, 1.0, rng);
  auto g = Tensor<double>::full({1, 1, 5, 7}, 0.37);
  const auto cam = normalize_min_max(cam_map(a, g));
  auto expected = Tensor<double>::zeros({5, 7});
  for (std::size_t i = 0; i < expected.size(); ++i) expected.data()[i] = std::max(a.data()[i], 0.0);
  expected = normalize_min_max(expected);
  for (std::size_t i = 0; i < cam.size(); ++i) EXPECT_NEAR(cam.data()[i], expected.data()[i], 1e-12);
}

TEST(GradCam, AlphaIsTheSpatialMeanOfGradients) {
  // channel 0: A = 1, grads average to 0.5; channel 1: A = 2, grads average to -0.1
  Tensor<double> a({1, 2, 1, 2}, std::vector<double>{1, 1, 2, 2});
  Tensor<double> g({1, 2, 1, 2}, std::vector<double>{0.2, 0.8, -0.3, 0.1});
  const auto cam = cam_map(a, g);
  EXPECT_NEAR(cam[0], 0.3, 1e-15);
  EXPECT_NEAR(cam[1], 0.3, 1e-15);
  EXPECT_THROW(cam_map(a, Tensor<double>::zeros({1, 2, 2, 1})), ShapeError);
}

TEST(GradCam, NormalizationHandlesConstantMaps) {
  const auto zeros = normalize_min_max(Tensor<double>::zeros({3, 3}));
  for (double v : zeros.data()) EXPECT_EQ(v, 0.0);
  const auto flat = normalize_min_max(Tensor<double>::full({3, 3}, 0.7));
  for (double v : flat.data()) EXPECT_EQ(v, 1.0);
}

TEST(GradCam, NearestUpsamplingRepeatsCells) {
  Tensor<double> m({2, 2}, std::vector<double>{1, 2, 3, 4});
  const auto up = upsample_nearest(m, 4, 4);
  EXPECT_EQ(up.values(), (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
  const auto odd = upsample_nearest(m, 3, 3);
  EXPECT_EQ(odd.values(), (std::vector<double>{1, 1, 2, 1, 1, 2, 3, 3, 4}));
}

TEST(GradCam, RejectsBadClassAndSegmentationHeads) {
  auto m = tiny_model(BackboneArch::cdae, 14);
  const auto img = image(15);
  EXPECT_THROW(grad_cam(m, m.heads[0], img, 3), ContractError);
  EXPECT_THROW(grad_cam(m, m.heads[0], img, -1), ContractError);
  Rng rng(1);
  HeadConfig seg;
  seg.task_id = "seg";
  seg.kind = HeadKind::segmentation;
  m.heads.push_back(make_head(m.backbone, seg, rng));
  EXPECT_THROW(grad_cam(m, m.heads[1], img, 0), ContractError);
}

TEST(Overlay, BlendsHalfAndHalf) {
  Tensor<float> img({1, 3}, std::vector<float>{0.0f, 0.5f, 1.0f});
  Tensor<float> heat({1, 3}, std::vector<float>{1.0f, 0.5f, 0.0f});
  EXPECT_EQ(overlay(img, heat).values(), (std::vector<float>{0.5f, 0.5f, 0.5f}));
  EXPECT_THROW(overlay(img, Tensor<float>::zeros({3, 1})), ShapeError);
}

TEST(Recommend, DefaultTableFollowsQuality) {
  const auto table = RuleTable::defaults();
  validate_rule_table(table, 3);
  for (int c = 0; c < 3; ++c) {
    const auto good = recommend({c, 0.9}, {0, 0.8}, table);
    EXPECT_EQ(good.verdict, Usability::usable);
    EXPECT_EQ(good.rule_id, "good_quality");
    const auto low = recommend({c, 0.9}, {1, 0.7}, table);
    EXPECT_EQ(low.verdict, Usability::not_usable);
    EXPECT_EQ(low.rule_id, "low_quality");
  }
}

TEST(Recommend, CustomTableCanRejectAClassOutright) {
  const auto table = parse_rule_table(
      "# class 2 is never usable\n"
      "reject_two 2 * not_usable\n"
      "\n"
      "low * low not_usable\n"
      "good * good usable\n");
  validate_rule_table(table, 3);
  EXPECT_EQ(recommend({2, 0.6}, {0, 0.99}, table).verdict, Usability::not_usable);
  EXPECT_EQ(recommend({2, 0.6}, {0, 0.99}, table).rule_id, "reject_two");
  EXPECT_EQ(recommend({1, 0.6}, {0, 0.99}, table).verdict, Usability::usable);
  EXPECT_EQ(parse_rule_table(format_rule_table(table)).rules.size(), 3u);
  EXPECT_EQ(format_rule_table(parse_rule_table(format_rule_table(table))), format_rule_table(table));
}

TEST(Recommend, ValidationEnforcesTotalityAndLowQualityRejection) {
  EXPECT_THROW(validate_rule_table(parse_rule_table("g * good usable\n"), 2), ConfigError);
  EXPECT_THROW(validate_rule_table(parse_rule_table("all * * usable\n"), 2), ConfigError);
  EXPECT_THROW(validate_rule_table(parse_rule_table("l * low not_usable\ng 0 good usable\n"), 2), ConfigError);
  EXPECT_NO_THROW(validate_rule_table(parse_rule_table("l * low not_usable\ng 0 good usable\n"), 1));
  EXPECT_THROW(parse_rule_table("a * low\n"), ParseError);
  EXPECT_THROW(parse_rule_table("a x low usable\n"), ParseError);
  EXPECT_THROW(parse_rule_table("a * medium usable\n"), ParseError);
  EXPECT_THROW(parse_rule_table("a * low maybe\n"), ParseError);
  EXPECT_THROW(parse_rule_table("a * low not_usable\na * good usable\n"), ParseError);
}

TEST(Recommend, EveryPairGetsExactlyOneVerdict) {
  const auto table = parse_rule_table("r0 0 good not_usable\nlow * low not_usable\nrest * * usable\n");
  validate_rule_table(table, 4);
  for (int c = 0; c < 4; ++c) {
    for (int q = 0; q < 2; ++q) {
      const auto r = recommend({c, 0.5}, {q, 0.5}, table);
      if (q == 1) EXPECT_EQ(r.verdict, Usability::not_usable);
      EXPECT_FALSE(r.rule_id.empty());
    }
  }
}

TEST(Recommend, RejectsMissingOrInvalidPredictions) {
  const auto table = RuleTable::defaults();
  EXPECT_THROW(recommend({0, 1.5}, {0, 0.5}, table), ContractError);
  EXPECT_THROW(recommend({0, 0.5}, {0, std::nan("")}, table), ContractError);
  EXPECT_THROW(recommend({0, 0.5}, {2, 0.5}, table), ContractError);
  EXPECT_THROW(recommend({0, 0.5}, {0, 0.5}, RuleTable{}), ContractError);
  EXPECT_THROW(top_prediction({}), ContractError);
}

TEST(Recommend, OutputLineFollowsTheGrammar) {
  const auto r = recommend(top_prediction({0.1f, 0.7f, 0.2f}), top_prediction({0.3f, 0.7f}), RuleTable::defaults());
  const auto line = format_recommendation(r);
  const std::regex grammar(
      R"(class=\d+ p=[01]\.\d{4} quality=(good|low) p=[01]\.\d{4} verdict=(usable|not_usable) rule=\S+)");
  EXPECT_TRUE(std::regex_match(line, grammar)) << line;
  EXPECT_EQ(line, "class=1 p=0.7000 quality=low p=0.7000 verdict=not_usable rule=low_quality");
}
