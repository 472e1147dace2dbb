#include "urep/relatedness.hpp"

#include <algorithm>
#include <cmath>

namespace urep {

namespace {

void add_to(Histogram& h, std::span<const float> values) {
  for (float v : values) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    const int b = std::min(kHistogramBins - 1, static_cast<int>(c * kHistogramBins));
    h[static_cast<std::size_t>(b)] += 1.0;
  }
}

Histogram normalized(Histogram h) {
  double total = 0;
  for (double v : h) total += v;
  for (double& v : h) v /= total;
  return h;
}

// p log(p / m) with the 0 log 0 = 0 convention
double kl_term(double p, double m) { return p > 0 ? p * std::log(p / m) : 0.0; }

}  // namespace

Histogram intensity_histogram(std::span<const Tensor<float>> images) {
  if (images.empty()) throw DataError("relatedness needs a nonempty dataset");
  Histogram h{};
  for (const auto& img : images) add_to(h, img.data());
  return normalized(h);
}

Histogram intensity_histogram(const Tensor<float>& images) {
  Histogram h{};
  add_to(h, images.data());
  return normalized(h);
}

double js_divergence(const Histogram& p, const Histogram& q) {
  double d = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    d += 0.5 * kl_term(p[i], m) + 0.5 * kl_term(q[i], m);
  }
  return std::max(0.0, d);
}

std::string_view to_string(Verdict v) noexcept { return v == Verdict::related ? "related" : "unrelated"; }

namespace {

RelatednessReport report(const Histogram& a, const Histogram& b, double threshold) {
  if (!(threshold >= 0)) throw ConfigError("relatedness threshold must be non-negative");
  RelatednessReport r;
  r.divergence = js_divergence(a, b);
  r.threshold = threshold;
  r.verdict = r.divergence <= threshold ? Verdict::related : Verdict::unrelated;
  return r;
}

}  // namespace

RelatednessReport assess_relatedness(std::span<const Tensor<float>> a, std::span<const Tensor<float>> b,
                                     double threshold) {
  return report(intensity_histogram(a), intensity_histogram(b), threshold);
}

RelatednessReport assess_relatedness(const Tensor<float>& a, const Tensor<float>& b, double threshold) {
  return report(intensity_histogram(a), intensity_histogram(b), threshold);
}

}  // namespace urep
