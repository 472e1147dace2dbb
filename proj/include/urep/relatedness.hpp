#pragma once

#include <array>
#include <span>
#include <string_view>

#include "urep/tensor.hpp"

namespace urep {

inline constexpr int kHistogramBins = 64;
inline constexpr double kRelatednessThreshold = 0.1;

using Histogram = std::array<double, kHistogramBins>;

/// Normalized pixel-intensity histogram of images in [0, 1]. Bin b covers
/// [b/64, (b+1)/64); 1.0 falls in the last bin and values outside [0, 1] are
/// clamped. Throws DataError for an empty tensor list.
Histogram intensity_histogram(std::span<const Tensor<float>> images);
Histogram intensity_histogram(const Tensor<float>& images);

/// Jensen-Shannon divergence in nats, in [0, ln 2].
double js_divergence(const Histogram& p, const Histogram& q);

enum class Verdict { related, unrelated };
std::string_view to_string(Verdict v) noexcept;

struct RelatednessReport {
  double divergence = 0;
  double threshold = kRelatednessThreshold;
  Verdict verdict = Verdict::related;
};

/// Related iff the divergence is at most the threshold.
RelatednessReport assess_relatedness(std::span<const Tensor<float>> a, std::span<const Tensor<float>> b,
                                     double threshold = kRelatednessThreshold);
RelatednessReport assess_relatedness(const Tensor<float>& a, const Tensor<float>& b,
                                     double threshold = kRelatednessThreshold);

}  // namespace urep
