#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "urep/data.hpp"
#include "urep/model.hpp"

namespace urep {

template <typename T>
struct Heatmap {
  Tensor<T> values;  // [H, W] in [0, 1], input-sized
  std::string task_id;
  int class_index = 0;
  T raw_max = 0;
  /// Softmax output of the head for the explained image.
  std::vector<T> probabilities;
};

/// ReLU(sum_k alpha_k A_k) with alpha_k the spatial mean of gradients[0, k].
/// Both tensors are [1, C, h, w]; returns [h, w].
template <typename T>
Tensor<T> cam_map(const Tensor<T>& activations, const Tensor<T>& gradients);

/// Nearest-neighbour resize of a [h, w] map to [H, W].
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& map, int height, int width);

/// Min-max normalization. An all-zero map stays zero; any other constant map
/// becomes all ones.
template <typename T>
Tensor<T> normalize_min_max(const Tensor<T>& map);

/// Coarse Grad-CAM map before upsampling, for one [H, W] image. Gradients are
/// taken of the pre-softmax score of `class_index` with respect to the
/// features the head consumes. Model parameters are left untouched.
/// Throws ContractError for a non-classification head or a class index out of
/// range.
template <typename T>
Tensor<T> grad_cam_raw(URepModel<T>& model, const TaskHead<T>& head, const Tensor<T>& image, int class_index);

template <typename T>
Heatmap<T> grad_cam(URepModel<T>& model, const TaskHead<T>& head, const Tensor<T>& image, int class_index);

/// Heatmap blended 0.5/0.5 with the input image.
Tensor<float> overlay(const Tensor<float>& image, const Tensor<float>& heatmap);

enum class Usability { usable, not_usable };
std::string_view to_string(Usability u) noexcept;
Usability parse_usability(std::string_view s);

struct Prediction {
  int label = 0;
  double probability = 0;
};

/// Matches when each present field equals the input; absent fields are
/// wildcards.
struct Rule {
  std::string id;
  std::optional<int> class_label;
  std::optional<Quality> quality;
  Usability verdict = Usability::usable;
};

/// First matching rule wins.
struct RuleTable {
  std::vector<Rule> rules;

  static RuleTable defaults();
};

/// One rule per line: `<id> <class|*> <good|low|*> <usable|not_usable>`.
/// Blank lines and lines starting with '#' are skipped. Throws ParseError.
RuleTable parse_rule_table(std::string_view text);
std::string format_rule_table(const RuleTable& table);

/// Throws ConfigError unless every (class, quality) pair for `num_classes`
/// classes hits some rule and no low-quality pair comes out usable.
void validate_rule_table(const RuleTable& table, int num_classes);

struct Recommendation {
  Prediction class_prediction;
  Prediction quality_prediction;  // label 0 good, 1 low
  Quality quality = Quality::good;
  Usability verdict = Usability::usable;
  std::string rule_id;
};

/// Throws ContractError when no rule matches or a probability is outside
/// [0, 1].
Recommendation recommend(const Prediction& class_out, const Prediction& quality_out, const RuleTable& table);

/// Arg-max label and its probability from a probability vector.
Prediction top_prediction(const std::vector<float>& probabilities);

/// `class=<l> p=<..> quality=<good|low> p=<..> verdict=<usable|not_usable> rule=<id>`
std::string format_recommendation(const Recommendation& r);

}  // namespace urep
