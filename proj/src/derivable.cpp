#include "urep/derivable.hpp"

#include <algorithm>
#include <cmath>

#include "urep/error.hpp"
#include "urep/ops.hpp"
#include "urep/text.hpp"

namespace urep {

template <typename T>
Tensor<T> cam_map(const Tensor<T>& activations, const Tensor<T>& gradients) {
  if (activations.rank() != 4 || activations.dim(0) != 1 || activations.shape() != gradients.shape()) {
    throw ShapeError("cam_map needs matching [1, C, h, w] tensors, got " + to_string(activations.shape()) + " and " +
                     to_string(gradients.shape()));
  }
  const auto c = activations.dim(1), h = activations.dim(2), w = activations.dim(3);
  const auto plane = h * w;
  Tensor<T> out = Tensor<T>::zeros({h, w});
  for (std::int64_t k = 0; k < c; ++k) {
    T alpha = 0;
    for (std::int64_t i = 0; i < plane; ++i) alpha += gradients[k * plane + i];
    alpha /= static_cast<T>(plane);
    for (std::int64_t i = 0; i < plane; ++i) out[i] += alpha * activations[k * plane + i];
  }
  for (auto& v : out.data()) v = std::max(v, T(0));
  return out;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& map, int height, int width) {
  if (map.rank() != 2 || height < 1 || width < 1) throw ShapeError("upsample_nearest needs a [h, w] map");
  const auto h = map.dim(0), w = map.dim(1);
  Tensor<T> out = Tensor<T>::zeros({height, width});
  for (int y = 0; y < height; ++y) {
    const auto sy = static_cast<std::int64_t>(y) * h / height;
    for (int x = 0; x < width; ++x) {
      const auto sx = static_cast<std::int64_t>(x) * w / width;
      out[static_cast<std::int64_t>(y) * width + x] = map[sy * w + sx];
    }
  }
  return out;
}

template <typename T>
Tensor<T> normalize_min_max(const Tensor<T>& map) {
  Tensor<T> out = map.detached();
  if (out.size() == 0) return out;
  const auto [lo_it, hi_it] = std::minmax_element(out.data().begin(), out.data().end());
  const T lo = *lo_it, hi = *hi_it;
  if (hi == lo) {
    const T fill = hi == T(0) ? T(0) : T(1);
    for (auto& v : out.data()) v = fill;
    return out;
  }
  for (auto& v : out.data()) v = std::clamp((v - lo) / (hi - lo), T(0), T(1));
  return out;
}

namespace {

template <typename T>
struct CamPass {
  Tensor<T> raw;
  std::vector<T> probabilities;
};

template <typename T>
CamPass<T> cam_pass(URepModel<T>& model, const TaskHead<T>& head, const Tensor<T>& image, int class_index) {
  if (head.kind() != HeadKind::classification) {
    throw ContractError("Grad-CAM needs a classification head, '" + head.task_id() + "' is segmentation");
  }
  const int k = head.config.num_classes;
  if (class_index < 0 || class_index >= k) {
    throw ContractError("class index " + std::to_string(class_index) + " out of range, head has K=" + std::to_string(k));
  }
  if (image.rank() != 2) throw ShapeError("Grad-CAM takes one [H, W] image, got " + to_string(image.shape()));

  // A private copy of the head keeps gradient accumulation off the model.
  TaskHead<T> local = head;
  auto* stored = model.find_head(head.task_id());
  Backbone<T>& backbone = stored != nullptr ? model.backbone_for(*stored) : model.backbone;
  Rng rng(0);
  Graph<T> g;
  g.set_grad_enabled(false);
  const auto x = image.reshaped({1, 1, image.dim(0), image.dim(1)});
  const auto features = head_input(backbone, local, g, g.constant(x), Mode::infer, rng).value().detached();
  g.set_grad_enabled(true);
  auto a = g.variable(features);
  auto logits = head_logits(local, g, a, Mode::infer, rng);
  g.backward(select(logits, {class_index}));
  const auto grad_span = g.grad(a);
  Tensor<T> grads(features.shape(), std::vector<T>(grad_span.begin(), grad_span.end()));

  CamPass<T> out;
  out.raw = cam_map(features, grads);
  const auto& z = logits.value();
  const T zmax = *std::max_element(z.data().begin(), z.data().end());
  T total = 0;
  for (T v : z.data()) total += std::exp(v - zmax);
  for (T v : z.data()) out.probabilities.push_back(std::exp(v - zmax) / total);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> grad_cam_raw(URepModel<T>& model, const TaskHead<T>& head, const Tensor<T>& image, int class_index) {
  return cam_pass(model, head, image, class_index).raw;
}

template <typename T>
Heatmap<T> grad_cam(URepModel<T>& model, const TaskHead<T>& head, const Tensor<T>& image, int class_index) {
  auto pass = cam_pass(model, head, image, class_index);
  Heatmap<T> h;
  h.raw_max = *std::max_element(pass.raw.data().begin(), pass.raw.data().end());
  h.values = normalize_min_max(
      upsample_nearest(pass.raw, static_cast<int>(image.dim(0)), static_cast<int>(image.dim(1))));
  h.task_id = head.task_id();
  h.class_index = class_index;
  h.probabilities = std::move(pass.probabilities);
  return h;
}

Tensor<float> overlay(const Tensor<float>& image, const Tensor<float>& heatmap) {
  if (image.shape() != heatmap.shape()) {
    throw ShapeError("overlay needs equal shapes, got " + to_string(image.shape()) + " and " + to_string(heatmap.shape()));
  }
  Tensor<float> out = image.detached();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = 0.5f * image.data()[i] + 0.5f * heatmap.data()[i];
  return out;
}

std::string_view to_string(Usability u) noexcept { return u == Usability::usable ? "usable" : "not_usable"; }

Usability parse_usability(std::string_view s) {
  if (s == "usable") return Usability::usable;
  if (s == "not_usable") return Usability::not_usable;
  throw ConfigError("unknown verdict '" + std::string(s) + "' (usable, not_usable)");
}

RuleTable RuleTable::defaults() {
  return {{{"low_quality", std::nullopt, Quality::low, Usability::not_usable},
           {"good_quality", std::nullopt, Quality::good, Usability::usable}}};
}

RuleTable parse_rule_table(std::string_view text) {
  RuleTable table;
  int line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    for (auto& part : split(line, ' ')) {
      if (!part.empty()) f.push_back(part);
    }
    if (f.size() != 4) throw ParseError("expected 4 fields, got " + std::to_string(f.size()), line_no);
    Rule r;
    r.id = f[0];
    for (const auto& other : table.rules) {
      if (other.id == r.id) throw ParseError("duplicate rule id '" + r.id + "'", line_no);
    }
    try {
      if (f[1] != "*") {
        r.class_label = static_cast<int>(parse_int(f[1], "rule class"));
        if (*r.class_label < 0) throw ConfigError("negative rule class");
      }
      if (f[2] != "*") r.quality = parse_quality(f[2]);
      r.verdict = parse_usability(f[3]);
    } catch (const Error& e) {
      throw ParseError(e.what(), line_no);
    }
    table.rules.push_back(std::move(r));
  }
  return table;
}

std::string format_rule_table(const RuleTable& table) {
  std::string out;
  for (const auto& r : table.rules) {
    out += r.id + ' ' + (r.class_label ? std::to_string(*r.class_label) : std::string("*")) + ' ' +
           (r.quality ? std::string(to_string(*r.quality)) : std::string("*")) + ' ' + std::string(to_string(r.verdict)) +
           '\n';
  }
  return out;
}

namespace {

const Rule* first_match(const RuleTable& table, int label, Quality q) {
  for (const auto& r : table.rules) {
    if (r.class_label && *r.class_label != label) continue;
    if (r.quality && *r.quality != q) continue;
    return &r;
  }
  return nullptr;
}

}  // namespace

void validate_rule_table(const RuleTable& table, int num_classes) {
  if (num_classes < 1) throw ConfigError("rule table needs at least one class");
  for (int c = 0; c < num_classes; ++c) {
    for (Quality q : {Quality::good, Quality::low}) {
      const Rule* r = first_match(table, c, q);
      if (r == nullptr) {
        throw ConfigError("rule table has no rule for class " + std::to_string(c) + ", quality " +
                          std::string(to_string(q)));
      }
      if (q == Quality::low && r->verdict == Usability::usable) {
        throw ConfigError("rule '" + r->id + "' marks a low-quality image usable");
      }
    }
  }
}

Recommendation recommend(const Prediction& class_out, const Prediction& quality_out, const RuleTable& table) {
  for (double p : {class_out.probability, quality_out.probability}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("prediction probability outside [0, 1]");
  }
  if (quality_out.label != 0 && quality_out.label != 1) {
    throw ContractError("quality label must be 0 (good) or 1 (low), got " + std::to_string(quality_out.label));
  }
  Recommendation r;
  r.class_prediction = class_out;
  r.quality_prediction = quality_out;
  r.quality = quality_out.label == 1 ? Quality::low : Quality::good;
  const Rule* rule = first_match(table, class_out.label, r.quality);
  if (rule == nullptr) {
    throw ContractError("no rule matches class " + std::to_string(class_out.label) + ", quality " +
                        std::string(to_string(r.quality)));
  }
  r.verdict = rule->verdict;
  r.rule_id = rule->id;
  return r;
}

Prediction top_prediction(const std::vector<float>& probabilities) {
  if (probabilities.empty()) throw ContractError("empty probability vector");
  const auto it = std::max_element(probabilities.begin(), probabilities.end());
  return {static_cast<int>(it - probabilities.begin()), static_cast<double>(*it)};
}

std::string format_recommendation(const Recommendation& r) {
  return "class=" + std::to_string(r.class_prediction.label) + " p=" + format_fixed(r.class_prediction.probability, 4) +
         " quality=" + std::string(to_string(r.quality)) + " p=" + format_fixed(r.quality_prediction.probability, 4) +
         " verdict=" + std::string(to_string(r.verdict)) + " rule=" + r.rule_id;
}

#define UREP_INSTANTIATE(T)                                                                          \
  template Tensor<T> cam_map<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> upsample_nearest<T>(const Tensor<T>&, int, int);                                \
  template Tensor<T> normalize_min_max<T>(const Tensor<T>&);                                         \
  template Tensor<T> grad_cam_raw<T>(URepModel<T>&, const TaskHead<T>&, const Tensor<T>&, int);       \
  template Heatmap<T> grad_cam<T>(URepModel<T>&, const TaskHead<T>&, const Tensor<T>&, int);
UREP_INSTANTIATE(float)
UREP_INSTANTIATE(double)
#undef UREP_INSTANTIATE

}  // namespace urep
