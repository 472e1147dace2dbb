#include "urep/model.hpp"

#include <algorithm>

#include "urep/error.hpp"
#include "urep/text.hpp"

namespace urep {

std::string_view to_string(BackboneArch a) noexcept { return a == BackboneArch::cdae ? "cdae" : "dilated_cnn"; }

std::string_view to_string(ConstructionMode m) noexcept {
  return m == ConstructionMode::unsupervised_denoising ? "unsupervised_denoising" : "supervised_source";
}

std::string_view to_string(HeadKind k) noexcept {
  return k == HeadKind::classification ? "classification" : "segmentation";
}

BackboneArch parse_arch(std::string_view s) {
  if (s == "cdae") return BackboneArch::cdae;
  if (s == "dilated_cnn") return BackboneArch::dilated_cnn;
  throw ConfigError("unknown backbone architecture '" + std::string(s) + "'");
}

ConstructionMode parse_construction_mode(std::string_view s) {
  if (s == "unsupervised_denoising" || s == "unsupervised") return ConstructionMode::unsupervised_denoising;
  if (s == "supervised_source" || s == "supervised") return ConstructionMode::supervised_source;
  throw ConfigError("unknown construction mode '" + std::string(s) + "'");
}

HeadKind parse_head_kind(std::string_view s) {
  if (s == "classification") return HeadKind::classification;
  if (s == "segmentation") return HeadKind::segmentation;
  throw ConfigError("unknown head kind '" + std::string(s) + "'");
}

BackboneConfig BackboneConfig::cdae(int kernel) {
  BackboneConfig c;
  c.arch = BackboneArch::cdae;
  c.kernel = kernel;
  c.channels = {16, 32, 64, 128};
  c.strides = {2, 2, 1, 1};
  return c;
}

BackboneConfig BackboneConfig::dilated_cnn(int kernel, int dilation) {
  BackboneConfig c;
  c.arch = BackboneArch::dilated_cnn;
  c.kernel = kernel;
  c.dilation = dilation;
  c.channels = {8, 8, 16, 16, 16, 16};
  c.has_decoder = false;
  return c;
}

void BackboneConfig::validate() const {
  if (kernel != 1 && kernel != 3 && kernel != 5 && kernel != 7) {
    throw ConfigError("kernel must be one of 1, 3, 5, 7; got " + std::to_string(kernel));
  }
  if (in_channels < 1) throw ConfigError("in_channels must be positive");
  if (dilation < 1) throw ConfigError("dilation must be positive");
  for (int c : channels) {
    if (c < 1) throw ConfigError("channel counts must be positive");
  }
  if (arch == BackboneArch::cdae) {
    if (channels.size() != 4) throw ConfigError("cdae needs 4 encoder channel counts");
    if (strides.size() != 4) throw ConfigError("cdae needs 4 encoder strides");
    for (int s : strides) {
      if (s != 1 && s != 2) throw ConfigError("cdae strides must be 1 or 2");
    }
    if (dilation != 1) throw ConfigError("cdae convolutions are not dilated");
  } else {
    if (channels.size() != 6) throw ConfigError("dilated_cnn needs 6 channel counts");
    if (!strides.empty()) throw ConfigError("dilated_cnn layers all use stride 1");
    if (has_decoder) throw ConfigError("dilated_cnn has no reconstruction decoder");
  }
}

int BackboneConfig::total_stride() const {
  int t = 1;
  for (int s : strides) t *= s;
  return t;
}

BackboneConfig parse_backbone_config(const std::map<std::string, std::string>& kv) {
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw ConfigError("missing backbone key '" + k + "'");
    return it->second;
  };
  BackboneConfig c;
  c.arch = parse_arch(get("arch"));
  c.in_channels = static_cast<int>(parse_int(get("in_channels"), "in_channels"));
  c.kernel = static_cast<int>(parse_int(get("kernel"), "kernel"));
  c.dilation = static_cast<int>(parse_int(get("dilation"), "dilation"));
  c.channels = parse_int_list(get("channels"), "channels");
  const auto& strides = get("strides");
  c.strides = strides == "-" ? std::vector<int>{} : parse_int_list(strides, "strides");
  c.has_decoder = parse_bool(get("has_decoder"), "has_decoder");
  c.validate();
  return c;
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const int k = config_.kernel;
  if (config_.arch == BackboneArch::cdae) {
    int in = config_.in_channels;
    for (int b = 0; b < 4; ++b) {
      encoder_.add_conv({in, config_.channels[b], k, config_.strides[b], 1, Padding::same}, rng)
          .add_batch_norm(config_.channels[b])
          .add_relu();
      in = config_.channels[b];
    }
    if (config_.has_decoder) {
      for (int b = 3; b >= 0; --b) {
        const int out = b > 0 ? config_.channels[b - 1] : config_.channels[0];
        if (config_.strides[b] == 2) decoder_.add_upsample(2);
        decoder_.add_conv({in, out, k, 1, 1, Padding::same}, rng).add_batch_norm(out).add_relu();
        in = out;
      }
      output_.add_conv({in, config_.in_channels, k, 1, 1, Padding::same}, rng).add_sigmoid();
    }
  } else {
    int in = config_.in_channels;
    for (int l = 0; l < 6; ++l) {
      const int d = l >= 3 ? config_.dilation : 1;
      encoder_.add_conv({in, config_.channels[l], k, 1, d, Padding::same}, rng).add_relu();
      in = config_.channels[l];
    }
  }
}

template <typename T>
void Backbone<T>::check_input(const Shape& input) const {
  if (input.size() != 4 || input[1] != config_.in_channels || input[2] != input[3]) {
    throw ShapeError("backbone expects square [N, " + std::to_string(config_.in_channels) + ", H, H] input, got " +
                     to_string(input));
  }
  const int ts = config_.total_stride();
  if (input[2] % ts != 0) {
    throw ShapeError("input size " + std::to_string(input[2]) + " is not divisible by the total stride " +
                     std::to_string(ts));
  }
}

template <typename T>
Shape Backbone<T>::latent_shape(const Shape& input) const {
  check_input(input);
  return encoder_.output_shape(input);
}

template <typename T>
int Backbone<T>::latent_channels() const {
  return config_.channels.back();
}

template <typename T>
int Backbone<T>::decoder_channels() const {
  return config_.arch == BackboneArch::cdae ? config_.channels.front() : config_.channels.back();
}

template <typename T>
Var<T> Backbone<T>::encode(Graph<T>& g, Var<T> x, Mode mode, Rng& rng) {
  check_input(x.shape());
  return encoder_.forward(g, x, mode, rng);
}

template <typename T>
Var<T> Backbone<T>::decode(Graph<T>& g, Var<T> latent, Mode mode, Rng& rng) {
  if (decoder_.empty()) throw CompatibilityError("backbone has no decoder");
  return decoder_.forward(g, latent, mode, rng);
}

template <typename T>
Var<T> Backbone<T>::reconstruct(Graph<T>& g, Var<T> x, Mode mode, Rng& rng) {
  if (output_.empty()) throw CompatibilityError("backbone cannot reconstruct images");
  return output_.forward(g, decode(g, encode(g, x, mode, rng), mode, rng), mode, rng);
}

template <typename T>
std::vector<NamedTensor<T>> Backbone<T>::parameters() {
  auto out = encoder_.parameters();
  for (auto& p : decoder_.parameters()) out.push_back(p);
  for (auto& p : output_.parameters()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> Backbone<T>::state() {
  auto out = encoder_.state();
  for (auto& p : decoder_.state()) out.push_back(p);
  for (auto& p : output_.state()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<Tensor<T>*> Backbone<T>::parameter_ptrs() {
  std::vector<Tensor<T>*> out;
  for (auto& p : parameters()) out.push_back(p.tensor);
  return out;
}

template <typename T>
std::size_t Backbone<T>::parameter_count() const {
  return encoder_.parameter_count() + decoder_.parameter_count() + output_.parameter_count();
}

template <typename T>
void Backbone<T>::set_trainable(bool on) {
  encoder_.set_trainable(on);
  decoder_.set_trainable(on);
  output_.set_trainable(on);
}

template <typename T>
int Backbone<T>::receptive_field() const {
  int rf = 1, jump = 1;
  for (const auto& l : encoder_.layers()) {
    if (l.kind != LayerKind::conv) continue;
    rf += (l.conv.effective_kernel() - 1) * jump;
    jump *= l.conv.stride;
  }
  return rf;
}

template <typename T>
TaskHead<T>* URepModel<T>::find_head(std::string_view task_id) {
  for (auto& h : heads) {
    if (h.task_id() == task_id) return &h;
  }
  return nullptr;
}

template <typename T>
const TaskHead<T>* URepModel<T>::find_head(std::string_view task_id) const {
  for (const auto& h : heads) {
    if (h.task_id() == task_id) return &h;
  }
  return nullptr;
}

template <typename T>
Backbone<T>& URepModel<T>::backbone_for(TaskHead<T>& head) {
  return head.tuned_backbone ? *head.tuned_backbone : backbone;
}

template <typename T>
Backbone<T> build_cdae(const BackboneConfig& config, Rng& rng) {
  if (config.arch != BackboneArch::cdae) throw ConfigError("build_cdae needs a cdae config");
  return Backbone<T>(config, rng);
}

template <typename T>
Backbone<T> build_dilated_cnn(const BackboneConfig& config, Rng& rng) {
  if (config.arch != BackboneArch::dilated_cnn) throw ConfigError("build_dilated_cnn needs a dilated_cnn config");
  return Backbone<T>(config, rng);
}

template <typename T>
TaskHead<T> attach_head(const URepModel<T>& model, const HeadConfig& config, Rng& rng) {
  if (!model.optimized()) throw ContractError("attach_head needs an optimized backbone (no provenance recorded)");
  return make_head(model.backbone, config, rng);
}

template <typename T>
TaskHead<T> make_head(const Backbone<T>& backbone, const HeadConfig& config, Rng& rng) {
  if (config.task_id.empty()) throw ConfigError("head needs a task id");
  const auto& bc = backbone.config();
  TaskHead<T> head;
  head.config = config;
  head.layers.set_name("head." + config.task_id);
  head.inherited = {"kernel"};
  if (bc.arch == BackboneArch::dilated_cnn) head.inherited.push_back("dilation");
  const int k = bc.kernel;
  if (config.kind == HeadKind::classification) {
    if (config.num_classes < 2) throw ConfigError("classification head needs at least 2 classes");
    head.layers.add_gap()
        .add_dense(backbone.latent_channels(), config.hidden, rng)
        .add_relu()
        .add_dropout(config.dropout)
        .add_dense(config.hidden, config.num_classes, rng)
        .add_softmax();
  } else if (bc.arch == BackboneArch::cdae) {
    if (!bc.has_decoder) {
      throw CompatibilityError("segmentation head needs the CDAE decoder; this backbone is encoder-only");
    }
    head.layers.add_conv({backbone.decoder_channels(), 1, k, 1, 1, Padding::same}, rng).add_sigmoid();
  } else {
    // mirror of the 6 conv layers, deepest first
    int in = bc.channels[5];
    for (int l = 5; l >= 0; --l) {
      const int out = l > 0 ? bc.channels[l - 1] : bc.channels[0];
      const int d = l >= 3 ? bc.dilation : 1;
      head.layers.add_conv({in, out, k, 1, d, Padding::same}, rng).add_relu();
      in = out;
    }
    head.layers.add_conv({in, 1, k, 1, 1, Padding::same}, rng).add_sigmoid();
  }
  return head;
}

template <typename T>
Var<T> head_input(Backbone<T>& backbone, const TaskHead<T>& head, Graph<T>& g, Var<T> x, Mode mode, Rng& rng) {
  auto latent = backbone.encode(g, x, mode, rng);
  if (head.kind() == HeadKind::segmentation && backbone.config().arch == BackboneArch::cdae) {
    return backbone.decode(g, latent, mode, rng);
  }
  return latent;
}

template <typename T>
Var<T> head_logits(TaskHead<T>& head, Graph<T>& g, Var<T> features, Mode mode, Rng& rng) {
  if (head.kind() != HeadKind::classification) throw ContractError("logits exist only for classification heads");
  return head.layers.forward_range(g, features, mode, rng, 0, head.layers.size() - 1);
}

template <typename T>
Var<T> head_forward(URepModel<T>& model, TaskHead<T>& head, Graph<T>& g, Var<T> x, Mode mode, Rng& rng) {
  auto features = head_input(model.backbone_for(head), head, g, x, mode, rng);
  return head.layers.forward(g, features, mode, rng);
}

template class Backbone<float>;
template class Backbone<double>;
template struct URepModel<float>;
template struct URepModel<double>;

#define UREP_INSTANTIATE(T)                                                                                  \
  template Backbone<T> build_cdae<T>(const BackboneConfig&, Rng&);                                           \
  template Backbone<T> build_dilated_cnn<T>(const BackboneConfig&, Rng&);                                    \
  template TaskHead<T> make_head<T>(const Backbone<T>&, const HeadConfig&, Rng&);                             \
  template TaskHead<T> attach_head<T>(const URepModel<T>&, const HeadConfig&, Rng&);                         \
  template Var<T> head_input<T>(Backbone<T>&, const TaskHead<T>&, Graph<T>&, Var<T>, Mode, Rng&);            \
  template Var<T> head_logits<T>(TaskHead<T>&, Graph<T>&, Var<T>, Mode, Rng&);                               \
  template Var<T> head_forward<T>(URepModel<T>&, TaskHead<T>&, Graph<T>&, Var<T>, Mode, Rng&);
UREP_INSTANTIATE(float)
UREP_INSTANTIATE(double)
#undef UREP_INSTANTIATE

}  // namespace urep
