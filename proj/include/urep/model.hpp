#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "urep/layers.hpp"
#include "urep/optim.hpp"

namespace urep {

enum class BackboneArch { cdae, dilated_cnn };
enum class ConstructionMode { unsupervised_denoising, supervised_source };
enum class HeadKind { classification, segmentation };

std::string_view to_string(BackboneArch a) noexcept;
std::string_view to_string(ConstructionMode m) noexcept;
std::string_view to_string(HeadKind k) noexcept;
BackboneArch parse_arch(std::string_view s);
ConstructionMode parse_construction_mode(std::string_view s);
HeadKind parse_head_kind(std::string_view s);

struct BackboneConfig {
  BackboneArch arch = BackboneArch::cdae;
  int in_channels = 1;
  int kernel = 3;
  /// Dilation of conv layers 4-6 of the dilated CNN (layers 1-3 use 1).
  int dilation = 1;
  /// cdae: encoder widths (4 entries); dilated_cnn: 6 layer widths.
  std::vector<int> channels;
  /// cdae only, one per encoder block.
  std::vector<int> strides;
  /// cdae only; an encoder-only CDAE cannot carry a segmentation head.
  bool has_decoder = true;

  static BackboneConfig cdae(int kernel = 3);
  static BackboneConfig dilated_cnn(int kernel = 3, int dilation = 2);
  /// Throws ConfigError.
  void validate() const;
  /// Product of the encoder strides.
  int total_stride() const;
};

/// Shared trunk. For the CDAE the encoder is 4 x (conv, batch norm, ReLU);
/// the decoder mirrors it block for block as (upsample where the encoder
/// strided, conv, batch norm, ReLU), and `output` maps the decoder features
/// back to an image through a conv and a sigmoid. For the dilated CNN the
/// encoder is 6 x (conv, ReLU) with stride 1 and same padding, and decoder
/// and output are empty.
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, Rng& rng);

  const BackboneConfig& config() const noexcept { return config_; }
  LayerStack<T>& encoder() noexcept { return encoder_; }
  LayerStack<T>& decoder() noexcept { return decoder_; }
  LayerStack<T>& output() noexcept { return output_; }
  const LayerStack<T>& encoder() const noexcept { return encoder_; }
  const LayerStack<T>& decoder() const noexcept { return decoder_; }
  const LayerStack<T>& output() const noexcept { return output_; }

  /// Throws ShapeError when the input size is not divisible by the total
  /// stride or is not [N, in_channels, H, H].
  void check_input(const Shape& input) const;
  Shape latent_shape(const Shape& input) const;
  /// Channel count of the features a segmentation head receives.
  int decoder_channels() const;
  int latent_channels() const;

  Var<T> encode(Graph<T>& g, Var<T> x, Mode mode, Rng& rng);
  Var<T> decode(Graph<T>& g, Var<T> latent, Mode mode, Rng& rng);
  /// encode -> decode -> output; CDAE with a decoder only.
  Var<T> reconstruct(Graph<T>& g, Var<T> x, Mode mode, Rng& rng);

  /// "encoder.*", "decoder.*", "output.*"
  std::vector<NamedTensor<T>> parameters();
  std::vector<NamedTensor<T>> state();
  std::vector<Tensor<T>*> parameter_ptrs();
  std::size_t parameter_count() const;
  void set_trainable(bool on);

  /// Receptive field (pixels) of the last encoder layer.
  int receptive_field() const;

 private:
  BackboneConfig config_;
  LayerStack<T> encoder_{"encoder"};
  LayerStack<T> decoder_{"decoder"};
  LayerStack<T> output_{"output"};
};

struct HeadConfig {
  std::string task_id;
  HeadKind kind = HeadKind::classification;
  int num_classes = 2;
  int hidden = 64;
  double dropout = 0.5;
  OptimizerKind optimizer = OptimizerKind::adam;
};

/// Layers appended to the backbone for one task. Classification heads read
/// the latent: GAP, FC, ReLU, dropout, FC(K), softmax. Segmentation heads on
/// a CDAE read the decoder features through a single-channel conv and a
/// sigmoid; on the dilated CNN they read the latent through a mirrored
/// 6-conv decoder before that final conv.
template <typename T>
struct TaskHead {
  HeadConfig config;
  LayerStack<T> layers;
  /// Backbone hyperparameters the head took over unchanged.
  std::vector<std::string> inherited;
  /// Private copy of the trunk when the head fine-tuned it on its own.
  std::optional<Backbone<T>> tuned_backbone;

  const std::string& task_id() const noexcept { return config.task_id; }
  HeadKind kind() const noexcept { return config.kind; }
};

template <typename T>
struct URepModel {
  Backbone<T> backbone;
  ConstructionMode construction_mode = ConstructionMode::unsupervised_denoising;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;
  int input_size = 64;
  /// Training record summary and grid-search report reference.
  std::map<std::string, std::string> provenance;
  std::vector<TaskHead<T>> heads;

  bool optimized() const noexcept { return !provenance.empty(); }
  TaskHead<T>* find_head(std::string_view task_id);
  const TaskHead<T>* find_head(std::string_view task_id) const;
  /// Backbone the head runs on (its private copy if it has one).
  Backbone<T>& backbone_for(TaskHead<T>& head);
};

BackboneConfig parse_backbone_config(const std::map<std::string, std::string>& kv);

/// Validates the config and builds the CDAE.
template <typename T>
Backbone<T> build_cdae(const BackboneConfig& config, Rng& rng);
template <typename T>
Backbone<T> build_dilated_cnn(const BackboneConfig& config, Rng& rng);

/// Builds head layers matching `backbone` without checking provenance.
template <typename T>
TaskHead<T> make_head(const Backbone<T>& backbone, const HeadConfig& config, Rng& rng);

/// Builds head layers for the model's backbone. Pure: the backbone is not modified.
/// Throws CompatibilityError for a segmentation head on an encoder-only
/// CDAE, ContractError when the model has not been optimized.
template <typename T>
TaskHead<T> attach_head(const URepModel<T>& model, const HeadConfig& config, Rng& rng);

/// Forward pass of backbone + head. Classification returns probabilities
/// [N, K]; segmentation returns [N, 1, H, W].
template <typename T>
Var<T> head_forward(URepModel<T>& model, TaskHead<T>& head, Graph<T>& g, Var<T> x, Mode mode, Rng& rng);

/// Features a head consumes (latent, or decoder output for CDAE
/// segmentation).
template <typename T>
Var<T> head_input(Backbone<T>& backbone, const TaskHead<T>& head, Graph<T>& g, Var<T> x, Mode mode, Rng& rng);

/// Classification head up to (excluding) the softmax.
template <typename T>
Var<T> head_logits(TaskHead<T>& head, Graph<T>& g, Var<T> features, Mode mode, Rng& rng);

extern template class Backbone<float>;
extern template class Backbone<double>;

}  // namespace urep
