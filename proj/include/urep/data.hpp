#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "urep/tensor.hpp"
#include "urep/text.hpp"

namespace urep {

enum class GenMode { seg_cls, quality, flow3 };
enum class Quality { good, low };
enum class Split { train, val, test, none };

std::string_view to_string(GenMode mode) noexcept;
std::string_view to_string(Quality q) noexcept;
std::string_view to_string(Split s) noexcept;
GenMode parse_gen_mode(std::string_view s);
Quality parse_quality(std::string_view s);
Split parse_split(std::string_view s);

/// Images per synthetic patient.
inline constexpr int kGroupSize = 8;

struct SyntheticConfig {
  GenMode mode = GenMode::seg_cls;
  int image_size = 64;
  int count = 300;
  std::uint64_t seed = 1;
  double texture_amplitude = 0.08;
  // fractions of image_size
  double organ_radius_min = 0.22;
  double organ_radius_max = 0.34;
  double blob_radius_min = 0.06;
  double blob_radius_max = 0.09;
  double blur_sigma_min = 1.5;
  double blur_sigma_max = 3.0;
  double low_quality_fraction = 0.5;

  /// Throws ConfigError.
  void validate() const;
  /// Unknown keys are a ConfigError naming the key.
  static SyntheticConfig from_key_values(const KeyValues& kv);
  std::string to_text() const;
};

struct Sample {
  Tensor<float> image;  // [H, W] in [0, 1]
  std::optional<Tensor<float>> mask;
  std::optional<int> class_label;
  std::optional<Quality> quality;
  int group_id = 0;
  // generator audit: abnormal seg_cls samples carry a blob inside the organ
  bool blob_present = false;
};

/// Number of classes a generator mode labels (seg_cls: normal/abnormal,
/// flow3 and quality: three flow families).
int class_count(GenMode mode) noexcept;

/// Sample i is drawn from its own stream, seeded by splitmix64(seed) ^ i.
std::vector<Sample> generate(const SyntheticConfig& config);
Sample generate_one(const SyntheticConfig& config, int index);

/// Separable Gaussian blur with clamped borders.
Tensor<float> gaussian_blur(const Tensor<float>& image, double sigma);

// Binary PGM (P5, maxval 255) images as [H, W] tensors in [0, 1].
Tensor<float> decode_pgm(std::string_view bytes);
std::string encode_pgm(const Tensor<float>& image);
Tensor<float> read_pgm(const std::string& path);
void write_pgm(const Tensor<float>& image, const std::string& path);

struct ManifestRecord {
  std::string path;
  std::optional<std::string> mask_path;
  std::optional<int> class_label;
  std::optional<Quality> quality;
  int group_id = 0;
  Split split = Split::none;
};

struct Manifest {
  std::vector<ManifestRecord> records;
  std::vector<std::string> warnings;
};

/// Tab-separated with header "path mask_path class quality group_id split";
/// absent fields are "-".
std::string format_manifest(const Manifest& m);
/// Throws ParseError with the offending line number. Duplicate paths are
/// kept and reported in warnings.
Manifest parse_manifest(const std::string& text);
void write_manifest(const Manifest& m, const std::string& path);
Manifest read_manifest(const std::string& path);

/// Shuffles distinct group ids with `seed`; the first round(0.7 G) groups go
/// to train, the next round(0.2 G) to val, the rest to test. Needs >= 10
/// groups (DataError otherwise).
void assign_splits(Manifest& m, std::uint64_t seed);

/// Images and labels loaded from a manifest; paths are relative to its
/// directory.
struct Dataset {
  std::vector<Sample> samples;
  std::vector<Split> splits;
  std::vector<std::string> paths;

  std::vector<std::size_t> indices(Split s) const;
  std::size_t size() const noexcept { return samples.size(); }
};

Dataset load_dataset(const std::string& manifest_path);

/// Unlabeled images of i.i.d. U(0, 1) pixels, quantized like the generator's
/// output. A reference for data that shares nothing with the modality.
std::vector<Sample> generate_uniform_noise(int count, int image_size, std::uint64_t seed);

/// In-memory dataset with the same group-level split write_dataset uses.
Dataset make_dataset(std::vector<Sample> samples, std::uint64_t split_seed);

/// Writes images/, masks/ and manifest.tsv under `dir` and returns the
/// manifest.
Manifest write_dataset(const std::vector<Sample>& samples, const std::string& dir, std::uint64_t split_seed);

}  // namespace urep
