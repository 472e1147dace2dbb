#include "urep/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "urep/error.hpp"
#include "urep/rng.hpp"

namespace urep {

namespace fs = std::filesystem;

std::string_view to_string(GenMode mode) noexcept {
  switch (mode) {
    case GenMode::seg_cls: return "seg_cls";
    case GenMode::quality: return "quality";
    case GenMode::flow3: return "flow3";
  }
  return "?";
}

std::string_view to_string(Quality q) noexcept { return q == Quality::good ? "good" : "low"; }

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::none: return "-";
  }
  return "?";
}

GenMode parse_gen_mode(std::string_view s) {
  if (s == "seg_cls") return GenMode::seg_cls;
  if (s == "quality") return GenMode::quality;
  if (s == "flow3") return GenMode::flow3;
  throw ConfigError("unknown generator mode '" + std::string(s) + "' (seg_cls, quality, flow3)");
}

Quality parse_quality(std::string_view s) {
  if (s == "good") return Quality::good;
  if (s == "low") return Quality::low;
  throw ConfigError("unknown quality '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "-") return Split::none;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

int class_count(GenMode mode) noexcept { return mode == GenMode::seg_cls ? 2 : 3; }

void SyntheticConfig::validate() const {
  if (count < 1) throw ConfigError("count must be >= 1");
  if (image_size != 32 && image_size != 64 && image_size != 128) throw ConfigError("image_size must be 32, 64 or 128");
  if (!(organ_radius_min > 0 && organ_radius_min <= organ_radius_max && organ_radius_max < 0.5)) {
    throw ConfigError("organ radius range must satisfy 0 < min <= max < 0.5");
  }
  if (!(blob_radius_min > 0 && blob_radius_min <= blob_radius_max && blob_radius_max < organ_radius_min)) {
    throw ConfigError("blob radius range must satisfy 0 < min <= max < organ_radius_min");
  }
  if (!(blur_sigma_min > 0 && blur_sigma_min <= blur_sigma_max)) throw ConfigError("invalid blur sigma range");
  if (!(texture_amplitude >= 0 && texture_amplitude <= 0.3)) throw ConfigError("texture_amplitude must be in [0, 0.3]");
  if (!(low_quality_fraction >= 0 && low_quality_fraction <= 1)) {
    throw ConfigError("low_quality_fraction must be in [0, 1]");
  }
}

SyntheticConfig SyntheticConfig::from_key_values(const KeyValues& kv) {
  SyntheticConfig c;
  for (const auto& [key, value] : kv) {
    if (key == "mode") c.mode = parse_gen_mode(value);
    else if (key == "image_size") c.image_size = static_cast<int>(parse_int(value, key));
    else if (key == "count") c.count = static_cast<int>(parse_int(value, key));
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(value, key));
    else if (key == "texture_amplitude") c.texture_amplitude = parse_double(value, key);
    else if (key == "organ_radius_min") c.organ_radius_min = parse_double(value, key);
    else if (key == "organ_radius_max") c.organ_radius_max = parse_double(value, key);
    else if (key == "blob_radius_min") c.blob_radius_min = parse_double(value, key);
    else if (key == "blob_radius_max") c.blob_radius_max = parse_double(value, key);
    else if (key == "blur_sigma_min") c.blur_sigma_min = parse_double(value, key);
    else if (key == "blur_sigma_max") c.blur_sigma_max = parse_double(value, key);
    else if (key == "low_quality_fraction") c.low_quality_fraction = parse_double(value, key);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

std::string SyntheticConfig::to_text() const {
  std::ostringstream os;
  os << "mode=" << to_string(mode) << "\nimage_size=" << image_size << "\ncount=" << count << "\nseed=" << seed
     << "\ntexture_amplitude=" << format_double(texture_amplitude)
     << "\norgan_radius_min=" << format_double(organ_radius_min)
     << "\norgan_radius_max=" << format_double(organ_radius_max)
     << "\nblob_radius_min=" << format_double(blob_radius_min)
     << "\nblob_radius_max=" << format_double(blob_radius_max)
     << "\nblur_sigma_min=" << format_double(blur_sigma_min) << "\nblur_sigma_max=" << format_double(blur_sigma_max)
     << "\nlow_quality_fraction=" << format_double(low_quality_fraction) << '\n';
  return os.str();
}

namespace {

float quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::round(c * 255.0) / 255.0);
}

// Logistic ramp over signed distance in pixels (positive inside).
double soft_step(double d) { return 1.0 / (1.0 + std::exp(-d / 0.6)); }

// Low-frequency sinusoidal texture plus pixel noise.
std::vector<double> texture(int n, double amplitude, Rng& rng) {
  std::vector<double> t(static_cast<std::size_t>(n) * n, 0.0);
  for (int w = 0; w < 3; ++w) {
    const double fx = rng.uniform(1, 4) * 2 * std::numbers::pi / n;
    const double fy = rng.uniform(1, 4) * 2 * std::numbers::pi / n;
    const double ph = rng.uniform(0, 2 * std::numbers::pi);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) t[y * n + x] += amplitude / 3 * std::sin(fx * x + fy * y + ph);
  }
  for (auto& v : t) v += rng.normal(0, 0.01);
  return t;
}

Sample make_seg_cls(const SyntheticConfig& c, Rng& rng) {
  const int n = c.image_size;
  const auto tex = texture(n, c.texture_amplitude, rng);
  const double cx = n / 2.0 + rng.uniform(-0.1, 0.1) * n;
  const double cy = n / 2.0 + rng.uniform(-0.1, 0.1) * n;
  const double a = rng.uniform(c.organ_radius_min, c.organ_radius_max) * n;
  const double b = rng.uniform(c.organ_radius_min, c.organ_radius_max) * n;
  const double th = rng.uniform(0, std::numbers::pi);
  const double ct = std::cos(th), st = std::sin(th);
  auto inside = [&](double x, double y, double ra, double rb) {
    const double dx = x - cx, dy = y - cy;
    const double u = dx * ct + dy * st, v = -dx * st + dy * ct;
    return (u * u) / (ra * ra) + (v * v) / (rb * rb) <= 1.0;
  };
  auto ellipse_radius = [&](double x, double y) {
    const double dx = x - cx, dy = y - cy;
    const double u = dx * ct + dy * st, v = -dx * st + dy * ct;
    return std::sqrt((u * u) / (a * a) + (v * v) / (b * b));
  };

  Sample s;
  s.class_label = static_cast<int>(rng.below(2));
  Tensor<float> mask = Tensor<float>::zeros({n, n});
  std::vector<double> img(static_cast<std::size_t>(n) * n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const bool in = inside(x + 0.5, y + 0.5, a, b);
      mask[y * n + x] = in ? 1.0f : 0.0f;
      // partial-volume boundary about one pixel wide; the mask stays hard
      const double e = soft_step((1.0 - ellipse_radius(x + 0.5, y + 0.5)) * 0.5 * (a + b));
      const double fg = 0.6 + 0.5 * tex[y * n + x], bg = 0.25 + tex[y * n + x];
      img[y * n + x] = bg + e * (fg - bg);
    }
  }

  if (*s.class_label == 1) {
    const double r = rng.uniform(c.blob_radius_min, c.blob_radius_max) * n;
    double bx = cx, by = cy;
    for (int attempt = 0; attempt < 200; ++attempt) {
      // candidate inside the shrunken ellipse, then verified pixel by pixel
      const double ang = rng.uniform(0, 2 * std::numbers::pi);
      const double rad = std::sqrt(rng.uniform());
      const double u = rad * (a - r) * std::cos(ang), v = rad * (b - r) * std::sin(ang);
      const double px = cx + u * ct - v * st, py = cy + u * st + v * ct;
      bool ok = true;
      for (int y = 0; y < n && ok; ++y)
        for (int x = 0; x < n && ok; ++x) {
          const double dx = x + 0.5 - px, dy = y + 0.5 - py;
          if (dx * dx + dy * dy <= r * r && mask[y * n + x] == 0.0f) ok = false;
        }
      if (ok) {
        bx = px;
        by = py;
        break;
      }
    }
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double dx = x + 0.5 - bx, dy = y + 0.5 - by;
        const double d2 = (dx * dx + dy * dy) / (r * r);
        if (mask[y * n + x] != 0.0f) {
          img[y * n + x] += 0.3 * (1.0 - 0.5 * std::min(d2, 1.0)) * soft_step(r - std::sqrt(dx * dx + dy * dy));
        }
      }
    s.blob_present = true;
  }

  s.image = Tensor<float>::zeros({n, n});
  for (std::size_t i = 0; i < img.size(); ++i) s.image[i] = quantize(img[i]);
  s.mask = std::move(mask);
  return s;
}

// Doppler-like spectral envelopes hanging below a baseline. Family 0 has one
// broad deep peak per cycle, family 1 two humps (tall then short), family 2
// shallow narrow spikes.
Sample make_flow(const SyntheticConfig& c, Rng& rng) {
  const int n = c.image_size;
  Sample s;
  const int family = static_cast<int>(rng.below(3));
  s.class_label = family;
  const int y0 = static_cast<int>(std::round(rng.uniform(0.12, 0.18) * n));
  const double room = n - y0 - 2;
  const double period = n / rng.uniform(1.8, 2.4);
  const double phase = rng.uniform(0, period);
  double a1 = 0, a2 = 0;
  switch (family) {
    case 0: a1 = rng.uniform(0.65, 0.8); break;
    case 1: a1 = rng.uniform(0.38, 0.48); a2 = rng.uniform(0.2, 0.28); break;
    default: a1 = rng.uniform(0.15, 0.24); a2 = rng.uniform(0.1, 0.15); break;
  }
  auto depth = [&](int x) {
    double u = std::fmod(x + phase, period) / period;
    switch (family) {
      case 0: return u < 0.7 ? a1 * std::pow(std::sin(std::numbers::pi * u / 0.7), 0.7) : 0.0;
      case 1:
        if (u < 0.35) return a1 * std::sin(std::numbers::pi * u / 0.35);
        if (u >= 0.45 && u < 0.75) return a2 * std::sin(std::numbers::pi * (u - 0.45) / 0.3);
        return 0.0;
      default:
        if (u < 0.12) return a1 * (1.0 - std::abs(u - 0.06) / 0.06);
        if (u >= 0.5 && u < 0.6) return a2 * (1.0 - std::abs(u - 0.55) / 0.05);
        return 0.0;
    }
  };

  Tensor<float> mask = Tensor<float>::zeros({n, n});
  std::vector<double> img(static_cast<std::size_t>(n) * n);
  for (auto& v : img) v = 0.06 + rng.normal(0, 0.03);
  for (int x = 0; x < n; ++x) {
    img[y0 * n + x] = 0.45;
    const double d = depth(x) * room;
    for (int y = y0 + 1; y <= y0 + static_cast<int>(std::round(d)) && y < n; ++y) {
      const double rel = (y - y0) / std::max(d, 1.0);
      img[y * n + x] = 0.55 + 0.3 * (1.0 - rel) + rng.normal(0, 0.08);
      mask[y * n + x] = 1.0f;
    }
  }
  s.image = Tensor<float>::zeros({n, n});
  for (std::size_t i = 0; i < img.size(); ++i) s.image[i] = quantize(img[i]);
  s.mask = std::move(mask);
  return s;
}

std::uint64_t stream_base(std::uint64_t seed) {
  std::uint64_t sm = seed;
  return splitmix64(sm);
}

}  // namespace

Sample generate_one(const SyntheticConfig& config, int index) {
  Rng rng(stream_base(config.seed) ^ static_cast<std::uint64_t>(index));
  Sample s;
  switch (config.mode) {
    case GenMode::seg_cls: s = make_seg_cls(config, rng); break;
    case GenMode::flow3: s = make_flow(config, rng); break;
    case GenMode::quality: {
      s = make_flow(config, rng);
      const bool low = rng.uniform() < config.low_quality_fraction;
      s.quality = low ? Quality::low : Quality::good;
      if (low) {
        auto blurred = gaussian_blur(s.image, rng.uniform(config.blur_sigma_min, config.blur_sigma_max));
        for (auto& v : blurred.data()) v = quantize(v);
        s.image = std::move(blurred);
      }
      break;
    }
  }
  s.group_id = index / kGroupSize;
  return s;
}

std::vector<Sample> generate(const SyntheticConfig& config) {
  config.validate();
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(config.count));
  for (int i = 0; i < config.count; ++i) out.push_back(generate_one(config, i));
  return out;
}

Tensor<float> gaussian_blur(const Tensor<float>& image, double sigma) {
  if (image.rank() != 2) throw ShapeError("blur expects [H, W]");
  if (sigma <= 0) return image;
  const int h = static_cast<int>(image.dim(0)), w = static_cast<int>(image.dim(1));
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  std::vector<double> tmp(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * image[y * w + std::clamp(x + i, 0, w - 1)];
      tmp[y * w + x] = acc;
    }
  Tensor<float> out = Tensor<float>::zeros({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
      out[y * w + x] = static_cast<float>(acc);
    }
  return out;
}

Tensor<float> decode_pgm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw ImageFormatError("not a binary PGM (expected P5)");
  std::size_t pos = 2;
  auto next_field = [&]() -> long {
    while (pos < bytes.size()) {
      const char ch = bytes[pos];
      if (ch == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size()) throw ImageTruncatedError("PGM header ends early");
    long v = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1'000'000) throw ImageFormatError("PGM header value too large");
      ++pos;
      ++digits;
    }
    if (digits == 0) throw ImageFormatError("malformed PGM header");
    return v;
  };
  const long w = next_field(), h = next_field(), maxval = next_field();
  if (w < 1 || h < 1) throw ImageFormatError("PGM dimensions must be positive");
  if (maxval != 255) throw UnsupportedDepthError("PGM maxval " + std::to_string(maxval) + " unsupported (need 255)");
  if (pos >= bytes.size()) throw ImageTruncatedError("PGM payload missing");
  ++pos;  // single whitespace byte
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - pos < need) {
    throw ImageTruncatedError("PGM payload has " + std::to_string(bytes.size() - pos) + " of " + std::to_string(need) +
                              " bytes");
  }
  Tensor<float> img = Tensor<float>::zeros({h, w});
  for (std::size_t i = 0; i < need; ++i) img[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i]) / 255.0);
  return img;
}

std::string encode_pgm(const Tensor<float>& image) {
  if (image.rank() != 2) throw ShapeError("PGM images are [H, W], got " + to_string(image.shape()));
  std::string out = "P5\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  out.reserve(out.size() + image.size());
  for (float v : image.data()) {
    const double c = std::isnan(v) ? 0.0 : std::clamp(static_cast<double>(v), 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  return out;
}

Tensor<float> read_pgm(const std::string& path) { return decode_pgm(read_text_file(path)); }

void write_pgm(const Tensor<float>& image, const std::string& path) { write_text_file(path, encode_pgm(image)); }

namespace {

constexpr std::string_view kManifestHeader = "path\tmask_path\tclass\tquality\tgroup_id\tsplit";

}  // namespace

std::string format_manifest(const Manifest& m) {
  std::string s(kManifestHeader);
  s += '\n';
  for (const auto& r : m.records) {
    s += r.path + '\t' + r.mask_path.value_or("-") + '\t' +
         (r.class_label ? std::to_string(*r.class_label) : std::string("-")) + '\t' +
         (r.quality ? std::string(to_string(*r.quality)) : std::string("-")) + '\t' + std::to_string(r.group_id) +
         '\t' + std::string(to_string(r.split)) + '\n';
  }
  return s;
}

Manifest parse_manifest(const std::string& text) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool header = false;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (!header) {
      if (line != kManifestHeader) throw ParseError("manifest header must be '" + std::string(kManifestHeader) + "'", lineno);
      header = true;
      continue;
    }
    const auto f = split(line, '\t');
    if (f.size() != 6) throw ParseError("expected 6 tab-separated fields, got " + std::to_string(f.size()), lineno);
    try {
      ManifestRecord r;
      if (f[0].empty() || f[0] == "-") throw ConfigError("missing image path");
      r.path = f[0];
      if (f[1] != "-") r.mask_path = f[1];
      if (f[2] != "-") r.class_label = static_cast<int>(parse_int(f[2], "class"));
      if (r.class_label && *r.class_label < 0) throw ConfigError("negative class label");
      if (f[3] != "-") r.quality = parse_quality(f[3]);
      r.group_id = static_cast<int>(parse_int(f[4], "group_id"));
      r.split = parse_split(f[5]);
      if (!seen.insert(r.path).second) m.warnings.push_back("line " + std::to_string(lineno) + ": duplicate path " + r.path);
      m.records.push_back(std::move(r));
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  if (!header) throw ParseError("empty manifest", lineno == 0 ? 1 : lineno);
  return m;
}

void write_manifest(const Manifest& m, const std::string& path) { write_text_file(path, format_manifest(m)); }

Manifest read_manifest(const std::string& path) { return parse_manifest(read_text_file(path)); }

void assign_splits(Manifest& m, std::uint64_t seed) {
  std::vector<int> groups;
  for (const auto& r : m.records) groups.push_back(r.group_id);
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
  const std::size_t g = groups.size();
  if (g < 10) throw DataError("patient-level split needs at least 10 groups, got " + std::to_string(g));
  Rng rng(seed);
  shuffle(groups, rng);
  const auto n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(g)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(g)));
  std::map<int, Split> of;
  for (std::size_t i = 0; i < g; ++i) of[groups[i]] = i < n_train ? Split::train : i < n_train + n_val ? Split::val : Split::test;
  for (auto& r : m.records) r.split = of.at(r.group_id);
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == s) out.push_back(i);
  }
  return out;
}

Dataset load_dataset(const std::string& manifest_path) {
  const Manifest m = read_manifest(manifest_path);
  if (m.records.empty()) throw DataError("manifest " + manifest_path + " has no records");
  const fs::path base = fs::path(manifest_path).parent_path();
  Dataset d;
  for (const auto& r : m.records) {
    Sample s;
    s.image = read_pgm((base / r.path).string());
    if (r.mask_path) {
      s.mask = read_pgm((base / *r.mask_path).string());
      if (s.mask->shape() != s.image.shape()) throw DataError("mask shape differs from image for " + r.path);
    }
    s.class_label = r.class_label;
    s.quality = r.quality;
    s.group_id = r.group_id;
    if (!d.samples.empty() && s.image.shape() != d.samples.front().image.shape()) {
      throw DataError("all images must share one size; " + r.path + " is " + to_string(s.image.shape()));
    }
    d.samples.push_back(std::move(s));
    d.splits.push_back(r.split);
    d.paths.push_back(r.path);
  }
  return d;
}

Manifest write_dataset(const std::vector<Sample>& samples, const std::string& dir, std::uint64_t split_seed) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  Manifest m;
  bool any_mask = false;
  for (const auto& s : samples) any_mask = any_mask || s.mask.has_value();
  if (any_mask) {
    fs::create_directories(fs::path(dir) / "masks", ec);
    if (ec) throw IoError("cannot create " + dir + "/masks: " + ec.message());
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.pgm", i);
    ManifestRecord r;
    r.path = std::string("images/img_") + name;
    write_pgm(samples[i].image, (fs::path(dir) / r.path).string());
    if (samples[i].mask) {
      r.mask_path = std::string("masks/mask_") + name;
      write_pgm(*samples[i].mask, (fs::path(dir) / *r.mask_path).string());
    }
    r.class_label = samples[i].class_label;
    r.quality = samples[i].quality;
    r.group_id = samples[i].group_id;
    m.records.push_back(std::move(r));
  }
  assign_splits(m, split_seed);
  write_manifest(m, (fs::path(dir) / "manifest.tsv").string());
  return m;
}

std::vector<Sample> generate_uniform_noise(int count, int image_size, std::uint64_t seed) {
  if (count < 1 || image_size < 1) throw ConfigError("noise set needs a positive count and size");
  std::vector<Sample> out;
  for (int i = 0; i < count; ++i) {
    Rng rng(stream_base(seed) ^ static_cast<std::uint64_t>(i));
    Sample s;
    s.image = Tensor<float>::zeros({image_size, image_size});
    for (auto& v : s.image.data()) v = quantize(rng.uniform());
    s.group_id = i / kGroupSize;
    out.push_back(std::move(s));
  }
  return out;
}

Dataset make_dataset(std::vector<Sample> samples, std::uint64_t split_seed) {
  Manifest m;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ManifestRecord r;
    r.path = std::to_string(i);
    r.group_id = samples[i].group_id;
    m.records.push_back(std::move(r));
  }
  assign_splits(m, split_seed);
  Dataset d;
  d.samples = std::move(samples);
  for (const auto& r : m.records) {
    d.splits.push_back(r.split);
    d.paths.push_back(r.path);
  }
  return d;
}

}  // namespace urep
