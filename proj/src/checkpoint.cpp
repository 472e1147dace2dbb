#include "urep/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "urep/error.hpp"
#include "urep/text.hpp"

namespace urep {

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

constexpr std::string_view kChecksumKey = "header_checksum";

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '\\') out += "\\\\";
    else if (c == '\n') out += "\\n";
    else out += c;
  }
  return out;
}

std::string unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    if (i + 1 >= s.size()) throw CheckpointHeaderError("dangling escape in checkpoint header");
    const char n = s[++i];
    if (n == '\\') out += '\\';
    else if (n == 'n') out += '\n';
    else throw CheckpointHeaderError("unknown escape in checkpoint header");
  }
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

bool valid_task_id(std::string_view id) {
  if (id.empty()) return false;
  for (char c : id) {
    if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_')) return false;
  }
  return true;
}

std::string int_list(const std::vector<int>& v) {
  if (v.empty()) return "-";
  std::vector<std::string> parts;
  for (int x : v) parts.push_back(std::to_string(x));
  return join(parts, ",");
}

// Every tensor of the model in file order: shared backbone, then each head
// (its private backbone copy first, if any).
std::vector<NamedTensor<float>> all_tensors(URepModel<float>& model) {
  auto out = model.backbone.state();
  for (auto& head : model.heads) {
    if (head.tuned_backbone) {
      for (auto& nt : head.tuned_backbone->state()) out.push_back({"tuned." + head.task_id() + "." + nt.name, nt.tensor});
    }
    for (auto& nt : head.layers.state()) out.push_back(nt);
  }
  return out;
}

void put_backbone_config(std::map<std::string, std::string>& kv, const BackboneConfig& c) {
  kv["backbone.arch"] = std::string(to_string(c.arch));
  kv["backbone.in_channels"] = std::to_string(c.in_channels);
  kv["backbone.kernel"] = std::to_string(c.kernel);
  kv["backbone.dilation"] = std::to_string(c.dilation);
  kv["backbone.channels"] = int_list(c.channels);
  kv["backbone.strides"] = int_list(c.strides);
  kv["backbone.has_decoder"] = c.has_decoder ? "true" : "false";
}

}  // namespace

std::string serialize_checkpoint(URepModel<float>& model) {
  std::map<std::string, std::string> kv;
  put_backbone_config(kv, model.backbone.config());
  kv["construction_mode"] = std::string(to_string(model.construction_mode));
  kv["optimizer"] = std::string(to_string(model.optimizer));
  kv["seed"] = std::to_string(model.seed);
  kv["input_size"] = std::to_string(model.input_size);
  std::vector<std::string> ids;
  for (const auto& h : model.heads) {
    if (!valid_task_id(h.task_id())) throw ContractError("task id '" + h.task_id() + "' cannot be stored");
    ids.push_back(h.task_id());
    const std::string p = "head." + h.task_id() + ".";
    kv[p + "kind"] = std::string(to_string(h.kind()));
    kv[p + "num_classes"] = std::to_string(h.config.num_classes);
    kv[p + "hidden"] = std::to_string(h.config.hidden);
    kv[p + "dropout"] = format_double(h.config.dropout);
    kv[p + "optimizer"] = std::string(to_string(h.config.optimizer));
    kv[p + "inherited"] = h.inherited.empty() ? "-" : join(h.inherited, ",");
    kv[p + "tuned_backbone"] = h.tuned_backbone ? "true" : "false";
  }
  kv["heads"] = ids.empty() ? "-" : join(ids, ",");
  for (const auto& [k, v] : model.provenance) kv["provenance." + k] = v;

  std::ostringstream header;
  header << kCheckpointMagic;
  const auto tensors = all_tensors(model);
  for (const auto& nt : tensors) {
    header << nt.name;
    for (auto d : nt.tensor->shape()) header << ' ' << d;
    header << '\n';
  }
  for (const auto& [k, v] : kv) header << k << '=' << escape(v) << '\n';
  std::string text = header.str();
  text += std::string(kChecksumKey) + "=" + hex64(fnv1a64(text)) + "\n\n";

  std::string out = std::move(text);
  for (const auto& nt : tensors) {
    for (float v : nt.tensor->data()) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int k = 0; k < 4; ++k) out += static_cast<char>((bits >> (8 * k)) & 0xffu);
    }
  }
  return out;
}

namespace {

struct HeaderTensor {
  std::string name;
  Shape shape;
};

const std::string& need(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw CheckpointHeaderError("checkpoint header lacks '" + key + "'");
  return it->second;
}

// Header values are covered by the checksum, so a bad value here means the
// writer and reader disagree; report it as a header problem.
template <typename F>
auto header_value(F&& f) {
  try {
    return f();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointHeaderError(std::string("bad checkpoint header value: ") + e.what());
  }
}

}  // namespace

URepModel<float> parse_checkpoint(std::string_view bytes) {
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw CheckpointHeaderError("not a checkpoint (bad magic)");
  }
  const auto end = bytes.find("\n\n", kCheckpointMagic.size() - 1);
  if (end == std::string_view::npos) throw CheckpointHeaderError("checkpoint header has no terminating blank line");
  const std::string_view header = bytes.substr(0, end + 1);
  const std::string_view payload = bytes.substr(end + 2);

  const auto sum_pos = header.rfind(std::string("\n") + std::string(kChecksumKey) + "=");
  if (sum_pos == std::string_view::npos) throw CheckpointHeaderError("checkpoint header has no checksum");
  const std::string_view covered = header.substr(0, sum_pos + 1);
  const std::string stored = trim(header.substr(sum_pos + 1 + kChecksumKey.size() + 1));
  if (stored != hex64(fnv1a64(covered))) throw CheckpointHeaderError("checkpoint header checksum mismatch");

  std::vector<HeaderTensor> declared;
  std::map<std::string, std::string> kv;
  const auto lines = split(covered.substr(kCheckpointMagic.size()), '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq != std::string::npos) {
      kv[line.substr(0, eq)] = unescape(std::string_view(line).substr(eq + 1));
      continue;
    }
    if (!kv.empty()) throw CheckpointHeaderError("tensor line after key-value lines");
    const auto parts = split(line, ' ');
    HeaderTensor t;
    t.name = parts[0];
    for (std::size_t j = 1; j < parts.size(); ++j) {
      t.shape.push_back(header_value([&] { return parse_int(parts[j], "tensor extent"); }));
      if (t.shape.back() < 1) throw CheckpointHeaderError("non-positive extent for tensor " + t.name);
    }
    declared.push_back(std::move(t));
  }

  URepModel<float> model;
  Rng unused(0);
  header_value([&] {
    BackboneConfig c;
    c.arch = parse_arch(need(kv, "backbone.arch"));
    c.in_channels = static_cast<int>(parse_int(need(kv, "backbone.in_channels"), "in_channels"));
    c.kernel = static_cast<int>(parse_int(need(kv, "backbone.kernel"), "kernel"));
    c.dilation = static_cast<int>(parse_int(need(kv, "backbone.dilation"), "dilation"));
    c.channels = parse_int_list(need(kv, "backbone.channels"), "channels");
    const auto& strides = need(kv, "backbone.strides");
    c.strides = strides == "-" ? std::vector<int>{} : parse_int_list(strides, "strides");
    c.has_decoder = parse_bool(need(kv, "backbone.has_decoder"), "has_decoder");
    model.backbone = Backbone<float>(c, unused);
    model.construction_mode = parse_construction_mode(need(kv, "construction_mode"));
    model.optimizer = parse_optimizer(need(kv, "optimizer"));
    model.seed = static_cast<std::uint64_t>(std::stoull(need(kv, "seed")));
    model.input_size = static_cast<int>(parse_int(need(kv, "input_size"), "input_size"));
    const auto& ids = need(kv, "heads");
    if (ids != "-") {
      for (const auto& id : split(ids, ',')) {
        const std::string p = "head." + id + ".";
        HeadConfig hc;
        hc.task_id = id;
        hc.kind = parse_head_kind(need(kv, p + "kind"));
        hc.num_classes = static_cast<int>(parse_int(need(kv, p + "num_classes"), "num_classes"));
        hc.hidden = static_cast<int>(parse_int(need(kv, p + "hidden"), "hidden"));
        hc.dropout = parse_double(need(kv, p + "dropout"), "dropout");
        hc.optimizer = parse_optimizer(need(kv, p + "optimizer"));
        auto head = make_head(model.backbone, hc, unused);
        const auto& inh = need(kv, p + "inherited");
        head.inherited = inh == "-" ? std::vector<std::string>{} : split(inh, ',');
        if (parse_bool(need(kv, p + "tuned_backbone"), "tuned_backbone")) head.tuned_backbone = model.backbone;
        model.heads.push_back(std::move(head));
      }
    }
    return 0;
  });
  for (const auto& [k, v] : kv) {
    if (k.rfind("provenance.", 0) == 0) model.provenance[k.substr(11)] = v;
  }

  auto tensors = all_tensors(model);
  if (tensors.size() != declared.size()) {
    throw CheckpointShapeError("checkpoint declares " + std::to_string(declared.size()) + " tensors, the architecture has " +
                               std::to_string(tensors.size()));
  }
  std::size_t need_bytes = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (declared[i].name != tensors[i].name) {
      throw CheckpointShapeError("expected tensor " + tensors[i].name + ", found " + declared[i].name);
    }
    if (declared[i].shape != tensors[i].tensor->shape()) {
      throw CheckpointShapeError("tensor " + tensors[i].name + " has shape " + to_string(declared[i].shape) +
                                 ", the architecture needs " + to_string(tensors[i].tensor->shape()));
    }
    need_bytes += tensors[i].tensor->size() * 4;
  }
  if (payload.size() < need_bytes) {
    throw CheckpointTruncatedError("checkpoint payload has " + std::to_string(payload.size()) + " bytes, header declares " +
                                   std::to_string(need_bytes));
  }
  if (payload.size() > need_bytes) throw CheckpointHeaderError("checkpoint has trailing bytes after the payload");
  std::size_t off = 0;
  for (auto& nt : tensors) {
    for (auto& v : nt.tensor->data()) {
      std::uint32_t bits = 0;
      for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[off + k])) << (8 * k);
      v = std::bit_cast<float>(bits);
      off += 4;
    }
  }
  return model;
}

void save_checkpoint(URepModel<float>& model, const std::string& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing checkpoint " + path);
}

URepModel<float> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace urep
