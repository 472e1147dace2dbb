#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "urep/model.hpp"

namespace urep {

/// File layout:
///
///   UREP1
///   <tensor name> <dim> <dim> ...        one line per tensor, payload order
///   <key>=<value>                        configuration and provenance
///   header_checksum=<16 hex digits>      FNV-1a of everything above this line
///   <blank line>
///   <float32 little-endian payloads, row-major, in header order>
///
/// Values escape backslash and newline as \\ and \n.
inline constexpr std::string_view kCheckpointMagic = "UREP1\n";

std::string serialize_checkpoint(URepModel<float>& model);
/// Throws CheckpointHeaderError (bad magic, malformed or tampered header),
/// CheckpointShapeError (tensor list or shapes disagree with the stored
/// architecture) or CheckpointTruncatedError (payload shorter than declared).
URepModel<float> parse_checkpoint(std::string_view bytes);

void save_checkpoint(URepModel<float>& model, const std::string& path);
URepModel<float> load_checkpoint(const std::string& path);

/// 64-bit FNV-1a, the header checksum.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

}  // namespace urep
