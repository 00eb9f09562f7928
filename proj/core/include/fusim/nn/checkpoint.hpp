#pragma once

#include <filesystem>
#include <string>

#include "fusim/nn/model.hpp"

namespace fusim::nn {

/// Checkpoint layout:
///
///   FUSIM1\n
///   <entry count>\n
///   <name> <rank> <dim>... <byte offset> <element count>\n   (one per entry)
///   END\n
///   <little-endian float64 payload, entries in manifest order>
///
/// Offsets are relative to the first payload byte.
std::string encode_checkpoint(const ParameterSet& params);
ParameterSet decode_checkpoint(const std::string& bytes);

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path);
ParameterSet load_checkpoint(const std::filesystem::path& path);

}  // namespace fusim::nn
