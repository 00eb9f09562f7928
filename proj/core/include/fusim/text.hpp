#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace fusim {

/// Locale-independent number parsing; nullopt unless the whole text is consumed.
std::optional<double> parse_double(std::string_view text);
std::optional<std::uint64_t> parse_uint(std::string_view text);

/// Locale-independent fixed-point formatting ("12.34").
std::string format_fixed(double value, int decimals);
/// Shortest round-trip representation.
std::string format_shortest(double value);

std::string_view trim(std::string_view text);

}  // namespace fusim
