#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace curvlab {

inline constexpr std::string_view kToolVersion = "0.1.0";

// Shortest round-trip-safe text: 17 significant digits.
std::string format_double(double v);

std::uint64_t fnv1a64(std::string_view bytes);

struct Provenance {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

// "# config-hash: ...", "# seed: ...", "# tool-version: ..."
void write_provenance(std::ostream& out, const Provenance& p);

// Comma-joined row; cells are written verbatim.
void write_row(std::ostream& out, const std::vector<std::string>& cells);

struct CsvTable {
  std::vector<std::string> comments;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Reader for the files this library writes: '#' comment lines, a header,
// then plain comma-separated cells (no quoting).
CsvTable read_csv(std::istream& in);

}  // namespace curvlab
