#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace possum {

using Date = std::chrono::sys_days;
using Timestamp = std::chrono::sys_seconds;

// --- strings ---------------------------------------------------------------

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
/// Lowercased and trimmed; the matching key for attribute categories.
std::string normalize(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(std::span<const std::string> parts, std::string_view sep);
bool starts_with_ci(std::string_view s, std::string_view prefix);
void replace_all(std::string& s, std::string_view from, std::string_view to);

// --- time ------------------------------------------------------------------

/// Parses "YYYY-MM-DD".
Date parse_date(std::string_view s);
std::string format_date(Date d);
/// Parses "YYYY-MM-DDTHH:MM:SS[.fff]Z" (a space before the T is tolerated).
Timestamp parse_timestamp(std::string_view s);
/// Formats as "YYYY-MM-DDTHH:MM:SS.000Z".
std::string format_timestamp(Timestamp t);

// --- csv -------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column, or throws Errc::SchemaMismatch.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);
std::string csv_escape(std::string_view field);
std::string csv_line(std::span<const std::string> fields);
/// Shortest round-trip representation of a double.
std::string format_double(double x);

// --- files -----------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);
std::vector<std::string> read_lines(const std::filesystem::path& path);

// --- hashing / rng ---------------------------------------------------------

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Derives an independent generator from a base seed and a list of string salts.
std::mt19937_64 make_rng(std::uint64_t seed, std::initializer_list<std::string_view> salts = {});

/// Uniform double in [0, 1) using the top 53 bits of the generator.
double uniform01(std::mt19937_64& rng);

// --- statistics ------------------------------------------------------------

/// Linear-interpolated quantile (type 7) of an unsorted sample.
double quantile(std::vector<double> values, double p);
double mean(std::span<const double> values);

}  // namespace possum
