#include "possum/util.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "possum/error.hpp"

namespace possum {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::ForeignTweet: return "ForeignTweet";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Io: return "Io";
    case Errc::EmptyTopics: return "EmptyTopics";
    case Errc::WeightTooSmall: return "WeightTooSmall";
    case Errc::ClientError: return "ClientError";
    case Errc::RateLimited: return "RateLimited";
    case Errc::NotFound: return "NotFound";
    case Errc::UnparseableReply: return "UnparseableReply";
    case Errc::AlreadyAugmented: return "AlreadyAugmented";
    case Errc::EmptyFeatures: return "EmptyFeatures";
    case Errc::PlaceholderLeak: return "PlaceholderLeak";
    case Errc::ParseError: return "ParseError";
    case Errc::MissingTitle: return "MissingTitle";
    case Errc::DuplicateTitle: return "DuplicateTitle";
    case Errc::UnknownSymbol: return "UnknownSymbol";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::MissingStateFeatures: return "MissingStateFeatures";
    case Errc::MissingBackground: return "MissingBackground";
    case Errc::AnnotatorError: return "AnnotatorError";
    case Errc::Exhausted: return "Exhausted";
    case Errc::MissingTruth: return "MissingTruth";
    case Errc::EmptyAux: return "EmptyAux";
    case Errc::MissingCombo: return "MissingCombo";
    case Errc::NonConvergence: return "NonConvergence";
    case Errc::StructuralZero: return "StructuralZero";
    case Errc::NonFinite: return "NonFinite";
    case Errc::AllDivergent: return "AllDivergent";
    case Errc::UnknownCategory: return "UnknownCategory";
    case Errc::EmptyCrosstab: return "EmptyCrosstab";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::DegenerateRanks: return "DegenerateRanks";
    case Errc::TooFewDraws: return "TooFewDraws";
    case Errc::AllZero: return "AllZero";
    case Errc::NoSharedAreas: return "NoSharedAreas";
  }
  return "Unknown";
}

std::string trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string normalize(std::string_view s) { return to_lower(trim(s)); }

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string join(std::span<const std::string> parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (prefix.size() > s.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) !=
        std::tolower(static_cast<unsigned char>(prefix[i])))
      return false;
  }
  return true;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  if (from.empty()) return;
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

namespace {

int parse_int(std::string_view s, std::string_view what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw Error(Errc::InvalidArgument, "bad " + std::string(what) + ": '" + std::string(s) + "'");
  return v;
}

std::string pad(int v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

}  // namespace

Date parse_date(std::string_view s) {
  std::string t = trim(s);
  if (t.size() != 10 || t[4] != '-' || t[7] != '-')
    throw Error(Errc::InvalidArgument, "bad date: '" + t + "'");
  using namespace std::chrono;
  year_month_day ymd{year{parse_int(std::string_view(t).substr(0, 4), "year")},
                     month{static_cast<unsigned>(parse_int(std::string_view(t).substr(5, 2), "month"))},
                     day{static_cast<unsigned>(parse_int(std::string_view(t).substr(8, 2), "day"))}};
  if (!ymd.ok()) throw Error(Errc::InvalidArgument, "invalid date: '" + t + "'");
  return sys_days{ymd};
}

std::string format_date(Date d) {
  using namespace std::chrono;
  year_month_day ymd{d};
  return pad(static_cast<int>(ymd.year()), 4) + "-" + pad(static_cast<unsigned>(ymd.month()), 2) + "-" +
         pad(static_cast<unsigned>(ymd.day()), 2);
}

Timestamp parse_timestamp(std::string_view s) {
  std::string t = trim(s);
  std::erase(t, ' ');
  if (t.size() < 20 || t[10] != 'T' || t.back() != 'Z')
    throw Error(Errc::InvalidArgument, "bad timestamp: '" + std::string(s) + "'");
  Date d = parse_date(std::string_view(t).substr(0, 10));
  std::string_view clock = std::string_view(t).substr(11, 8);
  if (clock[2] != ':' || clock[5] != ':')
    throw Error(Errc::InvalidArgument, "bad timestamp: '" + std::string(s) + "'");
  int hh = parse_int(clock.substr(0, 2), "hour");
  int mm = parse_int(clock.substr(3, 2), "minute");
  int ss = parse_int(clock.substr(6, 2), "second");
  if (hh > 23 || mm > 59 || ss > 60)
    throw Error(Errc::InvalidArgument, "bad timestamp: '" + std::string(s) + "'");
  using namespace std::chrono;
  return Timestamp{d} + hours{hh} + minutes{mm} + seconds{ss};
}

std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  auto d = floor<days>(t);
  auto rem = t - d;
  auto h = duration_cast<hours>(rem);
  rem -= h;
  auto m = duration_cast<minutes>(rem);
  rem -= m;
  return format_date(d) + "T" + pad(static_cast<int>(h.count()), 2) + ":" +
         pad(static_cast<int>(m.count()), 2) + ":" + pad(static_cast<int>(rem.count()), 2) + ".000Z";
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw Error(Errc::SchemaMismatch, "missing CSV column '" + std::string(name) + "'");
}

bool CsvTable::has_column(std::string_view name) const {
  return std::find(header.begin(), header.end(), name) != header.end();
}

CsvTable parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"': quoted = true; any = true; break;
      case ',': record.push_back(std::move(field)); field.clear(); any = true; break;
      case '\r': break;
      case '\n':
        record.push_back(std::move(field));
        field.clear();
        if (any || record.size() > 1 || !record.front().empty()) records.push_back(std::move(record));
        record.clear();
        any = false;
        break;
      default: field += c; any = true;
    }
  }
  if (quoted) throw Error(Errc::ParseError, "unterminated quoted CSV field");
  if (any || !field.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  if (records.empty()) throw Error(Errc::ParseError, "CSV has no header row");
  CsvTable table;
  table.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size())
      throw Error(Errc::ParseError, "CSV row " + std::to_string(r) + " has " +
                                        std::to_string(records[r].size()) + " fields, expected " +
                                        std::to_string(table.header.size()));
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_file(path)); }

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string csv_line(std::span<const std::string> fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_escape(fields[i]);
  }
  out += '\n';
  return out;
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write '" + path.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> lines;
  for (auto& line : split(read_file(path), '\n')) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trim(line).empty()) lines.push_back(std::move(line));
  }
  return lines;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined state
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::mt19937_64 make_rng(std::uint64_t seed, std::initializer_list<std::string_view> salts) {
  std::uint64_t s = mix_seed(seed, 0);
  for (auto salt : salts) s = mix_seed(s, fnv1a(salt));
  return std::mt19937_64(s);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(Errc::InvalidArgument, "quantile of empty sample");
  std::sort(values.begin(), values.end());
  double h = (static_cast<double>(values.size()) - 1.0) * p;
  auto lo = static_cast<std::size_t>(std::floor(h));
  auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double mean(std::span<const double> values) {
  if (values.empty()) throw Error(Errc::InvalidArgument, "mean of empty sample");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace possum
