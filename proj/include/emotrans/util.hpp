#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace emotrans {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Hashing and deterministic randomness

/// 64-bit FNV-1a. Stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Hash of a seed and an ordered list of string keys. Keys are length-prefixed
/// so ("ab","c") and ("a","bc") differ.
std::uint64_t keyed_hash(std::uint64_t seed, std::initializer_list<std::string_view> keys);

/// Random source whose draws are identical on every standard library:
/// mt19937_64's output sequence is fixed by the standard, and the bounded and
/// real-valued draws below avoid the implementation-defined std distributions.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01();
  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

  /// k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Strings and files

std::string_view trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
bool starts_with_icase(std::string_view s, std::string_view prefix);

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over the target.
void atomic_write(const std::filesystem::path& path, std::string_view content);

/// Calls fn(record, line_number) for each non-blank line of a JSONL file.
/// Parse failures raise InputError carrying the line number.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const json&, std::size_t)>& fn);

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);

/// Current UTC time as RFC 3339 with second precision ("2024-05-01T12:00:00Z").
std::string rfc3339_now();
bool is_rfc3339(std::string_view s);

// ---------------------------------------------------------------------------
// CSV (RFC 4180 quoting)

void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);
std::string csv_escape(std::string_view field);

/// Parsed CSV with a header row. Quoted fields may span lines.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column; throws InputError if absent.
  std::size_t column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Concurrency

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
/// thrown by any task is rethrown after all threads join.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

// ---------------------------------------------------------------------------
// Structured logging: one JSON object per line.

enum class LogLevel { kDebug, kInfo, kWarn, kError };

class Log {
 public:
  static void set_sink(std::ostream* sink);
  static void set_min_level(LogLevel level);
  static void emit(LogLevel level, std::string_view event, ordered_json fields = {});
  static void info(std::string_view event, ordered_json fields = {}) {
    emit(LogLevel::kInfo, event, std::move(fields));
  }
  static void warn(std::string_view event, ordered_json fields = {}) {
    emit(LogLevel::kWarn, event, std::move(fields));
  }
  static void error(std::string_view event, ordered_json fields = {}) {
    emit(LogLevel::kError, event, std::move(fields));
  }
  /// Number of warnings emitted since start; tests use it to observe warnings.
  static std::size_t warning_count();
};

}  // namespace emotrans
