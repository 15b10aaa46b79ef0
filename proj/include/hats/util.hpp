#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hats {

/// Error type used across the library for contract violations and bad input.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace util {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

std::vector<std::string> split_ws(std::string_view line);
std::string_view trim(std::string_view s);

/// Split one CSV record. Handles double-quoted fields with "" escapes.
std::vector<std::string> split_csv(std::string_view line);
/// Quote a field if it contains a comma, quote, or newline.
std::string csv_field(std::string_view value);

/// Fixed numeric formatting so reports are byte-stable across runs.
std::string fmt_double(double v, int precision = 10);

double parse_double(std::string_view s, std::string_view what = "number");
long parse_long(std::string_view s, std::string_view what = "integer");

/// Run fn(i) for i in [0, n). With threads <= 1 runs inline; otherwise
/// splits the index range over worker threads. fn must be thread-safe.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace util
}  // namespace hats
