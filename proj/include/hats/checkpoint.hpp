#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hats/model.hpp"

namespace hats::checkpoint {

/// Little-endian binary writer/reader for checkpoint blobs. Doubles are
/// memcpy'd IEEE754 bits, so identical values round-trip byte-identically.
class Writer {
 public:
  void u32(uint32_t v);
  void i64(int64_t v);
  void u64(uint64_t v);
  void f64(double v);
  void str(const std::string& s);
  void doubles(const std::vector<double>& v);
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  uint32_t u32();
  int64_t i64();
  uint64_t u64();
  double f64();
  std::string str();
  std::vector<double> doubles();
  bool exhausted() const { return pos_ == data_.size(); }

 private:
  const char* take(std::size_t n);
  std::string data_;
  std::size_t pos_ = 0;
};

/// Named tensor section: count, then (name, rows, cols, values) per entry.
void write_named_tensors(Writer& w, const std::vector<std::pair<std::string, ad::Tensor>>& params);
/// Loads values into the given registry; names and shapes must match exactly.
void read_named_tensors(Reader& r, const std::vector<std::pair<std::string, ad::Tensor>>& params);

void write_config(Writer& w, const model::ModelConfig& cfg);
model::ModelConfig read_config(Reader& r);

/// Model-only checkpoint, magic HATSCKP1: config + weights.
void save_model(const model::Network& net, const std::filesystem::path& path);
model::Network load_model(const std::filesystem::path& path);

inline constexpr char kModelMagic[] = "HATSCKP1";
inline constexpr char kTrainMagic[] = "HATSTRN1";

}  // namespace hats::checkpoint
