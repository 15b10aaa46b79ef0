#include "hats/checkpoint.hpp"

#include <cstring>

#include "hats/util.hpp"

namespace hats::checkpoint {

namespace {

template <typename T>
void append_raw(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

}  // namespace

void Writer::u32(uint32_t v) { append_raw(buf_, v); }
void Writer::i64(int64_t v) { append_raw(buf_, v); }
void Writer::u64(uint64_t v) { append_raw(buf_, v); }
void Writer::f64(double v) { append_raw(buf_, v); }

void Writer::str(const std::string& s) {
  u32(static_cast<uint32_t>(s.size()));
  buf_.append(s);
}

void Writer::doubles(const std::vector<double>& v) {
  u64(v.size());
  const std::size_t bytes = v.size() * sizeof(double);
  const std::size_t off = buf_.size();
  buf_.resize(off + bytes);
  std::memcpy(buf_.data() + off, v.data(), bytes);
}

const char* Reader::take(std::size_t n) {
  if (pos_ + n > data_.size()) throw Error("checkpoint: truncated file");
  const char* p = data_.data() + pos_;
  pos_ += n;
  return p;
}

uint32_t Reader::u32() {
  uint32_t v;
  std::memcpy(&v, take(sizeof v), sizeof v);
  return v;
}

int64_t Reader::i64() {
  int64_t v;
  std::memcpy(&v, take(sizeof v), sizeof v);
  return v;
}

uint64_t Reader::u64() {
  uint64_t v;
  std::memcpy(&v, take(sizeof v), sizeof v);
  return v;
}

double Reader::f64() {
  double v;
  std::memcpy(&v, take(sizeof v), sizeof v);
  return v;
}

std::string Reader::str() {
  const uint32_t n = u32();
  return std::string(take(n), n);
}

std::vector<double> Reader::doubles() {
  const uint64_t n = u64();
  std::vector<double> v(n);
  std::memcpy(v.data(), take(n * sizeof(double)), n * sizeof(double));
  return v;
}

void write_named_tensors(Writer& w, const std::vector<std::pair<std::string, ad::Tensor>>& params) {
  w.u32(static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.str(name);
    w.u32(static_cast<uint32_t>(t->rows));
    w.u32(static_cast<uint32_t>(t->cols));
    w.doubles(t->val);
  }
}

void read_named_tensors(Reader& r, const std::vector<std::pair<std::string, ad::Tensor>>& params) {
  const uint32_t count = r.u32();
  if (count != params.size()) throw Error("checkpoint: tensor count mismatch");
  for (const auto& [name, t] : params) {
    const std::string got = r.str();
    if (got != name) throw Error("checkpoint: expected tensor '" + name + "', found '" + got + "'");
    const uint32_t rows = r.u32(), cols = r.u32();
    if (rows != static_cast<uint32_t>(t->rows) || cols != static_cast<uint32_t>(t->cols))
      throw Error("checkpoint: shape mismatch for '" + name + "'");
    t->val = r.doubles();
    if (t->val.size() != t->size()) throw Error("checkpoint: value count mismatch for '" + name + "'");
  }
}

void write_config(Writer& w, const model::ModelConfig& cfg) {
  w.i64(cfg.n_classes);
  w.i64(cfg.image_side);
  w.i64(cfg.patch);
  w.i64(cfg.d);
  w.i64(cfg.blocks);
  w.i64(cfg.heads);
  w.i64(cfg.dec_channels);
  w.u32(static_cast<uint32_t>(cfg.head_channels.size()));
  for (int c : cfg.head_channels) w.i64(c);
}

model::ModelConfig read_config(Reader& r) {
  model::ModelConfig cfg;
  cfg.n_classes = static_cast<int>(r.i64());
  cfg.image_side = static_cast<int>(r.i64());
  cfg.patch = static_cast<int>(r.i64());
  cfg.d = static_cast<int>(r.i64());
  cfg.blocks = static_cast<int>(r.i64());
  cfg.heads = static_cast<int>(r.i64());
  cfg.dec_channels = static_cast<int>(r.i64());
  cfg.head_channels.resize(r.u32());
  for (auto& c : cfg.head_channels) c = static_cast<int>(r.i64());
  cfg.validate();
  return cfg;
}

void save_model(const model::Network& net, const std::filesystem::path& path) {
  Writer w;
  w.str(kModelMagic);
  write_config(w, net.config());
  write_named_tensors(w, net.parameters());
  util::write_file(path, w.buffer());
}

model::Network load_model(const std::filesystem::path& path) {
  Reader r(util::read_file(path));
  if (r.str() != kModelMagic) throw Error("checkpoint: bad magic in " + path.string());
  const model::ModelConfig cfg = read_config(r);
  Rng rng(0);  // placeholder values, overwritten below
  model::Network net(cfg, rng);
  read_named_tensors(r, net.parameters());
  return net;
}

}  // namespace hats::checkpoint
