#include "hats/runconfig.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "hats/util.hpp"

namespace hats::runconfig {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw Error("config: " + key + " expects an integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw Error("config: " + key + " expects a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error("config: " + key + " expects true/false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(key, trim(item)));
  if (out.empty()) throw Error("config: " + key + " expects a comma-separated list");
  return out;
}

std::string policy_name(const trainer::PeerPolicy& p) {
  switch (p.kind) {
    case trainer::PeerPolicy::Kind::AllRelated: return "all_related";
    case trainer::PeerPolicy::Kind::TopKByScale: return "top_k";
    case trainer::PeerPolicy::Kind::Threshold: return "threshold";
  }
  throw Error("config: unknown peer policy kind");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "warmup_epochs")
    cfg.train.warmup_epochs = to_int(key, v);
  else if (key == "total_epochs")
    cfg.train.total_epochs = to_int(key, v);
  else if (key == "lambda_hats")
    cfg.train.lambda_hats = to_double(key, v);
  else if (key == "lr")
    cfg.train.lr = to_double(key, v);
  else if (key == "batch_size")
    cfg.train.batch_size = to_int(key, v);
  else if (key == "seed")
    cfg.train.seed = static_cast<uint64_t>(to_int(key, v));
  else if (key == "paper_protocol")
    cfg.train.paper_protocol = to_bool(key, v);
  else if (key == "peer_policy") {
    if (v == "all_related")
      cfg.train.policy.kind = trainer::PeerPolicy::Kind::AllRelated;
    else if (v == "top_k")
      cfg.train.policy.kind = trainer::PeerPolicy::Kind::TopKByScale;
    else if (v == "threshold")
      cfg.train.policy.kind = trainer::PeerPolicy::Kind::Threshold;
    else
      throw Error("config: peer_policy must be all_related, top_k, or threshold, got '" + v + "'");
  } else if (key == "peer_k")
    cfg.train.policy.k = to_int(key, v);
  else if (key == "peer_s_min")
    cfg.train.policy.s_min = to_double(key, v);
  else if (key == "scale_formula")
    cfg.scale_formula = scale::scale_formula_from_string(v);
  else if (key == "model.image_side")
    cfg.model.image_side = to_int(key, v);
  else if (key == "model.patch")
    cfg.model.patch = to_int(key, v);
  else if (key == "model.d")
    cfg.model.d = to_int(key, v);
  else if (key == "model.blocks")
    cfg.model.blocks = to_int(key, v);
  else if (key == "model.heads")
    cfg.model.heads = to_int(key, v);
  else if (key == "model.dec_channels")
    cfg.model.dec_channels = to_int(key, v);
  else if (key == "model.head_channels")
    cfg.model.head_channels = to_int_list(key, v);
  else if (key == "tree")
    cfg.tree = v;
  else if (key == "manifest")
    cfg.manifest = v;
  else if (key == "dataset")
    cfg.dataset = v;
  else if (key == "out")
    cfg.out = v;
  else
    throw Error("config: unknown key '" + key + "'");
}

RunConfig parse(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    set_key(cfg, trim(stripped.substr(0, eq)), stripped.substr(eq + 1));
  }
  return cfg;
}

RunConfig load(const std::filesystem::path& path) { return parse(util::read_file(path)); }

std::string serialize(const RunConfig& cfg) {
  std::string out;
  auto put = [&out](const std::string& key, const std::string& value) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  };
  put("batch_size", std::to_string(cfg.train.batch_size));
  put("dataset", cfg.dataset.string());
  put("lambda_hats", fmt_double(cfg.train.lambda_hats));
  put("lr", fmt_double(cfg.train.lr));
  put("manifest", cfg.manifest.string());
  std::string heads;
  for (std::size_t i = 0; i < cfg.model.head_channels.size(); ++i) {
    if (i) heads += ',';
    heads += std::to_string(cfg.model.head_channels[i]);
  }
  put("model.blocks", std::to_string(cfg.model.blocks));
  put("model.d", std::to_string(cfg.model.d));
  put("model.dec_channels", std::to_string(cfg.model.dec_channels));
  put("model.head_channels", heads);
  put("model.heads", std::to_string(cfg.model.heads));
  put("model.image_side", std::to_string(cfg.model.image_side));
  put("model.patch", std::to_string(cfg.model.patch));
  put("out", cfg.out.string());
  put("paper_protocol", cfg.train.paper_protocol ? "true" : "false");
  put("peer_k", std::to_string(cfg.train.policy.k));
  put("peer_policy", policy_name(cfg.train.policy));
  put("peer_s_min", fmt_double(cfg.train.policy.s_min));
  put("scale_formula", std::string(scale::scale_formula_name(cfg.scale_formula)));
  put("seed", std::to_string(cfg.train.seed));
  put("total_epochs", std::to_string(cfg.train.total_epochs));
  put("tree", cfg.tree.string());
  put("warmup_epochs", std::to_string(cfg.train.warmup_epochs));
  return out;
}

}  // namespace hats::runconfig
