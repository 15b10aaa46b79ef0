#pragma once

#include <filesystem>
#include <string>

#include "hats/model.hpp"
#include "hats/scale.hpp"
#include "hats/trainer.hpp"

namespace hats::runconfig {

/// Everything a training or evaluation run needs, resolved from a
/// `key = value` text file plus command-line overrides. Unset paths stay
/// empty; each pipeline checks for the paths it actually requires.
struct RunConfig {
  trainer::TrainConfig train;
  model::ModelConfig model;  // n_classes is filled from the tree at run time
  scale::ScaleFormula scale_formula = scale::ScaleFormula::Ratio;
  std::filesystem::path tree;
  std::filesystem::path manifest;  // optional: measured from the train split when empty
  std::filesystem::path dataset;
  std::filesystem::path out;
};

/// Parses `key = value` lines ('#' starts a comment, blank lines ignored).
/// Keys: warmup_epochs, total_epochs, lambda_hats, lr, batch_size, seed,
/// paper_protocol, peer_policy (all_related|top_k|threshold), peer_k,
/// peer_s_min, scale_formula (ratio|sqrt_ratio|ones), model.image_side,
/// model.patch, model.d, model.blocks, model.heads, model.dec_channels,
/// model.head_channels (comma-separated), tree, manifest, dataset, out.
/// Unknown keys and malformed values throw.
RunConfig parse(const std::string& text);

RunConfig load(const std::filesystem::path& path);

/// Applies one `key=value` override (same key set as parse).
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);

/// Canonical text form: every key, sorted, one per line. parse(serialize(c))
/// round-trips, and two configs serialize equally iff they run identically.
std::string serialize(const RunConfig& cfg);

}  // namespace hats::runconfig
