#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hats/data.hpp"
#include "hats/model.hpp"
#include "hats/rng.hpp"
#include "hats/scale.hpp"
#include "hats/taxonomy.hpp"

namespace hats::trainer {

struct PeerPolicy {
  enum class Kind { AllRelated, TopKByScale, Threshold };
  Kind kind = Kind::Threshold;
  int k = 1;             // TopKByScale
  double s_min = 0.001;  // Threshold

  static PeerPolicy all_related() { return {Kind::AllRelated, 0, 0.0}; }
  static PeerPolicy top_k(int k) { return {Kind::TopKByScale, k, 0.0}; }
  static PeerPolicy threshold(double s_min) { return {Kind::Threshold, 0, s_min}; }
  bool operator==(const PeerPolicy&) const = default;
};

struct TrainConfig {
  int warmup_epochs = 10;
  int total_epochs = 20;
  double lambda_hats = 0.1;
  double lr = 1e-3;
  int batch_size = 8;
  PeerPolicy policy;
  uint64_t seed = 0;
  /// Ignores warmup_epochs and spends the first half of the run supervised
  /// only: warmup = total/2.
  bool paper_protocol = false;

  int warmup() const { return paper_protocol ? total_epochs / 2 : warmup_epochs; }
  void validate() const;  // warmup ≤ total, λ ≥ 0, lr > 0, batch ≥ 1
  bool operator==(const TrainConfig&) const = default;
};

/// Relation/weight lookups behind a read counter, so tests can prove the
/// warm-up phase never consults either matrix.
struct Matrices {
  const taxonomy::TaxonomyMatrix* taxonomy = nullptr;
  const scale::ScaleMatrix* scale = nullptr;
  mutable long reads = 0;

  taxonomy::Relation relation(int i, int j) const;
  double weight(int i, int j) const;
};

struct Peer {
  int class_index = 0;
  taxonomy::Relation relation = taxonomy::Relation::Unrelated;
  double s_ij = 0.0;
};

/// Peers of class i under the policy. Self and Unrelated never appear
/// (their pair loss is identically zero). AllRelated and Threshold return
/// ascending class index; TopKByScale returns descending s_ij, ties broken
/// toward the lower class index.
std::vector<Peer> select_peers(int i, const Matrices& mats, const PeerPolicy& policy);

/// Adaptive moment estimation, β = (0.9, 0.999), ε = 1e-8, bias-corrected.
/// step() consumes and clears the parameter gradients.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, ad::Tensor>> params, double lr);
  void step();
  int64_t t() const { return t_; }

  // Moment access for train-state serialization (aligned with params).
  const std::vector<std::vector<double>>& m() const { return m_; }
  const std::vector<std::vector<double>>& v() const { return v_; }
  void restore(int64_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

 private:
  std::vector<std::pair<std::string, ad::Tensor>> params_;
  double lr_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Per-step loss decomposition; total = dice + bce + taxonomy to within
/// double rounding (proved in tests at 1e-10).
struct StepLosses {
  double total = 0.0;
  double dice = 0.0;
  double bce = 0.0;
  double taxonomy = 0.0;
};

/// One optimizer update from a batch of single-class-labeled patches.
/// Each patch is randomly cropped (or zero-padded, with the pad excluded
/// from every loss sum via a validity mask) to the model input size; after
/// the warm-up epochs each labeled forward is joined by peer forwards on
/// the same crop, weighted by s_ij. Losses are batch means.
/// Throws after dumping diagnostics if the loss turns non-finite.
StepLosses train_step(model::Network& net, Adam& opt,
                      const std::vector<const data::PatchRecord*>& batch, const Matrices& mats,
                      const TrainConfig& cfg, int epoch, Rng& rng);

struct EpochStats {
  int epoch = 0;
  double train_total = 0.0;
  double train_dice = 0.0;
  double train_bce = 0.0;
  double train_taxonomy = 0.0;
  double val_dice = 0.0;  // mean over classes present in the val split, %
};

struct FitResult {
  std::vector<EpochStats> history;
  double best_val = 0.0;
  int best_epoch = 0;
};

/// Runs total_epochs over the train split (shuffled per epoch), scores
/// per-class Dice on the val split after each epoch, rewrites history.csv,
/// keeps the best-val checkpoint at best.ckpt, and snapshots resumable
/// state at state.trn after every epoch. With resume=true an existing
/// state.trn continues the run: the completed file set is byte-identical
/// to the uninterrupted run's. Single-threaded and deterministic.
FitResult fit(model::Network& net, const data::Dataset& dataset, const Matrices& mats,
              const TrainConfig& cfg, const std::filesystem::path& out_dir, bool resume = false);

inline constexpr char kHistoryCsv[] = "history.csv";
inline constexpr char kBestCheckpoint[] = "best.ckpt";
inline constexpr char kStateFile[] = "state.trn";

}  // namespace hats::trainer
