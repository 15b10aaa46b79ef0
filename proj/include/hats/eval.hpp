#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hats/data.hpp"
#include "hats/losses.hpp"
#include "hats/model.hpp"
#include "hats/taxonomy.hpp"

namespace hats::eval {

/// Probability ≥ 0.5 becomes foreground (ties resolve to foreground).
losses::MaskTensor threshold_prob(const losses::MaskTensor& prob);

/// 100 × 2|A∩B| / (|A|+|B|) on thresholded pred vs binary truth. The
/// empty-empty case is 100: a perfect background prediction is not an
/// error. Throws on shape mismatch.
double dice_percent(const losses::MaskTensor& pred, const losses::MaskTensor& truth);

/// One relation violation measured on a set of same-shape per-class maps:
///   superset ⊃ subset:  escape  = Σ p_sub⊙(1−b_sup) / Σ p_sub
///   exclusive i, j:     overlap = Σ b_i⊙b_j / min(Σb_i, Σb_j)
/// (b = thresholded map). `defined` is false when the denominator is zero.
struct PairViolation {
  int i = 0;  // superset class for escape; lower index for overlap
  int j = 0;  // subset class for escape; higher index for overlap
  taxonomy::Relation relation = taxonomy::Relation::Unrelated;
  double value = 0.0;
  bool defined = false;
};

/// All Superset pairs (escape) and unordered Exclusive pairs (overlap) of
/// the matrix, in row-major scan order. probs[k] is class k's map.
std::vector<PairViolation> violation_metrics(const std::vector<losses::MaskTensor>& probs,
                                             const taxonomy::TaxonomyMatrix& matrix);

/// Paired two-sided Wilcoxon signed-rank test. Zero differences are
/// dropped; |differences| are ranked with average ranks for ties;
/// W = min(W⁺, W⁻). For n ≤ 12 the p-value is exact: the fraction of the
/// 2ⁿ sign assignments with min(W⁺, W⁻) ≤ the observed W. Larger n uses
/// the normal approximation with tie and continuity corrections.
/// All differences zero → p = 1.0 with `degenerate` set. 0 < n < 6 throws.
struct WilcoxonResult {
  double w = 0.0;
  double p = 1.0;
  int n = 0;           // pairs surviving the zero-difference drop
  bool exact = false;
  bool degenerate = false;
};
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y);

/// Predicted probability map for `class_id`'s token on a patch window;
/// must match the record's pixel geometry.
using Predictor =
    std::function<losses::MaskTensor(const data::PatchRecord& rec, int class_id)>;

/// Wraps a network as a Predictor. Windows larger than the model input are
/// split into non-overlapping tiles (edge tiles zero-padded), predicted
/// independently, and stitched; smaller windows are zero-padded and the
/// output cropped back. A window that already fits is a single forward.
Predictor make_network_predictor(const model::Network& net);

struct ClassReport {
  std::string name;
  int patch_count = 0;
  double dice = 0.0;            // mean % over this class's test patches
  std::vector<double> samples;  // per-patch Dice, order of appearance
};

/// Group means follow the default taxonomy's three blocks (5 regions,
/// 7 units, 3 cells) and are NaN for other class counts; `overall` is the
/// unweighted mean of per-class Dice.
struct EvalReport {
  std::vector<ClassReport> classes;
  double regions_mean = 0.0;
  double units_mean = 0.0;
  double cells_mean = 0.0;
  double overall = 0.0;
  std::vector<PairViolation> violations;  // per-pair means over test patches
  double escape_mean = 0.0;               // mean of defined escape pairs
  double overlap_mean = 0.0;              // mean of defined overlap pairs
};

/// Per-class Dice over each patch's labeled class, plus violation metrics
/// from all-class predictions on every patch window (peer maps share the
/// patch's crop and scale token, mirroring the training-time coupling).
/// Classes with zero test patches are reported with patch_count 0.
EvalReport evaluate(const Predictor& predict, const std::vector<data::PatchRecord>& patches,
                    const taxonomy::TaxonomyTree& tree, const taxonomy::TaxonomyMatrix& matrix);

/// report.csv: class,patch_count,dice rows plus group/overall summary rows.
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
/// report.md: grouped table (Regions / Units / Cells blocks).
void write_report_md(const std::filesystem::path& path, const EvalReport& report,
                     const std::string& title);
/// samples.csv: class,sample_index,dice — the paired lists `compare` reads.
void write_samples_csv(const std::filesystem::path& path, const EvalReport& report);
std::vector<double> load_samples_csv(const std::filesystem::path& path);

}  // namespace hats::eval
