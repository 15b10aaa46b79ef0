#pragma once

#include <functional>
#include <vector>

#include "hats/image.hpp"
#include "hats/taxonomy.hpp"

namespace hats::losses {

inline constexpr double kDiceEps = 1e-6;
inline constexpr double kBceClip = 1e-7;

/// H×W mask of reals in [0,1]. `binary` asserts values are exactly 0 or 1;
/// labels carry it, predictions do not.
struct MaskTensor {
  int h = 0;
  int w = 0;
  bool binary = false;
  std::vector<double> v;

  static MaskTensor zeros(int h, int w);
  static MaskTensor constant(int h, int w, double value);
  /// Binary tensor from a 0/255 raster mask.
  static MaskTensor from_mask(const image::Image& mask);

  std::size_t size() const { return v.size(); }
  bool same_shape(const MaskTensor& o) const { return h == o.h && w == o.w; }
  /// Throws unless all values are in range (and exactly 0/1 when binary).
  void validate() const;
};

/// Scalar loss plus its gradient w.r.t. the prediction argument.
struct LossValue {
  double value = 0.0;
  std::vector<double> grad;
};

/// (2·Σab + eps) / (Σa + Σb + eps); gradient w.r.t. b. Sums run over pixels
/// where `valid` is 1 (all pixels when null).
LossValue dice_coeff(const MaskTensor& a, const MaskTensor& b, double eps = kDiceEps,
                     const MaskTensor* valid = nullptr);

/// 1 − dice_coeff(y, p); gradient w.r.t. p.
LossValue dice_loss(const MaskTensor& y, const MaskTensor& p, const MaskTensor* valid = nullptr);

/// Mean over (valid) pixels of −[y·log p + (1−y)·log(1−p)], p clamped to
/// [clip, 1−clip]; gradient w.r.t. p, zero where the clamp is active.
LossValue bce(const MaskTensor& y, const MaskTensor& p, const MaskTensor* valid = nullptr);

/// Penalty steering peer prediction p_j given label y_i and the relation of
/// the ordered class pair (i, j):
///   Subset    dice_coeff(1−y_i, p_j)            p_j should cover y_i's region only
///   Superset  −dice_coeff(y_i, y_i + p_j − y_i⊙p_j)   p_j must stay inside y_i
///   Exclusive dice_coeff(y_i, p_j)              overlap minimized
///   Self/Unrelated  0 with zero gradient
/// Gradient w.r.t. p_j.
LossValue taxonomy_pair_loss(const MaskTensor& y_i, const MaskTensor& p_j, taxonomy::Relation r,
                             const MaskTensor* valid = nullptr);

struct PeerTerm {
  const MaskTensor* p_j = nullptr;
  taxonomy::Relation relation = taxonomy::Relation::Unrelated;
  double s_ij = 1.0;
};

/// dice + bce + λ·Σⱼ s_ij·pair, with the decomposition retained so training
/// logs can prove the parts sum to the optimized scalar.
struct TotalLoss {
  double value = 0.0;
  double dice = 0.0;
  double bce = 0.0;
  double taxonomy = 0.0;  // λ-weighted sum of scaled pair terms
  std::vector<double> grad_p_i;
  std::vector<std::vector<double>> grad_peers;  // aligned with the peers list
};

TotalLoss total_loss(const MaskTensor& y_i, const MaskTensor& p_i, const std::vector<PeerTerm>& peers,
                     double lambda_hats, const MaskTensor* valid = nullptr);

/// Central finite differences vs the analytic gradient over every pixel of
/// p; returns the max relative error with denominator max(|analytic|, 1e-8).
/// Keep p interior to (0,1) so clamping stays inactive.
double grad_check(const std::function<LossValue(const MaskTensor&)>& loss_fn, const MaskTensor& p,
                  double step);

}  // namespace hats::losses
