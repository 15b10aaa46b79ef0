#include "hats/losses.hpp"

#include <algorithm>
#include <cmath>

#include "hats/util.hpp"

namespace hats::losses {

MaskTensor MaskTensor::zeros(int h, int w) { return constant(h, w, 0.0); }

MaskTensor MaskTensor::constant(int h, int w, double value) {
  if (h <= 0 || w <= 0) throw Error("MaskTensor: dimensions must be positive");
  MaskTensor m;
  m.h = h;
  m.w = w;
  m.binary = value == 0.0 || value == 1.0;
  m.v.assign(static_cast<std::size_t>(h) * w, value);
  return m;
}

MaskTensor MaskTensor::from_mask(const image::Image& mask) {
  if (mask.c != 1) throw Error("MaskTensor: raster mask must be single-channel");
  MaskTensor m;
  m.h = mask.h;
  m.w = mask.w;
  m.binary = true;
  m.v.resize(mask.pix.size());
  for (std::size_t i = 0; i < mask.pix.size(); ++i) m.v[i] = mask.pix[i] >= 128 ? 1.0 : 0.0;
  return m;
}

void MaskTensor::validate() const {
  if (static_cast<std::size_t>(h) * w != v.size()) throw Error("MaskTensor: shape/storage mismatch");
  for (double x : v) {
    if (!(x >= 0.0 && x <= 1.0)) throw Error("MaskTensor: value outside [0,1]");
    if (binary && x != 0.0 && x != 1.0) throw Error("MaskTensor: non-binary value under binary flag");
  }
}

namespace {

void require_shape(const MaskTensor& a, const MaskTensor& b, const char* op) {
  if (!a.same_shape(b)) throw Error(std::string(op) + ": shape mismatch");
}

void require_valid_mask(const MaskTensor& p, const MaskTensor* valid, const char* op) {
  if (valid) {
    if (!valid->same_shape(p)) throw Error(std::string(op) + ": validity mask shape mismatch");
    if (!valid->binary) throw Error(std::string(op) + ": validity mask must be binary");
  }
}

inline double gate(const MaskTensor* valid, std::size_t k) { return valid ? valid->v[k] : 1.0; }

// Dice core: value and d/d(b_k). a is treated as constant.
//   D = (2Σab + eps)/(Σa + Σb + eps),  dD/db_k = (2a_k − D)/Q at valid pixels.
LossValue dice_core(const MaskTensor& a, const MaskTensor& b, double eps, const MaskTensor* valid) {
  double inter = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double g = gate(valid, k);
    inter += g * a.v[k] * b.v[k];
    sum_a += g * a.v[k];
    sum_b += g * b.v[k];
  }
  const double num = 2.0 * inter + eps;
  const double den = sum_a + sum_b + eps;
  LossValue out;
  out.value = num / den;
  out.grad.resize(a.size());
  for (std::size_t k = 0; k < a.size(); ++k)
    out.grad[k] = gate(valid, k) * (2.0 * a.v[k] - out.value) / den;
  return out;
}

}  // namespace

LossValue dice_coeff(const MaskTensor& a, const MaskTensor& b, double eps, const MaskTensor* valid) {
  require_shape(a, b, "dice_coeff");
  require_valid_mask(b, valid, "dice_coeff");
  if (eps <= 0) throw Error("dice_coeff: eps must be positive");
  return dice_core(a, b, eps, valid);
}

LossValue dice_loss(const MaskTensor& y, const MaskTensor& p, const MaskTensor* valid) {
  require_shape(y, p, "dice_loss");
  require_valid_mask(p, valid, "dice_loss");
  LossValue out = dice_core(y, p, kDiceEps, valid);
  out.value = 1.0 - out.value;
  for (double& g : out.grad) g = -g;
  return out;
}

LossValue bce(const MaskTensor& y, const MaskTensor& p, const MaskTensor* valid) {
  require_shape(y, p, "bce");
  require_valid_mask(p, valid, "bce");
  if (!y.binary) throw Error("bce: label must be binary");
  double count = 0.0;
  if (valid) {
    for (double g : valid->v) count += g;
  } else {
    count = static_cast<double>(p.size());
  }
  if (count == 0.0) throw Error("bce: validity mask excludes every pixel");

  LossValue out;
  out.grad.assign(p.size(), 0.0);
  double sum = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double g = gate(valid, k);
    if (g == 0.0) continue;
    const double pc = std::clamp(p.v[k], kBceClip, 1.0 - kBceClip);
    sum -= y.v[k] * std::log(pc) + (1.0 - y.v[k]) * std::log(1.0 - pc);
    // Clamped pixels have zero derivative w.r.t. the raw prediction.
    if (p.v[k] > kBceClip && p.v[k] < 1.0 - kBceClip)
      out.grad[k] = (pc - y.v[k]) / (pc * (1.0 - pc)) / count;
  }
  out.value = sum / count;
  return out;
}

LossValue taxonomy_pair_loss(const MaskTensor& y_i, const MaskTensor& p_j, taxonomy::Relation r,
                             const MaskTensor* valid) {
  require_shape(y_i, p_j, "taxonomy_pair_loss");
  require_valid_mask(p_j, valid, "taxonomy_pair_loss");
  if (!y_i.binary) throw Error("taxonomy_pair_loss: label must be binary");

  using taxonomy::Relation;
  switch (r) {
    case Relation::Subset: {
      MaskTensor comp = y_i;
      for (double& x : comp.v) x = 1.0 - x;
      return dice_core(comp, p_j, kDiceEps, valid);
    }
    case Relation::Superset: {
      // y + p − y⊙p, factored as y + (1−y)⊙p: exact for binary y, so the
      // union is bitwise constant where y=1 and finite differences see a
      // true zero gradient there.
      MaskTensor u = p_j;
      for (std::size_t k = 0; k < u.size(); ++k)
        u.v[k] = y_i.v[k] + (1.0 - y_i.v[k]) * p_j.v[k];
      LossValue d = dice_core(y_i, u, kDiceEps, valid);
      LossValue out;
      out.value = -d.value;
      out.grad.resize(d.grad.size());
      // du_k/dp_k = 1 − y_k; binary y zeroes the gradient inside the label.
      for (std::size_t k = 0; k < d.grad.size(); ++k) out.grad[k] = -d.grad[k] * (1.0 - y_i.v[k]);
      return out;
    }
    case Relation::Exclusive:
      return dice_core(y_i, p_j, kDiceEps, valid);
    case Relation::Self:
    case Relation::Unrelated: {
      LossValue out;
      out.grad.assign(p_j.size(), 0.0);
      return out;
    }
  }
  throw Error("taxonomy_pair_loss: unknown relation");
}

TotalLoss total_loss(const MaskTensor& y_i, const MaskTensor& p_i, const std::vector<PeerTerm>& peers,
                     double lambda_hats, const MaskTensor* valid) {
  if (lambda_hats < 0) throw Error("total_loss: lambda must be nonnegative");
  TotalLoss out;
  LossValue d = dice_loss(y_i, p_i, valid);
  LossValue b = bce(y_i, p_i, valid);
  out.dice = d.value;
  out.bce = b.value;
  out.grad_p_i.resize(p_i.size());
  for (std::size_t k = 0; k < p_i.size(); ++k) out.grad_p_i[k] = d.grad[k] + b.grad[k];

  out.grad_peers.reserve(peers.size());
  for (const auto& peer : peers) {
    if (!peer.p_j) throw Error("total_loss: null peer prediction");
    if (peer.s_ij < 0) throw Error("total_loss: negative scale weight");
    if (lambda_hats == 0.0) {
      out.grad_peers.emplace_back(peer.p_j->size(), 0.0);
      continue;
    }
    LossValue t = taxonomy_pair_loss(y_i, *peer.p_j, peer.relation, valid);
    out.taxonomy += lambda_hats * peer.s_ij * t.value;
    auto& g = out.grad_peers.emplace_back(std::move(t.grad));
    for (double& x : g) x *= lambda_hats * peer.s_ij;
  }
  out.value = out.dice + out.bce + out.taxonomy;
  return out;
}

double grad_check(const std::function<LossValue(const MaskTensor&)>& loss_fn, const MaskTensor& p,
                  double step) {
  if (step < 1e-6 || step > 1e-3) throw Error("grad_check: step outside [1e-6, 1e-3]");
  const LossValue base = loss_fn(p);
  if (!std::isfinite(base.value)) throw Error("grad_check: non-finite loss");
  if (base.grad.size() != p.size()) throw Error("grad_check: gradient shape mismatch");

  double worst = 0.0;
  MaskTensor probe = p;
  for (std::size_t k = 0; k < p.size(); ++k) {
    probe.v[k] = p.v[k] + step;
    const double up = loss_fn(probe).value;
    probe.v[k] = p.v[k] - step;
    const double down = loss_fn(probe).value;
    probe.v[k] = p.v[k];
    if (!std::isfinite(up) || !std::isfinite(down)) throw Error("grad_check: non-finite loss");
    const double fd = (up - down) / (2.0 * step);
    const double rel = std::abs(fd - base.grad[k]) / std::max(std::abs(base.grad[k]), 1e-8);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace hats::losses
