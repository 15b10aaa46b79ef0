#include "hats/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "hats/image.hpp"
#include "hats/util.hpp"

namespace hats::eval {

using losses::MaskTensor;

MaskTensor threshold_prob(const MaskTensor& prob) {
  MaskTensor out = prob;
  out.binary = true;
  for (double& v : out.v) v = v >= 0.5 ? 1.0 : 0.0;
  return out;
}

double dice_percent(const MaskTensor& pred, const MaskTensor& truth) {
  if (!pred.same_shape(truth)) throw Error("dice_percent: shape mismatch");
  truth.validate();
  if (!truth.binary) throw Error("dice_percent: truth must be binary");
  const MaskTensor b = threshold_prob(pred);
  double inter = 0.0, sa = 0.0, sb = 0.0;
  for (std::size_t k = 0; k < b.v.size(); ++k) {
    inter += b.v[k] * truth.v[k];
    sa += b.v[k];
    sb += truth.v[k];
  }
  if (sa + sb == 0.0) return 100.0;  // both empty: perfect background
  return 100.0 * 2.0 * inter / (sa + sb);
}

namespace {

double sum(const MaskTensor& m) { return std::accumulate(m.v.begin(), m.v.end(), 0.0); }

/// Pair list induced by the matrix, in row-major scan order; `value` and
/// `defined` left empty. Shared by violation_metrics and evaluate so the
/// two stay aligned.
std::vector<PairViolation> pair_template(const taxonomy::TaxonomyMatrix& matrix) {
  std::vector<PairViolation> pairs;
  for (int i = 0; i < matrix.n; ++i)
    for (int j = 0; j < matrix.n; ++j) {
      const taxonomy::Relation r = matrix.at(i, j);
      if (r == taxonomy::Relation::Superset)
        pairs.push_back({i, j, r, 0.0, false});
      else if (r == taxonomy::Relation::Exclusive && i < j)
        pairs.push_back({i, j, r, 0.0, false});
    }
  return pairs;
}

}  // namespace

std::vector<PairViolation> violation_metrics(const std::vector<MaskTensor>& probs,
                                             const taxonomy::TaxonomyMatrix& matrix) {
  if (static_cast<int>(probs.size()) != matrix.n)
    throw Error("violation_metrics: map count does not match matrix size");
  for (const auto& p : probs)
    if (!p.same_shape(probs.front())) throw Error("violation_metrics: shape mismatch");

  std::vector<MaskTensor> bin;
  bin.reserve(probs.size());
  for (const auto& p : probs) bin.push_back(threshold_prob(p));

  std::vector<PairViolation> pairs = pair_template(matrix);
  for (PairViolation& pv : pairs) {
    const std::size_t i = static_cast<std::size_t>(pv.i), j = static_cast<std::size_t>(pv.j);
    if (pv.relation == taxonomy::Relation::Superset) {
      // Predicted subset mass escaping the superset's binary region.
      double num = 0.0;
      const double den = sum(probs[j]);
      for (std::size_t k = 0; k < probs[j].v.size(); ++k)
        num += probs[j].v[k] * (1.0 - bin[i].v[k]);
      if (den > 0.0) {
        pv.value = num / den;
        pv.defined = true;
      }
    } else {
      double inter = 0.0;
      for (std::size_t k = 0; k < bin[i].v.size(); ++k) inter += bin[i].v[k] * bin[j].v[k];
      const double den = std::min(sum(bin[i]), sum(bin[j]));
      if (den > 0.0) {
        pv.value = inter / den;
        pv.defined = true;
      }
    }
  }
  return pairs;
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error("wilcoxon: paired lists differ in length");
  std::vector<double> d;
  for (std::size_t k = 0; k < x.size(); ++k)
    if (x[k] != y[k]) d.push_back(x[k] - y[k]);

  WilcoxonResult res;
  res.n = static_cast<int>(d.size());
  if (d.empty()) {
    res.degenerate = true;
    res.exact = true;
    return res;  // all differences zero: W = 0, p = 1
  }
  if (res.n < 6) throw Error("wilcoxon: need at least 6 nonzero differences");

  // Average ranks over |d| ties.
  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> rank(n, 0.0);
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo + 1;
    while (hi < n && std::abs(d[order[hi]]) == std::abs(d[order[lo]])) ++hi;
    const double avg = (static_cast<double>(lo + 1) + static_cast<double>(hi)) / 2.0;
    for (std::size_t k = lo; k < hi; ++k) rank[order[k]] = avg;
    lo = hi;
  }

  double wp = 0.0, total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    total += rank[k];
    if (d[k] > 0) wp += rank[k];
  }
  const double wm = total - wp;
  res.w = std::min(wp, wm);

  if (res.n <= 12) {
    // Exact: fraction of the 2ⁿ sign assignments (observed ranks kept)
    // whose min(W⁺, W⁻) is at most the observed statistic.
    res.exact = true;
    const uint64_t lim = 1ull << n;
    uint64_t hits = 0;
    for (uint64_t m = 0; m < lim; ++m) {
      double w_pos = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        if (m & (1ull << k)) w_pos += rank[k];
      if (std::min(w_pos, total - w_pos) <= res.w + 1e-12) ++hits;
    }
    res.p = static_cast<double>(hits) / static_cast<double>(lim);
  } else {
    // Normal approximation. Var(W⁺) = Σrᵢ²/4, which with average ranks
    // equals n(n+1)(2n+1)/24 − Σ(t³−t)/48; +0.5 continuity toward the mean.
    const double mu = total / 2.0;
    double sum_r2 = 0.0;
    for (double r : rank) sum_r2 += r * r;
    const double sigma = std::sqrt(sum_r2 / 4.0);
    const double z = (res.w - mu + 0.5) / sigma;
    res.p = std::erfc(-z / std::numbers::sqrt2);  // 2·Φ(z)
    res.p = std::clamp(res.p, std::numeric_limits<double>::min(), 1.0);
  }
  return res;
}

Predictor make_network_predictor(const model::Network& net) {
  return [&net](const data::PatchRecord& rec, int class_id) {
    const int side = net.config().image_side;
    const int w = rec.image.w, h = rec.image.h;
    if (w == side && h == side)
      return net.forward(rec.image, class_id, rec.magnification).prob_mask();

    MaskTensor out = MaskTensor::zeros(h, w);
    for (int y0 = 0; y0 < h; y0 += side)
      for (int x0 = 0; x0 < w; x0 += side) {
        const image::Image tile = image::crop_pad(rec.image, x0, y0, side);
        const MaskTensor pm = net.forward(tile, class_id, rec.magnification).prob_mask();
        for (int y = 0; y < std::min(side, h - y0); ++y)
          for (int x = 0; x < std::min(side, w - x0); ++x)
            out.v[static_cast<std::size_t>(y0 + y) * w + (x0 + x)] =
                pm.v[static_cast<std::size_t>(y) * side + x];
      }
    return out;
  };
}

EvalReport evaluate(const Predictor& predict, const std::vector<data::PatchRecord>& patches,
                    const taxonomy::TaxonomyTree& tree, const taxonomy::TaxonomyMatrix& matrix) {
  if (tree.size() != matrix.n) throw Error("evaluate: tree and matrix disagree on class count");
  const int n = tree.size();

  EvalReport rep;
  rep.classes.resize(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) rep.classes[static_cast<std::size_t>(c)].name = tree.name_of(c);

  std::vector<PairViolation> acc = pair_template(matrix);
  std::vector<long> acc_n(acc.size(), 0);

  for (const data::PatchRecord& rec : patches) {
    std::vector<MaskTensor> probs;
    probs.reserve(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) probs.push_back(predict(rec, c));

    const MaskTensor truth = MaskTensor::from_mask(rec.mask);
    const double dice = dice_percent(probs[static_cast<std::size_t>(rec.class_index)], truth);
    auto& cls = rep.classes[static_cast<std::size_t>(rec.class_index)];
    cls.samples.push_back(dice);
    ++cls.patch_count;

    const auto pv = violation_metrics(probs, matrix);
    for (std::size_t k = 0; k < pv.size(); ++k)
      if (pv[k].defined) {
        acc[k].value += pv[k].value;
        ++acc_n[k];
      }
  }

  double overall = 0.0;
  int present = 0;
  for (auto& cls : rep.classes) {
    if (cls.patch_count > 0) {
      cls.dice = std::accumulate(cls.samples.begin(), cls.samples.end(), 0.0) /
                 static_cast<double>(cls.patch_count);
      overall += cls.dice;
      ++present;
    }
  }
  rep.overall = present > 0 ? overall / present : 0.0;

  // Group means exist only for the default 15-class layout: class indices
  // 0–4 regions, 5–11 units, 12–14 cells.
  auto block_mean = [&](int lo, int hi) {
    double s = 0.0;
    int k = 0;
    for (int c = lo; c < hi; ++c)
      if (rep.classes[static_cast<std::size_t>(c)].patch_count > 0) {
        s += rep.classes[static_cast<std::size_t>(c)].dice;
        ++k;
      }
    return k > 0 ? s / k : std::numeric_limits<double>::quiet_NaN();
  };
  if (n == 15) {
    rep.regions_mean = block_mean(0, 5);
    rep.units_mean = block_mean(5, 12);
    rep.cells_mean = block_mean(12, 15);
  } else {
    rep.regions_mean = rep.units_mean = rep.cells_mean =
        std::numeric_limits<double>::quiet_NaN();
  }

  double esc = 0.0, ovl = 0.0;
  int n_esc = 0, n_ovl = 0;
  for (std::size_t k = 0; k < acc.size(); ++k) {
    if (acc_n[k] > 0) {
      acc[k].value /= static_cast<double>(acc_n[k]);
      acc[k].defined = true;
      if (acc[k].relation == taxonomy::Relation::Superset) {
        esc += acc[k].value;
        ++n_esc;
      } else {
        ovl += acc[k].value;
        ++n_ovl;
      }
    }
  }
  rep.violations = std::move(acc);
  rep.escape_mean = n_esc > 0 ? esc / n_esc : 0.0;
  rep.overlap_mean = n_ovl > 0 ? ovl / n_ovl : 0.0;
  return rep;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_report_csv(const std::filesystem::path& path, const EvalReport& rep) {
  std::ostringstream os;
  os << "class,patch_count,dice\n";
  for (const auto& cls : rep.classes)
    os << cls.name << ',' << cls.patch_count << ','
       << (cls.patch_count > 0 ? fmt(cls.dice) : "") << '\n';
  os << "regions_mean,," << fmt(rep.regions_mean) << '\n';
  os << "units_mean,," << fmt(rep.units_mean) << '\n';
  os << "cells_mean,," << fmt(rep.cells_mean) << '\n';
  os << "overall,," << fmt(rep.overall) << '\n';
  os << "escape_mean,," << fmt(rep.escape_mean) << '\n';
  os << "overlap_mean,," << fmt(rep.overlap_mean) << '\n';
  util::write_file(path, os.str());
}

void write_report_md(const std::filesystem::path& path, const EvalReport& rep,
                     const std::string& title) {
  std::ostringstream os;
  os << "# " << title << "\n\n";
  os << "| Group | Class | Patches | Dice (%) |\n|---|---|---:|---:|\n";
  const int n = static_cast<int>(rep.classes.size());
  auto group_of = [&](int c) -> const char* {
    if (n != 15) return "";
    if (c < 5) return "Regions";
    if (c < 12) return "Units";
    return "Cells";
  };
  for (int c = 0; c < n; ++c) {
    const auto& cls = rep.classes[static_cast<std::size_t>(c)];
    os << "| " << group_of(c) << " | " << cls.name << " | " << cls.patch_count << " | "
       << (cls.patch_count > 0 ? fmt(cls.dice) : "absent") << " |\n";
  }
  os << "\n";
  if (n == 15) {
    os << "| Mean | Dice (%) |\n|---|---:|\n";
    os << "| Regions | " << fmt(rep.regions_mean) << " |\n";
    os << "| Units | " << fmt(rep.units_mean) << " |\n";
    os << "| Cells | " << fmt(rep.cells_mean) << " |\n";
  }
  os << "| Overall | " << fmt(rep.overall) << " |\n\n";
  os << "Violations: mean escape " << fmt(rep.escape_mean) << ", mean exclusive overlap "
     << fmt(rep.overlap_mean) << ".\n";
  util::write_file(path, os.str());
}

void write_samples_csv(const std::filesystem::path& path, const EvalReport& rep) {
  std::ostringstream os;
  os << "class,sample_index,dice\n";
  for (const auto& cls : rep.classes)
    for (std::size_t k = 0; k < cls.samples.size(); ++k)
      os << cls.name << ',' << k << ',' << fmt(cls.samples[k]) << '\n';
  util::write_file(path, os.str());
}

std::vector<double> load_samples_csv(const std::filesystem::path& path) {
  const std::string text = util::read_file(path);
  std::vector<double> out;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    if (header) {
      if (line != "class,sample_index,dice") throw Error("samples csv: unexpected header");
      header = false;
      continue;
    }
    const std::size_t comma = line.rfind(',');
    if (comma == std::string::npos) throw Error("samples csv: malformed row");
    out.push_back(std::stod(line.substr(comma + 1)));
  }
  if (header) throw Error("samples csv: empty file");
  return out;
}

}  // namespace hats::eval
