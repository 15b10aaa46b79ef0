#include "hats/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <utility>

#include "hats/rng.hpp"
#include "hats/util.hpp"

namespace hats::synthdata {

namespace {

// Scene rng stream id; patch streams use the in-scene patch index, which
// stays far below this.
constexpr uint64_t kSceneStream = 1'000'003;

struct Ellipse {
  double cx = 0, cy = 0, rx = 0, ry = 0;
};

int factor_of(int mag) {
  if (mag != 5 && mag != 10 && mag != 20 && mag != 40)
    throw Error("synthdata: magnification must be one of 5, 10, 20, 40");
  return 40 / mag;
}

bool is_fg(const image::Image& m, int x, int y) { return m.at(x, y) != 0; }

const char* role_name(Role r) {
  switch (r) {
    case Role::Region: return "Region";
    case Role::Band: return "Band";
    case Role::UnitOuter: return "UnitOuter";
    case Role::UnitInner: return "UnitInner";
    case Role::Dot: return "Dot";
    case Role::Tube: return "Tube";
    case Role::VesselBlob: return "VesselBlob";
    case Role::VesselCore: return "VesselCore";
    case Role::CoreAnnulus: return "CoreAnnulus";
    case Role::VesselDot: return "VesselDot";
  }
  return "?";
}

bool parent_role_ok(Role child, Role parent) {
  switch (child) {
    case Role::Band: return parent == Role::Region;
    case Role::UnitOuter:
    case Role::Tube: return parent == Role::Region || parent == Role::Band;
    case Role::UnitInner: return parent == Role::UnitOuter;
    case Role::Dot: return parent == Role::UnitInner || parent == Role::UnitOuter;
    case Role::VesselCore: return parent == Role::VesselBlob;
    case Role::CoreAnnulus: return parent == Role::VesselCore;
    case Role::VesselDot: return parent == Role::VesselBlob;
    case Role::Region:
    case Role::VesselBlob: return false;  // roots, no parent allowed
  }
  return false;
}

/// Squared normalized ellipse coordinate ρ² of a pixel center.
double rho2(const Ellipse& e, double x, double y) {
  const double dx = (x - e.cx) / e.rx, dy = (y - e.cy) / e.ry;
  return dx * dx + dy * dy;
}

/// Visits the integer pixels inside the ellipse (pixel centers, clipped to
/// the canvas). Stops early and returns false if f does.
template <typename F>
bool scan_ellipse(const Ellipse& e, int side, double lo2, double hi2, F&& f) {
  const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - e.rx)));
  const int x1 = std::min(side - 1, static_cast<int>(std::ceil(e.cx + e.rx)));
  const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ry)));
  const int y1 = std::min(side - 1, static_cast<int>(std::ceil(e.cy + e.ry)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double r2 = rho2(e, x, y);
      if (r2 < lo2 || r2 > hi2) continue;
      if (!f(x, y)) return false;
    }
  return true;
}

struct GenState {
  const taxonomy::TaxonomyTree& tree;
  const GenConfig& cfg;
  taxonomy::TaxonomyMatrix matrix;
  int S;
  Rng rng;
  std::vector<int> tclass;                   // plan idx → tree idx
  std::vector<image::Image> masks;           // tree order
  std::vector<std::vector<Ellipse>> shapes;  // plan idx → placed ellipses
  image::Image allowed;                      // scratch, rebuilt per entry
};

image::Image& mask_of(GenState& st, int plan_idx) { return st.masks[st.tclass[plan_idx]]; }

/// allowed = parent mask (or whole canvas) minus every class Exclusive with
/// this one. Only already-drawn classes have nonempty masks, so later shapes
/// always avoid earlier exclusive ones — which covers every pair once the
/// whole plan has run.
void build_allowed(GenState& st, int plan_idx) {
  const int n = st.S * st.S;
  const int ci = st.tclass[plan_idx];
  const int parent = st.cfg.plan[plan_idx].parent;
  if (parent < 0) {
    std::fill(st.allowed.pix.begin(), st.allowed.pix.end(), 255);
  } else {
    st.allowed.pix = mask_of(st, parent).pix;
  }
  for (int j = 0; j < st.tree.size(); ++j) {
    if (j == ci || st.matrix.at(ci, j) != taxonomy::Relation::Exclusive) continue;
    const auto& other = st.masks[j].pix;
    for (int p = 0; p < n; ++p)
      if (other[p]) st.allowed.pix[p] = 0;
  }
}

/// Dry-run the shape against allowed ∧ ¬own; commit only if every pixel
/// fits. Returns false (and paints nothing) on any conflict.
bool try_place(GenState& st, int plan_idx, const Ellipse& e) {
  image::Image& own = mask_of(st, plan_idx);
  const bool ok = scan_ellipse(e, st.S, 0.0, 1.0, [&](int x, int y) {
    return is_fg(st.allowed, x, y) && !is_fg(own, x, y);
  });
  if (!ok) return false;
  scan_ellipse(e, st.S, 0.0, 1.0, [&](int x, int y) {
    own.at(x, y) = 255;
    return true;
  });
  return true;
}

void draw_regions(GenState& st, const std::vector<int>& region_idxs,
                  std::vector<std::vector<std::pair<int, int>>>& runs) {
  const int S = st.S;
  const int R = static_cast<int>(region_idxs.size());
  runs.assign(st.cfg.plan.size(), {});
  if (R == 0) return;
  // Wavy vertical boundaries at the cumulative fractions; amplitudes are
  // small against the validated minimum region width, so they never cross.
  std::vector<double> amp(R - 1), freq(R - 1), phase(R - 1), cum(R - 1);
  double c = 0;
  for (int k = 0; k + 1 < R; ++k) {
    c += st.cfg.plan[region_idxs[k]].frac;
    cum[k] = c;
    amp[k] = S * st.rng.uniform(0.02, 0.05);
    freq[k] = st.rng.uniform(1.0, 3.0);
    phase[k] = st.rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  for (int k = 0; k < R; ++k) runs[region_idxs[k]].resize(S);
  for (int y = 0; y < S; ++y) {
    int prev = 0;
    for (int k = 0; k < R; ++k) {
      int hi = S;
      if (k + 1 < R) {
        const double b =
            S * cum[k] + amp[k] * std::sin(2.0 * std::numbers::pi * freq[k] * y / S + phase[k]);
        hi = std::clamp(static_cast<int>(std::lround(b)), prev, S);
      }
      const int idx = region_idxs[k];
      runs[idx][y] = {prev, hi};
      image::Image& m = mask_of(st, idx);
      for (int x = prev; x < hi; ++x) m.at(x, y) = 255;
      prev = hi;
    }
  }
}

void draw_bands(GenState& st, const std::vector<int>& band_idxs,
                const std::vector<std::pair<int, int>>& region_runs) {
  const int B = static_cast<int>(band_idxs.size());
  for (int y = 0; y < st.S; ++y) {
    const auto [lo, hi] = region_runs[y];
    const int len = hi - lo;
    for (int b = 0; b < B; ++b) {
      const int x0 = lo + len * b / B;
      const int x1 = lo + len * (b + 1) / B;
      image::Image& m = mask_of(st, band_idxs[b]);
      for (int x = x0; x < x1; ++x) m.at(x, y) = 255;
    }
  }
}

void place_free_ellipses(GenState& st, int plan_idx) {
  const ClassPlan& p = st.cfg.plan[plan_idx];
  for (int k = 0; k < p.count; ++k) {
    // Radii are a property of the shape, not of the placement attempt:
    // resampling them after a collision would skew accepted sizes small and
    // break the analytic area expectations.
    Ellipse e;
    e.rx = st.rng.uniform(p.r_lo, p.r_hi);
    e.ry = st.rng.uniform(p.r_lo, p.r_hi);
    for (int attempt = 0; attempt < 500; ++attempt) {
      e.cx = st.rng.uniform(e.rx + 1.0, st.S - e.rx - 1.0);
      e.cy = st.rng.uniform(e.ry + 1.0, st.S - e.ry - 1.0);
      if (try_place(st, plan_idx, e)) {
        st.shapes[plan_idx].push_back(e);
        break;
      }
    }
  }
}

void place_inner_ellipses(GenState& st, int plan_idx, bool limit_count) {
  const ClassPlan& p = st.cfg.plan[plan_idx];
  const auto& parents = st.shapes[p.parent];
  std::size_t n = parents.size();
  if (limit_count) n = std::min<std::size_t>(n, static_cast<std::size_t>(p.count));
  image::Image& own = mask_of(st, plan_idx);
  for (std::size_t k = 0; k < n; ++k) {
    Ellipse e = parents[k];
    e.rx *= p.shrink;
    e.ry *= p.shrink;
    scan_ellipse(e, st.S, 0.0, 1.0, [&](int x, int y) {
      if (is_fg(st.allowed, x, y)) own.at(x, y) = 255;
      return true;
    });
    st.shapes[plan_idx].push_back(e);
  }
}

void place_annuli(GenState& st, int plan_idx) {
  const ClassPlan& p = st.cfg.plan[plan_idx];
  image::Image& own = mask_of(st, plan_idx);
  for (const Ellipse& core : st.shapes[p.parent]) {
    scan_ellipse(core, st.S, p.band_lo * p.band_lo, p.band_hi * p.band_hi, [&](int x, int y) {
      if (is_fg(st.allowed, x, y)) own.at(x, y) = 255;
      return true;
    });
  }
}

void place_dots_in(GenState& st, int plan_idx, const std::vector<Ellipse>& hosts, int total) {
  const ClassPlan& p = st.cfg.plan[plan_idx];
  if (hosts.empty()) return;
  for (int k = 0; k < total; ++k) {
    const Ellipse& host = hosts[st.rng.below(hosts.size())];
    // Fixed radius per dot; only the center is retried (see
    // place_free_ellipses for why).
    const double r = st.rng.uniform(p.r_lo, p.r_hi);
    const double mx = host.rx - r - 1.0, my = host.ry - r - 1.0;
    if (mx <= 1.0 || my <= 1.0) continue;  // host too small for this dot
    for (int attempt = 0; attempt < 200; ++attempt) {
      double ux, uy;
      do {
        ux = st.rng.uniform(-1.0, 1.0);
        uy = st.rng.uniform(-1.0, 1.0);
      } while (ux * ux + uy * uy > 1.0);
      const Ellipse dot{host.cx + ux * mx, host.cy + uy * my, r, r};
      if (try_place(st, plan_idx, dot)) {
        st.shapes[plan_idx].push_back(dot);
        break;
      }
    }
  }
}

void place_dots(GenState& st, int plan_idx) {
  const ClassPlan& p = st.cfg.plan[plan_idx];
  // One batch of `count` dots per parent instance.
  for (const Ellipse& host : st.shapes[p.parent])
    place_dots_in(st, plan_idx, {host}, p.count);
}

void place_vessel_dots(GenState& st, int plan_idx) {
  const ClassPlan& p = st.cfg.plan[plan_idx];
  // Prefer blobs without cores so the dots read as their own vessel kind.
  std::size_t first = 0;
  for (std::size_t j = 0; j < st.cfg.plan.size(); ++j) {
    const ClassPlan& q = st.cfg.plan[j];
    if (q.role == Role::VesselCore && q.parent == p.parent)
      first = std::min(st.shapes[p.parent].size(), static_cast<std::size_t>(q.count));
  }
  const auto& blobs = st.shapes[p.parent];
  std::vector<Ellipse> hosts(blobs.begin() + static_cast<std::ptrdiff_t>(first), blobs.end());
  if (hosts.empty()) hosts = blobs;
  place_dots_in(st, plan_idx, hosts, p.count);
}

void draw_tube(GenState& st, int plan_idx) {
  const ClassPlan& p = st.cfg.plan[plan_idx];
  const int S = st.S;
  const double r = st.cfg.tube_radius;
  image::Image& own = mask_of(st, plan_idx);
  long budget = std::lround(p.frac * S * S);

  auto paint_disc = [&](double cx, double cy) {
    long painted = 0;
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x1 = std::min(S - 1, static_cast<int>(std::ceil(cx + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y1 = std::min(S - 1, static_cast<int>(std::ceil(cy + r)));
    for (int y = y0; y <= y1 && budget > 0; ++y)
      for (int x = x0; x <= x1 && budget > 0; ++x) {
        const double dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy > r * r) continue;
        if (!is_fg(st.allowed, x, y) || is_fg(own, x, y)) continue;
        own.at(x, y) = 255;
        --budget;
        ++painted;
      }
    return painted;
  };

  auto teleport = [&](double& x, double& y) {
    for (int attempt = 0; attempt < 2000; ++attempt) {
      const int tx = static_cast<int>(st.rng.below(static_cast<uint64_t>(S)));
      const int ty = static_cast<int>(st.rng.below(static_cast<uint64_t>(S)));
      if (is_fg(st.allowed, tx, ty) && !is_fg(own, tx, ty)) {
        x = tx;
        y = ty;
        return true;
      }
    }
    return false;
  };

  double x = 0, y = 0;
  if (!teleport(x, y)) throw Error("synthdata: no room to start tube for " + p.name);
  double theta = st.rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double step = std::max(1.0, 0.6 * r);
  int sterile = 0;
  for (long steps = 0; budget > 0 && steps < 200'000; ++steps) {
    sterile = paint_disc(x, y) > 0 ? 0 : sterile + 1;
    theta += st.rng.normal(0.0, 0.35);
    x += step * std::cos(theta);
    y += step * std::sin(theta);
    if (x < 1 || y < 1 || x > S - 2 || y > S - 2 || sterile > 50) {
      if (!teleport(x, y)) break;
      theta = st.rng.uniform(0.0, 2.0 * std::numbers::pi);
      sterile = 0;
    }
  }
  if (budget > 0)
    throw Error("synthdata: tube area target unreachable for " + p.name +
                " (region too crowded)");
}

void render(GenState& st, image::Image& img) {
  const int S = st.S;
  const uint8_t base[3] = {233, 228, 218};
  img = image::Image::make(S, S, 3);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x)
      for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = base[ch];

  for (std::size_t e = 0; e < st.cfg.plan.size(); ++e) {
    const ClassPlan& p = st.cfg.plan[e];
    int shift[3] = {0, 0, 0};
    if (st.cfg.color_jitter > 0)
      for (int& s : shift)
        s = static_cast<int>(std::lround(st.rng.uniform(-st.cfg.color_jitter, st.cfg.color_jitter)));
    const image::Image& m = st.masks[st.tclass[e]];
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        if (!is_fg(m, x, y)) continue;
        for (int ch = 0; ch < 3; ++ch)
          img.at(x, y, ch) = static_cast<uint8_t>(std::clamp(p.color[ch] + shift[ch], 0, 255));
      }
  }
  if (st.cfg.noise_sigma > 0)
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x)
        for (int ch = 0; ch < 3; ++ch) {
          const int v =
              img.at(x, y, ch) + static_cast<int>(std::lround(st.rng.normal(0.0, st.cfg.noise_sigma)));
          img.at(x, y, ch) = static_cast<uint8_t>(std::clamp(v, 0, 255));
        }
}

bool any_fg_in_window(const image::Image& mask, int x0, int y0, int side) {
  const int xe = std::min(mask.w, x0 + side), ye = std::min(mask.h, y0 + side);
  for (int y = std::max(0, y0); y < ye; ++y)
    for (int x = std::max(0, x0); x < xe; ++x)
      if (mask.at(x, y) != 0) return true;
  return false;
}

std::string present_string(const std::vector<uint8_t>& present) {
  std::string s(present.size(), '0');
  for (std::size_t i = 0; i < present.size(); ++i)
    if (present[i]) s[i] = '1';
  return s;
}

std::string patch_stem(int patch_id) {
  std::string digits = std::to_string(patch_id);
  return std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

}  // namespace

GenConfig GenConfig::kidney_default() {
  GenConfig cfg;
  auto add = [&cfg](const char* name, Role role, int mag, int parent, uint8_t r, uint8_t g,
                    uint8_t b) -> ClassPlan& {
    ClassPlan p;
    p.name = name;
    p.role = role;
    p.magnification = mag;
    p.parent = parent;
    p.color[0] = r;
    p.color[1] = g;
    p.color[2] = b;
    cfg.plan.push_back(std::move(p));
    return cfg.plan.back();
  };

  add("Medulla", Role::Region, 5, -1, 205, 186, 188).frac = 0.42;
  add("Cortex", Role::Region, 5, -1, 228, 210, 202).frac = 0.58;
  add("InnerCortex", Role::Band, 5, 1, 214, 188, 182);
  add("MiddleCortex", Role::Band, 5, 1, 222, 198, 190);
  add("OuterCortex", Role::Band, 5, 1, 230, 208, 198);
  {
    ClassPlan& p = add("Capsule", Role::UnitOuter, 5, 1, 176, 142, 152);
    p.count = 3;
    p.r_lo = 36;
    p.r_hi = 48;
  }
  add("Tuft", Role::UnitInner, 5, 5, 150, 108, 126).shrink = 0.62;
  {
    ClassPlan& p = add("Podocyte", Role::Dot, 20, 6, 94, 62, 112);
    p.count = 6;
    p.r_lo = 4;
    p.r_hi = 6;
  }
  {
    ClassPlan& p = add("Mesangial", Role::Dot, 20, 6, 128, 88, 74);
    p.count = 4;
    p.r_lo = 3;
    p.r_hi = 5;
  }
  add("DT", Role::Tube, 10, 1, 188, 166, 122).frac = 0.05;
  add("PT", Role::Tube, 10, 1, 168, 176, 134).frac = 0.07;
  {
    ClassPlan& p = add("MV", Role::VesselBlob, 20, -1, 206, 150, 142);
    p.count = 6;
    p.r_lo = 28;
    p.r_hi = 40;
  }
  {
    ClassPlan& p = add("Artery", Role::VesselCore, 10, 11, 196, 118, 118);
    p.count = 3;
    p.shrink = 0.7;
  }
  {
    ClassPlan& p = add("SmoothMuscle", Role::CoreAnnulus, 20, 12, 152, 92, 102);
    p.band_lo = 0.55;
    p.band_hi = 0.95;
  }
  {
    ClassPlan& p = add("PTC", Role::VesselDot, 40, 11, 236, 168, 158);
    p.count = 30;
    p.r_lo = 4;
    p.r_hi = 6;
  }
  return cfg;
}

void validate_plan(const taxonomy::TaxonomyTree& tree, const GenConfig& cfg) {
  if (cfg.scene_side <= 0 || cfg.patch_side <= 0)
    throw Error("synthdata: scene_side and patch_side must be positive");
  if (cfg.patches_per_class <= 0) throw Error("synthdata: patches_per_class must be positive");
  if (cfg.noise_sigma < 0 || cfg.color_jitter < 0)
    throw Error("synthdata: noise and jitter must be non-negative");
  if (cfg.plan.empty()) throw Error("synthdata: empty class plan");

  std::set<std::string> seen;
  double region_frac = 0;
  int regions = 0;
  for (std::size_t i = 0; i < cfg.plan.size(); ++i) {
    const ClassPlan& p = cfg.plan[i];
    const int ci = tree.index_of(p.name);
    if (ci < 0) throw Error("synthdata: plan class '" + p.name + "' not in the tree");
    if (!seen.insert(p.name).second)
      throw Error("synthdata: duplicate plan entry for '" + p.name + "'");
    if (cfg.scene_side % factor_of(p.magnification) != 0)
      throw Error("synthdata: scene_side must be divisible by the downsample factor of " +
                  p.name);

    const bool root_role = p.role == Role::Region || p.role == Role::VesselBlob;
    if (root_role) {
      if (p.parent != -1)
        throw Error("synthdata: " + p.name + " is a canvas-level role and takes no plan parent");
      if (tree.parent[ci] != -1)
        throw Error("synthdata: plan draws " + p.name +
                    " at canvas level but the tree nests it inside " +
                    tree.name_of(tree.parent[ci]));
    } else {
      if (p.parent < 0 || p.parent >= static_cast<int>(i))
        throw Error("synthdata: plan parent of " + p.name +
                    " must be an earlier plan entry (topological order)");
      const ClassPlan& q = cfg.plan[static_cast<std::size_t>(p.parent)];
      if (!parent_role_ok(p.role, q.role))
        throw Error(std::string("synthdata: role ") + role_name(p.role) +
                    " cannot nest inside " + role_name(q.role));
      if (tree.parent[ci] != tree.index_of(q.name))
        throw Error("synthdata: plan nests " + p.name + " inside " + q.name +
                    " but the tree has no matching containment edge");
    }

    switch (p.role) {
      case Role::Region:
        if (p.frac <= 0) throw Error("synthdata: region fraction must be positive");
        region_frac += p.frac;
        ++regions;
        break;
      case Role::Band:
        break;
      case Role::UnitOuter:
      case Role::VesselBlob:
        if (p.count < 1) throw Error("synthdata: " + p.name + " needs count ≥ 1");
        if (p.r_lo <= 0 || p.r_hi < p.r_lo || p.r_hi > cfg.scene_side / 4.0)
          throw Error("synthdata: bad radius range for " + p.name);
        break;
      case Role::UnitInner:
        if (p.shrink <= 0 || p.shrink >= 1)
          throw Error("synthdata: shrink of " + p.name + " must lie in (0,1)");
        break;
      case Role::VesselCore: {
        if (p.shrink <= 0 || p.shrink >= 1)
          throw Error("synthdata: shrink of " + p.name + " must lie in (0,1)");
        const ClassPlan& q = cfg.plan[static_cast<std::size_t>(p.parent)];
        if (p.count < 1 || p.count > q.count)
          throw Error("synthdata: core count of " + p.name + " must lie in [1, parent count]");
        break;
      }
      case Role::CoreAnnulus:
        if (p.band_lo < 0 || p.band_hi <= p.band_lo || p.band_hi > 1)
          throw Error("synthdata: annulus band of " + p.name + " must satisfy 0 ≤ lo < hi ≤ 1");
        break;
      case Role::Dot:
      case Role::VesselDot:
        if (p.count < 1) throw Error("synthdata: " + p.name + " needs count ≥ 1");
        if (p.r_lo <= 0 || p.r_hi < p.r_lo)
          throw Error("synthdata: bad radius range for " + p.name);
        break;
      case Role::Tube:
        if (p.frac <= 0 || p.frac >= 0.5)
          throw Error("synthdata: tube area fraction of " + p.name + " must lie in (0, 0.5)");
        if (cfg.tube_radius <= 0) throw Error("synthdata: tube_radius must be positive");
        break;
    }
  }

  if (regions > 0) {
    if (std::abs(region_frac - 1.0) > 1e-9)
      throw Error("synthdata: region fractions must sum to 1");
    for (const ClassPlan& p : cfg.plan)
      if (p.role == Role::Region && regions > 1 && p.frac < 0.12)
        throw Error(
            "synthdata: region fractions below 0.12 cannot absorb the boundary wobble");
  }
}

Scene generate_scene(const taxonomy::TaxonomyTree& tree, const GenConfig& cfg,
                     uint64_t master_seed, int scene_id) {
  validate_plan(tree, cfg);
  const int S = cfg.scene_side;

  GenState st{tree,
              cfg,
              taxonomy::derive_matrix(tree),
              S,
              Rng::derive(master_seed, static_cast<uint64_t>(scene_id), kSceneStream),
              {},
              {},
              {},
              image::Image::make(S, S, 1)};
  st.tclass.reserve(cfg.plan.size());
  for (const ClassPlan& p : cfg.plan) st.tclass.push_back(tree.index_of(p.name));
  st.masks.assign(static_cast<std::size_t>(tree.size()), image::Image::make(S, S, 1));
  st.shapes.assign(cfg.plan.size(), {});

  std::vector<int> region_idxs;
  for (std::size_t i = 0; i < cfg.plan.size(); ++i)
    if (cfg.plan[i].role == Role::Region) region_idxs.push_back(static_cast<int>(i));
  std::vector<std::vector<std::pair<int, int>>> region_runs;
  draw_regions(st, region_idxs, region_runs);

  for (int ridx : region_idxs) {
    std::vector<int> band_idxs;
    for (std::size_t i = 0; i < cfg.plan.size(); ++i)
      if (cfg.plan[i].role == Role::Band && cfg.plan[i].parent == ridx)
        band_idxs.push_back(static_cast<int>(i));
    if (!band_idxs.empty()) draw_bands(st, band_idxs, region_runs[static_cast<size_t>(ridx)]);
  }

  for (std::size_t i = 0; i < cfg.plan.size(); ++i) {
    const Role role = cfg.plan[i].role;
    if (role == Role::Region || role == Role::Band) continue;
    build_allowed(st, static_cast<int>(i));
    switch (role) {
      case Role::UnitOuter:
      case Role::VesselBlob: place_free_ellipses(st, static_cast<int>(i)); break;
      case Role::UnitInner: place_inner_ellipses(st, static_cast<int>(i), false); break;
      case Role::VesselCore: place_inner_ellipses(st, static_cast<int>(i), true); break;
      case Role::CoreAnnulus: place_annuli(st, static_cast<int>(i)); break;
      case Role::Dot: place_dots(st, static_cast<int>(i)); break;
      case Role::VesselDot: place_vessel_dots(st, static_cast<int>(i)); break;
      case Role::Tube: draw_tube(st, static_cast<int>(i)); break;
      default: break;
    }
  }

  Scene scene;
  scene.id = scene_id;
  scene.seed = master_seed;
  render(st, scene.img);
  scene.masks = std::move(st.masks);
  return scene;
}

AuditResult audit_scene(const Scene& scene, const taxonomy::TaxonomyMatrix& matrix) {
  if (matrix.n != static_cast<int>(scene.masks.size()))
    throw Error("audit_scene: matrix size does not match mask count");
  AuditResult res;
  const std::size_t n_pix = scene.masks.empty() ? 0 : scene.masks[0].pix.size();
  for (int i = 0; i < matrix.n; ++i)
    for (int j = 0; j < matrix.n; ++j) {
      if (i == j) continue;
      const taxonomy::Relation rel = matrix.at(i, j);
      const auto& a = scene.masks[static_cast<std::size_t>(i)].pix;
      const auto& b = scene.masks[static_cast<std::size_t>(j)].pix;
      if (rel == taxonomy::Relation::Subset) {
        for (std::size_t p = 0; p < n_pix; ++p)
          if (a[p] && !b[p]) ++res.subset_escape;
      } else if (rel == taxonomy::Relation::Exclusive && i < j) {
        for (std::size_t p = 0; p < n_pix; ++p)
          if (a[p] && b[p]) ++res.exclusive_overlap;
      }
    }
  return res;
}

std::vector<data::PatchRecord> extract_patches(const Scene& scene,
                                               const taxonomy::TaxonomyTree& tree,
                                               const GenConfig& cfg, uint64_t master_seed,
                                               SampleMode mode,
                                               std::vector<std::string>* warnings) {
  validate_plan(tree, cfg);
  if (static_cast<int>(scene.masks.size()) != tree.size())
    throw Error("extract_patches: scene does not match the tree");
  const int P = cfg.patch_side;

  struct Level {
    image::Image img;
    std::vector<image::Image> masks;
  };
  std::map<int, Level> levels;
  auto level_of = [&](int factor) -> Level& {
    auto it = levels.find(factor);
    if (it != levels.end()) return it->second;
    Level lv;
    lv.img = image::box_downsample(scene.img, factor);
    lv.masks.reserve(scene.masks.size());
    for (const auto& m : scene.masks) lv.masks.push_back(image::nearest_downsample(m, factor));
    return levels.emplace(factor, std::move(lv)).first->second;
  };

  std::vector<data::PatchRecord> out;
  int patch_idx = 0;
  for (const ClassPlan& p : cfg.plan) {
    const int ci = tree.index_of(p.name);
    const int factor = factor_of(p.magnification);
    const Level& lv = level_of(factor);
    const image::Image& mask = lv.masks[static_cast<std::size_t>(ci)];
    const int side = mask.w;

    const int origin_max = std::max(0, side - P);
    const int tiles = std::max(1, side / P);

    // Biased windows need foreground to center on; an emptied class is
    // skipped. Tiled coverage has no such requirement — every aligned
    // window is emitted exactly once, so area statistics stay unbiased
    // even for classes that vanished at this scale.
    std::vector<int> fg;
    if (mode == SampleMode::Biased) {
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          if (mask.at(x, y) != 0) fg.push_back(y * side + x);
      if (fg.empty()) {
        if (warnings)
          warnings->push_back("class " + p.name + " has no foreground at ×" +
                              std::to_string(p.magnification) + "; skipped");
        continue;
      }
    }

    const int n_windows = mode == SampleMode::Tiled ? tiles * tiles : cfg.patches_per_class;
    for (int k = 0; k < n_windows; ++k) {
      int x0 = 0, y0 = 0;
      if (mode == SampleMode::Biased) {
        Rng rng = Rng::derive(master_seed, static_cast<uint64_t>(scene.id),
                              static_cast<uint64_t>(patch_idx));
        const int f = fg[static_cast<std::size_t>(rng.below(fg.size()))];
        x0 = std::clamp(f % side - P / 2, 0, origin_max);
        y0 = std::clamp(f / side - P / 2, 0, origin_max);
      } else {
        x0 = (k % tiles) * P;
        y0 = (k / tiles) * P;
      }

      data::PatchRecord rec;
      rec.patch_id = patch_idx++;
      rec.scene_id = scene.id;
      rec.class_index = ci;
      rec.magnification = p.magnification;
      rec.micron_per_pixel = 10.0 / p.magnification;
      rec.image = image::crop_pad(lv.img, x0, y0, P);
      rec.mask = image::crop_pad(mask, x0, y0, P);
      rec.present.resize(static_cast<std::size_t>(tree.size()), 0);
      for (int j = 0; j < tree.size(); ++j)
        rec.present[static_cast<std::size_t>(j)] =
            any_fg_in_window(lv.masks[static_cast<std::size_t>(j)], x0, y0, P) ? 1 : 0;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

std::array<int, 3> split_counts(int n_scenes, double train, double val, double test) {
  if (train <= 0 || val <= 0 || test <= 0) throw Error("split: ratios must be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw Error("split: ratios must sum to 1");
  if (n_scenes < 3) throw Error("split: need at least 3 scenes for 3 splits");

  const double quota[3] = {train * n_scenes, val * n_scenes, test * n_scenes};
  std::array<int, 3> c{};
  int used = 0;
  for (int i = 0; i < 3; ++i) {
    c[static_cast<std::size_t>(i)] = static_cast<int>(std::floor(quota[i]));
    used += c[static_cast<std::size_t>(i)];
  }
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ra = quota[a] - std::floor(quota[a]), rb = quota[b] - std::floor(quota[b]);
    return ra != rb ? ra > rb : a < b;
  });
  for (int k = 0; used < n_scenes; ++k, ++used) ++c[static_cast<std::size_t>(order[static_cast<std::size_t>(k % 3)])];
  for (std::size_t i = 0; i < 3; ++i) {
    while (c[i] == 0) {
      const std::size_t big = static_cast<std::size_t>(
          std::max_element(c.begin(), c.end()) - c.begin());
      --c[big];
      ++c[i];
    }
  }
  return c;
}

void split_dataset(std::vector<data::PatchRecord>& patches, double train, double val,
                   double test) {
  std::set<int> ids;
  for (const auto& p : patches) ids.insert(p.scene_id);
  const auto counts = split_counts(static_cast<int>(ids.size()), train, val, test);

  std::map<int, std::string> tag;
  int k = 0;
  for (int id : ids) {
    tag[id] = k < counts[0] ? "train" : (k < counts[0] + counts[1] ? "val" : "test");
    ++k;
  }
  for (auto& p : patches) p.split = tag[p.scene_id];
}

std::vector<double> expected_fractions(const taxonomy::TaxonomyTree& tree, const GenConfig& cfg) {
  validate_plan(tree, cfg);
  const double area = static_cast<double>(cfg.scene_side) * cfg.scene_side;
  std::vector<double> frac(static_cast<std::size_t>(tree.size()), 0.0);
  std::vector<double> entry_frac(cfg.plan.size(), 0.0);
  std::vector<int> instances(cfg.plan.size(), 1);

  // Shapes keep continuous centers, so the expected pixel count of a placed
  // shape equals its continuous area exactly (uniform sub-pixel phase).
  auto mean_r = [](const ClassPlan& p) { return 0.5 * (p.r_lo + p.r_hi); };
  auto mean_r2 = [](const ClassPlan& p) {
    return (p.r_lo * p.r_lo + p.r_lo * p.r_hi + p.r_hi * p.r_hi) / 3.0;
  };

  for (std::size_t i = 0; i < cfg.plan.size(); ++i) {
    const ClassPlan& p = cfg.plan[i];
    const std::size_t parent = static_cast<std::size_t>(std::max(p.parent, 0));
    double f = 0;
    switch (p.role) {
      case Role::Region: f = p.frac; break;
      case Role::Band: {
        int B = 0;
        for (const ClassPlan& q : cfg.plan)
          if (q.role == Role::Band && q.parent == p.parent) ++B;
        f = cfg.plan[parent].frac / B;
        break;
      }
      case Role::UnitOuter:
      case Role::VesselBlob:
        f = p.count * std::numbers::pi * mean_r(p) * mean_r(p) / area;
        instances[i] = p.count;
        break;
      case Role::UnitInner:
        f = entry_frac[parent] * p.shrink * p.shrink;
        instances[i] = instances[parent];
        break;
      case Role::VesselCore:
        f = entry_frac[parent] * p.count / cfg.plan[parent].count * p.shrink * p.shrink;
        instances[i] = p.count;
        break;
      case Role::CoreAnnulus:
        f = entry_frac[parent] * (p.band_hi * p.band_hi - p.band_lo * p.band_lo);
        instances[i] = instances[parent];
        break;
      case Role::Dot:
        f = instances[parent] * p.count * std::numbers::pi * mean_r2(p) / area;
        break;
      case Role::VesselDot:
        f = p.count * std::numbers::pi * mean_r2(p) / area;
        break;
      case Role::Tube: f = p.frac; break;
    }
    entry_frac[i] = f;
    frac[static_cast<std::size_t>(tree.index_of(p.name))] = f;
  }
  return frac;
}

data::Dataset generate_dataset(const taxonomy::TaxonomyTree& tree, const GenConfig& cfg,
                               uint64_t master_seed, int n_scenes, SampleMode mode, double train,
                               double val, double test, unsigned threads) {
  validate_plan(tree, cfg);
  const auto counts = split_counts(n_scenes, train, val, test);

  std::vector<std::vector<data::PatchRecord>> per_scene(static_cast<std::size_t>(n_scenes));
  util::parallel_for(n_scenes, static_cast<int>(threads), [&](int i) {
    const Scene scene = generate_scene(tree, cfg, master_seed, i);
    per_scene[static_cast<std::size_t>(i)] = extract_patches(scene, tree, cfg, master_seed, mode);
  });

  data::Dataset ds;
  ds.class_names = tree.classes;
  int patch_id = 0;
  for (int i = 0; i < n_scenes; ++i) {
    const char* split =
        i < counts[0] ? "train" : (i < counts[0] + counts[1] ? "val" : "test");
    for (auto& rec : per_scene[static_cast<std::size_t>(i)]) {
      rec.patch_id = patch_id++;
      rec.split = split;
      ds.patches.push_back(std::move(rec));
    }
  }
  return ds;
}

void write_patches(const std::filesystem::path& dir, const data::Dataset& dataset,
                   const taxonomy::TaxonomyTree& tree) {
  std::filesystem::create_directories(dir / "patches");
  std::string csv =
      "patch_id,scene_id,class,magnification,micron_per_pixel,split,path,mask_path,"
      "present_classes\n";
  for (const data::PatchRecord& p : dataset.patches) {
    const std::string stem = patch_stem(p.patch_id);
    const std::string img_rel = "patches/" + stem + ".ppm";
    const std::string mask_rel = "patches/" + stem + "_mask.pgm";
    image::write_raster(p.image, dir / img_rel);
    image::write_raster(p.mask, dir / mask_rel);
    csv += std::to_string(p.patch_id) + ',' + std::to_string(p.scene_id) + ',' +
           tree.name_of(p.class_index) + ',' + std::to_string(p.magnification) + ',' +
           util::fmt_double(p.micron_per_pixel) + ',' + p.split + ',' + img_rel + ',' +
           mask_rel + ',' + present_string(p.present) + '\n';
  }
  util::write_file(dir / kPatchesCsv, csv);
}

void write_scene_files(const std::filesystem::path& dir, const Scene& scene,
                       const taxonomy::TaxonomyTree& tree) {
  const std::filesystem::path sdir = dir / "scenes" / std::to_string(scene.id);
  std::filesystem::create_directories(sdir);
  image::write_raster(scene.img, sdir / "image.ppm");
  for (int c = 0; c < tree.size(); ++c)
    image::write_raster(scene.masks[static_cast<std::size_t>(c)],
                        sdir / ("mask_" + tree.name_of(c) + ".pgm"));
}

data::Dataset load_dataset(const std::filesystem::path& dir,
                           const taxonomy::TaxonomyTree& tree) {
  const std::string text = util::read_file(dir / kPatchesCsv);
  std::vector<std::string> lines;
  {
    std::size_t start = 0;
    while (start < text.size()) {
      std::size_t end = text.find('\n', start);
      if (end == std::string::npos) end = text.size();
      if (end > start) lines.push_back(text.substr(start, end - start));
      start = end + 1;
    }
  }
  if (lines.empty()) throw Error("load_dataset: empty patches.csv");

  const auto header = util::split_csv(lines[0]);
  const std::vector<std::string> required = {
      "patch_id", "scene_id",         "class", "magnification",
      "micron_per_pixel", "split", "path",  "mask_path"};
  if (header.size() < required.size() ||
      !std::equal(required.begin(), required.end(), header.begin()))
    throw Error("load_dataset: unexpected patches.csv header");
  const bool has_present = header.size() > 8 && header[8] == "present_classes";

  data::Dataset ds;
  ds.class_names = tree.classes;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto f = util::split_csv(lines[li]);
    if (f.size() < 8) throw Error("load_dataset: short row in patches.csv");
    data::PatchRecord rec;
    rec.patch_id = static_cast<int>(util::parse_long(f[0], "patch_id"));
    rec.scene_id = static_cast<int>(util::parse_long(f[1], "scene_id"));
    rec.class_index = tree.index_of(f[2]);
    if (rec.class_index < 0) throw Error("load_dataset: unknown class '" + f[2] + "'");
    rec.magnification = static_cast<int>(util::parse_long(f[3], "magnification"));
    factor_of(rec.magnification);
    rec.micron_per_pixel = util::parse_double(f[4], "micron_per_pixel");
    rec.split = f[5];
    if (rec.split != "train" && rec.split != "val" && rec.split != "test" && !rec.split.empty())
      throw Error("load_dataset: bad split tag '" + rec.split + "'");
    rec.image = image::read_raster(dir / f[6]);
    rec.mask = image::read_raster(dir / f[7]);
    if (rec.image.c != 3 || rec.mask.c != 1 || rec.image.w != rec.mask.w ||
        rec.image.h != rec.mask.h)
      throw Error("load_dataset: raster geometry mismatch for patch " + f[0]);
    rec.present.assign(static_cast<std::size_t>(tree.size()), 1);
    if (has_present && f.size() > 8) {
      const std::string& bits = f[8];
      if (bits.size() != static_cast<std::size_t>(tree.size()))
        throw Error("load_dataset: present_classes length mismatch");
      for (std::size_t b = 0; b < bits.size(); ++b) {
        if (bits[b] != '0' && bits[b] != '1')
          throw Error("load_dataset: present_classes must be 0/1");
        rec.present[b] = bits[b] == '1';
      }
    }
    ds.patches.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace hats::synthdata
