#include "hats/scale.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hats/util.hpp"

namespace hats::scale {

ScaleFormula scale_formula_from_string(std::string_view name) {
  if (name == "ratio") return ScaleFormula::Ratio;
  if (name == "sqrt_ratio") return ScaleFormula::SqrtRatio;
  if (name == "ones") return ScaleFormula::Ones;
  throw Error("unknown scale formula '" + std::string(name) + "' (ratio|sqrt_ratio|ones)");
}

std::string_view scale_formula_name(ScaleFormula f) {
  switch (f) {
    case ScaleFormula::Ratio: return "ratio";
    case ScaleFormula::SqrtRatio: return "sqrt_ratio";
    case ScaleFormula::Ones: return "ones";
  }
  throw Error("unknown scale formula value");
}

namespace {

void check_stats(const ClassStats& c) {
  if (c.patch_side <= 0) throw Error("class '" + c.name + "': patch_side must be positive");
  if (c.micron_per_pixel <= 0) throw Error("class '" + c.name + "': micron_per_pixel must be positive");
  if (c.pixel_mean < 0) throw Error("class '" + c.name + "': pixel_mean must be nonnegative");
  if (c.pixel_mean > static_cast<double>(c.patch_side) * c.patch_side)
    throw Error("class '" + c.name + "': pixel_mean exceeds patch area");
  const int m = c.magnification;
  if (m != 5 && m != 10 && m != 20 && m != 40)
    throw Error("class '" + c.name + "': magnification " + std::to_string(m) + " not in {5,10,20,40}");
}

}  // namespace

double compute_area_rate(const ClassStats& c) {
  check_stats(c);
  return c.pixel_mean * c.micron_per_pixel * c.micron_per_pixel /
         (static_cast<double>(c.patch_side) * c.patch_side);
}

ScaleMatrix build_scale_matrix(const DatasetManifest& manifest, ScaleFormula formula) {
  const int n = static_cast<int>(manifest.entries.size());
  std::vector<double> rate(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    rate[static_cast<std::size_t>(i)] = compute_area_rate(manifest.entries[static_cast<std::size_t>(i)]);
    if (rate[static_cast<std::size_t>(i)] <= 0)
      throw Error("class '" + manifest.entries[static_cast<std::size_t>(i)].name +
                  "': zero area rate, scale ratio undefined");
  }
  ScaleMatrix m;
  m.n = n;
  m.s.assign(static_cast<std::size_t>(n) * n, 1.0);
  if (formula == ScaleFormula::Ones) return m;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const auto [lo, hi] = std::minmax(rate[static_cast<std::size_t>(i)], rate[static_cast<std::size_t>(j)]);
      double v = lo / hi;
      if (formula == ScaleFormula::SqrtRatio) v = std::sqrt(v);
      m.s[static_cast<std::size_t>(i) * n + j] = v;
    }
  return m;
}

DatasetManifest load_manifest(const std::string& csv, const taxonomy::TaxonomyTree& tree) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw Error("manifest: empty input");
  const std::string expected =
      "class,stain,patch_count,patch_side,magnification,micron_per_pixel,pixel_mean";
  if (util::trim(line) != expected) throw Error("manifest: bad header, expected '" + expected + "'");

  DatasetManifest manifest;
  std::vector<bool> seen(static_cast<std::size_t>(tree.size()), false);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    const auto cells = util::split_csv(line);
    if (cells.size() != 7)
      throw Error("manifest: line " + std::to_string(line_no) + " has " +
                  std::to_string(cells.size()) + " fields, expected 7");
    ClassStats c;
    c.name = cells[0];
    c.stain = cells[1];
    c.patch_count = util::parse_long(cells[2]);
    c.patch_side = static_cast<int>(util::parse_long(cells[3]));
    c.magnification = static_cast<int>(util::parse_long(cells[4]));
    c.micron_per_pixel = util::parse_double(cells[5]);
    c.pixel_mean = util::parse_double(cells[6]);
    check_stats(c);
    if (c.patch_count < 0) throw Error("manifest: line " + std::to_string(line_no) + ": negative patch_count");
    const int idx = tree.index_of(c.name);
    if (idx < 0) throw Error("manifest: line " + std::to_string(line_no) + ": class '" + c.name +
                             "' not in taxonomy");
    if (seen[static_cast<std::size_t>(idx)])
      throw Error("manifest: duplicate class '" + c.name + "'");
    seen[static_cast<std::size_t>(idx)] = true;
    manifest.entries.push_back(std::move(c));
  }
  for (int i = 0; i < tree.size(); ++i)
    if (!seen[static_cast<std::size_t>(i)]) throw Error("manifest: missing class '" + tree.name_of(i) + "'");
  return manifest;
}

std::string manifest_to_csv(const DatasetManifest& manifest) {
  std::ostringstream out;
  out << "class,stain,patch_count,patch_side,magnification,micron_per_pixel,pixel_mean\n";
  for (const auto& c : manifest.entries) {
    out << util::csv_field(c.name) << "," << util::csv_field(c.stain) << "," << c.patch_count << ","
        << c.patch_side << "," << c.magnification << "," << util::fmt_double(c.micron_per_pixel)
        << "," << util::fmt_double(c.pixel_mean) << "\n";
  }
  return out.str();
}

DatasetManifest measure_manifest(const std::vector<data::PatchRecord>& patches,
                                 const taxonomy::TaxonomyTree& tree) {
  const int n = tree.size();
  std::vector<long> count(static_cast<std::size_t>(n), 0);
  std::vector<double> pixel_sum(static_cast<std::size_t>(n), 0.0);
  std::vector<ClassStats> stats(static_cast<std::size_t>(n));
  for (const auto& p : patches) {
    if (p.class_index < 0 || p.class_index >= n) throw Error("measure_manifest: patch with bad class index");
    auto& c = stats[static_cast<std::size_t>(p.class_index)];
    if (count[static_cast<std::size_t>(p.class_index)] == 0) {
      c.name = tree.name_of(p.class_index);
      c.stain = "S";
      c.patch_side = p.mask.w;
      c.magnification = p.magnification;
      c.micron_per_pixel = p.micron_per_pixel;
    } else if (c.patch_side != p.mask.w || c.magnification != p.magnification) {
      throw Error("measure_manifest: class '" + c.name + "' has mixed patch geometry");
    }
    ++count[static_cast<std::size_t>(p.class_index)];
    pixel_sum[static_cast<std::size_t>(p.class_index)] += static_cast<double>(image::count_foreground(p.mask));
  }
  DatasetManifest manifest;
  for (int i = 0; i < n; ++i) {
    if (count[static_cast<std::size_t>(i)] == 0)
      throw Error("measure_manifest: class '" + tree.name_of(i) + "' has zero patches");
    auto& c = stats[static_cast<std::size_t>(i)];
    c.patch_count = count[static_cast<std::size_t>(i)];
    c.pixel_mean = pixel_sum[static_cast<std::size_t>(i)] / static_cast<double>(c.patch_count);
    manifest.entries.push_back(std::move(c));
  }
  return manifest;
}

std::string scale_matrix_to_csv(const ScaleMatrix& m, const std::vector<std::string>& names) {
  if (static_cast<int>(names.size()) != m.n) throw Error("scale_matrix_to_csv: name count mismatch");
  std::ostringstream out;
  out << "class";
  for (const auto& name : names) out << "," << util::csv_field(name);
  out << "\n";
  for (int i = 0; i < m.n; ++i) {
    out << util::csv_field(names[static_cast<std::size_t>(i)]);
    for (int j = 0; j < m.n; ++j) out << "," << util::fmt_double(m.at(i, j));
    out << "\n";
  }
  return out.str();
}

}  // namespace hats::scale
