#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "hats/data.hpp"
#include "hats/taxonomy.hpp"

namespace hats::scale {

/// Per-class dataset statistics, one row of the manifest.
struct ClassStats {
  std::string name;
  std::string stain;
  long patch_count = 0;
  int patch_side = 0;        // pixels
  int magnification = 0;     // one of 5, 10, 20, 40
  double micron_per_pixel = 0.0;
  double pixel_mean = 0.0;   // mean labeled pixels per patch
};

/// Ordered list of ClassStats covering every taxonomy class exactly once.
struct DatasetManifest {
  std::vector<ClassStats> entries;
};

/// Symmetric n×n weights in (0,1] with unit diagonal.
struct ScaleMatrix {
  int n = 0;
  std::vector<double> s;
  double at(int i, int j) const { return s[static_cast<std::size_t>(i) * n + j]; }
};

enum class ScaleFormula { Ratio, SqrtRatio, Ones };
ScaleFormula scale_formula_from_string(std::string_view name);
std::string_view scale_formula_name(ScaleFormula f);

/// Mean labeled area per patch in micron² divided by patch area in pixels:
/// pixel_mean × micron_per_pixel² / patch_side².
double compute_area_rate(const ClassStats& c);

/// s(i,j) = min(aᵢ,aⱼ)/max(aᵢ,aⱼ) under Ratio; SqrtRatio takes the square
/// root of that; Ones yields the all-ones matrix (binary predecessor
/// behavior). Throws if any area rate is zero.
ScaleMatrix build_scale_matrix(const DatasetManifest& manifest,
                               ScaleFormula formula = ScaleFormula::Ratio);

/// CSV header: class,stain,patch_count,patch_side,magnification,micron_per_pixel,pixel_mean.
/// Rows are validated and matched by name against the tree; every tree class
/// must appear exactly once.
DatasetManifest load_manifest(const std::string& csv, const taxonomy::TaxonomyTree& tree);
std::string manifest_to_csv(const DatasetManifest& manifest);

/// Measures stats from patches: pixel_mean is the mean foreground count over
/// each class's patches; the remaining columns come from patch metadata.
/// Throws if any tree class has zero patches.
DatasetManifest measure_manifest(const std::vector<data::PatchRecord>& patches,
                                 const taxonomy::TaxonomyTree& tree);

std::string scale_matrix_to_csv(const ScaleMatrix& m, const std::vector<std::string>& names);

}  // namespace hats::scale
