#include "hats/scale.hpp"

#include <doctest.h>

#include <cmath>

#include "hats/util.hpp"

using namespace hats;
using namespace hats::scale;

namespace {

taxonomy::TaxonomyTree kidney_tree() {
  return taxonomy::parse_tree(util::read_file(std::string(HATS_DATA_DIR) + "/kidney.tree"));
}

DatasetManifest kidney_manifest() {
  return load_manifest(util::read_file(std::string(HATS_DATA_DIR) + "/kidney_manifest.csv"), kidney_tree());
}

ClassStats stats(double pixel_mean, double micron, int side) {
  ClassStats c;
  c.name = "x";
  c.stain = "P";
  c.patch_count = 1;
  c.patch_side = side;
  c.magnification = 5;
  c.micron_per_pixel = micron;
  c.pixel_mean = pixel_mean;
  return c;
}

}  // namespace

TEST_CASE("area rates reproduce the published per-class values") {
  // Published 3-decimal area rates in manifest row order.
  const double expected[15] = {2.434, 2.600, 1.760, 1.853, 1.844, 0.097, 0.360, 0.619,
                               0.466, 0.083, 0.002, 0.012, 0.001, 0.001, 0.002};
  const auto manifest = kidney_manifest();
  REQUIRE(manifest.entries.size() == 15);
  for (int i = 0; i < 15; ++i) {
    const double rate = compute_area_rate(manifest.entries[static_cast<std::size_t>(i)]);
    const double tol = expected[i] < 0.05 ? 0.0005 : 0.001;
    CAPTURE(manifest.entries[static_cast<std::size_t>(i)].name);
    CHECK(std::abs(rate - expected[i]) <= tol);
  }
}

TEST_CASE("compute_area_rate spot values") {
  CHECK(compute_area_rate(stats(637975, 2, 1024)) == doctest::Approx(2.434).epsilon(0.001));
  CHECK(compute_area_rate(stats(6381, 1, 256)) == doctest::Approx(0.097).epsilon(0.01));
  CHECK(std::abs(compute_area_rate(stats(1170, 0.5, 512)) - 0.001) <= 0.0005);
}

TEST_CASE("compute_area_rate validates inputs") {
  auto c = stats(10, 1, 64);
  c.patch_side = 0;
  CHECK_THROWS_AS(compute_area_rate(c), Error);
  c = stats(10, 1, 64);
  c.magnification = 15;
  CHECK_THROWS_AS(compute_area_rate(c), Error);
  c = stats(10, 0, 64);
  CHECK_THROWS_AS(compute_area_rate(c), Error);
  c = stats(64.0 * 64 + 1, 1, 64);  // pixel_mean above patch area
  CHECK_THROWS_AS(compute_area_rate(c), Error);
}

TEST_CASE("scale matrix: symmetry, unit diagonal, range, published pairs") {
  const auto tree = kidney_tree();
  const auto manifest = kidney_manifest();
  const auto s = build_scale_matrix(manifest);
  REQUIRE(s.n == 15);
  for (int i = 0; i < s.n; ++i) {
    CHECK(s.at(i, i) == 1.0);
    for (int j = 0; j < s.n; ++j) {
      CHECK(s.at(i, j) == s.at(j, i));
      CHECK(s.at(i, j) > 0.0);
      CHECK(s.at(i, j) <= 1.0);
    }
  }
  const int medulla = tree.index_of("Medulla"), cortex = tree.index_of("Cortex");
  const int pod = tree.index_of("Podocyte");
  CHECK(std::abs(s.at(medulla, cortex) - 0.936) <= 0.002);
  CHECK(s.at(cortex, pod) == doctest::Approx(0.0004).epsilon(0.15));
}

TEST_CASE("scale matrix is invariant to common rate rescaling") {
  auto manifest = kidney_manifest();
  const auto base = build_scale_matrix(manifest);
  for (auto& c : manifest.entries) c.micron_per_pixel *= std::sqrt(3.25);  // every rate ×3.25
  const auto scaled = build_scale_matrix(manifest);
  for (int i = 0; i < base.n; ++i)
    for (int j = 0; j < base.n; ++j)
      CHECK(scaled.at(i, j) == doctest::Approx(base.at(i, j)).epsilon(1e-12));
}

TEST_CASE("scale formula variants") {
  const auto manifest = kidney_manifest();
  const auto ratio = build_scale_matrix(manifest, ScaleFormula::Ratio);
  const auto root = build_scale_matrix(manifest, ScaleFormula::SqrtRatio);
  const auto ones = build_scale_matrix(manifest, ScaleFormula::Ones);
  for (int i = 0; i < ratio.n; ++i)
    for (int j = 0; j < ratio.n; ++j) {
      CHECK(root.at(i, j) == doctest::Approx(std::sqrt(ratio.at(i, j))).epsilon(1e-12));
      CHECK(ones.at(i, j) == 1.0);
    }
  CHECK(scale_formula_from_string("ratio") == ScaleFormula::Ratio);
  CHECK(scale_formula_from_string("sqrt_ratio") == ScaleFormula::SqrtRatio);
  CHECK(scale_formula_from_string("ones") == ScaleFormula::Ones);
  CHECK_THROWS_AS(scale_formula_from_string("linear"), Error);
}

TEST_CASE("build_scale_matrix rejects zero rates") {
  auto manifest = kidney_manifest();
  manifest.entries[3].pixel_mean = 0;
  CHECK_THROWS_AS(build_scale_matrix(manifest), Error);
}

TEST_CASE("load_manifest validation") {
  const auto tree = kidney_tree();
  CHECK_THROWS_AS(load_manifest("", tree), Error);
  const std::string header =
      "class,stain,patch_count,patch_side,magnification,micron_per_pixel,pixel_mean\n";
  CHECK_THROWS_WITH_AS(load_manifest(header, tree), doctest::Contains("missing class"), Error);
  CHECK_THROWS_AS(load_manifest("bad,header\nx\n", tree), Error);
  // magnification outside {5,10,20,40}
  CHECK_THROWS_AS(load_manifest(header + "Medulla,P,1,64,15,1,10\n", tree), Error);
  // duplicate row
  std::string csv = util::read_file(std::string(HATS_DATA_DIR) + "/kidney_manifest.csv");
  CHECK_THROWS_AS(load_manifest(csv + "Medulla,P,1619,1024,5,2,637975\n", tree), Error);
  // unknown class
  CHECK_THROWS_AS(load_manifest(header + "Gizzard,P,1,64,5,1,10\n", tree), Error);
}

TEST_CASE("manifest csv round-trip") {
  const auto tree = kidney_tree();
  const auto manifest = kidney_manifest();
  const auto again = load_manifest(manifest_to_csv(manifest), tree);
  REQUIRE(again.entries.size() == manifest.entries.size());
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    CHECK(again.entries[i].name == manifest.entries[i].name);
    CHECK(again.entries[i].stain == manifest.entries[i].stain);
    CHECK(again.entries[i].pixel_mean == manifest.entries[i].pixel_mean);
    CHECK(again.entries[i].patch_side == manifest.entries[i].patch_side);
  }
}

TEST_CASE("measure_manifest averages foreground counts") {
  taxonomy::TaxonomyTree tree;
  tree.classes = {"A", "B"};
  tree.parent = {-1, -1};

  auto patch = [](int cls, int side, std::vector<int> fg_pixels) {
    data::PatchRecord p;
    p.class_index = cls;
    p.magnification = 10;
    p.micron_per_pixel = 1.0;
    p.image = image::Image::make(side, side, 3);
    p.mask = image::Image::make(side, side, 1);
    for (int i : fg_pixels) p.mask.pix[static_cast<std::size_t>(i)] = 255;
    return p;
  };

  std::vector<data::PatchRecord> patches;
  patches.push_back(patch(0, 8, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));            // 10 px
  patches.push_back(patch(0, 8, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12,
                                 13, 14, 15, 16, 17, 18, 19}));              // 20 px
  patches.push_back(patch(1, 8, {5}));
  const auto manifest = measure_manifest(patches, tree);
  CHECK(manifest.entries[0].pixel_mean == 15.0);
  CHECK(manifest.entries[0].patch_count == 2);
  CHECK(manifest.entries[1].pixel_mean == 1.0);

  patches.pop_back();  // class B now has zero patches
  CHECK_THROWS_WITH_AS(measure_manifest(patches, tree), doctest::Contains("B"), Error);
}
