#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hats/data.hpp"
#include "hats/image.hpp"
#include "hats/taxonomy.hpp"

namespace hats::synthdata {

/// Shape family a class is drawn as. Regions tile the canvas, bands
/// partition their region, units are nested ellipse pairs, dots sit inside
/// their parent shape, tubes are random-walk ribbons, and the vessel roles
/// build blob → core → annulus chains with embedded dots.
enum class Role {
  Region,
  Band,
  UnitOuter,
  UnitInner,
  Dot,
  Tube,
  VesselBlob,
  VesselCore,
  CoreAnnulus,
  VesselDot,
};

/// One class's drawing recipe. `parent` is a plan index (-1 = canvas); it
/// must agree with the taxonomy tree's containment edge for the class.
/// Lengths are full-resolution pixels.
struct ClassPlan {
  std::string name;
  Role role = Role::Region;
  int magnification = 5;  // window scale this class is annotated at
  int parent = -1;
  double frac = 0.0;    // Region: canvas fraction; Tube: target area fraction
  int count = 0;        // instances (UnitOuter/VesselBlob/VesselCore) or dots
  double r_lo = 0.0;    // radius range for ellipse axes and dots
  double r_hi = 0.0;
  double shrink = 0.0;  // UnitInner/VesselCore: linear scale vs parent shape
  double band_lo = 0.0; // CoreAnnulus: radial band inside the parent ellipse
  double band_hi = 0.0;
  uint8_t color[3] = {0, 0, 0};
};

struct GenConfig {
  int scene_side = 512;  // full-resolution canvas, the 40× plane
  int patch_side = 64;
  int patches_per_class = 2;  // windows per class per scene (Biased mode only)
  double tube_radius = 7.0;
  double noise_sigma = 6.0;   // per-channel gaussian pixel noise
  double color_jitter = 0.0;  // per-scene per-class channel shift amplitude
  std::vector<ClassPlan> plan;

  /// The 15-class default: two regions, three cortex bands, capsule/tuft
  /// units with two cell-dot kinds, two tubule ribbons, and a vessel chain.
  static GenConfig kidney_default();
};

/// Full-resolution scene: RGB canvas plus one binary mask per tree class
/// (tree order). Masks jointly satisfy the derived relation matrix.
struct Scene {
  int id = 0;
  uint64_t seed = 0;
  image::Image img;
  std::vector<image::Image> masks;
};

/// Checks the plan against the tree: known unique names, topological parent
/// links whose nesting matches the tree's containment edges, region
/// fractions summing to 1, role-appropriate parents and parameters, and
/// magnifications whose downsample factors divide the scene side.
void validate_plan(const taxonomy::TaxonomyTree& tree, const GenConfig& cfg);

/// Deterministic scene synthesis. Every shape is placed inside
/// parent_mask ∖ (union of already-drawn classes Exclusive with it), so the
/// masks satisfy the relation matrix by construction.
Scene generate_scene(const taxonomy::TaxonomyTree& tree, const GenConfig& cfg,
                     uint64_t master_seed, int scene_id);

struct AuditResult {
  long subset_escape = 0;      // pixels of a Subset class outside its parent class
  long exclusive_overlap = 0;  // pixels shared by an Exclusive pair
  bool clean() const { return subset_escape == 0 && exclusive_overlap == 0; }
};

/// Pixel-exact verification of the Scene invariant against a relation matrix.
AuditResult audit_scene(const Scene& scene, const taxonomy::TaxonomyMatrix& matrix);

/// Window placement: Biased emits patches_per_class windows, each centered
/// on a random foreground pixel of the labeled class; Tiled emits every
/// window of the aligned non-overlapping grid exactly once (full coverage,
/// so per-scene area statistics are exact — patches_per_class is ignored).
enum class SampleMode { Biased, Tiled };

/// Cuts patch_side windows per class at that class's magnification
/// (downsample factor 40/mag; images mean-pooled, masks point-sampled).
/// In Biased mode, classes with no foreground at their working scale are
/// skipped, noted in `warnings` when given. patch_id is scene-local and
/// sequential.
std::vector<data::PatchRecord> extract_patches(const Scene& scene,
                                               const taxonomy::TaxonomyTree& tree,
                                               const GenConfig& cfg, uint64_t master_seed,
                                               SampleMode mode = SampleMode::Biased,
                                               std::vector<std::string>* warnings = nullptr);

/// Largest-remainder split of n scenes into train/val/test counts, each ≥ 1.
/// Ratios must be positive and sum to 1. Throws when n < 3.
std::array<int, 3> split_counts(int n_scenes, double train, double val, double test);

/// Scene-level split: all patches of a scene share its split tag, scenes
/// assigned in ascending id order (train block first, then val, then test).
void split_dataset(std::vector<data::PatchRecord>& patches, double train, double val,
                   double test);

/// Analytic expected scene-area fraction per tree class under the plan.
/// Dot areas use the exact pixel-raster disc count; larger shapes use the
/// continuous formula (sub-percent raster error at their size).
std::vector<double> expected_fractions(const taxonomy::TaxonomyTree& tree, const GenConfig& cfg);

/// Scenes generated (in parallel), patches extracted, global sequential
/// patch ids assigned, and splits tagged. Pure function of its arguments.
data::Dataset generate_dataset(const taxonomy::TaxonomyTree& tree, const GenConfig& cfg,
                               uint64_t master_seed, int n_scenes, SampleMode mode,
                               double train = 0.6, double val = 0.1, double test = 0.3,
                               unsigned threads = 0);

/// patches/<id>.ppm + patches/<id>_mask.pgm + patches.csv under dir. The
/// trailing present_classes column is a 0/1 string in tree class order
/// (window-level peer availability).
void write_patches(const std::filesystem::path& dir, const data::Dataset& dataset,
                   const taxonomy::TaxonomyTree& tree);

/// scenes/<id>/image.ppm and one mask_<Class>.pgm per class.
void write_scene_files(const std::filesystem::path& dir, const Scene& scene,
                       const taxonomy::TaxonomyTree& tree);

/// Reads a write_patches layout back. Unknown class names, bad split tags,
/// and malformed rows throw; a missing present_classes column defaults to
/// all-present.
data::Dataset load_dataset(const std::filesystem::path& dir, const taxonomy::TaxonomyTree& tree);

inline constexpr char kPatchesCsv[] = "patches.csv";

}  // namespace hats::synthdata
