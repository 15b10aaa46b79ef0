// hats — command-line front end tying the library modules into reproducible
// pipelines. Every artifact-producing run drops a run.json provenance record
// (resolved config, seed, thread count, format versions) beside its outputs;
// identical records guarantee byte-identical outputs in single-threaded mode.

#include <CLI11.hpp>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "hats/checkpoint.hpp"
#include "hats/eval.hpp"
#include "hats/losses.hpp"
#include "hats/model.hpp"
#include "hats/rng.hpp"
#include "hats/runconfig.hpp"
#include "hats/scale.hpp"
#include "hats/synthdata.hpp"
#include "hats/taxonomy.hpp"
#include "hats/trainer.hpp"
#include "hats/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hats;

namespace {

constexpr char kVersion[] = "0.1.0";

json versions_json() {
  return {{"hats", kVersion},
          {"model_checkpoint", checkpoint::kModelMagic},
          {"train_state", checkpoint::kTrainMagic}};
}

/// Resolved config as a flat string→string object, byte-aligned with the
/// canonical key=value serialization so records diff cleanly.
json config_json(const runconfig::RunConfig& cfg) {
  json j = json::object();
  std::stringstream ss(runconfig::serialize(cfg));
  std::string line;
  while (std::getline(ss, line)) {
    const auto eq = line.find(" = ");
    j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

void write_run_json(const fs::path& dir, const std::string& command, const json& config,
                    uint64_t seed, unsigned threads) {
  json j;
  j["command"] = command;
  j["config"] = config;
  j["seed"] = seed;
  j["threads"] = threads;
  j["versions"] = versions_json();
  const fs::path where = dir.empty() ? fs::path(".") : dir;
  fs::create_directories(where);
  util::write_file(where / "run.json", j.dump(2) + "\n");
}

taxonomy::TaxonomyTree read_tree(const fs::path& path) {
  return taxonomy::parse_tree(util::read_file(path));
}

void require_path(const fs::path& p, const char* what) {
  if (p.empty()) throw Error(std::string("config: ") + what + " path is required");
}

/// Shared by `train` and `ablate`.
trainer::FitResult run_train(const runconfig::RunConfig& cfg, bool resume) {
  require_path(cfg.tree, "tree");
  require_path(cfg.dataset, "dataset");
  require_path(cfg.out, "out");
  const auto tree = read_tree(cfg.tree);
  const auto matrix = taxonomy::derive_matrix(tree);
  const auto dataset = synthdata::load_dataset(cfg.dataset, tree);

  scale::DatasetManifest manifest;
  if (!cfg.manifest.empty()) {
    manifest = scale::load_manifest(util::read_file(cfg.manifest), tree);
  } else {
    // No leakage: scale weights come from the train split only.
    std::vector<data::PatchRecord> train_patches;
    for (const auto& p : dataset.patches)
      if (p.split == "train") train_patches.push_back(p);
    manifest = scale::measure_manifest(train_patches, tree);
  }
  const auto S = scale::build_scale_matrix(manifest, cfg.scale_formula);

  model::ModelConfig mc = cfg.model;
  mc.n_classes = tree.size();
  mc.validate();
  Rng init(cfg.train.seed);
  model::Network net(mc, init);
  const trainer::Matrices mats{&matrix, &S};
  return trainer::fit(net, dataset, mats, cfg.train, cfg.out, resume);
}

/// Shared by `eval` and `ablate`. Writes report.csv/report.md/samples.csv
/// into cfg.out and returns the report.
eval::EvalReport run_eval(const runconfig::RunConfig& cfg, const fs::path& ckpt,
                          const std::string& split, const std::string& title) {
  require_path(cfg.tree, "tree");
  require_path(cfg.dataset, "dataset");
  require_path(cfg.out, "out");
  const auto tree = read_tree(cfg.tree);
  const auto matrix = taxonomy::derive_matrix(tree);
  const auto dataset = synthdata::load_dataset(cfg.dataset, tree);

  model::Network net = checkpoint::load_model(ckpt);
  if (net.config().n_classes != tree.size())
    throw Error("checkpoint expects " + std::to_string(net.config().n_classes) +
                " classes but the tree defines " + std::to_string(tree.size()));

  std::vector<data::PatchRecord> subset;
  for (const auto& p : dataset.patches)
    if (p.split == split) subset.push_back(p);
  if (subset.empty()) throw Error("dataset has no '" + split + "' patches");

  const auto predict = eval::make_network_predictor(net);
  const auto report = eval::evaluate(predict, subset, tree, matrix);
  fs::create_directories(cfg.out);
  eval::write_report_csv(cfg.out / "report.csv", report);
  eval::write_report_md(cfg.out / "report.md", report, title);
  eval::write_samples_csv(cfg.out / "samples.csv", report);
  return report;
}

void print_report_line(const std::string& tag, const eval::EvalReport& r) {
  std::printf("%s overall_dice=%.6f escape_mean=%.6f overlap_mean=%.6f\n", tag.c_str(), r.overall,
              r.escape_mean, r.overlap_mean);
}

// ---- loss-check ------------------------------------------------------------

struct CheckRow {
  std::string branch;
  double max_err = 0.0;
};

losses::MaskTensor random_binary(int side, Rng& rng) {
  auto m = losses::MaskTensor::zeros(side, side);
  m.binary = true;
  for (auto& x : m.v) x = rng.chance(0.5) ? 1.0 : 0.0;
  return m;
}

losses::MaskTensor random_prob(int side, Rng& rng) {
  auto m = losses::MaskTensor::zeros(side, side);
  for (auto& x : m.v) x = rng.uniform(0.2, 0.8);  // interior: keeps clipping inactive
  return m;
}

/// Finite-difference audit of every analytic gradient the trainer uses.
/// Returns max relative error per branch over `trials` random 8×8 draws.
std::vector<CheckRow> loss_check(int trials, int side, double step, uint64_t seed) {
  std::vector<CheckRow> rows = {{"dice", 0.0},          {"bce", 0.0},
                                {"pair_subset", 0.0},   {"pair_superset", 0.0},
                                {"pair_exclusive", 0.0}, {"total", 0.0},
                                {"total_peer_grad", 0.0}};
  Rng rng(seed);
  for (int t = 0; t < trials; ++t) {
    const auto y = random_binary(side, rng);
    const auto p = random_prob(side, rng);
    const auto peer_sub = random_prob(side, rng);
    const auto peer_exc = random_prob(side, rng);
    const auto fixed_p = random_prob(side, rng);

    auto probe = [&](std::size_t row, auto&& fn) {
      const double err = losses::grad_check(fn, p, step);
      if (err > rows[row].max_err) rows[row].max_err = err;
    };
    probe(0, [&](const losses::MaskTensor& q) { return losses::dice_loss(y, q); });
    probe(1, [&](const losses::MaskTensor& q) { return losses::bce(y, q); });
    probe(2, [&](const losses::MaskTensor& q) {
      return losses::taxonomy_pair_loss(y, q, taxonomy::Relation::Subset);
    });
    probe(3, [&](const losses::MaskTensor& q) {
      return losses::taxonomy_pair_loss(y, q, taxonomy::Relation::Superset);
    });
    probe(4, [&](const losses::MaskTensor& q) {
      return losses::taxonomy_pair_loss(y, q, taxonomy::Relation::Exclusive);
    });
    probe(5, [&](const losses::MaskTensor& q) {
      const std::vector<losses::PeerTerm> peers = {
          {&peer_sub, taxonomy::Relation::Subset, 0.7},
          {&peer_exc, taxonomy::Relation::Exclusive, 0.4}};
      const auto total = losses::total_loss(y, q, peers, 0.1);
      return losses::LossValue{total.value, total.grad_p_i};
    });
    probe(6, [&](const losses::MaskTensor& q) {
      const std::vector<losses::PeerTerm> peers = {{&q, taxonomy::Relation::Superset, 0.6}};
      const auto total = losses::total_loss(y, fixed_p, peers, 0.1);
      return losses::LossValue{total.value, total.grad_peers[0]};
    });
  }
  return rows;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hats: taxonomy-guided multi-scale segmentation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.failure_message(
      [](const CLI::App*, const CLI::Error& e) { return std::string("error: ") + e.what() + "\n"; });

  uint64_t g_seed = 0;
  unsigned g_threads = 1;
  std::string g_out;
  auto* seed_opt = app.add_option("--seed", g_seed, "Override the run seed");
  app.add_option("--threads", g_threads, "Worker threads for scene generation (pipelines are otherwise single-threaded)");
  auto* out_opt = app.add_option("--out", g_out, "Override the output path");

  // derive-matrix — global --out names the CSV file (stdout when absent)
  std::string dm_tree;
  auto* dm = app.add_subcommand("derive-matrix", "Compile a taxonomy tree into its relation matrix CSV");
  dm->add_option("--tree", dm_tree, "Taxonomy tree file")->required()->check(CLI::ExistingFile);

  // scale-matrix — global --out names the CSV file (stdout when absent)
  std::string sm_tree, sm_manifest, sm_formula = "ratio";
  auto* sm = app.add_subcommand("scale-matrix", "Build the scale matrix from a dataset manifest");
  sm->add_option("--tree", sm_tree, "Taxonomy tree file")->required()->check(CLI::ExistingFile);
  sm->add_option("--manifest", sm_manifest, "Manifest CSV")->required()->check(CLI::ExistingFile);
  sm->add_option("--formula", sm_formula, "ratio|sqrt_ratio|ones")
      ->check(CLI::IsMember({"ratio", "sqrt_ratio", "ones"}));

  // gen-data
  std::string gd_tree, gd_mode = "biased";
  int gd_scenes = 60, gd_ppc = 2, gd_scene_side = 512, gd_patch_side = 64;
  double gd_noise = 6.0, gd_jitter = 0.0;
  double gd_train = 0.6, gd_val = 0.1, gd_test = 0.3;
  auto* gd = app.add_subcommand("gen-data", "Generate a taxonomy-consistent synthetic dataset");
  gd->add_option("--tree", gd_tree, "Taxonomy tree file")->required()->check(CLI::ExistingFile);
  gd->add_option("--scenes", gd_scenes, "Scene count")->check(CLI::PositiveNumber);
  gd->add_option("--patches-per-class", gd_ppc, "Foreground windows per class per scene (biased mode)");
  gd->add_option("--mode", gd_mode, "biased|tiled")->check(CLI::IsMember({"biased", "tiled"}));
  gd->add_option("--scene-side", gd_scene_side, "Full-resolution canvas side");
  gd->add_option("--patch-side", gd_patch_side, "Patch window side");
  gd->add_option("--noise", gd_noise, "Gaussian pixel noise sigma");
  gd->add_option("--jitter", gd_jitter, "Per-scene per-class color jitter amplitude");
  gd->add_option("--train-frac", gd_train, "Train split fraction");
  gd->add_option("--val-frac", gd_val, "Val split fraction");
  gd->add_option("--test-frac", gd_test, "Test split fraction");

  // train
  std::string tr_config;
  std::vector<std::string> tr_sets;
  bool tr_resume = false;
  auto* tr = app.add_subcommand("train", "Train a model from a run config");
  tr->add_option("--config", tr_config, "key = value run config")->required()->check(CLI::ExistingFile);
  tr->add_option("--set", tr_sets, "Override a config key (key=value, repeatable)");
  tr->add_flag("--resume", tr_resume, "Continue from state.trn in the output directory");

  // eval
  std::string ev_config, ev_ckpt, ev_split = "test";
  std::vector<std::string> ev_sets;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint: Dice, group means, violation metrics");
  ev->add_option("--config", ev_config, "key = value run config")->required()->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", ev_split, "Dataset split to score")
      ->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--set", ev_sets, "Override a config key (key=value, repeatable)");

  // compare
  std::string cp_a, cp_b;
  auto* cp = app.add_subcommand("compare", "Wilcoxon signed-rank test between two samples.csv files");
  cp->add_option("--a", cp_a, "First samples.csv")->required()->check(CLI::ExistingFile);
  cp->add_option("--b", cp_b, "Second samples.csv")->required()->check(CLI::ExistingFile);

  // loss-check
  int lc_trials = 50, lc_side = 8;
  double lc_step = 1e-5, lc_tol = 1e-4;
  auto* lc = app.add_subcommand("loss-check", "Finite-difference audit of every loss gradient");
  lc->add_option("--trials", lc_trials, "Random draws per branch")->check(CLI::PositiveNumber);
  lc->add_option("--side", lc_side, "Mask side length")->check(CLI::PositiveNumber);
  lc->add_option("--step", lc_step, "Finite-difference step");
  lc->add_option("--tol", lc_tol, "Max relative error to pass");

  // ablate
  std::string ab_config, ab_htm, ab_hsm;
  std::vector<std::string> ab_sets;
  auto* ab = app.add_subcommand("ablate",
                                "Train + evaluate one ablation cell (taxonomy loss / scale matrix)");
  ab->add_option("--config", ab_config, "key = value run config")->required()->check(CLI::ExistingFile);
  ab->add_option("--htm", ab_htm, "on|off: taxonomy loss (off sets lambda_hats=0)")
      ->required()
      ->check(CLI::IsMember({"on", "off"}));
  ab->add_option("--hsm", ab_hsm, "on|off: scale matrix (off sets scale_formula=ones)")
      ->required()
      ->check(CLI::IsMember({"on", "off"}));
  ab->add_option("--set", ab_sets, "Override a config key (key=value, repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    auto load_config = [&](const std::string& path, const std::vector<std::string>& sets) {
      auto cfg = runconfig::load(path);
      for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
        runconfig::set_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (seed_opt->count()) cfg.train.seed = g_seed;
      if (out_opt->count()) cfg.out = g_out;
      return cfg;
    };

    if (*dm) {
      const auto tree = read_tree(dm_tree);
      const auto matrix = taxonomy::derive_matrix(tree);
      const auto problems = taxonomy::validate_matrix(matrix);
      if (!problems.empty())
        throw Error("derived matrix failed validation: " + problems.front() + " (+" +
                    std::to_string(problems.size() - 1) + " more)");
      const auto csv = taxonomy::matrix_to_csv(matrix, tree.classes);
      if (g_out.empty()) {
        std::fputs(csv.c_str(), stdout);
      } else {
        util::write_file(g_out, csv);
        write_run_json(fs::path(g_out).parent_path(), "derive-matrix",
                       json{{"tree", dm_tree}, {"out", g_out}}, g_seed, g_threads);
      }
    } else if (*sm) {
      const auto tree = read_tree(sm_tree);
      const auto manifest = scale::load_manifest(util::read_file(sm_manifest), tree);
      const auto S = scale::build_scale_matrix(manifest, scale::scale_formula_from_string(sm_formula));
      const auto csv = scale::scale_matrix_to_csv(S, tree.classes);
      if (g_out.empty()) {
        std::fputs(csv.c_str(), stdout);
      } else {
        util::write_file(g_out, csv);
        write_run_json(fs::path(g_out).parent_path(), "scale-matrix",
                       json{{"tree", sm_tree},
                            {"manifest", sm_manifest},
                            {"formula", sm_formula},
                            {"out", g_out}},
                       g_seed, g_threads);
      }
    } else if (*gd) {
      if (g_out.empty()) throw Error("gen-data requires --out <directory>");
      const auto tree = read_tree(gd_tree);
      auto cfg = synthdata::GenConfig::kidney_default();
      cfg.scene_side = gd_scene_side;
      cfg.patch_side = gd_patch_side;
      cfg.patches_per_class = gd_ppc;
      cfg.noise_sigma = gd_noise;
      cfg.color_jitter = gd_jitter;
      synthdata::validate_plan(tree, cfg);
      const auto mode =
          gd_mode == "tiled" ? synthdata::SampleMode::Tiled : synthdata::SampleMode::Biased;
      const auto dataset = synthdata::generate_dataset(tree, cfg, g_seed, gd_scenes, mode, gd_train,
                                                       gd_val, gd_test, g_threads);
      synthdata::write_patches(g_out, dataset, tree);
      const auto manifest = scale::measure_manifest(dataset.patches, tree);
      util::write_file(fs::path(g_out) / "manifest.csv", scale::manifest_to_csv(manifest));
      write_run_json(g_out, "gen-data",
                     json{{"tree", gd_tree},
                          {"scenes", gd_scenes},
                          {"patches-per-class", gd_ppc},
                          {"mode", gd_mode},
                          {"scene-side", gd_scene_side},
                          {"patch-side", gd_patch_side},
                          {"noise", gd_noise},
                          {"jitter", gd_jitter},
                          {"train-frac", gd_train},
                          {"val-frac", gd_val},
                          {"test-frac", gd_test}},
                     g_seed, g_threads);
      std::printf("gen-data wrote %zu patches from %d scenes to %s\n", dataset.patches.size(),
                  gd_scenes, g_out.c_str());
    } else if (*tr) {
      const auto cfg = load_config(tr_config, tr_sets);
      const auto result = run_train(cfg, tr_resume);
      write_run_json(cfg.out, "train", config_json(cfg), cfg.train.seed, g_threads);
      std::printf("train finished: best_epoch=%d best_val_dice=%.6f out=%s\n", result.best_epoch,
                  result.best_val, cfg.out.string().c_str());
    } else if (*ev) {
      const auto cfg = load_config(ev_config, ev_sets);
      const auto report = run_eval(cfg, ev_ckpt, ev_split, "Evaluation (" + ev_split + " split)");
      json cj = config_json(cfg);
      cj["checkpoint"] = ev_ckpt;
      cj["split"] = ev_split;
      write_run_json(cfg.out, "eval", cj, cfg.train.seed, g_threads);
      print_report_line("eval", report);
    } else if (*cp) {
      const auto a = eval::load_samples_csv(cp_a);
      const auto b = eval::load_samples_csv(cp_b);
      const auto res = eval::wilcoxon_signed_rank(a, b);
      std::printf("n=%d w=%.17g p=%.17g method=%s%s\n", res.n, res.w, res.p,
                  res.exact ? "exact" : "normal", res.degenerate ? " degenerate" : "");
    } else if (*lc) {
      const auto rows = loss_check(lc_trials, lc_side, lc_step, g_seed);
      bool all_pass = true;
      std::printf("%-18s %7s %14s %6s\n", "branch", "trials", "max_rel_err", "status");
      for (const auto& row : rows) {
        const bool pass = row.max_err < lc_tol;
        all_pass = all_pass && pass;
        std::printf("%-18s %7d %14.3e %6s\n", row.branch.c_str(), lc_trials, row.max_err,
                    pass ? "PASS" : "FAIL");
      }
      if (!all_pass) throw Error("loss-check failed: a gradient exceeded tolerance " +
                                 std::to_string(lc_tol));
    } else if (*ab) {
      auto cfg = load_config(ab_config, ab_sets);
      const std::string tag = "htm_" + ab_htm + "_hsm_" + ab_hsm;
      cfg.out = cfg.out / tag;
      if (ab_htm == "off") cfg.train.lambda_hats = 0.0;
      if (ab_hsm == "off") cfg.scale_formula = scale::ScaleFormula::Ones;
      run_train(cfg, false);
      const auto report =
          run_eval(cfg, cfg.out / trainer::kBestCheckpoint, "test", "Ablation " + tag);
      json cj = config_json(cfg);
      cj["ablation"] = json{{"htm", ab_htm}, {"hsm", ab_hsm}};
      write_run_json(cfg.out, "ablate", cj, cfg.train.seed, g_threads);
      print_report_line(tag, report);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
