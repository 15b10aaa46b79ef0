#include <doctest.h>

#include "hats/runconfig.hpp"
#include "hats/util.hpp"

using namespace hats;

TEST_CASE("run config parses, overrides, and round-trips canonically") {
  const char* text =
      "# training\n"
      "total_epochs = 6\n"
      "warmup_epochs = 2   # inline comment\n"
      "lambda_hats = 0.25\n"
      "peer_policy = top_k\n"
      "peer_k = 3\n"
      "paper_protocol = true\n"
      "\n"
      "model.head_channels = 8, 8, 2\n"
      "scale_formula = sqrt_ratio\n"
      "tree = data/kidney.tree\n"
      "dataset = out/ds\n"
      "out = out/run\n";
  auto cfg = runconfig::parse(text);
  CHECK(cfg.train.total_epochs == 6);
  CHECK(cfg.train.warmup_epochs == 2);
  CHECK(cfg.train.lambda_hats == 0.25);
  CHECK(cfg.train.policy.kind == trainer::PeerPolicy::Kind::TopKByScale);
  CHECK(cfg.train.policy.k == 3);
  CHECK(cfg.train.paper_protocol);
  CHECK(cfg.model.head_channels == std::vector<int>{8, 8, 2});
  CHECK(cfg.scale_formula == scale::ScaleFormula::SqrtRatio);
  CHECK(cfg.tree == "data/kidney.tree");
  CHECK(cfg.out == "out/run");
  // Untouched keys keep their defaults.
  CHECK(cfg.train.batch_size == 8);
  CHECK(cfg.model.d == 64);

  runconfig::set_key(cfg, "batch_size", "2");
  CHECK(cfg.train.batch_size == 2);

  const auto canon = runconfig::serialize(cfg);
  CHECK(runconfig::serialize(runconfig::parse(canon)) == canon);
}

TEST_CASE("run config rejects unknown keys and malformed values") {
  CHECK_THROWS_WITH_AS(runconfig::parse("nope = 1\n"), doctest::Contains("unknown key"), Error);
  CHECK_THROWS_WITH_AS(runconfig::parse("total_epochs = six\n"), doctest::Contains("integer"),
                       Error);
  CHECK_THROWS_WITH_AS(runconfig::parse("lambda_hats = much\n"), doctest::Contains("number"),
                       Error);
  CHECK_THROWS_WITH_AS(runconfig::parse("paper_protocol = yes\n"), doctest::Contains("true/false"),
                       Error);
  CHECK_THROWS_WITH_AS(runconfig::parse("peer_policy = best\n"), doctest::Contains("peer_policy"),
                       Error);
  CHECK_THROWS_WITH_AS(runconfig::parse("just a line\n"), doctest::Contains("key = value"), Error);
  CHECK_THROWS_AS(runconfig::parse("model.head_channels = \n"), Error);
}
