#include "hats/losses.hpp"

#include <doctest.h>

#include <cmath>

#include "hats/rng.hpp"
#include "hats/util.hpp"

using namespace hats;
using namespace hats::losses;
using taxonomy::Relation;

namespace {

MaskTensor row(std::vector<double> v, bool binary = false) {
  MaskTensor m;
  m.h = 1;
  m.w = static_cast<int>(v.size());
  m.binary = binary;
  m.v = std::move(v);
  return m;
}

MaskTensor random_binary(Rng& rng, int h, int w, double density = 0.4) {
  MaskTensor m = MaskTensor::zeros(h, w);
  m.binary = true;
  for (auto& x : m.v) x = rng.chance(density) ? 1.0 : 0.0;
  return m;
}

MaskTensor random_prob(Rng& rng, int h, int w) {
  MaskTensor m = MaskTensor::zeros(h, w);
  for (auto& x : m.v) x = rng.uniform(0.05, 0.95);  // interior so clamps stay inactive
  return m;
}

double mass_outside(const MaskTensor& y, const MaskTensor& p) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += (1.0 - y.v[k]) * p.v[k];
  return s;
}

}  // namespace

TEST_CASE("dice_coeff hand values") {
  CHECK(dice_coeff(row({1, 1, 0, 0}), row({1, 1, 0, 0})).value == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(dice_coeff(row({1, 1, 0, 0}), row({0, 0, 1, 1})).value == doctest::Approx(0.0).epsilon(1e-5));
  CHECK(dice_coeff(row({0, 0, 1, 1}), row({1, 1, 1, 1})).value == doctest::Approx(2.0 / 3).epsilon(1e-5));
}

TEST_CASE("dice_coeff is symmetric in value and bounded") {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const auto a = random_prob(rng, 4, 4);
    const auto b = random_prob(rng, 4, 4);
    CHECK(dice_coeff(a, b).value == doctest::Approx(dice_coeff(b, a).value).epsilon(1e-12));
    CHECK(dice_coeff(a, b).value > 0.0);
    CHECK(dice_coeff(a, a).value <= 1.0 + 1e-12);
  }
  CHECK_THROWS_AS(dice_coeff(row({1, 0}), row({1, 0, 0})), Error);
  CHECK_THROWS_AS(dice_coeff(row({1, 0}), row({1, 0}), 0.0), Error);
}

TEST_CASE("dice_loss hand values") {
  CHECK(dice_loss(row({1, 1, 0, 0}, true), row({1, 1, 0, 0})).value == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(dice_loss(row({1, 1, 0, 0}, true), row({0, 0, 1, 1})).value == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(dice_loss(row({0, 0, 1, 1}, true), row({1, 1, 1, 1})).value == doctest::Approx(1.0 / 3).epsilon(1e-5));
}

TEST_CASE("bce hand values") {
  CHECK(bce(row({1, 0}, true), row({1, 0})).value == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(bce(row({1}, true), row({0.5})).value == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(bce(row({1, 0}, true), row({0.9, 0.1})).value == doctest::Approx(-std::log(0.9)).epsilon(1e-9));
  CHECK_THROWS_AS(bce(row({0.5}), row({0.5})), Error);  // non-binary label
}

TEST_CASE("taxonomy_pair_loss hand values") {
  const auto y = row({1, 1, 0, 0}, true);
  CHECK(taxonomy_pair_loss(y, row({0, 0, 1, 1}), Relation::Exclusive).value ==
        doctest::Approx(0.0).epsilon(1e-5));
  CHECK(taxonomy_pair_loss(y, row({1, 1, 1, 1}), Relation::Subset).value ==
        doctest::Approx(2.0 / 3).epsilon(1e-5));
  CHECK(taxonomy_pair_loss(y, row({1, 0, 0, 0}), Relation::Superset).value ==
        doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(taxonomy_pair_loss(y, row({1, 1, 1, 1}), Relation::Superset).value ==
        doctest::Approx(-2.0 / 3).epsilon(1e-5));
  for (Relation r : {Relation::Unrelated, Relation::Self}) {
    const auto lv = taxonomy_pair_loss(y, row({0.3, 0.8, 0.5, 0.1}), r);
    CHECK(lv.value == 0.0);
    for (double g : lv.grad) CHECK(g == 0.0);
  }
}

TEST_CASE("exclusive penalty grows with overlap mass at fixed support") {
  const auto y = row({1, 1, 1, 0, 0, 0}, true);
  // Move one unit of prediction mass from outside the label to inside it.
  const double before = taxonomy_pair_loss(y, row({0, 0, 0, 1, 1, 1}), Relation::Exclusive).value;
  const double after = taxonomy_pair_loss(y, row({1, 0, 0, 0, 1, 1}), Relation::Exclusive).value;
  CHECK(after > before);
  const double more = taxonomy_pair_loss(y, row({1, 1, 0, 0, 0, 1}), Relation::Exclusive).value;
  CHECK(more > after);
}

TEST_CASE("superset attains -1 exactly when prediction stays inside the label") {
  Rng rng(5);
  const auto y = random_binary(rng, 6, 6, 0.5);
  MaskTensor inside = MaskTensor::zeros(6, 6);
  for (std::size_t k = 0; k < inside.size(); ++k) inside.v[k] = y.v[k] * rng.uniform(0, 1);
  CHECK(taxonomy_pair_loss(y, inside, Relation::Superset).value == doctest::Approx(-1.0).epsilon(1e-6));
  auto outside = inside;
  for (std::size_t k = 0; k < outside.size(); ++k)
    if (y.v[k] == 0.0) outside.v[k] = 0.2;
  CHECK(taxonomy_pair_loss(y, outside, Relation::Superset).value > -1.0 + 1e-4);
}

TEST_CASE("subset branch vanishes without outside mass and descends from uniform") {
  const auto y = row({1, 1, 1, 1, 0, 0, 0, 0}, true);
  MaskTensor inside = row({0.9, 0.5, 0.7, 1, 0, 0, 0, 0});
  CHECK(taxonomy_pair_loss(y, inside, Relation::Subset).value == doctest::Approx(0.0).epsilon(1e-5));

  // Step small enough that 100 iterations never clamp mass to exactly zero,
  // keeping the decrease strict throughout.
  MaskTensor p = MaskTensor::constant(1, 8, 0.5);
  p.binary = false;
  double prev = mass_outside(y, p);
  for (int step = 0; step < 100; ++step) {
    const auto lv = taxonomy_pair_loss(y, p, Relation::Subset);
    for (std::size_t k = 0; k < p.size(); ++k)
      p.v[k] = std::clamp(p.v[k] - 0.01 * lv.grad[k], 0.0, 1.0);
    const double cur = mass_outside(y, p);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("total_loss composition and reductions") {
  Rng rng(77);
  const auto y = random_binary(rng, 8, 8);
  const auto p = random_prob(rng, 8, 8);
  const auto q1 = random_prob(rng, 8, 8);
  const auto q2 = random_prob(rng, 8, 8);

  const double supervised = dice_loss(y, p).value + bce(y, p).value;

  SUBCASE("lambda=0 keeps only supervised terms") {
    std::vector<PeerTerm> peers{{&q1, Relation::Exclusive, 0.7}};
    const auto t = total_loss(y, p, peers, 0.0);
    CHECK(t.value == supervised);
    CHECK(t.taxonomy == 0.0);
    for (double g : t.grad_peers[0]) CHECK(g == 0.0);
  }
  SUBCASE("all-unrelated peers reduce to supervised terms exactly") {
    std::vector<PeerTerm> peers{{&q1, Relation::Unrelated, 0.9}, {&q2, Relation::Unrelated, 0.2}};
    CHECK(total_loss(y, p, peers, 0.1).value == supervised);
  }
  SUBCASE("decomposition sums to the scalar") {
    std::vector<PeerTerm> peers{{&q1, Relation::Exclusive, 0.7}, {&q2, Relation::Subset, 0.3}};
    const auto t = total_loss(y, p, peers, 0.1);
    CHECK(t.value == doctest::Approx(t.dice + t.bce + t.taxonomy).epsilon(1e-15));
    const double expected = 0.1 * (0.7 * taxonomy_pair_loss(y, q1, Relation::Exclusive).value +
                                   0.3 * taxonomy_pair_loss(y, q2, Relation::Subset).value);
    CHECK(t.taxonomy == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("disjoint exclusive peer and perfect prediction vanish") {
    const auto yy = row({1, 1, 0, 0}, true);
    const auto pp = row({1, 1, 0, 0});
    const auto qq = row({0, 0, 1, 1});
    std::vector<PeerTerm> peers{{&qq, Relation::Exclusive, 1.0}};
    CHECK(total_loss(yy, pp, peers, 0.1).value == doctest::Approx(0.0).epsilon(1e-4));
  }
  SUBCASE("negative weight and lambda rejected") {
    std::vector<PeerTerm> peers{{&q1, Relation::Exclusive, -0.1}};
    CHECK_THROWS_AS(total_loss(y, p, peers, 0.1), Error);
    peers[0].s_ij = 0.1;
    CHECK_THROWS_AS(total_loss(y, p, peers, -1.0), Error);
  }
}

TEST_CASE("analytic gradients match finite differences on random 8x8 masks") {
  Rng rng(0xbeef);
  for (int trial = 0; trial < 10; ++trial) {
    const auto y = random_binary(rng, 8, 8);
    const auto p = random_prob(rng, 8, 8);

    CHECK(grad_check([&](const MaskTensor& q) { return dice_loss(y, q); }, p, 1e-5) < 1e-4);
    CHECK(grad_check([&](const MaskTensor& q) { return bce(y, q); }, p, 1e-5) < 1e-4);
    CHECK(grad_check([&](const MaskTensor& q) { return dice_coeff(y, q); }, p, 1e-5) < 1e-4);
    for (Relation r : {Relation::Subset, Relation::Superset, Relation::Exclusive})
      CHECK(grad_check([&](const MaskTensor& q) { return taxonomy_pair_loss(y, q, r); }, p, 1e-5) <
            1e-4);
  }
}

TEST_CASE("total_loss gradients match finite differences for p_i and each peer") {
  Rng rng(0xfeed);
  const auto y = random_binary(rng, 8, 8);
  const auto p = random_prob(rng, 8, 8);
  const auto q1 = random_prob(rng, 8, 8);
  const auto q2 = random_prob(rng, 8, 8);
  std::vector<PeerTerm> peers{{&q1, Relation::Exclusive, 0.8}, {&q2, Relation::Superset, 0.4}};

  const double err_pi = grad_check(
      [&](const MaskTensor& q) {
        auto t = total_loss(y, q, peers, 0.1);
        return LossValue{t.value, t.grad_p_i};
      },
      p, 1e-5);
  CHECK(err_pi < 1e-4);

  for (std::size_t which = 0; which < peers.size(); ++which) {
    const double err = grad_check(
        [&](const MaskTensor& q) {
          auto local = peers;
          local[which].p_j = &q;
          auto t = total_loss(y, p, local, 0.1);
          return LossValue{t.value, t.grad_peers[which]};
        },
        *peers[which].p_j, 1e-5);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("validity mask reproduces the unpadded loss exactly") {
  Rng rng(99);
  const int side = 8, padded = 12;
  const auto y_small = random_binary(rng, side, side);
  const auto p_small = random_prob(rng, side, side);

  // Embed in a larger canvas with garbage in the pad region.
  MaskTensor y_big = MaskTensor::zeros(padded, padded);
  y_big.binary = true;
  MaskTensor p_big = MaskTensor::constant(padded, padded, 0.5);
  p_big.binary = false;
  MaskTensor valid = MaskTensor::zeros(padded, padded);
  valid.binary = true;
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const std::size_t big = static_cast<std::size_t>(r) * padded + c;
      const std::size_t small = static_cast<std::size_t>(r) * side + c;
      y_big.v[big] = y_small.v[small];
      p_big.v[big] = p_small.v[small];
      valid.v[big] = 1.0;
    }

  CHECK(dice_loss(y_big, p_big, &valid).value ==
        doctest::Approx(dice_loss(y_small, p_small).value).epsilon(1e-12));
  CHECK(bce(y_big, p_big, &valid).value == doctest::Approx(bce(y_small, p_small).value).epsilon(1e-12));
  for (Relation r : {Relation::Subset, Relation::Superset, Relation::Exclusive})
    CHECK(taxonomy_pair_loss(y_big, p_big, r, &valid).value ==
          doctest::Approx(taxonomy_pair_loss(y_small, p_small, r).value).epsilon(1e-12));

  // Gradient in the pad region is identically zero.
  const auto lv = dice_loss(y_big, p_big, &valid);
  for (std::size_t k = 0; k < lv.grad.size(); ++k)
    if (valid.v[k] == 0.0) CHECK(lv.grad[k] == 0.0);

  // FD check with the mask active.
  const double err = grad_check(
      [&](const MaskTensor& q) { return dice_loss(y_big, q, &valid); }, p_big, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check guards its preconditions") {
  const auto y = row({1, 0}, true);
  const auto p = row({0.5, 0.5});
  CHECK_THROWS_AS(grad_check([&](const MaskTensor& q) { return bce(y, q); }, p, 1e-7), Error);
  CHECK_THROWS_AS(grad_check([&](const MaskTensor& q) { return bce(y, q); }, p, 1e-2), Error);
  CHECK_THROWS_AS(grad_check(
                      [&](const MaskTensor& q) {
                        return LossValue{std::numeric_limits<double>::quiet_NaN(),
                                         std::vector<double>(q.size(), 0.0)};
                      },
                      p, 1e-5),
                  Error);
}
