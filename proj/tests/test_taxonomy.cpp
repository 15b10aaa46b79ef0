#include "hats/taxonomy.hpp"

#include <doctest.h>

#include <set>

#include "hats/rng.hpp"
#include "hats/util.hpp"

using namespace hats;
using namespace hats::taxonomy;

namespace {

// Independent oracle: compute the relation between two classes from raw
// ancestor sets, without touching the derivation code path.
//   ancestors*(x) = {x} ∪ all transitive parents
//   i SUB j  iff j ∈ ancestors*(i) \ {i}
//   i EXC j  iff some declared-or-sibling base pair (a,b) has
//            a ∈ ancestors*(i) and b ∈ ancestors*(j) (either order)
std::set<int> ancestor_closure(const TaxonomyTree& t, int x) {
  std::set<int> out{x};
  int cur = t.parent[static_cast<std::size_t>(x)];
  while (cur >= 0) {
    out.insert(cur);
    cur = t.parent[static_cast<std::size_t>(cur)];
  }
  return out;
}

std::vector<std::pair<int, int>> base_pairs(const TaxonomyTree& t) {
  auto base = t.exclusions;
  for (int p : t.exclusive_children) {
    std::vector<int> kids;
    for (int c = 0; c < t.size(); ++c)
      if (t.parent[static_cast<std::size_t>(c)] == p) kids.push_back(c);
    for (std::size_t a = 0; a < kids.size(); ++a)
      for (std::size_t b = a + 1; b < kids.size(); ++b) base.emplace_back(kids[a], kids[b]);
  }
  return base;
}

Relation oracle_relation(const TaxonomyTree& t, int i, int j) {
  if (i == j) return Relation::Self;
  const auto anc_i = ancestor_closure(t, i);
  const auto anc_j = ancestor_closure(t, j);
  if (anc_i.count(j)) return Relation::Subset;
  if (anc_j.count(i)) return Relation::Superset;
  for (const auto& [a, b] : base_pairs(t)) {
    if ((anc_i.count(a) && anc_j.count(b)) || (anc_i.count(b) && anc_j.count(a)))
      return Relation::Exclusive;
  }
  return Relation::Unrelated;
}

// Random forest generator for fuzzing. Each node picks a parent among
// earlier nodes or none; exclusions are sampled among non-nested pairs so
// the tree always derives cleanly.
TaxonomyTree random_tree(Rng& rng, int n) {
  TaxonomyTree t;
  for (int i = 0; i < n; ++i) {
    t.classes.push_back("c" + std::to_string(i));
    t.parent.push_back(i > 0 && rng.chance(0.7) ? static_cast<int>(rng.below(static_cast<uint64_t>(i))) : -1);
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const auto anc_i = ancestor_closure(t, i);
      const auto anc_j = ancestor_closure(t, j);
      if (anc_i.count(j) || anc_j.count(i)) continue;
      // Skip pairs whose lineages already collide through an earlier pick:
      // derive_matrix treats that as fine (same relation), only nesting
      // conflicts are fatal, so no filtering beyond nestedness is needed.
      if (rng.chance(0.15)) t.exclusions.emplace_back(i, j);
    }
  if (n > 0 && rng.chance(0.3)) t.exclusive_children.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(n))));
  return t;
}

const char* kKidneyLikeTree = R"(class Outer
class Inner
class A
class B
class Leaf
contains Outer A
contains Outer B
contains A Leaf
exclusive A B
exclusive Outer Inner
)";

}  // namespace

TEST_CASE("parse_tree reads directives and resolves forward references") {
  const auto t = parse_tree("contains P C\nclass P\nclass C\n");
  CHECK(t.size() == 2);
  CHECK(t.parent[1] == 0);
  CHECK(t.parent[0] == -1);
}

TEST_CASE("parse_tree strips comments and blank lines") {
  const auto t = parse_tree("# header\n\nclass X  # trailing\n   \nclass Y\nexclusive X Y\n");
  CHECK(t.size() == 2);
  CHECK(t.exclusions.size() == 1);
}

TEST_CASE("parse_tree rejects malformed input") {
  CHECK_THROWS_AS(parse_tree("class A\nclass A\n"), Error);               // duplicate
  CHECK_THROWS_AS(parse_tree("contains A B\n"), Error);                   // unknown names
  CHECK_THROWS_AS(parse_tree("class A\ncontains A A\n"), Error);          // self-containment
  CHECK_THROWS_AS(parse_tree("class A\nclass B\nclass C\ncontains A C\ncontains B C\n"), Error);  // two parents
  CHECK_THROWS_AS(parse_tree("class A\nclass B\ncontains A B\ncontains B A\n"), Error);  // cycle
  CHECK_THROWS_AS(parse_tree("class A\nexclusive A A\n"), Error);         // self-exclusion
  CHECK_THROWS_AS(parse_tree("class A\nclass B\ncontains A B\nexclusive A B\n"), Error);  // nested exclusion
  CHECK_THROWS_AS(parse_tree("frobnicate A B\n"), Error);                 // unknown directive
}

TEST_CASE("serialize_tree round-trips") {
  const auto t = parse_tree(kKidneyLikeTree);
  const auto again = parse_tree(serialize_tree(t));
  CHECK(t == again);
}

TEST_CASE("derive_matrix on the documented example") {
  const auto t = parse_tree(kKidneyLikeTree);
  const auto m = derive_matrix(t);
  const int outer = t.index_of("Outer"), inner = t.index_of("Inner");
  const int a = t.index_of("A"), b = t.index_of("B"), leaf = t.index_of("Leaf");

  CHECK(relation_of(m, a, outer) == Relation::Subset);
  CHECK(relation_of(m, outer, a) == Relation::Superset);
  CHECK(relation_of(m, leaf, outer) == Relation::Subset);   // transitivity
  CHECK(relation_of(m, a, b) == Relation::Exclusive);
  CHECK(relation_of(m, leaf, b) == Relation::Exclusive);    // inherited from A-B
  CHECK(relation_of(m, leaf, inner) == Relation::Exclusive); // inherited from Outer-Inner
  CHECK(relation_of(m, a, a) == Relation::Self);
  CHECK(relation_of(m, inner, leaf) == Relation::Exclusive);
  CHECK(validate_matrix(m).empty());
}

TEST_CASE("derive_matrix rejects contradictory input") {
  // B nested in A while a base pair forces A EXC B through a third class.
  TaxonomyTree t;
  t.classes = {"A", "B", "C"};
  t.parent = {-1, 0, 0};
  t.exclusions = {{1, 2}};
  t.exclusive_children = {};
  CHECK_NOTHROW(derive_matrix(t));
  t.exclusions.push_back({0, 1});  // A excludes its own child
  CHECK_THROWS_AS(derive_matrix(t), Error);
}

TEST_CASE("relation_of bounds checks") {
  const auto m = derive_matrix(parse_tree("class A\n"));
  CHECK_THROWS_AS(relation_of(m, 0, 1), Error);
  CHECK_THROWS_AS(relation_of(m, -1, 0), Error);
}

TEST_CASE("validate_matrix flags each invariant class") {
  auto m = derive_matrix(parse_tree(kKidneyLikeTree));
  CHECK(validate_matrix(m).empty());

  auto broken = m;
  broken.set(0, 0, Relation::Unrelated);
  CHECK(!validate_matrix(broken).empty());

  broken = m;  // SUB whose transpose is not SUP
  broken.set(2, 0, Relation::Subset);
  broken.set(0, 2, Relation::Unrelated);
  CHECK(!validate_matrix(broken).empty());

  broken = m;  // asymmetric exclusive
  broken.set(2, 3, Relation::Exclusive);
  broken.set(3, 2, Relation::Unrelated);
  CHECK(!validate_matrix(broken).empty());

  // Containment transitivity: Leaf SUB A, A SUB Outer, break Leaf-Outer.
  broken = m;
  broken.set(4, 0, Relation::Unrelated);
  broken.set(0, 4, Relation::Unrelated);
  CHECK(!validate_matrix(broken).empty());

  // Exclusion inheritance: Leaf SUB A, A EXC B, break Leaf-B.
  broken = m;
  broken.set(4, 3, Relation::Unrelated);
  broken.set(3, 4, Relation::Unrelated);
  CHECK(!validate_matrix(broken).empty());
}

TEST_CASE("derived matrices match the ancestor-set oracle on random forests") {
  Rng rng(0x7a41u);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(30));
    const auto t = random_tree(rng, n);
    TaxonomyMatrix m;
    try {
      m = derive_matrix(t);
    } catch (const Error&) {
      // Random exclusive_children picks can nest against declared
      // exclusions; contradiction is a legal outcome for those trees.
      continue;
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        CAPTURE(trial);
        CAPTURE(i);
        CAPTURE(j);
        CHECK(m.at(i, j) == oracle_relation(t, i, j));
      }
    CHECK(validate_matrix(m).empty());
  }
}

TEST_CASE("matrix csv round-trip") {
  const auto t = parse_tree(kKidneyLikeTree);
  const auto m = derive_matrix(t);
  const auto csv = matrix_to_csv(m, t.classes);
  std::vector<std::string> names;
  const auto back = matrix_from_csv(csv, &names);
  CHECK(names == t.classes);
  REQUIRE(back.n == m.n);
  for (int i = 0; i < m.n; ++i)
    for (int j = 0; j < m.n; ++j) CHECK(back.at(i, j) == m.at(i, j));
}

TEST_CASE("relation codes round-trip") {
  for (Relation r : {Relation::Subset, Relation::Superset, Relation::Exclusive, Relation::Self,
                     Relation::Unrelated})
    CHECK(relation_from_code(relation_code(r)) == r);
  CHECK_THROWS_AS(relation_from_code("XYZ"), Error);
}
