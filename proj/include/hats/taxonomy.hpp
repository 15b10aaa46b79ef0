#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hats::taxonomy {

/// Pairwise relation between two classes. Every ordered pair carries exactly
/// one relation; Unrelated pairs contribute nothing to the taxonomy loss.
enum class Relation : std::uint8_t { Subset, Superset, Exclusive, Self, Unrelated };

/// Short codes used in the relation-matrix CSV.
const char* relation_code(Relation r);
Relation relation_from_code(std::string_view code);

struct ClassId {
  int index = -1;
  std::string name;
};

/// Containment forest plus declared exclusions. Node order (= file order)
/// fixes the class indices used everywhere else.
struct TaxonomyTree {
  std::vector<std::string> classes;
  std::vector<int> parent;                       // -1 for roots; parent[c] ⊇ c
  std::vector<std::pair<int, int>> exclusions;   // declared, stored as (min,max)
  std::vector<int> exclusive_children;           // parents whose children are pairwise exclusive

  int size() const { return static_cast<int>(classes.size()); }
  int index_of(std::string_view name) const;     // -1 when absent
  const std::string& name_of(int i) const { return classes.at(static_cast<std::size_t>(i)); }
  std::vector<std::pair<int, int>> edges() const;  // (parent, child), ordered by child

  bool operator==(const TaxonomyTree&) const = default;
};

/// Parse the taxonomy tree file format:
///   class <Name>
///   contains <Parent> <Child>
///   exclusive <A> <B>
///   exclusive_children <Parent>
/// '#' starts a comment. Throws Error on duplicate names, unknown classes,
/// cycles, double parents, or an exclusion between nested classes.
TaxonomyTree parse_tree(const std::string& text);

/// Inverse of parse_tree: emits a file that reparses to an identical tree.
std::string serialize_tree(const TaxonomyTree& tree);

struct TaxonomyMatrix {
  int n = 0;
  std::vector<Relation> rel;  // row-major n×n

  Relation at(int i, int j) const { return rel[static_cast<std::size_t>(i) * n + j]; }
  void set(int i, int j, Relation r) { rel[static_cast<std::size_t>(i) * n + j] = r; }
};

/// Compile the tree into the full pairwise relation matrix: containment is
/// closed transitively, exclusions are inherited by descendants on both
/// sides, and exclusive_children parents induce pairwise-exclusive child
/// lineages. Throws Error if a pair derives as both nested and exclusive.
TaxonomyMatrix derive_matrix(const TaxonomyTree& tree);

/// Bounds-checked lookup.
Relation relation_of(const TaxonomyMatrix& m, int i, int j);

/// Structural audit. Returns one human-readable description per violation:
/// diagonal, antisymmetry/symmetry, containment transitivity, and exclusion
/// inheritance. Empty result means the matrix is consistent.
std::vector<std::string> validate_matrix(const TaxonomyMatrix& m);

/// Relation matrix as CSV (header + first column are class names; cells are
/// SUB/SUP/EXC/SELF/NONE).
std::string matrix_to_csv(const TaxonomyMatrix& m, const std::vector<std::string>& names);
TaxonomyMatrix matrix_from_csv(const std::string& csv, std::vector<std::string>* names_out = nullptr);

}  // namespace hats::taxonomy
