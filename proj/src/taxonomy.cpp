#include "hats/taxonomy.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "hats/util.hpp"

namespace hats::taxonomy {

const char* relation_code(Relation r) {
  switch (r) {
    case Relation::Subset: return "SUB";
    case Relation::Superset: return "SUP";
    case Relation::Exclusive: return "EXC";
    case Relation::Self: return "SELF";
    case Relation::Unrelated: return "NONE";
  }
  throw Error("unknown relation value");
}

Relation relation_from_code(std::string_view code) {
  if (code == "SUB") return Relation::Subset;
  if (code == "SUP") return Relation::Superset;
  if (code == "EXC") return Relation::Exclusive;
  if (code == "SELF") return Relation::Self;
  if (code == "NONE") return Relation::Unrelated;
  throw Error("unknown relation code: '" + std::string(code) + "'");
}

int TaxonomyTree::index_of(std::string_view name) const {
  for (int i = 0; i < size(); ++i)
    if (classes[static_cast<std::size_t>(i)] == name) return i;
  return -1;
}

std::vector<std::pair<int, int>> TaxonomyTree::edges() const {
  std::vector<std::pair<int, int>> out;
  for (int c = 0; c < size(); ++c)
    if (parent[static_cast<std::size_t>(c)] >= 0) out.emplace_back(parent[static_cast<std::size_t>(c)], c);
  return out;
}

namespace {

/// True iff a is a strict descendant of b (a ⊆ b via parent links).
bool is_descendant(const TaxonomyTree& tree, int a, int b) {
  int cur = tree.parent[static_cast<std::size_t>(a)];
  while (cur >= 0) {
    if (cur == b) return true;
    cur = tree.parent[static_cast<std::size_t>(cur)];
  }
  return false;
}

int require_class(const TaxonomyTree& tree, const std::string& name, int line_no) {
  const int idx = tree.index_of(name);
  if (idx < 0)
    throw Error("line " + std::to_string(line_no) + ": unknown class '" + name + "'");
  return idx;
}

}  // namespace

TaxonomyTree parse_tree(const std::string& text) {
  TaxonomyTree tree;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  // (parent, child) and exclusion names are resolved against classes declared
  // anywhere in the file, so directives are collected first.
  std::vector<std::tuple<int, std::string, std::string>> contains_lines;
  std::vector<std::tuple<int, std::string, std::string>> exclusive_lines;
  std::vector<std::pair<int, std::string>> exclusive_children_lines;

  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line{raw};
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tokens = util::split_ws(line);
    if (tokens.empty()) continue;
    const std::string& directive = tokens[0];
    if (directive == "class") {
      if (tokens.size() != 2) throw Error("line " + std::to_string(line_no) + ": class takes one name");
      if (tree.index_of(tokens[1]) >= 0)
        throw Error("line " + std::to_string(line_no) + ": duplicate class name '" + tokens[1] + "'");
      tree.classes.push_back(tokens[1]);
      tree.parent.push_back(-1);
    } else if (directive == "contains") {
      if (tokens.size() != 3) throw Error("line " + std::to_string(line_no) + ": contains takes parent and child");
      contains_lines.emplace_back(line_no, tokens[1], tokens[2]);
    } else if (directive == "exclusive") {
      if (tokens.size() != 3) throw Error("line " + std::to_string(line_no) + ": exclusive takes two classes");
      exclusive_lines.emplace_back(line_no, tokens[1], tokens[2]);
    } else if (directive == "exclusive_children") {
      if (tokens.size() != 2) throw Error("line " + std::to_string(line_no) + ": exclusive_children takes one parent");
      exclusive_children_lines.emplace_back(line_no, tokens[1]);
    } else {
      throw Error("line " + std::to_string(line_no) + ": unknown directive '" + directive + "'");
    }
  }

  for (const auto& [ln, parent_name, child_name] : contains_lines) {
    const int p = require_class(tree, parent_name, ln);
    const int c = require_class(tree, child_name, ln);
    if (p == c) throw Error("line " + std::to_string(ln) + ": class cannot contain itself");
    if (tree.parent[static_cast<std::size_t>(c)] >= 0)
      throw Error("line " + std::to_string(ln) + ": '" + child_name + "' already has a parent");
    tree.parent[static_cast<std::size_t>(c)] = p;
  }

  // Cycle check: with at most one parent per node a cycle is a loop on the
  // parent chain.
  for (int c = 0; c < tree.size(); ++c) {
    int steps = 0;
    int cur = c;
    while (cur >= 0) {
      cur = tree.parent[static_cast<std::size_t>(cur)];
      if (++steps > tree.size())
        throw Error("containment cycle through class '" + tree.name_of(c) + "'");
    }
  }

  for (const auto& [ln, a_name, b_name] : exclusive_lines) {
    const int a = require_class(tree, a_name, ln);
    const int b = require_class(tree, b_name, ln);
    if (a == b) throw Error("line " + std::to_string(ln) + ": class cannot exclude itself");
    if (is_descendant(tree, a, b) || is_descendant(tree, b, a))
      throw Error("line " + std::to_string(ln) + ": exclusion between nested classes '" + a_name +
                  "' and '" + b_name + "'");
    tree.exclusions.emplace_back(std::min(a, b), std::max(a, b));
  }

  for (const auto& [ln, parent_name] : exclusive_children_lines) {
    tree.exclusive_children.push_back(require_class(tree, parent_name, ln));
  }

  return tree;
}

std::string serialize_tree(const TaxonomyTree& tree) {
  std::ostringstream out;
  for (const auto& name : tree.classes) out << "class " << name << "\n";
  for (const auto& [p, c] : tree.edges())
    out << "contains " << tree.name_of(p) << " " << tree.name_of(c) << "\n";
  for (const auto& [a, b] : tree.exclusions)
    out << "exclusive " << tree.name_of(a) << " " << tree.name_of(b) << "\n";
  for (int p : tree.exclusive_children) out << "exclusive_children " << tree.name_of(p) << "\n";
  return out.str();
}

TaxonomyMatrix derive_matrix(const TaxonomyTree& tree) {
  const int n = tree.size();
  TaxonomyMatrix m;
  m.n = n;
  m.rel.assign(static_cast<std::size_t>(n) * n, Relation::Unrelated);

  // lineage[a] = a plus all transitive descendants of a.
  std::vector<std::vector<int>> lineage(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) {
    lineage[static_cast<std::size_t>(c)].push_back(c);
    int cur = tree.parent[static_cast<std::size_t>(c)];
    while (cur >= 0) {
      lineage[static_cast<std::size_t>(cur)].push_back(c);
      cur = tree.parent[static_cast<std::size_t>(cur)];
    }
  }

  for (int i = 0; i < n; ++i) m.set(i, i, Relation::Self);
  for (int c = 0; c < n; ++c)
    for (int anc = tree.parent[static_cast<std::size_t>(c)]; anc >= 0; anc = tree.parent[static_cast<std::size_t>(anc)]) {
      m.set(c, anc, Relation::Subset);
      m.set(anc, c, Relation::Superset);
    }

  // Base exclusion pairs: declared ones plus sibling pairs under an
  // exclusive_children parent. Inheritance closes each base pair over both
  // lineages.
  std::vector<std::pair<int, int>> base = tree.exclusions;
  for (int p : tree.exclusive_children) {
    std::vector<int> children;
    for (int c = 0; c < n; ++c)
      if (tree.parent[static_cast<std::size_t>(c)] == p) children.push_back(c);
    for (std::size_t a = 0; a < children.size(); ++a)
      for (std::size_t b = a + 1; b < children.size(); ++b)
        base.emplace_back(children[a], children[b]);
  }

  for (const auto& [a, b] : base) {
    for (int x : lineage[static_cast<std::size_t>(a)])
      for (int y : lineage[static_cast<std::size_t>(b)]) {
        const Relation existing = m.at(x, y);
        if (existing == Relation::Subset || existing == Relation::Superset || existing == Relation::Self)
          throw Error("inconsistent tree: '" + tree.name_of(x) + "' and '" + tree.name_of(y) +
                      "' derive as both nested and exclusive");
        m.set(x, y, Relation::Exclusive);
        m.set(y, x, Relation::Exclusive);
      }
  }

  return m;
}

Relation relation_of(const TaxonomyMatrix& m, int i, int j) {
  if (i < 0 || j < 0 || i >= m.n || j >= m.n)
    throw Error("relation_of: index out of range (" + std::to_string(i) + "," + std::to_string(j) +
                ") for n=" + std::to_string(m.n));
  return m.at(i, j);
}

std::vector<std::string> validate_matrix(const TaxonomyMatrix& m) {
  std::vector<std::string> violations;
  const int n = m.n;
  auto pair_str = [](int i, int j) { return "(" + std::to_string(i) + "," + std::to_string(j) + ")"; };

  for (int i = 0; i < n; ++i)
    if (m.at(i, i) != Relation::Self)
      violations.push_back("diagonal " + pair_str(i, i) + " is not SELF");

  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const Relation r = m.at(i, j);
      const Relation rt = m.at(j, i);
      if (r == Relation::Self)
        violations.push_back("off-diagonal " + pair_str(i, j) + " is SELF");
      if (r == Relation::Subset && rt != Relation::Superset)
        violations.push_back("antisymmetry broken at " + pair_str(i, j) + ": SUB without SUP transpose");
      if (r == Relation::Exclusive && rt != Relation::Exclusive)
        violations.push_back("exclusive not symmetric at " + pair_str(i, j));
      if (r == Relation::Unrelated && rt != Relation::Unrelated)
        violations.push_back("unrelated not symmetric at " + pair_str(i, j));
    }

  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j || m.at(i, j) != Relation::Subset) continue;
      for (int k = 0; k < n; ++k) {
        if (k == i || k == j) continue;
        if (m.at(j, k) == Relation::Subset && m.at(i, k) != Relation::Subset)
          violations.push_back("containment not transitive: " + pair_str(i, j) + " SUB, " +
                               pair_str(j, k) + " SUB, but " + pair_str(i, k) + " is not SUB");
        if (m.at(j, k) == Relation::Exclusive && m.at(i, k) != Relation::Exclusive)
          violations.push_back("exclusion not inherited: " + pair_str(i, j) + " SUB, " +
                               pair_str(j, k) + " EXC, but " + pair_str(i, k) + " is not EXC");
      }
    }

  return violations;
}

std::string matrix_to_csv(const TaxonomyMatrix& m, const std::vector<std::string>& names) {
  if (static_cast<int>(names.size()) != m.n) throw Error("matrix_to_csv: name count mismatch");
  std::ostringstream out;
  out << "class";
  for (const auto& name : names) out << "," << util::csv_field(name);
  out << "\n";
  for (int i = 0; i < m.n; ++i) {
    out << util::csv_field(names[static_cast<std::size_t>(i)]);
    for (int j = 0; j < m.n; ++j) out << "," << relation_code(m.at(i, j));
    out << "\n";
  }
  return out.str();
}

TaxonomyMatrix matrix_from_csv(const std::string& csv, std::vector<std::string>* names_out) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw Error("matrix_from_csv: empty input");
  auto header = util::split_csv(line);
  if (header.size() < 2 || header[0] != "class") throw Error("matrix_from_csv: bad header");
  const int n = static_cast<int>(header.size()) - 1;
  std::vector<std::string> names(header.begin() + 1, header.end());

  TaxonomyMatrix m;
  m.n = n;
  m.rel.assign(static_cast<std::size_t>(n) * n, Relation::Unrelated);
  for (int i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw Error("matrix_from_csv: missing row " + std::to_string(i));
    auto cells = util::split_csv(line);
    if (static_cast<int>(cells.size()) != n + 1)
      throw Error("matrix_from_csv: row " + std::to_string(i) + " has wrong arity");
    if (cells[0] != names[static_cast<std::size_t>(i)])
      throw Error("matrix_from_csv: row label mismatch at row " + std::to_string(i));
    for (int j = 0; j < n; ++j) m.set(i, j, relation_from_code(cells[static_cast<std::size_t>(j) + 1]));
  }
  if (names_out) *names_out = std::move(names);
  return m;
}

}  // namespace hats::taxonomy
