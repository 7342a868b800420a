#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <map>

#include "chem_internal.hpp"

namespace retro3d::chem {
namespace {

bool organic_symbol(const Atom& a) {
  static const std::array<std::string_view, 10> plain = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"};
  static const std::array<std::string_view, 6> aromatic = {"B", "C", "N", "O", "P", "S"};
  if (a.aromatic) return std::find(aromatic.begin(), aromatic.end(), a.element) != aromatic.end();
  return std::find(plain.begin(), plain.end(), a.element) != plain.end();
}

std::string symbol(const Atom& a) {
  std::string s = a.element;
  if (a.aromatic) s[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(s[0])));
  return s;
}

std::string bond_text(const MolGraph& g, int bond, int from, bool with_stereo) {
  const Bond& b = g.bonds[bond];
  const bool both_aromatic = g.atoms[b.a].aromatic && g.atoms[b.b].aromatic;
  switch (b.order) {
    case BondOrder::Single:
      if (with_stereo && b.stereo) {
        char c = b.stereo;
        if (from != b.a) c = c == '/' ? '\\' : '/';
        return std::string(1, c);
      }
      return both_aromatic ? "-" : "";
    case BondOrder::Double: return "=";
    case BondOrder::Triple: return "#";
    case BondOrder::Aromatic: return both_aromatic ? "" : ":";
  }
  return "";
}

// Parity of the permutation taking `from` to `to`; -1 when they are not permutations
// of each other.
int permutation_parity(std::vector<int> from, const std::vector<int>& to) {
  if (from.size() != to.size()) return -1;
  int swaps = 0;
  for (std::size_t i = 0; i < to.size(); ++i) {
    auto it = std::find(from.begin() + i, from.end(), to[i]);
    if (it == from.end()) return -1;
    std::size_t k = static_cast<std::size_t>(it - from.begin());
    if (k != i) {
      std::swap(from[i], from[k]);
      ++swaps;
    }
  }
  return swaps % 2;
}

struct Plan {
  std::vector<std::vector<std::pair<int, int>>> children;  // (atom, bond)
  std::vector<std::vector<int>> ring_opens;
  std::vector<std::vector<int>> ring_closes;
};

class Writer {
 public:
  Writer(const MolGraph& g, const WriteOptions& opt) : g_(g), opt_(opt) {
    const std::size_t n = g.size();
    plan_.children.resize(n);
    plan_.ring_opens.resize(n);
    plan_.ring_closes.resize(n);
    visited_.assign(n, false);
    bond_seen_.assign(g.bonds.size(), false);
    order_.resize(n);
    for (std::size_t a = 0; a < n; ++a) {
      order_[a] = g.adjacency[a];
      if (opt.rank) {
        const auto& rank = *opt.rank;
        std::sort(order_[a].begin(), order_[a].end(),
                  [&](auto x, auto y) { return rank[x.first] < rank[y.first]; });
      }
    }
  }

  bool visited(int a) const { return visited_[a]; }

  void component(int root, std::string& out) {
    plan(root, -1);
    emit(root, -1, -1, out);
  }

 private:
  void plan(int u, int parent_bond) {
    visited_[u] = true;
    for (auto [v, bond] : order_[u]) {
      if (bond == parent_bond || bond_seen_[bond]) continue;
      bond_seen_[bond] = true;
      if (visited_[v]) {
        plan_.ring_closes[u].push_back(bond);
        plan_.ring_opens[v].push_back(bond);
      } else {
        plan_.children[u].emplace_back(v, bond);
        plan(v, bond);
      }
    }
  }

  int take_digit() {
    for (std::size_t d = 1; d < digit_used_.size(); ++d) {
      if (!digit_used_[d]) {
        digit_used_[d] = true;
        return static_cast<int>(d);
      }
    }
    digit_used_.push_back(true);
    return static_cast<int>(digit_used_.size()) - 1;
  }

  static std::string digit_text(int d) {
    if (d < 10) return std::to_string(d);
    return "%" + std::to_string(d);
  }

  int other(int bond, int u) const { return g_.bonds[bond].a == u ? g_.bonds[bond].b : g_.bonds[bond].a; }

  // Tag that keeps the stored handedness under this output's neighbour order.
  std::string chirality(int u, int from) const {
    const Atom& a = g_.atoms[u];
    if (a.chirality != "@" && a.chirality != "@@") return a.chirality;
    std::vector<int> written;
    if (from >= 0) written.push_back(from);
    if (a.bracket && a.hydrogens == 1) written.push_back(-1);
    for (int bond : plan_.ring_closes[u]) written.push_back(other(bond, u));
    for (int bond : plan_.ring_opens[u]) written.push_back(other(bond, u));
    for (auto [v, bond] : plan_.children[u]) written.push_back(v);
    if (permutation_parity(a.neighbor_order, written) != 1) return a.chirality;
    return a.chirality == "@" ? "@@" : "@";
  }

  void emit(int u, int from, int parent_bond, std::string& out) {
    if (parent_bond >= 0) out += bond_text(g_, parent_bond, from, true);
    const std::string tag = chirality(u, from);
    out += atom_text(g_, u, opt_.atom_maps, &tag);
    if (opt_.atom_order) opt_.atom_order->push_back(u);

    std::vector<int> closing;
    for (int bond : plan_.ring_closes[u]) {
      int d = ring_digit_.at(bond);
      out += bond_text(g_, bond, u, false);
      out += digit_text(d);
      closing.push_back(d);
    }
    for (int bond : plan_.ring_opens[u]) {
      int d = take_digit();
      ring_digit_[bond] = d;
      out += digit_text(d);
    }
    for (int d : closing) digit_used_[d] = false;

    const auto& kids = plan_.children[u];
    for (std::size_t k = 0; k < kids.size(); ++k) {
      const bool branch = k + 1 < kids.size();
      if (branch) out += '(';
      emit(kids[k].first, u, kids[k].second, out);
      if (branch) out += ')';
    }
  }

  const MolGraph& g_;
  const WriteOptions& opt_;
  Plan plan_;
  std::vector<bool> visited_;
  std::vector<bool> bond_seen_;
  std::vector<std::vector<std::pair<int, int>>> order_;
  std::vector<bool> digit_used_ = std::vector<bool>(10, false);
  std::map<int, int> ring_digit_;
};

void check_root(const MolGraph& g, int root) {
  if (root < 0 || static_cast<std::size_t>(root) >= g.size()) {
    throw std::out_of_range("write: root atom " + std::to_string(root) + " out of range");
  }
}

}  // namespace

std::string atom_text(const MolGraph& g, int index, bool with_map, const std::string* chirality) {
  const Atom& a = g.atoms[index];
  const std::string& tag = chirality ? *chirality : a.chirality;
  const bool mapped = with_map && a.map > 0;
  if (organic_symbol(a) && a.charge == 0 && a.isotope == 0 && tag.empty() && !mapped &&
      a.hydrogens == implicit_hydrogens(g, index)) {
    return symbol(a);
  }
  std::string s = "[";
  if (a.isotope > 0) s += std::to_string(a.isotope);
  s += symbol(a);
  s += tag;
  if (a.hydrogens > 0) {
    s += 'H';
    if (a.hydrogens > 1) s += std::to_string(a.hydrogens);
  }
  if (a.charge != 0) {
    s += a.charge > 0 ? '+' : '-';
    if (std::abs(a.charge) > 1) s += std::to_string(std::abs(a.charge));
  }
  if (mapped) s += ":" + std::to_string(a.map);
  s += ']';
  return s;
}

std::string write_component(const MolGraph& g, int root, const WriteOptions& options) {
  check_root(g, root);
  Writer w(g, options);
  std::string out;
  w.component(root, out);
  return out;
}

std::string write(const MolGraph& g, int root, const WriteOptions& options) {
  check_root(g, root);
  Writer w(g, options);
  std::string out;
  w.component(root, out);
  std::vector<int> comp = g.components();
  std::vector<int> roots;  // per component, the root to use
  for (std::size_t a = 0; a < g.size(); ++a) {
    if (w.visited(static_cast<int>(a))) continue;
    int c = comp[a];
    if (static_cast<std::size_t>(c) >= roots.size()) roots.resize(c + 1, -1);
    int& r = roots[c];
    if (r < 0 || (options.rank && (*options.rank)[a] < (*options.rank)[r])) r = static_cast<int>(a);
  }
  for (int r : roots) {
    if (r < 0) continue;
    out += '.';
    w.component(r, out);
  }
  return out;
}

MolGraph subgraph(const MolGraph& g, const std::vector<int>& atoms) {
  MolGraph out;
  std::vector<int> remap(g.size(), -1);
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    remap[atoms[k]] = static_cast<int>(k);
    out.atoms.push_back(g.atoms[atoms[k]]);
  }
  for (Atom& a : out.atoms)
    for (int& n : a.neighbor_order)
      if (n >= 0) n = remap[n];
  for (const Bond& b : g.bonds) {
    if (remap[b.a] >= 0 && remap[b.b] >= 0) out.bonds.push_back(Bond{remap[b.a], remap[b.b], b.order, b.stereo});
  }
  out.rebuild_adjacency();
  return out;
}

}  // namespace retro3d::chem
