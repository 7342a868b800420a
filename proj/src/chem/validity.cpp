#include <algorithm>
#include <set>

#include "chem_internal.hpp"

namespace retro3d::chem {

int max_valence(const std::string& e, int charge) {
  if (e == "C" || e == "Si") return 4 - std::abs(charge);
  if (e == "N") return 3 + charge;
  if (e == "O") return 2 + charge;
  if (e == "F" || e == "Cl" || e == "Br" || e == "I") return 1 + charge;
  if (e == "B") return 3 - charge;
  if (e == "S" || e == "Se") return 6;
  if (e == "P") return 5;
  return -1;
}

int used_valence(const MolGraph& g, int atom) {
  int total = g.atoms[atom].hydrogens;
  for (auto [n, bond] : g.adjacency[atom]) {
    BondOrder o = g.bonds[bond].order;
    total += o == BondOrder::Aromatic ? 1 : static_cast<int>(o);
  }
  return total;
}

bool is_valid(std::string_view smiles) {
  MolGraph g;
  try {
    g = parse(smiles);
  } catch (const ParseError&) {
    return false;
  }
  for (std::size_t a = 0; a < g.size(); ++a) {
    int limit = max_valence(g.atoms[a].element, g.atoms[a].charge);
    if (limit >= 0 && used_valence(g, static_cast<int>(a)) > limit) return false;
  }
  return true;
}

Reaction split_reaction(std::string_view line) {
  std::size_t first = line.find('>');
  if (first == std::string_view::npos) throw ParseError("reaction line without '>'", 0);
  std::size_t second = line.find('>', first + 1);
  if (second == std::string_view::npos) throw ParseError("reaction line needs two '>'", first);
  if (line.find('>', second + 1) != std::string_view::npos) throw ParseError("too many '>'", second);
  Reaction r;
  r.reactants = std::string(line.substr(0, first));
  std::string_view agents = line.substr(first + 1, second - first - 1);
  if (!agents.empty()) r.reactants += (r.reactants.empty() ? "" : ".") + std::string(agents);
  r.product = std::string(line.substr(second + 1));
  return r;
}

FilterResult dataset_filter(const Reaction& reaction) {
  FilterResult result;
  result.cleaned = reaction;
  auto drop = [&](std::string reason) {
    result.keep = false;
    result.reason = std::move(reason);
    return result;
  };
  if (reaction.reactants.empty() || reaction.product.empty()) return drop("empty SMILES");
  if (!is_valid(reaction.reactants) || !is_valid(reaction.product)) return drop("invalid SMILES");

  MolGraph product = parse(reaction.product);
  MolGraph reactants = parse(reaction.reactants);
  std::set<int> product_maps, reactant_maps;
  for (const Atom& a : product.atoms) {
    if (a.map > 0 && !product_maps.insert(a.map).second) return drop("duplicate atom map");
  }
  for (const Atom& a : reactants.atoms) {
    if (a.map > 0 && !reactant_maps.insert(a.map).second) return drop("duplicate atom map");
  }
  for (const Atom& a : product.atoms) {
    if (a.map == 0 || !reactant_maps.count(a.map)) return drop("product atom absent from reactants");
  }
  if (product.size() < 5) return drop("product<5 atoms");

  std::vector<std::string> kept;
  std::vector<std::string> parts = split_components(reaction.reactants);
  for (const auto& part : parts) {
    MolGraph g = parse(part);
    bool shares = std::any_of(g.atoms.begin(), g.atoms.end(),
                              [&](const Atom& a) { return a.map > 0 && product_maps.count(a.map); });
    if (shares) kept.push_back(part);
  }
  if (kept.empty()) return drop("no reactant shares atoms with the product");
  if (kept.size() != parts.size()) {
    result.modified = true;
    result.cleaned.reactants.clear();
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (i) result.cleaned.reactants += '.';
      result.cleaned.reactants += kept[i];
    }
  }
  result.keep = true;
  return result;
}

}  // namespace retro3d::chem
