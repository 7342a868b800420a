#include <algorithm>
#include <array>
#include <cctype>
#include <map>

#include "chem_internal.hpp"
#include "retro3d/chem.hpp"

namespace retro3d::chem {
namespace {

constexpr std::array<std::string_view, 104> kElements = {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",
    "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh",
    "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",  "Re",
    "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "*"};

bool known_element(std::string_view s) {
  return std::find(kElements.begin(), kElements.end(), s) != kElements.end();
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

int read_int(std::string_view s, std::size_t& pos) {
  int v = 0;
  while (pos < s.size() && is_digit(s[pos])) {
    v = v * 10 + (s[pos] - '0');
    if (v > 1'000'000) throw ParseError("number too large", pos);
    ++pos;
  }
  return v;
}

}  // namespace

int element_index(std::string_view symbol) {
  auto it = std::find(kElements.begin(), kElements.end(), symbol);
  return it == kElements.end() ? -1 : static_cast<int>(it - kElements.begin());
}

Atom parse_bracket(std::string_view text, std::size_t base_offset) {
  // text includes the surrounding brackets
  Atom atom;
  atom.bracket = true;
  std::string_view s = text.substr(1, text.size() - 2);
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) { throw ParseError(what, base_offset + 1 + pos); };

  if (pos < s.size() && is_digit(s[pos])) atom.isotope = read_int(s, pos);
  if (pos >= s.size()) fail("missing element in bracket atom");

  if (std::isupper(static_cast<unsigned char>(s[pos])) || s[pos] == '*') {
    if (pos + 1 < s.size() && std::islower(static_cast<unsigned char>(s[pos + 1])) &&
        known_element(s.substr(pos, 2))) {
      atom.element = std::string(s.substr(pos, 2));
      pos += 2;
    } else if (known_element(s.substr(pos, 1))) {
      atom.element = std::string(s.substr(pos, 1));
      pos += 1;
    } else {
      fail("unknown element");
    }
  } else if (std::islower(static_cast<unsigned char>(s[pos]))) {
    static const std::array<std::string_view, 3> two = {"se", "as", "te"};
    if (pos + 1 < s.size() && std::find(two.begin(), two.end(), s.substr(pos, 2)) != two.end()) {
      atom.element = std::string(s.substr(pos, 2));
      pos += 2;
    } else if (std::string_view("bcnops").find(s[pos]) != std::string_view::npos) {
      atom.element = std::string(1, s[pos]);
      pos += 1;
    } else {
      fail("unknown aromatic element");
    }
    atom.aromatic = true;
    atom.element[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(atom.element[0])));
  } else {
    fail("missing element in bracket atom");
  }

  if (pos < s.size() && s[pos] == '@') {
    std::size_t start = pos++;
    if (pos < s.size() && s[pos] == '@') {
      ++pos;
    } else {
      while (pos < s.size() && std::isupper(static_cast<unsigned char>(s[pos])) && s[pos] != 'H') ++pos;
      while (pos < s.size() && is_digit(s[pos])) ++pos;
    }
    atom.chirality = std::string(s.substr(start, pos - start));
  }
  if (pos < s.size() && s[pos] == 'H') {
    ++pos;
    atom.hydrogens = (pos < s.size() && is_digit(s[pos])) ? read_int(s, pos) : 1;
  }
  if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) {
    char sign = s[pos++];
    int magnitude = 1;
    if (pos < s.size() && is_digit(s[pos])) {
      magnitude = read_int(s, pos);
    } else {
      while (pos < s.size() && s[pos] == sign) {
        ++magnitude;
        ++pos;
      }
    }
    atom.charge = sign == '+' ? magnitude : -magnitude;
  }
  if (pos < s.size() && s[pos] == ':') {
    ++pos;
    if (pos >= s.size() || !is_digit(s[pos])) fail("atom map without number");
    atom.map = read_int(s, pos);
  }
  if (pos != s.size()) fail("unexpected character in bracket atom");
  return atom;
}

std::vector<Token> tokenize(std::string_view smiles) {
  if (smiles.empty()) throw ParseError("empty SMILES", 0);
  std::vector<Token> out;
  std::size_t i = 0;
  auto push = [&](std::size_t len, TokenKind kind) {
    out.push_back(Token{std::string(smiles.substr(i, len)), kind, std::nullopt, i});
    i += len;
  };
  while (i < smiles.size()) {
    char c = smiles[i];
    switch (c) {
      case '[': {
        std::size_t close = smiles.find_first_of("[]", i + 1);
        if (close == std::string_view::npos || smiles[close] != ']') throw ParseError("unbalanced '['", i);
        std::size_t len = close - i + 1;
        Atom a = parse_bracket(smiles.substr(i, len), i);
        push(len, TokenKind::BracketAtom);
        if (a.map > 0) out.back().atom_map = a.map;
        break;
      }
      case ']':
        throw ParseError("unbalanced ']'", i);
      case 'C':
        push(i + 1 < smiles.size() && smiles[i + 1] == 'l' ? 2 : 1, TokenKind::Atom);
        break;
      case 'B':
        push(i + 1 < smiles.size() && smiles[i + 1] == 'r' ? 2 : 1, TokenKind::Atom);
        break;
      case 'N': case 'O': case 'P': case 'S': case 'F': case 'I':
      case 'b': case 'c': case 'n': case 'o': case 'p': case 's':
        push(1, TokenKind::Atom);
        break;
      case '-': case '=': case '#': case ':': case '/': case '\\': case '$':
        push(1, TokenKind::Bond);
        break;
      case '(': case ')':
        push(1, TokenKind::Branch);
        break;
      case '.':
        push(1, TokenKind::Dot);
        break;
      case '>':
        push(1, TokenKind::Special);
        break;
      case '%':
        if (i + 2 >= smiles.size() || !is_digit(smiles[i + 1]) || !is_digit(smiles[i + 2])) {
          throw ParseError("'%' needs two digits", i);
        }
        push(3, TokenKind::RingBond);
        break;
      default:
        if (is_digit(c)) {
          push(1, TokenKind::RingBond);
        } else {
          throw ParseError(std::string("illegal character '") + c + "'", i);
        }
    }
  }
  return out;
}

std::vector<std::string> token_texts(const std::vector<Token>& tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const Token& t : tokens) out.push_back(t.text);
  return out;
}

std::vector<int> atom_binding(const std::vector<Token>& tokens) {
  std::vector<int> out(tokens.size(), -1);
  int next = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i].is_atom()) out[i] = next++;
  return out;
}

int MolGraph::bond_between(int a, int b) const {
  for (auto [n, bond] : adjacency[a])
    if (n == b) return bond;
  return -1;
}

std::vector<int> MolGraph::components() const {
  std::vector<int> comp(atoms.size(), -1);
  int next = 0;
  std::vector<int> stack;
  for (std::size_t s = 0; s < atoms.size(); ++s) {
    if (comp[s] >= 0) continue;
    comp[s] = next;
    stack.push_back(static_cast<int>(s));
    while (!stack.empty()) {
      int a = stack.back();
      stack.pop_back();
      for (auto [n, bond] : adjacency[a]) {
        if (comp[n] < 0) {
          comp[n] = next;
          stack.push_back(n);
        }
      }
    }
    ++next;
  }
  return comp;
}

void MolGraph::rebuild_adjacency() {
  adjacency.assign(atoms.size(), {});
  for (std::size_t k = 0; k < bonds.size(); ++k) {
    adjacency[bonds[k].a].emplace_back(bonds[k].b, static_cast<int>(k));
    adjacency[bonds[k].b].emplace_back(bonds[k].a, static_cast<int>(k));
  }
  for (auto& list : adjacency) std::sort(list.begin(), list.end());
}

std::span<const int> default_valences(const std::string& element) {
  static const std::map<std::string, std::vector<int>, std::less<>> table = {
      {"B", {3}},    {"C", {4}},  {"N", {3, 5}}, {"O", {2}},  {"P", {3, 5}}, {"S", {2, 4, 6}},
      {"F", {1}},    {"Cl", {1}}, {"Br", {1}},   {"I", {1}},
  };
  auto it = table.find(element);
  if (it == table.end()) return {};
  return it->second;
}

int implicit_hydrogens(const MolGraph& g, int atom) {
  const Atom& a = g.atoms[atom];
  auto valences = default_valences(a.element);
  if (valences.empty()) return 0;
  int aromatic_bonds = 0, other = 0;
  for (auto [n, bond] : g.adjacency[atom]) {
    BondOrder o = g.bonds[bond].order;
    if (o == BondOrder::Aromatic) {
      ++aromatic_bonds;
    } else {
      other += static_cast<int>(o);
    }
  }
  if (a.aromatic) {
    int used = other + aromatic_bonds + (aromatic_bonds > 0 ? 1 : 0);
    return std::max(0, valences[0] - used);
  }
  for (int v : valences)
    if (v >= other) return v - other;
  return 0;
}

MolGraph parse(const std::vector<Token>& tokens) {
  MolGraph g;
  struct RingOpen {
    int atom;
    std::optional<BondOrder> order;
    char stereo;
    std::size_t offset;
    std::size_t slot;  // placeholder position in the opener's neighbor_order
  };
  std::map<std::string, RingOpen> rings;
  std::vector<int> branches;
  std::vector<std::size_t> branch_offsets;
  int prev = -1;
  std::optional<BondOrder> pending;
  char pending_stereo = 0;
  std::size_t pending_offset = 0;
  bool after_open = false;

  auto add_bond = [&](int a, int b, BondOrder order, char stereo, std::size_t offset) {
    if (a == b) throw ParseError("ring bond to itself", offset);
    for (const Bond& existing : g.bonds) {
      if ((existing.a == a && existing.b == b) || (existing.a == b && existing.b == a)) {
        throw ParseError("duplicate bond", offset);
      }
    }
    g.bonds.push_back(Bond{a, b, order, stereo});
  };
  auto implied = [&](int a, int b) {
    return g.atoms[a].aromatic && g.atoms[b].aromatic ? BondOrder::Aromatic : BondOrder::Single;
  };

  for (const Token& t : tokens) {
    switch (t.kind) {
      case TokenKind::Atom:
      case TokenKind::BracketAtom: {
        Atom atom;
        if (t.kind == TokenKind::BracketAtom) {
          atom = parse_bracket(t.text, t.offset);
        } else {
          atom.element = t.text;
          if (std::islower(static_cast<unsigned char>(atom.element[0]))) {
            atom.aromatic = true;
            atom.element[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(atom.element[0])));
          }
        }
        g.atoms.push_back(std::move(atom));
        int idx = static_cast<int>(g.atoms.size()) - 1;
        if (prev >= 0) {
          add_bond(prev, idx, pending.value_or(implied(prev, idx)), pending_stereo, t.offset);
          g.atoms[prev].neighbor_order.push_back(idx);
          g.atoms[idx].neighbor_order.push_back(prev);
        } else if (pending) {
          throw ParseError("bond without a preceding atom", pending_offset);
        }
        if (g.atoms[idx].bracket && g.atoms[idx].hydrogens == 1) g.atoms[idx].neighbor_order.push_back(-1);
        pending.reset();
        pending_stereo = 0;
        prev = idx;
        after_open = false;
        break;
      }
      case TokenKind::Bond: {
        if (pending) throw ParseError("two consecutive bonds", t.offset);
        if (prev < 0) throw ParseError("bond without a preceding atom", t.offset);
        switch (t.text[0]) {
          case '-': pending = BondOrder::Single; break;
          case '=': pending = BondOrder::Double; break;
          case '#': pending = BondOrder::Triple; break;
          case ':': pending = BondOrder::Aromatic; break;
          case '/':
          case '\\':
            pending = BondOrder::Single;
            pending_stereo = t.text[0];
            break;
          default: throw ParseError("unsupported bond '" + t.text + "'", t.offset);
        }
        pending_offset = t.offset;
        break;
      }
      case TokenKind::RingBond: {
        if (prev < 0) throw ParseError("ring bond without an atom", t.offset);
        std::string key = t.text[0] == '%' ? t.text.substr(1) : t.text;
        auto it = rings.find(key);
        if (it == rings.end()) {
          rings.emplace(key, RingOpen{prev, pending, pending_stereo, t.offset, g.atoms[prev].neighbor_order.size()});
          g.atoms[prev].neighbor_order.push_back(-2);
        } else {
          const RingOpen& open = it->second;
          if (pending && open.order && *pending != *open.order) {
            throw ParseError("conflicting ring bond orders", t.offset);
          }
          std::optional<BondOrder> order = pending ? pending : open.order;
          char stereo = pending ? pending_stereo : 0;
          add_bond(prev, open.atom, order.value_or(implied(prev, open.atom)), stereo, t.offset);
          g.atoms[open.atom].neighbor_order[open.slot] = prev;
          g.atoms[prev].neighbor_order.push_back(open.atom);
          rings.erase(it);
        }
        pending.reset();
        pending_stereo = 0;
        after_open = false;
        break;
      }
      case TokenKind::Branch:
        if (t.text == "(") {
          if (prev < 0) throw ParseError("branch without an atom", t.offset);
          if (pending) throw ParseError("bond before branch", t.offset);
          branches.push_back(prev);
          branch_offsets.push_back(t.offset);
          after_open = true;
        } else {
          if (branches.empty()) throw ParseError("unmatched ')'", t.offset);
          if (after_open) throw ParseError("empty branch", t.offset);
          if (pending) throw ParseError("bond at end of branch", t.offset);
          prev = branches.back();
          branches.pop_back();
          branch_offsets.pop_back();
        }
        break;
      case TokenKind::Dot:
        if (pending) throw ParseError("bond before '.'", t.offset);
        if (!branches.empty()) throw ParseError("'.' inside a branch", t.offset);
        prev = -1;
        break;
      case TokenKind::Special:
        throw ParseError("unexpected '" + t.text + "' in molecule", t.offset);
    }
  }
  if (!branches.empty()) throw ParseError("dangling branch", branch_offsets.back());
  if (!rings.empty()) throw ParseError("unclosed ring bond " + rings.begin()->first, rings.begin()->second.offset);
  if (pending) throw ParseError("bond at end of SMILES", pending_offset);
  if (g.atoms.empty()) throw ParseError("no atoms", 0);

  g.rebuild_adjacency();
  for (std::size_t i = 0; i < g.atoms.size(); ++i) {
    if (!g.atoms[i].bracket) g.atoms[i].hydrogens = implicit_hydrogens(g, static_cast<int>(i));
  }
  return g;
}

MolGraph parse(std::string_view smiles) { return parse(tokenize(smiles)); }

std::vector<std::string> split_components(std::string_view smiles) {
  std::vector<std::string> out;
  std::size_t start = 0;
  int depth = 0;
  for (std::size_t i = 0; i < smiles.size(); ++i) {
    char c = smiles[i];
    if (c == '[') ++depth;
    if (c == ']') --depth;
    if (c == '.' && depth == 0) {
      out.emplace_back(smiles.substr(start, i - start));
      start = i + 1;
    }
  }
  out.emplace_back(smiles.substr(start));
  return out;
}

}  // namespace retro3d::chem
