#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace retro3d::chem {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

enum class TokenKind : std::uint8_t { Atom, BracketAtom, Bond, RingBond, Branch, Dot, Special };

struct Token {
  std::string text;
  TokenKind kind = TokenKind::Atom;
  std::optional<int> atom_map;
  std::size_t offset = 0;

  bool is_atom() const noexcept { return kind == TokenKind::Atom || kind == TokenKind::BracketAtom; }
};

/// Lossless split of a SMILES (or reaction) string. Throws ParseError.
std::vector<Token> tokenize(std::string_view smiles);
std::vector<std::string> token_texts(const std::vector<Token>& tokens);

enum class BondOrder : std::uint8_t { Single = 1, Double = 2, Triple = 3, Aromatic = 4 };

struct Atom {
  std::string element;  // capitalised symbol, e.g. "C", "Cl", "Se"
  bool aromatic = false;
  int charge = 0;
  int hydrogens = 0;  // total attached H (explicit for bracket atoms, implied otherwise)
  int isotope = 0;
  std::string chirality;  // "@", "@@" or empty; stored verbatim
  int map = 0;            // 0 = unmapped
  bool bracket = false;   // written in brackets in the source
  /// Neighbours in the order the chirality tag refers to; -1 stands for the
  /// attached hydrogen. Filled by the parser.
  std::vector<int> neighbor_order;
};

struct Bond {
  int a = 0;
  int b = 0;
  BondOrder order = BondOrder::Single;
  char stereo = 0;  // '/' or '\\' as written in the a→b direction, else 0
};

struct MolGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  /// Per atom: (neighbor atom, bond index), sorted by neighbor index.
  std::vector<std::vector<std::pair<int, int>>> adjacency;

  std::size_t size() const noexcept { return atoms.size(); }
  int degree(int atom) const { return static_cast<int>(adjacency[atom].size()); }
  int bond_between(int a, int b) const;  // -1 when not bonded
  /// Component id per atom; ids follow the lowest atom index of each component.
  std::vector<int> components() const;
  void rebuild_adjacency();
};

/// Builds the graph. Atom indices follow atom-token order. Throws ParseError.
MolGraph parse(const std::vector<Token>& tokens);
MolGraph parse(std::string_view smiles);

/// Token index → atom index (or -1 for non-atom tokens).
std::vector<int> atom_binding(const std::vector<Token>& tokens);

struct WriteOptions {
  bool atom_maps = true;
  /// Neighbour ordering key; atom index when null.
  const std::vector<int>* rank = nullptr;
  /// Receives the source atom index of each written atom, in output order.
  std::vector<int>* atom_order = nullptr;
};

/// SMILES with a DFS started at `root`. The root's component comes first, the
/// other components follow rooted at their lowest-index atom, joined by '.'.
std::string write(const MolGraph& graph, int root, const WriteOptions& options = {});
/// Only the component containing `root`.
std::string write_component(const MolGraph& graph, int root, const WriteOptions& options = {});

/// Text for one atom as an individual token. `chirality` overrides the stored tag.
std::string atom_text(const MolGraph& graph, int atom, bool with_map,
                      const std::string* chirality = nullptr);

/// Isomorphism-invariant string; atom maps and bond slash marks are ignored.
std::string canonical_key(const MolGraph& graph);
std::string canonical_key(std::string_view smiles);

/// Removes atom maps token by token so token positions are preserved:
/// "[CH3:1][OH:2]" → "CO".
std::string strip_maps(std::string_view smiles);
std::vector<Token> strip_maps(const std::vector<Token>& tokens, const MolGraph& graph);

struct RootAlignResult {
  std::string smiles;
  bool aligned = false;  // false when no reactant atom shares a product map
};
RootAlignResult root_align(std::string_view product, std::string_view reactants);

/// Row-major 0/1 matrix: rows = reactant tokens, cols = product tokens.
struct AlignmentMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> entries;

  std::uint8_t at(std::size_t r, std::size_t c) const { return entries[r * cols + c]; }
  std::size_t count() const;
};

AlignmentMap build_sam(const std::vector<Token>& product, const std::vector<Token>& reactants);
AlignmentMap build_sam(std::string_view product, std::string_view reactants);

/// Syntax plus a lenient valence table.
bool is_valid(std::string_view smiles);
/// Largest valence allowed for (element, charge), or -1 when unchecked.
int max_valence(const std::string& element, int charge);
/// Σ bond orders (aromatic counted as 1) + attached H.
int used_valence(const MolGraph& graph, int atom);

struct Reaction {
  std::string reactants;
  std::string product;
};

/// Splits "reactants>agents>product" or "reactants>>product". Agents are
/// appended to the reactants.
Reaction split_reaction(std::string_view line);

struct FilterResult {
  bool keep = false;
  std::string reason;  // empty when kept
  Reaction cleaned;    // reactants without components unrelated to the product
  bool modified = false;
};

FilterResult dataset_filter(const Reaction& reaction);

/// Splits at '.' outside brackets.
std::vector<std::string> split_components(std::string_view smiles);

}  // namespace retro3d::chem
