#include <map>

#include "chem_internal.hpp"

namespace retro3d::chem {

std::vector<Token> strip_maps(const std::vector<Token>& tokens, const MolGraph& graph) {
  std::vector<int> binding = atom_binding(tokens);
  std::vector<Token> out;
  out.reserve(tokens.size());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    Token t = tokens[i];
    if (binding[i] >= 0) {
      t.text = atom_text(graph, binding[i], false);
      t.kind = t.text[0] == '[' ? TokenKind::BracketAtom : TokenKind::Atom;
      t.atom_map.reset();
    }
    t.offset = offset;
    offset += t.text.size();
    out.push_back(std::move(t));
  }
  return out;
}

std::string strip_maps(std::string_view smiles) {
  std::vector<Token> tokens = tokenize(smiles);
  MolGraph g = parse(tokens);
  std::string out;
  for (const Token& t : strip_maps(tokens, g)) out += t.text;
  return out;
}

RootAlignResult root_align(std::string_view product, std::string_view reactants) {
  std::vector<int> product_maps;
  for (const Token& t : tokenize(product))
    if (t.atom_map) product_maps.push_back(*t.atom_map);

  std::vector<std::string> parts = split_components(reactants);
  std::vector<std::vector<Token>> part_tokens;
  for (const auto& p : parts) part_tokens.push_back(tokenize(p));

  for (int wanted : product_maps) {
    for (std::size_t c = 0; c < parts.size(); ++c) {
      const auto& tokens = part_tokens[c];
      std::vector<int> binding = atom_binding(tokens);
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (!tokens[i].atom_map || *tokens[i].atom_map != wanted) continue;
        MolGraph g = parse(tokens);
        parts[c] = write(g, binding[i]);
        std::string joined;
        for (std::size_t k = 0; k < parts.size(); ++k) {
          if (k) joined += '.';
          joined += parts[k];
        }
        return {joined, true};
      }
    }
  }
  return {std::string(reactants), false};
}

std::size_t AlignmentMap::count() const {
  std::size_t n = 0;
  for (auto e : entries) n += e;
  return n;
}

AlignmentMap build_sam(const std::vector<Token>& product, const std::vector<Token>& reactants) {
  AlignmentMap sam;
  sam.rows = reactants.size();
  sam.cols = product.size();
  sam.entries.assign(sam.rows * sam.cols, 0);

  std::map<int, std::size_t> product_index;
  for (std::size_t j = 0; j < product.size(); ++j)
    if (product[j].atom_map) product_index.emplace(*product[j].atom_map, j);

  auto same_map = [&](std::size_t i, std::size_t j) {
    return reactants[i].atom_map && product[j].atom_map && *reactants[i].atom_map == *product[j].atom_map;
  };

  std::vector<bool> visited(sam.rows, false);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < sam.rows; ++i) {
    if (visited[i] || !reactants[i].atom_map) continue;
    auto found = product_index.find(*reactants[i].atom_map);
    if (found == product_index.end()) continue;
    std::size_t r = i, p = found->second;
    while (r < sam.rows && p < sam.cols && (reactants[r].text == product[p].text || same_map(r, p))) {
      if (!sam.entries[r * sam.cols + p]) {
        sam.entries[r * sam.cols + p] = 1;
        pairs.emplace_back(r, p);
      }
      visited[r] = true;
      ++r;
      ++p;
    }
  }
  for (auto [i, j] : pairs) {
    std::size_t r = i, p = j;
    while (r > 0 && p > 0 && reactants[r - 1].text == product[p - 1].text && !reactants[r - 1].is_atom()) {
      --r;
      --p;
      sam.entries[r * sam.cols + p] = 1;
    }
  }
  return sam;
}

AlignmentMap build_sam(std::string_view product, std::string_view reactants) {
  return build_sam(tokenize(product), tokenize(reactants));
}

}  // namespace retro3d::chem
