#pragma once

#include <span>
#include <string>
#include <string_view>

#include "retro3d/chem.hpp"

namespace retro3d::chem {

int element_index(std::string_view symbol);
Atom parse_bracket(std::string_view text, std::size_t base_offset);
std::span<const int> default_valences(const std::string& element);
/// Hydrogens implied for an organic-subset atom given its bonds in `g`.
int implicit_hydrogens(const MolGraph& g, int atom);
MolGraph subgraph(const MolGraph& g, const std::vector<int>& atoms);

}  // namespace retro3d::chem
