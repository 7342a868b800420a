#pragma once

#include <random>
#include <span>
#include <vector>

#include "retro3d/chem.hpp"
#include "retro3d/conformer.hpp"
#include "retro3d/nn.hpp"

namespace retro3d::embedding {

/// element index × 2 + aromatic flag.
int atom_type(const chem::Atom& atom);
constexpr std::size_t kAtomTypes = 208;
constexpr std::size_t kFrequencies = 16;
/// sin and cos of 16 frequencies for each of d, θ, φ, τ.
constexpr std::size_t kGeoWidth = 4 * kFrequencies * 2;

/// Sinusoidal lift of every edge's (d, θ, φ, τ): [edges, kGeoWidth].
std::vector<double> geo_lift(const conformer::GeoEdge& edge);

/// `comenet.atom_emb`, `comenet.l{k}.{f1,f2,g1,g2}`.
void init_comenet(nn::Params& params, std::size_t dim, int layers, std::mt19937_64& rng);

/// Per-atom 3D position embedding [atoms, dim] after `layers` rounds of message passing.
Var comenet_lite(nn::Bound& p, const chem::MolGraph& graph, const conformer::GeoFeatures& geo, int layers);

/// Token rows from atom rows; `binding[t]` is the atom of token t or -1 (zero row).
Var pad_to_tokens(const Var& p3d, std::span<const int> binding);

/// λ1 · padded + λ2 · tokens.
Var fuse(const Var& padded, const Var& tokens, const Var& lambda1, const Var& lambda2);

/// [length, dim]: pe[p, 2i] = sin(p / 10000^(2i/dim)), pe[p, 2i+1] = cos(...).
Tensor sinusoidal_pe(std::size_t length, std::size_t dim);

}  // namespace retro3d::embedding
