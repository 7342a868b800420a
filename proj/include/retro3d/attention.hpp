#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "retro3d/chem.hpp"
#include "retro3d/conformer.hpp"
#include "retro3d/nn.hpp"

namespace retro3d::attention {

/// Rows of the γ/β tables. Pairs without a bond (and the diagonal) use None.
enum BondType : int { None = 0, Single = 1, Double = 2, Triple = 3, Aromatic = 4 };
constexpr std::size_t kBondTypes = 5;
constexpr double kSigmaFloor = 1e-3;

struct GaussianKernel {
  std::vector<double> mu;     // K
  std::vector<double> sigma;  // K
  std::vector<double> gamma;  // kBondTypes
  std::vector<double> beta;   // kBondTypes
};

/// K values of ±1/(√(2π)s) · exp(-((γd + β - μ)/s)² / 2) with s = max(|σ|, 1e-3).
std::vector<double> gaussian_basis(double d, BondType bond, const GaussianKernel& kernel, bool negate = true);

/// Per token pair (row-major M×M) inputs of the Gaussian basis.
struct PairGeometry {
  std::size_t tokens = 0;
  std::vector<double> distance;
  std::vector<int> bond_type;
  std::vector<std::uint8_t> atom_pair;  // both tokens are atoms
};

/// `binding[t]` is the atom of token t or -1. `framing` adds that many non-atom
/// tokens before and after (BOS/EOS).
PairGeometry pair_geometry(const conformer::DistanceMatrix& distances, const chem::MolGraph& graph,
                           std::span<const int> binding, std::size_t framing = 0);
/// Geometry of a molecule without coordinates: every pair non-atom.
PairGeometry empty_geometry(std::size_t tokens);

/// Differentiable basis: [pairs, K] from constants (distance, bond type) and
/// parameter Vars mu [K], sigma [K], gamma [5], beta [5].
Var gaussian_basis(const PairGeometry& geometry, const Var& mu, const Var& sigma, const Var& gamma,
                   const Var& beta, bool negate = true);

/// `gbf.{mu,sigma,gamma,beta}`, `gbf.w1/b1/w2/b2`.
void init_distance_weight(nn::Params& params, std::size_t kernels, std::mt19937_64& rng);

struct DistanceWeightOptions {
  bool negate = true;
  bool bypass_gelu = false;  // test hook
};

/// Φ⁰ [M·M, K]: W2·GELU(W1·ψ + b1) + b2 per pair, zero where either token is not an atom.
Var distance_weight(nn::Bound& p, const PairGeometry& geometry, const DistanceWeightOptions& options = {});

/// Constant [K, heads] averaging contiguous channel blocks into one value per head.
Tensor head_merge(std::size_t kernels, std::size_t heads);

struct AttentionSpec {
  std::size_t heads = 1;
  /// The last `spatial_heads` heads multiply their logits by Φ.
  std::size_t spatial_heads = 0;
  /// [M·N, spatial_heads] after head_merge; required when spatial_heads > 0.
  const Var* phi = nullptr;
  /// M·N entries, 1 = may attend; empty = everything.
  std::span<const std::uint8_t> mask;
  /// Extra mask for the spatial heads only (hard distance cutoff); empty = none.
  std::span<const std::uint8_t> spatial_mask;
  double dropout = 0.0;
  std::uint64_t seed = 0;
  /// Receives each head's [M, N] attention probabilities.
  std::vector<Var>* probs = nullptr;
};

/// Multi-head attention with projections `prefix.{q,k,v,o}`. Queries come from
/// `query`, keys and values from `memory`.
Var multi_head_attention(nn::Bound& p, const std::string& prefix, const Var& query, const Var& memory,
                         const AttentionSpec& spec);
/// The same computation from already projected q, k, v (incremental decoding).
Var attend_projected(nn::Bound& p, const std::string& prefix, const Var& q, const Var& k, const Var& v,
                     const AttentionSpec& spec);
void init_attention(nn::Params& params, const std::string& prefix, std::size_t dim, std::mt19937_64& rng);

/// Φ + mask ⊙ (h_i·Wa + h_j·Wb + b) with `prefix.{wa,wb,b}`.
Var weight_refine(nn::Bound& p, const std::string& prefix, const Var& phi, const Var& h,
                  std::span<const double> pair_mask);
void init_refine(nn::Params& params, const std::string& prefix, std::size_t dim, std::size_t kernels,
                 std::mt19937_64& rng);

/// 1.0 where both tokens are atoms, as a row factor for scale_rows.
std::vector<double> pair_mask(const PairGeometry& geometry);

}  // namespace retro3d::attention
