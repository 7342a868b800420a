#include "retro3d/embedding.hpp"

#include <cmath>

#include "chem/chem_internal.hpp"

namespace retro3d::embedding {

int atom_type(const chem::Atom& atom) {
  int e = chem::element_index(atom.element);
  if (e < 0) throw std::invalid_argument("unknown element " + atom.element);
  return e * 2 + (atom.aromatic ? 1 : 0);
}

std::vector<double> geo_lift(const conformer::GeoEdge& e) {
  std::vector<double> out;
  out.reserve(kGeoWidth);
  // distance: geometric frequencies from 0.5 to 8 rad/Å
  for (std::size_t k = 0; k < kFrequencies; ++k) {
    double w = 0.5 * std::pow(16.0, static_cast<double>(k) / (kFrequencies - 1));
    out.push_back(std::sin(w * e.d));
    out.push_back(std::cos(w * e.d));
  }
  // angles: integer harmonics keep φ and τ continuous across ±π
  for (double a : {e.theta, e.phi, e.tau}) {
    for (std::size_t k = 1; k <= kFrequencies; ++k) {
      out.push_back(std::sin(static_cast<double>(k) * a));
      out.push_back(std::cos(static_cast<double>(k) * a));
    }
  }
  return out;
}

void init_comenet(nn::Params& params, std::size_t dim, int layers, std::mt19937_64& rng) {
  params["comenet.atom_emb"] = nn::uniform({kAtomTypes, dim}, -0.1, 0.1, rng);
  for (int l = 0; l < layers; ++l) {
    const std::string pre = "comenet.l" + std::to_string(l);
    nn::init_linear(params, pre + ".f1", dim + kGeoWidth, dim, rng);
    nn::init_linear(params, pre + ".f2", dim, dim, rng);
    nn::init_linear(params, pre + ".g1", 2 * dim, dim, rng);
    nn::init_linear(params, pre + ".g2", dim, dim, rng);
  }
}

Var comenet_lite(nn::Bound& p, const chem::MolGraph& g, const conformer::GeoFeatures& geo, int layers) {
  const std::size_t n = g.size();
  if (n == 0) throw std::invalid_argument("comenet_lite: empty molecule");
  if (geo.edges.size() != 2 * g.bonds.size()) throw std::invalid_argument("comenet_lite: missing geometric features");
  std::vector<int> types(n);
  for (std::size_t a = 0; a < n; ++a) types[a] = atom_type(g.atoms[a]);
  Var v = gather_rows(p("comenet.atom_emb"), types);
  if (geo.edges.empty()) return v;

  std::vector<int> src, dst;
  std::vector<double> lift;
  lift.reserve(geo.edges.size() * kGeoWidth);
  for (const auto& e : geo.edges) {
    if (g.bond_between(e.i, e.j) < 0) throw std::invalid_argument("comenet_lite: feature for a non-bonded pair");
    src.push_back(e.j);
    dst.push_back(e.i);
    auto f = geo_lift(e);
    lift.insert(lift.end(), f.begin(), f.end());
  }
  Var edge_geo = p.tape().constant(Tensor({geo.edges.size(), kGeoWidth}, std::move(lift)));
  std::vector<double> has_neighbor(n);
  for (std::size_t a = 0; a < n; ++a) has_neighbor[a] = g.degree(static_cast<int>(a)) > 0 ? 1.0 : 0.0;

  for (int l = 0; l < layers; ++l) {
    const std::string pre = "comenet.l" + std::to_string(l);
    Var msg = concat_lastdim({gather_rows(v, src), edge_geo});
    msg = nn::linear(p, pre + ".f2", gelu(nn::linear(p, pre + ".f1", msg)));
    Var agg = scatter_add_rows(msg, dst, n);
    Var upd = nn::linear(p, pre + ".g2", gelu(nn::linear(p, pre + ".g1", concat_lastdim({v, agg}))));
    v = add(v, scale_rows(upd, has_neighbor));
  }
  return v;
}

Var pad_to_tokens(const Var& p3d, std::span<const int> binding) {
  const auto atoms = static_cast<int>(p3d.value().rows());
  for (int a : binding)
    if (a >= atoms) throw std::invalid_argument("pad_to_tokens: token bound to a missing atom");
  return gather_rows(p3d, binding);
}

Var fuse(const Var& padded, const Var& tokens, const Var& lambda1, const Var& lambda2) {
  if (padded.shape() != tokens.shape()) {
    throw DimensionError("fuse: " + shape_string(padded.shape()) + " vs " + shape_string(tokens.shape()));
  }
  return add(scale_by(padded, lambda1), scale_by(tokens, lambda2));
}

Tensor sinusoidal_pe(std::size_t length, std::size_t dim) {
  if (dim % 2 != 0) throw DimensionError("sinusoidal_pe: odd dimension " + std::to_string(dim));
  std::vector<double> out(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      double angle = static_cast<double>(pos) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(dim));
      out[pos * dim + 2 * i] = std::sin(angle);
      out[pos * dim + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor({length, dim}, std::move(out));
}

}  // namespace retro3d::embedding
