#include "retro3d/attention.hpp"

#include <cmath>
#include <iostream>
#include <numbers>

namespace retro3d::attention {
namespace {

double clamp_sigma(double sigma) {
  double s = std::abs(sigma);
  if (s < kSigmaFloor) {
    static bool reported = false;
    if (!reported) {
      std::cerr << "retro3d: gaussian sigma " << sigma << " clamped to " << kSigmaFloor << '\n';
      reported = true;
    }
    return kSigmaFloor;
  }
  return s;
}

BondType bond_type_of(const chem::MolGraph& g, int a, int b) {
  if (a == b) return None;
  int bond = g.bond_between(a, b);
  if (bond < 0) return None;
  switch (g.bonds[bond].order) {
    case chem::BondOrder::Single: return Single;
    case chem::BondOrder::Double: return Double;
    case chem::BondOrder::Triple: return Triple;
    case chem::BondOrder::Aromatic: return Aromatic;
  }
  return None;
}

const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);

}  // namespace

std::vector<double> gaussian_basis(double d, BondType bond, const GaussianKernel& k, bool negate) {
  if (d < 0.0) throw std::invalid_argument("gaussian_basis: negative distance");
  const double sign = negate ? -1.0 : 1.0;
  const double x = k.gamma.at(bond) * d + k.beta.at(bond);
  std::vector<double> out(k.mu.size());
  for (std::size_t c = 0; c < out.size(); ++c) {
    double s = clamp_sigma(k.sigma[c]);
    double z = (x - k.mu[c]) / s;
    out[c] = sign * kInvSqrt2Pi / s * std::exp(-0.5 * z * z);
  }
  return out;
}

PairGeometry pair_geometry(const conformer::DistanceMatrix& dm, const chem::MolGraph& g,
                           std::span<const int> binding, std::size_t framing) {
  if (dm.size != binding.size()) throw DimensionError("pair_geometry: distance matrix and tokens differ");
  const std::size_t n = binding.size(), m = n + 2 * framing;
  PairGeometry pg;
  pg.tokens = m;
  pg.distance.assign(m * m, 0.0);
  pg.bond_type.assign(m * m, None);
  pg.atom_pair.assign(m * m, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (binding[i] < 0) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (binding[j] < 0) continue;
      const std::size_t at = (i + framing) * m + (j + framing);
      pg.distance[at] = dm.at(i, j);
      pg.bond_type[at] = bond_type_of(g, binding[i], binding[j]);
      pg.atom_pair[at] = 1;
    }
  }
  return pg;
}

PairGeometry empty_geometry(std::size_t tokens) {
  PairGeometry pg;
  pg.tokens = tokens;
  pg.distance.assign(tokens * tokens, 0.0);
  pg.bond_type.assign(tokens * tokens, None);
  pg.atom_pair.assign(tokens * tokens, 0);
  return pg;
}

std::vector<double> pair_mask(const PairGeometry& pg) { return {pg.atom_pair.begin(), pg.atom_pair.end()}; }

Var gaussian_basis(const PairGeometry& pg, const Var& mu, const Var& sigma, const Var& gamma, const Var& beta,
                   bool negate) {
  const std::size_t kk = mu.value().size(), pairs = pg.distance.size();
  if (sigma.value().size() != kk) throw DimensionError("gaussian_basis: mu and sigma differ in size");
  if (gamma.value().size() != kBondTypes || beta.value().size() != kBondTypes) {
    throw DimensionError("gaussian_basis: bond tables need 5 rows");
  }
  const double sign = negate ? -1.0 : 1.0;
  auto mv = mu.value().data(), sv = sigma.value().data(), gv = gamma.value().data(), bv = beta.value().data();
  std::vector<double> s(kk), sgn(kk);
  for (std::size_t c = 0; c < kk; ++c) {
    s[c] = clamp_sigma(sv[c]);
    // clamped channels get no σ gradient
    sgn[c] = std::abs(sv[c]) < kSigmaFloor ? 0.0 : (sv[c] < 0 ? -1.0 : 1.0);
  }
  std::vector<double> out(pairs * kk), zs(pairs * kk);
  for (std::size_t p = 0; p < pairs; ++p) {
    const int t = pg.bond_type[p];
    const double x = gv[t] * pg.distance[p] + bv[t];
    for (std::size_t c = 0; c < kk; ++c) {
      double z = (x - mv[c]) / s[c];
      zs[p * kk + c] = z;
      out[p * kk + c] = sign * kInvSqrt2Pi / s[c] * std::exp(-0.5 * z * z);
    }
  }
  Tensor value({pairs, kk}, std::move(out));
  return mu.tape().record(
      value, {mu, sigma, gamma, beta},
      [value, zs = std::move(zs), s = std::move(s), sgn = std::move(sgn), kk, pairs,
       distance = pg.distance, bond_type = pg.bond_type](std::span<const double> g, GradAccumulator& acc) {
        auto psi = value.data();
        const bool want_mu = acc.wants(0), want_sigma = acc.wants(1), want_gamma = acc.wants(2),
                   want_beta = acc.wants(3);
        std::vector<double> dmu(kk, 0.0), dsig(kk, 0.0), dgam(kBondTypes, 0.0), dbet(kBondTypes, 0.0);
        for (std::size_t p = 0; p < pairs; ++p) {
          double dx = 0.0;  // ∂/∂(γd + β)
          for (std::size_t c = 0; c < kk; ++c) {
            const std::size_t at = p * kk + c;
            const double gp = g[at] * psi[at], z = zs[at];
            dmu[c] += gp * z / s[c];
            dsig[c] += gp * (z * z - 1.0) / s[c];
            dx -= gp * z / s[c];
          }
          dgam[bond_type[p]] += dx * distance[p];
          dbet[bond_type[p]] += dx;
        }
        if (want_mu) {
          auto d = acc[0];
          for (std::size_t c = 0; c < kk; ++c) d[c] += dmu[c];
        }
        if (want_sigma) {
          auto d = acc[1];
          for (std::size_t c = 0; c < kk; ++c) d[c] += dsig[c] * sgn[c];
        }
        if (want_gamma) {
          auto d = acc[2];
          for (std::size_t t = 0; t < kBondTypes; ++t) d[t] += dgam[t];
        }
        if (want_beta) {
          auto d = acc[3];
          for (std::size_t t = 0; t < kBondTypes; ++t) d[t] += dbet[t];
        }
      });
}

void init_distance_weight(nn::Params& params, std::size_t kernels, std::mt19937_64& rng) {
  params["gbf.mu"] = nn::uniform({kernels}, 0.0, 10.0, rng);
  params["gbf.sigma"] = Tensor::filled({kernels}, 1.0);
  params["gbf.gamma"] = Tensor::filled({kBondTypes}, 1.0);
  params["gbf.beta"] = Tensor::zeros({kBondTypes});
  params["gbf.w1"] = nn::xavier_uniform(kernels, kernels, rng);
  params["gbf.b1"] = Tensor::zeros({kernels});
  params["gbf.w2"] = nn::xavier_uniform(kernels, kernels, rng);
  params["gbf.b2"] = Tensor::zeros({kernels});
}

Var distance_weight(nn::Bound& p, const PairGeometry& pg, const DistanceWeightOptions& options) {
  Var psi = gaussian_basis(pg, p("gbf.mu"), p("gbf.sigma"), p("gbf.gamma"), p("gbf.beta"), options.negate);
  Var h = add_rowvec(matmul(psi, p("gbf.w1")), p("gbf.b1"));
  if (!options.bypass_gelu) h = gelu(h);
  h = add_rowvec(matmul(h, p("gbf.w2")), p("gbf.b2"));
  return scale_rows(h, pair_mask(pg));
}

Tensor head_merge(std::size_t kernels, std::size_t heads) {
  if (heads == 0 || kernels < heads) throw DimensionError("head_merge: need at least one channel per head");
  std::vector<std::size_t> block(kernels), count(heads, 0);
  for (std::size_t c = 0; c < kernels; ++c) {
    block[c] = c * heads / kernels;
    ++count[block[c]];
  }
  std::vector<double> w(kernels * heads, 0.0);
  for (std::size_t c = 0; c < kernels; ++c) w[c * heads + block[c]] = 1.0 / static_cast<double>(count[block[c]]);
  return Tensor({kernels, heads}, std::move(w));
}

void init_attention(nn::Params& params, const std::string& prefix, std::size_t dim, std::mt19937_64& rng) {
  for (const char* part : {".q", ".k", ".v", ".o"}) nn::init_linear(params, prefix + part, dim, dim, rng);
}

Var attend_projected(nn::Bound& p, const std::string& prefix, const Var& q, const Var& k, const Var& v,
                     const AttentionSpec& spec) {
  const std::size_t dim = q.value().cols(), m = q.value().rows(), n = k.value().rows();
  if (spec.heads == 0 || dim % spec.heads != 0) {
    throw DimensionError("attention: dim " + std::to_string(dim) + " not divisible by " + std::to_string(spec.heads) +
                         " heads");
  }
  if (spec.spatial_heads >= spec.heads && spec.spatial_heads > 0) {
    throw DimensionError("attention: at least one normal head is required");
  }
  if (spec.spatial_heads > 0) {
    if (spec.phi == nullptr) throw std::invalid_argument("attention: spatial heads need Φ");
    if (spec.phi->value().rows() != m * n || spec.phi->value().cols() != spec.spatial_heads) {
      throw DimensionError("attention: Φ has shape " + shape_string(spec.phi->shape()));
    }
  }
  if (!spec.mask.empty() && spec.mask.size() != m * n) throw DimensionError("attention: mask size");
  if (!spec.spatial_mask.empty() && spec.spatial_mask.size() != m * n) throw DimensionError("attention: spatial mask size");

  std::vector<std::uint8_t> spatial_mask;
  if (!spec.spatial_mask.empty()) {
    spatial_mask.assign(spec.spatial_mask.begin(), spec.spatial_mask.end());
    if (!spec.mask.empty())
      for (std::size_t i = 0; i < spatial_mask.size(); ++i) spatial_mask[i] &= spec.mask[i];
  }

  const std::size_t dh = dim / spec.heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(spec.heads);
  const std::size_t first_spatial = spec.heads - spec.spatial_heads;
  for (std::size_t h = 0; h < spec.heads; ++h) {
    Var qh = spec.heads == 1 ? q : slice_lastdim(q, h * dh, dh);
    Var kh = spec.heads == 1 ? k : slice_lastdim(k, h * dh, dh);
    Var vh = spec.heads == 1 ? v : slice_lastdim(v, h * dh, dh);
    Var scores = scale(matmul_nt(qh, kh), inv);
    std::span<const std::uint8_t> mask = spec.mask;
    if (h >= first_spatial) {
      Var phi = spec.spatial_heads == 1 ? reshape(*spec.phi, {m, n})
                                        : reshape(slice_lastdim(*spec.phi, h - first_spatial, 1), {m, n});
      scores = mul(scores, phi);
      if (!spatial_mask.empty()) mask = spatial_mask;
    }
    Var probs = softmax_lastdim(scores, mask);
    if (spec.probs) spec.probs->push_back(probs);
    if (spec.dropout > 0.0) probs = dropout(probs, spec.dropout, nn::mix_seed(spec.seed, h));
    outs.push_back(matmul(probs, vh));
  }
  Var merged = outs.size() == 1 ? outs[0] : concat_lastdim(outs);
  return nn::linear(p, prefix + ".o", merged);
}

Var multi_head_attention(nn::Bound& p, const std::string& prefix, const Var& query, const Var& memory,
                         const AttentionSpec& spec) {
  Var q = nn::linear(p, prefix + ".q", query);
  Var k = nn::linear(p, prefix + ".k", memory);
  Var v = nn::linear(p, prefix + ".v", memory);
  return attend_projected(p, prefix, q, k, v, spec);
}

void init_refine(nn::Params& params, const std::string& prefix, std::size_t dim, std::size_t kernels,
                 std::mt19937_64& rng) {
  Tensor w = nn::xavier_uniform(2 * dim, kernels, rng);
  auto d = w.data();
  params[prefix + ".wa"] = Tensor({dim, kernels}, std::vector<double>(d.begin(), d.begin() + dim * kernels));
  params[prefix + ".wb"] = Tensor({dim, kernels}, std::vector<double>(d.begin() + dim * kernels, d.end()));
  params[prefix + ".b"] = Tensor::zeros({kernels});
}

Var weight_refine(nn::Bound& p, const std::string& prefix, const Var& phi, const Var& h,
                  std::span<const double> mask) {
  Var u = add_rowvec(matmul(h, p(prefix + ".wa")), p(prefix + ".b"));
  Var v = matmul(h, p(prefix + ".wb"));
  return add(phi, scale_rows(pair_sum(u, v), mask));
}

}  // namespace retro3d::attention
