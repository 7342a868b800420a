#include "retro3d/conformer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "json.hpp"

namespace retro3d::conformer {
namespace {

using json = nlohmann::json;

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
Vec3 scaled(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }

// Unsigned angle between two vectors via atan2.
double angle(const Vec3& a, const Vec3& b) { return std::atan2(norm(cross(a, b)), dot(a, b)); }

constexpr double kDegenerate = 1e-8;

std::string upper_element(std::string e) {
  if (!e.empty()) e[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(e[0])));
  return e;
}

}  // namespace

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

ConformerRecord parse_record(const std::string& line) {
  ConformerRecord rec;
  try {
    json j = json::parse(line);
    rec.id = j.at("id").get<std::string>();
    for (const auto& a : j.at("atoms")) {
      AtomRecord ar;
      if (a.contains("map") && !a.at("map").is_null()) ar.map = a.at("map").get<int>();
      ar.element = a.at("element").get<std::string>();
      const auto& xyz = a.at("xyz");
      if (xyz.size() != 3) throw ConformerError("xyz needs three values");
      for (int k = 0; k < 3; ++k) {
        if (xyz[k].is_null()) throw ConformerError("non-finite coordinate in record " + rec.id);
        ar.xyz[k] = xyz[k].get<double>();
        if (!std::isfinite(ar.xyz[k])) throw ConformerError("non-finite coordinate in record " + rec.id);
      }
      rec.atoms.push_back(std::move(ar));
    }
  } catch (const json::exception& e) {
    throw ConformerError(std::string("malformed conformer record: ") + e.what());
  }
  return rec;
}

std::string record_json(const ConformerRecord& rec) {
  json atoms = json::array();
  for (const auto& a : rec.atoms) {
    json ja;
    ja["map"] = a.map ? json(*a.map) : json(nullptr);
    ja["element"] = a.element;
    ja["xyz"] = {a.xyz[0], a.xyz[1], a.xyz[2]};
    atoms.push_back(std::move(ja));
  }
  json j;
  j["id"] = rec.id;
  j["atoms"] = std::move(atoms);
  return j.dump();
}

std::unordered_map<std::string, ConformerRecord> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConformerError("cannot open conformer file " + path);
  std::unordered_map<std::string, ConformerRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      ConformerRecord rec = parse_record(line);
      std::string id = rec.id;
      out.insert_or_assign(std::move(id), std::move(rec));
    } catch (const ConformerError& e) {
      throw ConformerError(path + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

Conformer load_conformer(const ConformerRecord& rec, const chem::MolGraph& g) {
  if (rec.atoms.size() != g.size()) {
    throw ConformerError("record " + rec.id + " has " + std::to_string(rec.atoms.size()) + " atoms, molecule has " +
                         std::to_string(g.size()));
  }
  const bool by_map =
      std::all_of(rec.atoms.begin(), rec.atoms.end(), [](const AtomRecord& a) { return a.map && *a.map > 0; }) &&
      std::all_of(g.atoms.begin(), g.atoms.end(), [](const chem::Atom& a) { return a.map > 0; });
  Conformer c;
  c.coords.resize(g.size());
  std::vector<bool> bound(g.size(), false);
  std::map<int, int> atom_of_map;
  if (by_map) {
    for (std::size_t a = 0; a < g.size(); ++a) atom_of_map[g.atoms[a].map] = static_cast<int>(a);
  }
  for (std::size_t k = 0; k < rec.atoms.size(); ++k) {
    const AtomRecord& ar = rec.atoms[k];
    int atom = static_cast<int>(k);
    if (by_map) {
      auto it = atom_of_map.find(*ar.map);
      if (it == atom_of_map.end()) throw ConformerError("record " + rec.id + ": map " + std::to_string(*ar.map) + " not in molecule");
      atom = it->second;
    }
    if (bound[atom]) throw ConformerError("record " + rec.id + ": atom bound twice");
    if (upper_element(ar.element) != g.atoms[atom].element) {
      throw ConformerError("record " + rec.id + ": element " + ar.element + " does not match " + g.atoms[atom].element);
    }
    for (double v : ar.xyz)
      if (!std::isfinite(v)) throw ConformerError("record " + rec.id + ": non-finite coordinate");
    bound[atom] = true;
    c.coords[atom] = ar.xyz;
  }
  return c;
}

ConformerRecord make_record(const std::string& id, const chem::MolGraph& g, const Conformer& c) {
  ConformerRecord rec;
  rec.id = id;
  for (std::size_t a = 0; a < g.size(); ++a) {
    AtomRecord ar;
    if (g.atoms[a].map > 0) ar.map = g.atoms[a].map;
    ar.element = g.atoms[a].element;
    ar.xyz = c.coords[a];
    rec.atoms.push_back(ar);
  }
  return rec;
}

Conformer synthetic_conformer(const chem::MolGraph& g, std::uint64_t seed) {
  const std::size_t n = g.size();
  Conformer c;
  c.coords.resize(n);
  if (n == 0) return c;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double spread = 1.5 * std::cbrt(static_cast<double>(n));
  for (auto& p : c.coords)
    for (double& v : p) v = spread * u(rng);

  // topological distance, capped at 3, selects the spring for each pair
  std::vector<int> hops(n * n, 3);
  for (std::size_t a = 0; a < n; ++a) {
    hops[a * n + a] = 0;
    for (auto [b, bond] : g.adjacency[a]) hops[a * n + b] = 1;
  }
  for (std::size_t a = 0; a < n; ++a)
    for (auto [b, bond] : g.adjacency[a])
      for (auto [d, bond2] : g.adjacency[b])
        if (hops[a * n + d] > 2) hops[a * n + d] = 2;

  constexpr double kBond = 1.5, kAngle = 2.5, kRepel = 3.2, kStep = 0.1, kMaxMove = 0.3;
  std::vector<Vec3> force(n);
  for (int iter = 0; iter < 200; ++iter) {
    std::fill(force.begin(), force.end(), Vec3{0, 0, 0});
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        Vec3 delta = sub(c.coords[b], c.coords[a]);
        double d = std::max(norm(delta), 1e-6);
        int h = hops[a * n + b];
        double target = h == 1 ? kBond : h == 2 ? kAngle : kRepel;
        double stiffness = h == 1 ? 1.0 : h == 2 ? 0.5 : 0.2;
        if (h == 3 && d >= target) continue;
        double magnitude = stiffness * (d - target) / d;
        for (int k = 0; k < 3; ++k) {
          force[a][k] += magnitude * delta[k];
          force[b][k] -= magnitude * delta[k];
        }
      }
    }
    for (std::size_t a = 0; a < n; ++a) {
      Vec3 step = scaled(force[a], kStep);
      double len = norm(step);
      if (len > kMaxMove) step = scaled(step, kMaxMove / len);
      for (int k = 0; k < 3; ++k) c.coords[a][k] += step[k];
    }
  }
  return c;
}

DistanceMatrix distance_matrix(const std::vector<chem::Token>& tokens, const Conformer& c) {
  std::vector<int> binding = chem::atom_binding(tokens);
  DistanceMatrix dm;
  dm.size = tokens.size();
  dm.values.assign(dm.size * dm.size, 0.0);
  for (std::size_t i = 0; i < dm.size; ++i) {
    if (binding[i] < 0) continue;
    if (static_cast<std::size_t>(binding[i]) >= c.size()) throw ConformerError("atom token without coordinates");
    for (std::size_t j = i + 1; j < dm.size; ++j) {
      if (binding[j] < 0) continue;
      if (static_cast<std::size_t>(binding[j]) >= c.size()) throw ConformerError("atom token without coordinates");
      double d = distance(c.coords[binding[i]], c.coords[binding[j]]);
      dm.values[i * dm.size + j] = d;
      dm.values[j * dm.size + i] = d;
    }
  }
  return dm;
}

DistanceMatrix distance_matrix(const std::string& smiles, const Conformer& c) {
  return distance_matrix(chem::tokenize(smiles), c);
}

std::optional<double> dihedral(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  Vec3 b0 = sub(a, b), b1 = sub(c, b), b2 = sub(d, c);
  double len = norm(b1);
  if (len < kDegenerate) return std::nullopt;
  Vec3 axis = scaled(b1, 1.0 / len);
  Vec3 v = sub(b0, scaled(axis, dot(b0, axis)));
  Vec3 w = sub(b2, scaled(axis, dot(b2, axis)));
  if (norm(v) < kDegenerate || norm(w) < kDegenerate) return std::nullopt;
  double x = dot(v, w);
  double y = dot(cross(axis, v), w);
  return std::atan2(y, x);
}

GeoFeatures geo_features(const chem::MolGraph& g, const Conformer& c) {
  if (c.size() != g.size()) throw ConformerError("conformer size differs from the molecule");
  const std::size_t n = g.size();
  // reference atoms: nearest bonded neighbour, then second nearest (or nearest non-bonded)
  std::vector<int> first(n, -1), second(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> bonded, others;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      double d = distance(c.coords[i], c.coords[k]);
      if (g.bond_between(static_cast<int>(i), static_cast<int>(k)) >= 0) {
        bonded.emplace_back(d, static_cast<int>(k));
      } else {
        others.emplace_back(d, static_cast<int>(k));
      }
    }
    std::sort(bonded.begin(), bonded.end());
    std::sort(others.begin(), others.end());
    if (!bonded.empty()) first[i] = bonded[0].second;
    if (bonded.size() > 1) {
      second[i] = bonded[1].second;
    } else if (!others.empty()) {
      second[i] = others[0].second;
    }
  }

  GeoFeatures out;
  for (std::size_t ii = 0; ii < n; ++ii) {
    const int i = static_cast<int>(ii);
    for (auto [j, bond] : g.adjacency[i]) {
      GeoEdge e;
      e.i = i;
      e.j = j;
      const Vec3 vj = sub(c.coords[j], c.coords[i]);
      e.d = norm(vj);
      const int f = first[i], s = second[i];
      if (j == f) {
        // θ measured against the second reference; φ fixed by construction
        if (s >= 0) {
          e.theta = angle(vj, sub(c.coords[s], c.coords[i]));
        } else {
          e.degenerate = true;
        }
        e.phi = 0.0;
      } else {
        const Vec3 vf = sub(c.coords[f], c.coords[i]);
        e.theta = angle(vj, vf);
        const double lf = norm(vf);
        Vec3 axis = scaled(vf, 1.0 / lf);
        Vec3 p = sub(vj, scaled(axis, dot(vj, axis)));
        Vec3 r{0, 0, 0};
        if (s >= 0) {
          Vec3 vs = sub(c.coords[s], c.coords[i]);
          r = sub(vs, scaled(axis, dot(vs, axis)));
        }
        if (s < 0 || norm(p) < kDegenerate || norm(r) < kDegenerate) {
          e.phi = 0.0;
          e.degenerate = true;
        } else {
          e.phi = std::atan2(dot(axis, cross(r, p)), dot(r, p));
        }
      }
      const int ref_i = f != j ? f : s;
      const int ref_j = first[j] != i ? first[j] : second[j];
      std::optional<double> tau;
      if (ref_i >= 0 && ref_j >= 0 && ref_i != j && ref_j != i) {
        tau = dihedral(c.coords[ref_j], c.coords[j], c.coords[i], c.coords[ref_i]);
      }
      if (tau) {
        e.tau = *tau;
      } else {
        e.tau = 0.0;
        e.degenerate = true;
      }
      out.edges.push_back(e);
    }
  }
  return out;
}

}  // namespace retro3d::conformer
