#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "retro3d/chem.hpp"

namespace retro3d::conformer {

using Vec3 = std::array<double, 3>;

class ConformerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One coordinate triple per MolGraph atom index, in ångströms.
struct Conformer {
  std::vector<Vec3> coords;
  std::size_t size() const noexcept { return coords.size(); }
};

struct AtomRecord {
  std::optional<int> map;
  std::string element;
  Vec3 xyz{};
};

struct ConformerRecord {
  std::string id;
  std::vector<AtomRecord> atoms;
};

ConformerRecord parse_record(const std::string& json_line);
std::string record_json(const ConformerRecord& record);
/// id → record for a JSON-lines file.
std::unordered_map<std::string, ConformerRecord> load_jsonl(const std::string& path);

/// Binds record coordinates to graph atoms: by atom map when every record atom
/// and every graph atom carries one, otherwise by position.
Conformer load_conformer(const ConformerRecord& record, const chem::MolGraph& graph);
ConformerRecord make_record(const std::string& id, const chem::MolGraph& graph, const Conformer& conformer);

/// Deterministic seeded spring embedding (bond length 1.5 Å).
Conformer synthetic_conformer(const chem::MolGraph& graph, std::uint64_t seed);

/// M×M over tokens; pairs involving a non-atom token are 0.
struct DistanceMatrix {
  std::size_t size = 0;
  std::vector<double> values;
  double at(std::size_t i, std::size_t j) const { return values[i * size + j]; }
};

DistanceMatrix distance_matrix(const std::vector<chem::Token>& tokens, const Conformer& conformer);
DistanceMatrix distance_matrix(const std::string& smiles, const Conformer& conformer);

double distance(const Vec3& a, const Vec3& b);

/// Local spherical coordinates of a bonded neighbour j seen from atom i.
struct GeoEdge {
  int i = 0;
  int j = 0;
  double d = 0.0;
  double theta = 0.0;  // [0, π]
  double phi = 0.0;    // (-π, π]
  double tau = 0.0;    // (-π, π]
  bool degenerate = false;
};

struct GeoFeatures {
  std::vector<GeoEdge> edges;  // every bonded pair in both directions, sorted by (i, j)
};

GeoFeatures geo_features(const chem::MolGraph& graph, const Conformer& conformer);

/// Signed dihedral of the chain a-b-c-d in (-π, π]; nullopt when degenerate.
std::optional<double> dihedral(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

}  // namespace retro3d::conformer
