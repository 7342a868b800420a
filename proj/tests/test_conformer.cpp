#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

#include "corpus.hpp"
#include "geometry.hpp"
#include "doctest.h"
#include "retro3d/conformer.hpp"

using namespace retro3d;
using namespace retro3d::conformer;

using namespace geometry;


TEST_CASE("load_conformer binds positionally and by map") {
  chem::MolGraph g = chem::parse("CO");
  ConformerRecord rec = parse_record(R"({"id":"CO","atoms":[{"map":null,"element":"C","xyz":[0,0,0]},{"map":null,"element":"O","xyz":[1,0,0]}]})");
  Conformer c = load_conformer(rec, g);
  CHECK(c.size() == 2);
  CHECK(c.coords[1][0] == 1.0);

  ConformerRecord three = rec;
  three.atoms.push_back(three.atoms[0]);
  CHECK_THROWS_AS(load_conformer(three, g), ConformerError);

  CHECK_THROWS_AS(parse_record(R"({"id":"x","atoms":[{"map":null,"element":"C","xyz":[0,0]}]})"), ConformerError);
  CHECK_THROWS_AS(parse_record(R"({"id":"x","atoms":[{"map":null,"element":"C","xyz":[0,null,0]}]})"), ConformerError);
  CHECK_THROWS_AS(parse_record("{not json"), ConformerError);

  ConformerRecord wrong = rec;
  wrong.atoms[1].element = "N";
  CHECK_THROWS_AS(load_conformer(wrong, g), ConformerError);
}

TEST_CASE("map binding matches positional binding after permutation") {
  std::mt19937_64 rng(5);
  for (const auto& smi : corpus::products(50)) {
    chem::MolGraph g = chem::parse(smi);
    Conformer ref = synthetic_conformer(g, 11);
    ConformerRecord rec = make_record(smi, g, ref);
    Conformer positional = load_conformer(rec, g);
    std::shuffle(rec.atoms.begin(), rec.atoms.end(), rng);
    Conformer by_map = load_conformer(rec, g);
    for (std::size_t a = 0; a < g.size(); ++a) CHECK(by_map.coords[a] == positional.coords[a]);
    for (std::size_t a = 0; a < g.size(); ++a) CHECK(positional.coords[a] == ref.coords[a]);
  }
}

TEST_CASE("sample conformer file binds to every product") {
  auto records = load_jsonl(corpus::path("sample_conformers.jsonl"));
  CHECK(records.size() >= 900);
  std::size_t bound = 0;
  for (const auto& r : corpus::reactions()) {
    auto it = records.find(r.product);
    if (it == records.end()) continue;
    chem::MolGraph g = chem::parse(r.product);
    Conformer c = load_conformer(it->second, g);
    for (const auto& bond : g.bonds) {
      double d = distance(c.coords[bond.a], c.coords[bond.b]);
      CHECK(d > 0.9);
      CHECK(d < 2.2);
    }
    ++bound;
  }
  CHECK(bound >= 900);
}

TEST_CASE("record json round trip") {
  chem::MolGraph g = chem::parse("[CH3:1][OH:2]");
  Conformer c{{{0.1, 0.2, 0.3}, {1.5, -0.25, 1e-17}}};
  ConformerRecord back = parse_record(record_json(make_record("id", g, c)));
  CHECK(back.id == "id");
  CHECK(*back.atoms[1].map == 2);
  CHECK(back.atoms[1].xyz == c.coords[1]);
}

TEST_CASE("synthetic conformer") {
  chem::MolGraph two = chem::parse("CC");
  Conformer c = synthetic_conformer(two, 3);
  double d = distance(c.coords[0], c.coords[1]);
  CHECK(d >= 1.2);
  CHECK(d <= 1.8);

  Conformer again = synthetic_conformer(two, 3);
  CHECK(std::memcmp(c.coords.data(), again.coords.data(), sizeof(Vec3) * 2) == 0);

  chem::MolGraph tri = chem::parse("C1CC1");
  Conformer t = synthetic_conformer(tri, 9);
  Vec3 centre{};
  for (const auto& p : t.coords)
    for (int k = 0; k < 3; ++k) centre[k] += p[k] / 3.0;
  Vec3 u{}, v{};
  for (int k = 0; k < 3; ++k) {
    u[k] = t.coords[1][k] - t.coords[0][k];
    v[k] = t.coords[2][k] - t.coords[0][k];
  }
  Vec3 n{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
  CHECK(std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]) > 0.5);  // rank 2 once centred
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b) CHECK(distance(t.coords[a], t.coords[b]) > 0.0);

  // every bond of real molecules lands near its target
  for (const auto& smi : corpus::products(100)) {
    chem::MolGraph g = chem::parse(smi);
    Conformer s = synthetic_conformer(g, 1);
    for (const auto& bond : g.bonds) {
      double bd = distance(s.coords[bond.a], s.coords[bond.b]);
      CHECK(bd > 1.0);
      CHECK(bd < 2.2);
    }
  }
}

TEST_CASE("distance matrix") {
  Conformer c{{{0, 0, 0}, {3, 4, 0}}};
  DistanceMatrix dm = distance_matrix("C=C", c);
  REQUIRE(dm.size == 3);
  CHECK(dm.at(0, 2) == 5.0);
  CHECK(dm.at(2, 0) == 5.0);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(dm.at(1, k) == 0.0);
    CHECK(dm.at(k, 1) == 0.0);
  }

  CHECK_THROWS(distance_matrix("CCC", c));

  std::mt19937_64 rng(21);
  for (const auto& smi : corpus::products(60)) {
    auto tokens = chem::tokenize(smi);
    chem::MolGraph g = chem::parse(tokens);
    Conformer s = synthetic_conformer(g, 4);
    DistanceMatrix m = distance_matrix(tokens, s);
    std::vector<int> atom_of_token;
    int next = 0;
    for (const auto& t : tokens) atom_of_token.push_back(t.is_atom() ? next++ : -1);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      for (std::size_t j = 0; j < tokens.size(); ++j) {
        double expected = 0.0;
        if (i != j && atom_of_token[i] >= 0 && atom_of_token[j] >= 0) {
          const Vec3& a = s.coords[atom_of_token[i]];
          const Vec3& b = s.coords[atom_of_token[j]];
          expected = std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                               (a[2] - b[2]) * (a[2] - b[2]));
        }
        CHECK(m.at(i, j) == expected);
        CHECK(m.at(i, j) == m.at(j, i));
      }
    }
    Conformer moved = transformed(s, random_rotation(rng), {3.0, -7.0, 0.5});
    DistanceMatrix mm = distance_matrix(tokens, moved);
    double worst = 0.0, triangle = 0.0;
    for (std::size_t k = 0; k < m.values.size(); ++k) worst = std::max(worst, std::abs(mm.values[k] - m.values[k]));
    CHECK(worst <= 1e-9);
    std::vector<std::size_t> atoms;
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (atom_of_token[i] >= 0) atoms.push_back(i);
    for (auto i : atoms)
      for (auto j : atoms)
        for (auto k : atoms) triangle = std::max(triangle, m.at(i, k) - m.at(i, j) - m.at(j, k));
    CHECK(triangle <= 1e-12);
  }
}

TEST_CASE("geo features basic frame") {
  // i bonded to f (x axis, nearest) and j (y axis)
  chem::MolGraph g = chem::parse("C(F)Cl");
  Conformer c{{{0, 0, 0}, {0.9, 0, 0}, {0, 1, 0}}};
  GeoFeatures f = geo_features(g, c);
  const GeoEdge* e = nullptr;
  for (const auto& edge : f.edges)
    if (edge.i == 0 && edge.j == 2) e = &edge;
  REQUIRE(e != nullptr);
  CHECK(e->d == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(e->theta == doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));
  CHECK(f.edges.size() == 4);

  // dihedral sign: +90° for the standard right-handed chain
  auto t = dihedral({1, 0, 0}, {0, 0, 0}, {0, 0, 1}, {0, 1, 1});
  REQUIRE(t.has_value());
  CHECK(*t == doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));
  CHECK_FALSE(dihedral({0, 0, 0}, {0, 0, 0}, {0, 0, 1}, {0, 1, 1}).has_value());

  // collinear frame: flagged, no NaN
  chem::MolGraph line = chem::parse("C#CC");
  Conformer lc{{{0, 0, 0}, {1.2, 0, 0}, {2.6, 0, 0}}};
  GeoFeatures lf = geo_features(line, lc);
  bool any_flag = false;
  for (const auto& edge : lf.edges) {
    any_flag |= edge.degenerate;
    CHECK(std::isfinite(edge.phi));
    CHECK(std::isfinite(edge.tau));
  }
  CHECK(any_flag);

  chem::MolGraph single = chem::parse("[Na+]");
  CHECK(geo_features(single, Conformer{{{0, 0, 0}}}).edges.empty());
}

TEST_CASE("geo features under rigid motion and reflection") {
  std::mt19937_64 rng(8);
  for (const auto& smi : corpus::products(80)) {
    chem::MolGraph g = chem::parse(smi);
    Conformer c = synthetic_conformer(g, 2);
    GeoFeatures base = geo_features(g, c);
    GeoFeatures moved = geo_features(g, transformed(c, random_rotation(rng), {1.5, 2.5, -4.0}));
    GeoFeatures mirror = geo_features(g, mirrored(c));
    REQUIRE(base.edges.size() == 2 * g.bonds.size());
    for (std::size_t k = 0; k < base.edges.size(); ++k) {
      const GeoEdge &a = base.edges[k], &b = moved.edges[k], &m = mirror.edges[k];
      CHECK(a.d > 0.0);
      CHECK(a.theta >= 0.0);
      CHECK(a.theta <= std::numbers::pi);
      CHECK(a.phi > -std::numbers::pi);
      CHECK(a.phi <= std::numbers::pi);
      CHECK(std::abs(a.d - b.d) <= 1e-9);
      CHECK(std::abs(a.theta - b.theta) <= 1e-9);
      CHECK(wrap_diff(a.phi, b.phi) <= 1e-9);
      CHECK(wrap_diff(a.tau, b.tau) <= 1e-9);
      CHECK(std::abs(a.d - m.d) <= 1e-12);
      CHECK(std::abs(a.theta - m.theta) <= 1e-12);
      CHECK(wrap_diff(a.phi, -m.phi) <= 1e-9);
      CHECK(wrap_diff(a.tau, -m.tau) <= 1e-9);
    }
  }
}
