#include <algorithm>
#include <tuple>

#include "chem_internal.hpp"

namespace retro3d::chem {
namespace {

constexpr std::size_t kLeafCap = 5000;

// Dense ranks from arbitrary sortable keys: equal keys share a rank.
template <typename Key>
int rank_by(const std::vector<Key>& keys, std::vector<int>& ranks) {
  std::vector<int> idx(keys.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return keys[a] < keys[b]; });
  ranks.assign(keys.size(), 0);
  int r = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (k > 0 && keys[idx[k - 1]] < keys[idx[k]]) ++r;
    ranks[idx[k]] = r;
  }
  return keys.empty() ? 0 : r + 1;
}

class Canonicalizer {
 public:
  explicit Canonicalizer(const MolGraph& g) : g_(g) {}

  std::string run() {
    using Seed = std::tuple<int, int, int, bool, int, int, bool>;
    std::vector<Seed> seeds;
    for (std::size_t a = 0; a < g_.size(); ++a) {
      const Atom& at = g_.atoms[a];
      seeds.emplace_back(element_index(at.element), at.isotope, at.charge, at.aromatic,
                         g_.degree(static_cast<int>(a)), at.hydrogens, !at.chirality.empty());
    }
    std::vector<int> ranks;
    int classes = rank_by(seeds, ranks);
    refine(ranks, classes);
    search(ranks, classes);
    return best_;
  }

 private:
  int refine(std::vector<int>& ranks, int classes) const {
    using Key = std::pair<int, std::vector<int>>;
    std::vector<Key> keys(g_.size());
    while (true) {
      for (std::size_t a = 0; a < g_.size(); ++a) {
        keys[a].first = ranks[a];
        auto& nb = keys[a].second;
        nb.clear();
        for (auto [n, bond] : g_.adjacency[a]) nb.push_back(ranks[n] * 8 + static_cast<int>(g_.bonds[bond].order));
        std::sort(nb.begin(), nb.end());
      }
      std::vector<int> next;
      int count = rank_by(keys, next);
      ranks.swap(next);
      if (count == classes) return count;
      classes = count;
    }
  }

  void search(std::vector<int> ranks, int classes) {
    classes = refine(ranks, classes);
    if (static_cast<std::size_t>(classes) == g_.size()) {
      ++leaves_;
      int root = static_cast<int>(std::min_element(ranks.begin(), ranks.end()) - ranks.begin());
      WriteOptions opt;
      opt.atom_maps = false;
      opt.rank = &ranks;
      std::string s = write_component(g_, root, opt);
      if (best_.empty() || s < best_) best_ = std::move(s);
      return;
    }
    // first tied class in rank order
    std::vector<int> size(classes, 0);
    for (int r : ranks) ++size[r];
    int target = static_cast<int>(std::find_if(size.begin(), size.end(), [](int s) { return s > 1; }) - size.begin());
    for (std::size_t x = 0; x < g_.size(); ++x) {
      if (ranks[x] != target) continue;
      if (leaves_ >= kLeafCap && !best_.empty()) return;
      std::vector<std::pair<int, int>> keys(g_.size());
      for (std::size_t a = 0; a < g_.size(); ++a) keys[a] = {ranks[a], a == x ? 0 : 1};
      std::vector<int> split;
      int count = rank_by(keys, split);
      search(std::move(split), count);
    }
  }

  const MolGraph& g_;
  std::string best_;
  std::size_t leaves_ = 0;
};

}  // namespace

std::string canonical_key(const MolGraph& graph) {
  std::vector<int> comp = graph.components();
  int n_comp = comp.empty() ? 0 : *std::max_element(comp.begin(), comp.end()) + 1;
  std::vector<std::vector<int>> members(n_comp);
  for (std::size_t a = 0; a < comp.size(); ++a) members[comp[a]].push_back(static_cast<int>(a));
  std::vector<std::string> parts;
  for (const auto& atoms : members) {
    MolGraph sub = subgraph(graph, atoms);
    for (Bond& b : sub.bonds) b.stereo = 0;
    parts.push_back(Canonicalizer(sub).run());
  }
  std::sort(parts.begin(), parts.end());
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += '.';
    out += parts[i];
  }
  return out;
}

std::string canonical_key(std::string_view smiles) { return canonical_key(parse(smiles)); }

}  // namespace retro3d::chem
