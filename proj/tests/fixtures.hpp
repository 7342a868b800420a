#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "retro3d/pipeline.hpp"

namespace fixtures {

using namespace retro3d;

inline const pipeline::Vocab& vocab() {
  static const pipeline::Vocab v = pipeline::build_vocab({corpus::path("sample_reactions.txt")});
  return v;
}

inline const pipeline::ConformerIndex& conformers() {
  static const pipeline::ConformerIndex index = conformer::load_jsonl(corpus::path("sample_conformers.jsonl"));
  return index;
}

/// Assembled sample reactions in file order, at most `n`.
inline std::vector<pipeline::TokenizedReaction> examples(std::size_t n, std::size_t max_length = 256) {
  auto lines = pipeline::read_reactions(corpus::path("sample_reactions.txt"));
  pipeline::AssembleOptions opts;
  opts.max_length = max_length;
  std::vector<pipeline::TokenizedReaction> out;
  for (const auto& l : lines) {
    if (out.size() == n) break;
    auto r = pipeline::assemble(l, &conformers(), vocab(), opts);
    if (r.example) out.push_back(std::move(*r.example));
  }
  return out;
}

/// The `n` shortest sample reactions by product + reactant token count.
inline std::vector<pipeline::ReactionLine> shortest_lines(std::size_t n) {
  auto lines = pipeline::read_reactions(corpus::path("sample_reactions.txt"));
  pipeline::AssembleOptions opts;
  std::vector<std::pair<std::size_t, std::size_t>> sized;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto r = pipeline::assemble(lines[i], &conformers(), vocab(), opts);
    if (r.example) sized.emplace_back(r.example->input.src.size() + r.example->input.tgt.size(), i);
  }
  std::stable_sort(sized.begin(), sized.end());
  std::vector<pipeline::ReactionLine> out;
  for (std::size_t k = 0; k < std::min(n, sized.size()); ++k) out.push_back(lines[sized[k].second]);
  return out;
}

inline model::ModelConfig micro(std::size_t vocab_size) {
  model::ModelConfig c;
  c.vocab_size = vocab_size;
  c.dim = 16;
  c.heads = 2;
  c.spatial_heads = 1;
  c.layers_enc = 1;
  c.layers_dec = 1;
  c.ffn_dim = 32;
  c.kernels = 4;
  c.comenet_layers = 1;
  c.dropout_ffn = c.dropout_attn = c.dropout_emb = 0.0;
  return c;
}

inline model::ModelConfig desk(std::size_t vocab_size) {
  model::ModelConfig c;
  c.vocab_size = vocab_size;
  c.dim = 64;
  c.heads = 4;
  c.spatial_heads = 2;
  c.layers_enc = 2;
  c.layers_dec = 2;
  c.ffn_dim = 256;
  c.kernels = 16;
  c.comenet_layers = 2;
  return c;
}

}  // namespace fixtures
