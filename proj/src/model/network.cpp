#include <cmath>
#include <mutex>
#include <stdexcept>

#include "retro3d/embedding.hpp"
#include "retro3d/model.hpp"
#include "internal.hpp"

namespace retro3d::model {

using nlohmann::json;

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (vocab_size <= kSpecials) fail("vocab_size must exceed the reserved tokens");
  if (dim == 0 || dim % 2 != 0) fail("dim must be positive and even");
  if (heads == 0 || dim % heads != 0) fail("dim must be divisible by heads");
  if (spatial_heads >= heads) fail("spatial_heads must be below heads");
  if (spatial_heads > 0 && kernels < spatial_heads) fail("kernels must be at least spatial_heads");
  if (kernels == 0) fail("kernels must be positive");
  if (ffn_dim == 0) fail("ffn_dim must be positive");
  if (comenet_layers < 0) fail("comenet_layers must be non-negative");
  for (double r : {dropout_ffn, dropout_attn, dropout_emb})
    if (r < 0.0 || r >= 1.0) fail("dropout rates must lie in [0, 1)");
  if (max_length < 3) fail("max_length must be at least 3");
  if (alpha < 0.0 || beta < 0.0) fail("alpha and beta must be non-negative");
  if (spatial_cutoff_angstrom < 0.0) fail("spatial_cutoff_angstrom must be non-negative");
  if (sam_loss_mode != "row_ce") fail("sam_loss_mode must be row_ce");
}

json to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size},
              {"dim", c.dim},
              {"heads", c.heads},
              {"spatial_heads", c.spatial_heads},
              {"layers_enc", c.layers_enc},
              {"layers_dec", c.layers_dec},
              {"ffn_dim", c.ffn_dim},
              {"kernels", c.kernels},
              {"comenet_layers", c.comenet_layers},
              {"dropout_ffn", c.dropout_ffn},
              {"dropout_attn", c.dropout_attn},
              {"dropout_emb", c.dropout_emb},
              {"max_length", c.max_length},
              {"alpha", c.alpha},
              {"beta", c.beta},
              {"negate_gaussian", c.negate_gaussian},
              {"spatial_cutoff_angstrom", c.spatial_cutoff_angstrom},
              {"sam_loss_mode", c.sam_loss_mode},
              {"zero_3d", c.zero_3d}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  const json known = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw std::invalid_argument("model config: unknown key " + it.key());
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("vocab_size", c.vocab_size);
  get("dim", c.dim);
  get("heads", c.heads);
  get("spatial_heads", c.spatial_heads);
  get("layers_enc", c.layers_enc);
  get("layers_dec", c.layers_dec);
  get("ffn_dim", c.ffn_dim);
  get("kernels", c.kernels);
  get("comenet_layers", c.comenet_layers);
  get("dropout_ffn", c.dropout_ffn);
  get("dropout_attn", c.dropout_attn);
  get("dropout_emb", c.dropout_emb);
  get("max_length", c.max_length);
  get("alpha", c.alpha);
  get("beta", c.beta);
  get("negate_gaussian", c.negate_gaussian);
  get("spatial_cutoff_angstrom", c.spatial_cutoff_angstrom);
  get("sam_loss_mode", c.sam_loss_mode);
  get("zero_3d", c.zero_3d);
  return c;
}

ModelInput make_input(const std::vector<chem::Token>& product, const std::vector<int>& ids,
                      const conformer::Conformer* conf, std::size_t leading) {
  if (ids.size() != product.size() + leading) throw std::invalid_argument("make_input: one id per token required");
  ModelInput in;
  in.src = ids;
  in.src_atom.assign(leading, -1);
  auto binding = chem::atom_binding(product);
  in.src_atom.insert(in.src_atom.end(), binding.begin(), binding.end());
  in.graph = chem::parse(product);
  const std::size_t n = ids.size();
  conformer::DistanceMatrix dm;
  dm.size = n;
  dm.values.assign(n * n, 0.0);
  if (conf) {
    conformer::DistanceMatrix own = conformer::distance_matrix(product, *conf);
    for (std::size_t i = 0; i < own.size; ++i)
      for (std::size_t j = 0; j < own.size; ++j) dm.values[(i + leading) * n + j + leading] = own.at(i, j);
    in.geo = conformer::geo_features(in.graph, *conf);
    in.has_3d = true;
  }
  in.pairs = attention::pair_geometry(dm, in.graph, in.src_atom, 1);
  return in;
}

nn::Params init_params(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(seed);
  nn::Params p;
  const std::size_t d = c.dim;
  p["tok_emb"] = nn::uniform({c.vocab_size, d}, -1.0 / std::sqrt(double(d)), 1.0 / std::sqrt(double(d)), rng);
  p["lambda1"] = Tensor::scalar(1.0);
  p["lambda2"] = Tensor::scalar(1.0);
  embedding::init_comenet(p, d, c.comenet_layers, rng);
  if (c.spatial_heads > 0) attention::init_distance_weight(p, c.kernels, rng);
  for (std::size_t l = 0; l < c.layers_enc; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    attention::init_attention(p, pre + ".attn", d, rng);
    nn::init_layernorm(p, pre + ".ln1", d);
    nn::init_linear(p, pre + ".ffn1", d, c.ffn_dim, rng);
    nn::init_linear(p, pre + ".ffn2", c.ffn_dim, d, rng);
    nn::init_layernorm(p, pre + ".ln2", d);
    if (c.spatial_heads > 0 && l + 1 < c.layers_enc) attention::init_refine(p, pre + ".refine", d, c.kernels, rng);
  }
  for (std::size_t l = 0; l < c.layers_dec; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    attention::init_attention(p, pre + ".self", d, rng);
    nn::init_layernorm(p, pre + ".ln1", d);
    attention::init_attention(p, pre + ".cross", d, rng);
    nn::init_layernorm(p, pre + ".ln2", d);
    nn::init_linear(p, pre + ".ffn1", d, c.ffn_dim, rng);
    nn::init_linear(p, pre + ".ffn2", c.ffn_dim, d, rng);
    nn::init_layernorm(p, pre + ".ln3", d);
  }
  nn::init_linear(p, "gen", d, c.vocab_size, rng);
  return p;
}

std::size_t parameter_count(const nn::Params& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

namespace detail {

// Position encodings are recomputed rarely; rows are cut from a cached table.
Tensor position_rows(std::size_t rows, std::size_t dim) {
  static std::mutex lock;
  static std::map<std::size_t, Tensor> tables;
  std::lock_guard<std::mutex> guard(lock);
  auto it = tables.find(dim);
  if (it == tables.end() || it->second.rows() < rows) {
    std::size_t want = std::max<std::size_t>(rows, 512);
    it = tables.insert_or_assign(dim, embedding::sinusoidal_pe(want, dim)).first;
  }
  auto d = it->second.data();
  return Tensor({rows, dim}, std::vector<double>(d.begin(), d.begin() + rows * dim));
}

Tensor position_row(std::size_t position, std::size_t dim) {
  Tensor all = position_rows(position + 1, dim);
  auto d = all.data();
  return Tensor({1, dim}, std::vector<double>(d.begin() + position * dim, d.end()));
}

Var embed(nn::Bound& p, const ModelConfig& c, const std::vector<int>& ids) {
  return scale(gather_rows(p("tok_emb"), ids), std::sqrt(static_cast<double>(c.dim)));
}

Var feed_forward(nn::Bound& p, const ModelConfig& c, const std::string& pre, const Var& x, DropoutStream& drop) {
  Var h = relu(nn::linear(p, pre + ".ffn1", x));
  if (drop.active() && c.dropout_ffn > 0.0) h = dropout(h, c.dropout_ffn, drop.next());
  return nn::linear(p, pre + ".ffn2", h);
}

}  // namespace detail

namespace {

using detail::embed;
using detail::feed_forward;
using detail::position_rows;

Var maybe_dropout(const Var& x, double rate, DropoutStream& drop) {
  if (!drop.active() || rate <= 0.0) return x;
  return dropout(x, rate, drop.next());
}

std::vector<std::uint8_t> causal_mask(std::size_t t) {
  std::vector<std::uint8_t> mask(t * t, 0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j <= i; ++j) mask[i * t + j] = 1;
  return mask;
}

std::vector<Tensor> values_of(const std::vector<Var>& vars) {
  std::vector<Tensor> out;
  for (const auto& v : vars) out.push_back(v.value());
  return out;
}

}  // namespace

Encoded encode(nn::Bound& p, const ModelConfig& c, const ModelInput& in, DropoutStream& drop, AttentionTrace* trace) {
  std::vector<int> ids;
  ids.reserve(in.src.size() + 2);
  ids.push_back(kBos);
  ids.insert(ids.end(), in.src.begin(), in.src.end());
  ids.push_back(kEos);
  const std::size_t m = ids.size();
  if (m > c.max_length) throw std::length_error("product exceeds max_length");
  if (in.pairs.tokens != m) throw DimensionError("encode: pair geometry does not match the product");
  Tape& tape = p.tape();
  const bool use3d = in.has_3d && !c.zero_3d;

  Var tok = embed(p, c, ids);
  Var x;
  if (use3d) {
    Var p3d = embedding::comenet_lite(p, in.graph, in.geo, c.comenet_layers);
    std::vector<int> binding(m, -1);
    for (std::size_t t = 0; t < in.src_atom.size(); ++t) binding[t + 1] = in.src_atom[t];
    x = embedding::fuse(embedding::pad_to_tokens(p3d, binding), tok, p("lambda1"), p("lambda2"));
  } else {
    x = scale_by(tok, p("lambda2"));
  }
  x = add(x, tape.constant(position_rows(m, c.dim)));
  x = maybe_dropout(x, c.dropout_emb, drop);

  Var phi;
  std::vector<double> mask;
  std::vector<std::uint8_t> cutoff;
  Var merge;
  if (c.spatial_heads > 0) {
    if (use3d) {
      phi = attention::distance_weight(p, in.pairs, {c.negate_gaussian, false});
    } else {
      phi = tape.constant(Tensor::zeros({m * m, c.kernels}));
    }
    mask = attention::pair_mask(in.pairs);
    merge = tape.constant(attention::head_merge(c.kernels, c.spatial_heads));
    if (use3d && c.spatial_cutoff_angstrom > 0.0) {
      cutoff.assign(m * m, 1);
      for (std::size_t k = 0; k < m * m; ++k)
        if (in.pairs.atom_pair[k] && in.pairs.distance[k] > c.spatial_cutoff_angstrom) cutoff[k] = 0;
    }
  }

  for (std::size_t l = 0; l < c.layers_enc; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    attention::AttentionSpec spec;
    spec.heads = c.heads;
    spec.spatial_heads = c.spatial_heads;
    Var merged;
    if (c.spatial_heads > 0) {
      merged = matmul(phi, merge);
      spec.phi = &merged;
      spec.spatial_mask = cutoff;
    }
    spec.dropout = drop.active() ? c.dropout_attn : 0.0;
    spec.seed = drop.active() ? drop.next() : 0;
    std::vector<Var> probs;
    if (trace) spec.probs = &probs;
    Var a = attention::multi_head_attention(p, pre + ".attn", x, x, spec);
    if (trace) trace->encoder.push_back(values_of(probs));
    x = nn::layer_norm(p, pre + ".ln1", add(x, maybe_dropout(a, c.dropout_ffn, drop)));
    Var f = feed_forward(p, c, pre, x, drop);
    x = nn::layer_norm(p, pre + ".ln2", add(x, maybe_dropout(f, c.dropout_ffn, drop)));
    if (c.spatial_heads > 0 && l + 1 < c.layers_enc) phi = attention::weight_refine(p, pre + ".refine", phi, x, mask);
  }
  return {x, phi};
}

Decoded decode(nn::Bound& p, const ModelConfig& c, const std::vector<int>& prefix, const Var& memory,
               DropoutStream& drop, AttentionTrace* trace) {
  const std::size_t t = prefix.size();
  if (t == 0 || prefix[0] != kBos) throw std::invalid_argument("decode: prefix must start with BOS");
  if (t > c.max_length) throw std::length_error("decode: prefix exceeds max_length");
  Var y = add(embed(p, c, prefix), p.tape().constant(position_rows(t, c.dim)));
  y = maybe_dropout(y, c.dropout_emb, drop);
  const auto causal = causal_mask(t);
  Decoded out;
  for (std::size_t l = 0; l < c.layers_dec; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    attention::AttentionSpec self;
    self.heads = c.heads;
    self.mask = causal;
    self.dropout = drop.active() ? c.dropout_attn : 0.0;
    self.seed = drop.active() ? drop.next() : 0;
    Var s = attention::multi_head_attention(p, pre + ".self", y, y, self);
    y = nn::layer_norm(p, pre + ".ln1", add(y, maybe_dropout(s, c.dropout_ffn, drop)));

    attention::AttentionSpec cross;
    cross.heads = c.heads;
    cross.dropout = drop.active() ? c.dropout_attn : 0.0;
    cross.seed = drop.active() ? drop.next() : 0;
    std::vector<Var> probs;
    cross.probs = &probs;
    Var a = attention::multi_head_attention(p, pre + ".cross", y, memory, cross);
    if (trace) trace->cross.push_back(values_of(probs));
    if (l + 1 == c.layers_dec) {
      Var total = probs[0];
      for (std::size_t h = 1; h < probs.size(); ++h) total = add(total, probs[h]);
      out.cross_attention = scale(total, 1.0 / static_cast<double>(probs.size()));
      out.cross_heads = probs;
    }
    y = nn::layer_norm(p, pre + ".ln2", add(y, maybe_dropout(a, c.dropout_ffn, drop)));
    Var f = feed_forward(p, c, pre, y, drop);
    y = nn::layer_norm(p, pre + ".ln3", add(y, maybe_dropout(f, c.dropout_ffn, drop)));
  }
  out.logits = nn::linear(p, "gen", y);
  return out;
}

std::pair<Tensor, std::vector<std::uint8_t>> sam_target(const ModelInput& in) {
  const std::size_t rows = in.tgt.size() + 1, cols = in.src.size() + 2;
  std::vector<double> target(rows * cols, 0.0);
  std::vector<std::uint8_t> used(rows, 0);
  if (in.sam.rows != 0 || in.sam.cols != 0) {
    if (in.sam.rows != in.tgt.size() || in.sam.cols != in.src.size()) {
      throw DimensionError("sam_target: alignment map does not match the token counts");
    }
    for (std::size_t r = 0; r < in.sam.rows; ++r) {
      std::size_t n = 0;
      for (std::size_t j = 0; j < in.sam.cols; ++j) n += in.sam.at(r, j);
      if (n == 0) continue;
      used[r] = 1;
      for (std::size_t j = 0; j < in.sam.cols; ++j)
        if (in.sam.at(r, j)) target[r * cols + j + 1] = 1.0 / static_cast<double>(n);
    }
  }
  return {Tensor({rows, cols}, std::move(target)), std::move(used)};
}

LossResult loss(nn::Bound& p, const ModelConfig& c, const ModelInput& in, std::uint64_t seed) {
  if (in.tgt.empty()) throw std::invalid_argument("loss: example has no target");
  std::vector<int> dec_in{kBos}, dec_out;
  dec_in.insert(dec_in.end(), in.tgt.begin(), in.tgt.end());
  dec_out.insert(dec_out.end(), in.tgt.begin(), in.tgt.end());
  dec_out.push_back(kEos);
  if (dec_in.size() > c.max_length) throw std::length_error("reactants exceed max_length");

  auto [target, rows] = sam_target(in);
  bool sam_empty = true;
  for (auto r : rows) sam_empty &= r == 0;

  const int passes = c.any_dropout() ? 2 : 1;
  std::vector<Var> ces, sas, logits;
  for (int pass = 0; pass < passes; ++pass) {
    DropoutStream drop(nn::mix_seed(seed, static_cast<std::uint64_t>(pass)), c.any_dropout());
    Encoded enc = encode(p, c, in, drop);
    Decoded dec = decode(p, c, dec_in, enc.memory, drop);
    ces.push_back(cross_entropy(dec.logits, dec_out, kPad));
    sas.push_back(soft_target_cross_entropy(dec.cross_attention, target, rows));
    logits.push_back(dec.logits);
  }
  Tape& tape = p.tape();
  Var ce = passes == 1 ? ces[0] : scale(add(ces[0], ces[1]), 0.5);
  Var sa = passes == 1 ? sas[0] : scale(add(sas[0], sas[1]), 0.5);
  Var kl = passes == 1 ? tape.constant(Tensor::scalar(0.0)) : kl_divergence(logits[0], logits[1]);
  Var total = add(add(ce, scale(kl, c.alpha)), scale(sa, c.beta));

  LossResult r;
  r.total = total;
  r.parts.total = total.value().item();
  r.parts.ce = ce.value().item();
  r.parts.kl = kl.value().item();
  r.parts.sa = sa.value().item();
  r.parts.tokens = dec_out.size();
  r.parts.sam_empty = sam_empty;
  return r;
}

}  // namespace retro3d::model
