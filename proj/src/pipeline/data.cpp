#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "retro3d/pipeline.hpp"

namespace retro3d::pipeline {

const std::vector<std::string>& Vocab::specials() {
  static const std::vector<std::string> s{"<pad>", "<bos>", "<eos>", "<unk>"};
  return s;
}

Vocab Vocab::build(const std::vector<std::string>& texts) {
  std::set<std::string> unique(texts.begin(), texts.end());
  for (const auto& s : specials()) unique.erase(s);
  std::vector<std::string> tokens = specials();
  tokens.insert(tokens.end(), unique.begin(), unique.end());
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < model::kSpecials || !std::equal(specials().begin(), specials().end(), tokens.begin())) {
    throw std::invalid_argument("vocabulary must start with the reserved tokens");
  }
  Vocab v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary entry " + v.tokens_[i]);
    }
  }
  return v;
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

int Vocab::id(const std::string& text) const {
  auto it = index_.find(text);
  return it == index_.end() ? model::kUnk : it->second;
}

const std::string& Vocab::text(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

std::vector<int> Vocab::encode(const std::vector<chem::Token>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t.text));
  return ids;
}

std::optional<std::string> Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == model::kEos) break;
    if (id < static_cast<int>(model::kSpecials) || id >= static_cast<int>(tokens_.size())) return std::nullopt;
    out += tokens_[id];
  }
  return out;
}

std::string class_token(int klass) { return "<RX_" + std::to_string(klass) + ">"; }

std::vector<ReactionLine> read_reactions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open reaction file " + path);
  std::vector<ReactionLine> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    ReactionLine r;
    r.line = number;
    auto tab = line.find('\t');
    r.text = line.substr(0, tab);
    if (tab != std::string::npos) {
      std::string rest = line.substr(tab + 1);
      try {
        r.klass = std::stoi(rest);
      } catch (const std::exception&) {
        throw std::runtime_error(path + ":" + std::to_string(number) + ": bad class column '" + rest + "'");
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

Vocab build_vocab(const std::vector<std::string>& files, bool class_tokens) {
  std::vector<std::string> texts;
  for (const auto& f : files) {
    for (const auto& r : read_reactions(f)) {
      try {
        chem::Reaction rx = chem::split_reaction(r.text);
        for (const std::string* side : {&rx.reactants, &rx.product})
          for (const auto& t : chem::tokenize(chem::strip_maps(*side))) texts.push_back(t.text);
      } catch (const chem::ParseError&) {
        continue;  // unparsable lines are rejected later by the filter
      }
      if (class_tokens && r.klass) texts.push_back(class_token(*r.klass));
    }
  }
  return Vocab::build(texts);
}

MissingConformer missing_conformer_from_string(const std::string& s) {
  if (s == "skip") return MissingConformer::Skip;
  if (s == "zero") return MissingConformer::Zero;
  throw std::invalid_argument("on_missing_conformer must be skip or zero, got " + s);
}

namespace {

std::vector<chem::Token> plain_tokens(const std::vector<chem::Token>& mapped) {
  chem::MolGraph g = chem::parse(mapped);
  return chem::strip_maps(mapped, g);
}

}  // namespace

AssembleResult assemble(const ReactionLine& reaction, const ConformerIndex* conformers, const Vocab& vocab,
                        const AssembleOptions& options) {
  AssembleResult result;
  chem::Reaction rx;
  try {
    rx = chem::split_reaction(reaction.text);
  } catch (const std::exception& e) {
    result.reason = std::string("malformed reaction: ") + e.what();
    return result;
  }
  chem::FilterResult filtered = chem::dataset_filter(rx);
  if (!filtered.keep) {
    result.reason = filtered.reason;
    return result;
  }

  try {
    const std::string& original = filtered.cleaned.product;
    chem::MolGraph original_graph = chem::parse(original);

    std::optional<conformer::Conformer> conf;
    if (conformers) {
      auto it = conformers->find(original);
      if (it != conformers->end()) conf = conformer::load_conformer(it->second, original_graph);
    }
    if (!conf && options.on_missing_conformer == MissingConformer::Skip) {
      result.reason = "missing conformer";
      return result;
    }

    TokenizedReaction ex;
    ex.line = reaction.line;
    ex.product = original;
    if (options.product_root) {
      std::vector<int> order;
      chem::WriteOptions wo;
      wo.atom_order = &order;
      ex.product = chem::write(original_graph, *options.product_root, wo);
      if (conf) {
        conformer::Conformer moved;
        for (int a : order) moved.coords.push_back(conf->coords[a]);
        conf = std::move(moved);
      }
    }
    chem::RootAlignResult aligned = chem::root_align(ex.product, filtered.cleaned.reactants);
    ex.reactants = aligned.smiles;

    auto product_mapped = chem::tokenize(ex.product);
    auto reactant_mapped = chem::tokenize(ex.reactants);
    ex.product_tokens = plain_tokens(product_mapped);
    ex.reactant_tokens = plain_tokens(reactant_mapped);

    std::vector<int> src = vocab.encode(ex.product_tokens);
    const std::size_t leading = options.class_tokens && reaction.klass ? 1 : 0;
    if (leading) src.insert(src.begin(), vocab.id(class_token(*reaction.klass)));
    if (src.size() + 2 > options.max_length || ex.reactant_tokens.size() + 1 > options.max_length) {
      result.reason = "longer than max_length";
      return result;
    }
    ex.input = model::make_input(ex.product_tokens, src, conf ? &*conf : nullptr, leading);
    ex.input.tgt = vocab.encode(ex.reactant_tokens);
    chem::AlignmentMap sam = chem::build_sam(product_mapped, reactant_mapped);
    if (leading) {
      chem::AlignmentMap shifted;
      shifted.rows = sam.rows;
      shifted.cols = sam.cols + leading;
      shifted.entries.assign(shifted.rows * shifted.cols, 0);
      for (std::size_t r = 0; r < sam.rows; ++r)
        for (std::size_t c = 0; c < sam.cols; ++c) shifted.entries[r * shifted.cols + c + leading] = sam.at(r, c);
      sam = std::move(shifted);
    }
    ex.input.sam = std::move(sam);
    result.example = std::move(ex);
  } catch (const conformer::ConformerError& e) {
    result.reason = std::string("conformer: ") + e.what();
  } catch (const chem::ParseError& e) {
    result.reason = std::string("parse error: ") + e.what();
  }
  return result;
}

model::ModelInput product_input(const std::string& product, const conformer::Conformer* conf, const Vocab& vocab,
                                std::optional<int> klass, bool class_tokens) {
  auto plain = plain_tokens(chem::tokenize(product));
  std::vector<int> ids = vocab.encode(plain);
  const std::size_t leading = class_tokens && klass ? 1 : 0;
  if (leading) ids.insert(ids.begin(), vocab.id(class_token(*klass)));
  return model::make_input(plain, ids, conf, leading);
}

std::size_t default_threads() {
  if (const char* env = std::getenv("R3D_THREADS")) {
    try {
      long n = std::stol(env);
      if (n >= 1) return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& f) {
  if (threads == 0) threads = default_threads();
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Dataset load_dataset(const std::vector<ReactionLine>& lines, const ConformerIndex* conformers, const Vocab& vocab,
                     const AssembleOptions& options, std::size_t threads) {
  std::vector<AssembleResult> results(lines.size());
  parallel_for(lines.size(), threads, [&](std::size_t i) { results[i] = assemble(lines[i], conformers, vocab, options); });
  Dataset d;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (results[i].example) {
      d.examples.push_back(std::move(*results[i].example));
      d.lines.push_back(lines[i]);
    } else {
      d.rejected.emplace_back(lines[i].line, results[i].reason);
    }
  }
  return d;
}

std::vector<std::vector<ReactionLine>> split_reactions(const std::string& path, const std::vector<double>& fractions,
                                                       std::uint64_t seed) {
  auto lines = read_reactions(path);
  std::vector<std::size_t> order(lines.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  double total = std::accumulate(fractions.begin(), fractions.end(), 0.0);
  std::vector<std::vector<ReactionLine>> out(fractions.size());
  std::size_t start = 0;
  double acc = 0.0;
  for (std::size_t s = 0; s < fractions.size(); ++s) {
    acc += fractions[s];
    std::size_t end = s + 1 == fractions.size() ? lines.size()
                                                : static_cast<std::size_t>(acc / total * static_cast<double>(lines.size()));
    std::vector<std::size_t> part(order.begin() + start, order.begin() + end);
    std::sort(part.begin(), part.end());
    for (std::size_t i : part) out[s].push_back(lines[i]);
    start = end;
  }
  return out;
}

}  // namespace retro3d::pipeline
