#include <algorithm>
#include <cmath>
#include <limits>

#include "internal.hpp"
#include "retro3d/model.hpp"

namespace retro3d::model {
namespace {

bool allowed(std::size_t token) { return token != static_cast<std::size_t>(kPad) && token != static_cast<std::size_t>(kBos); }

// Higher score first, then lexicographically smaller token sequence.
bool better(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace

Candidate greedy(StepScorer& scorer, std::size_t max_steps) {
  Candidate out;
  std::vector<int> prefix{kBos};
  for (std::size_t step = 0; step < max_steps; ++step) {
    auto lp = scorer.next(prefix);
    std::size_t best = lp.size();
    for (std::size_t v = 0; v < lp.size(); ++v) {
      if (!allowed(v)) continue;
      if (best == lp.size() || lp[v] > lp[best]) best = v;
    }
    out.score += lp[best];
    out.tokens.push_back(static_cast<int>(best));
    prefix.push_back(static_cast<int>(best));
    if (best == static_cast<std::size_t>(kEos)) break;
  }
  return out;
}

DecodeResult beam_search(StepScorer& scorer, std::size_t beam, std::size_t max_steps) {
  if (beam == 0) throw std::invalid_argument("beam_search: beam must be at least 1");
  std::vector<Candidate> active{Candidate{}}, finished;
  for (std::size_t step = 0; step < max_steps && !active.empty(); ++step) {
    std::vector<Candidate> expanded;
    for (const auto& hyp : active) {
      std::vector<int> prefix{kBos};
      prefix.insert(prefix.end(), hyp.tokens.begin(), hyp.tokens.end());
      auto lp = scorer.next(prefix);
      for (std::size_t v = 0; v < lp.size(); ++v) {
        if (!allowed(v)) continue;
        Candidate c = hyp;
        c.tokens.push_back(static_cast<int>(v));
        c.score += lp[v];
        expanded.push_back(std::move(c));
      }
    }
    std::sort(expanded.begin(), expanded.end(), better);
    active.clear();
    for (auto& c : expanded) {
      if (active.size() == beam) break;
      if (c.tokens.back() == kEos) {
        finished.push_back(std::move(c));
      } else {
        active.push_back(std::move(c));
      }
    }
    // scores only decrease, so nothing active can overtake a full finished pool
    if (finished.size() >= beam && !active.empty()) {
      std::sort(finished.begin(), finished.end(), better);
      if (finished[beam - 1].score >= active.front().score) active.clear();
    }
  }
  for (auto& c : active) finished.push_back(std::move(c));
  std::sort(finished.begin(), finished.end(), better);
  if (finished.size() > beam) finished.resize(beam);
  return {std::move(finished)};
}

ModelScorer::ModelScorer(const nn::Params& params, const ModelConfig& config, const ModelInput& input)
    : params_(params), config_(config) {
  Tape tape(false);
  nn::Bound b(tape, params_);
  DropoutStream off(0, false);
  Var memory = encode(b, config_, input, off).memory;
  memory_ = memory.value();
  for (std::size_t l = 0; l < config_.layers_dec; ++l) {
    const std::string pre = "dec." + std::to_string(l) + ".cross";
    cross_keys_.push_back(nn::linear(b, pre + ".k", memory).value());
    cross_values_.push_back(nn::linear(b, pre + ".v", memory).value());
  }
}

ModelScorer::State ModelScorer::extend(const State& from, const std::vector<int>& prefix) {
  const std::size_t pos = prefix.size() - 1, d = config_.dim;
  if (prefix.size() > config_.max_length) throw std::length_error("decode: prefix exceeds max_length");
  Tape tape(false);
  nn::Bound b(tape, params_);
  DropoutStream off(0, false);
  State s = from;
  if (s.keys.empty()) {
    s.keys.resize(config_.layers_dec);
    s.values.resize(config_.layers_dec);
  }
  Var y = add(detail::embed(b, config_, {prefix.back()}), tape.constant(detail::position_row(pos, d)));
  for (std::size_t l = 0; l < config_.layers_dec; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    Var q = nn::linear(b, pre + ".self.q", y);
    auto k = nn::linear(b, pre + ".self.k", y).value().data();
    auto v = nn::linear(b, pre + ".self.v", y).value().data();
    s.keys[l].insert(s.keys[l].end(), k.begin(), k.end());
    s.values[l].insert(s.values[l].end(), v.begin(), v.end());
    Var keys = tape.constant(Tensor({pos + 1, d}, s.keys[l]));
    Var values = tape.constant(Tensor({pos + 1, d}, s.values[l]));
    attention::AttentionSpec spec;
    spec.heads = config_.heads;
    Var a = attention::attend_projected(b, pre + ".self", q, keys, values, spec);
    y = nn::layer_norm(b, pre + ".ln1", add(y, a));
    Var cq = nn::linear(b, pre + ".cross.q", y);
    Var c = attention::attend_projected(b, pre + ".cross", cq, tape.constant(cross_keys_[l]),
                                        tape.constant(cross_values_[l]), spec);
    y = nn::layer_norm(b, pre + ".ln2", add(y, c));
    y = nn::layer_norm(b, pre + ".ln3", add(y, detail::feed_forward(b, config_, pre, y, off)));
  }
  auto lp = log_softmax_lastdim(nn::linear(b, "gen", y)).value().data();
  s.log_probs.assign(lp.begin(), lp.end());
  return s;
}

std::vector<double> ModelScorer::next(const std::vector<int>& prefix) {
  if (prefix.empty() || prefix[0] != kBos) throw std::invalid_argument("decode: prefix must start with BOS");
  auto it = states_.find(prefix);
  if (it != states_.end()) return it->second.log_probs;
  // states two or more tokens shorter are no longer reachable by a level-wise search
  for (auto s = states_.begin(); s != states_.end();) {
    s = s->first.size() + 1 < prefix.size() ? states_.erase(s) : std::next(s);
  }
  State parent;
  if (prefix.size() > 1) {
    std::vector<int> up(prefix.begin(), prefix.end() - 1);
    auto pit = states_.find(up);
    if (pit == states_.end()) {
      next(up);
      pit = states_.find(up);
    }
    parent = pit->second;
  }
  auto [pos, inserted] = states_.insert_or_assign(prefix, extend(parent, prefix));
  return pos->second.log_probs;
}

TopK topk_metrics(const std::vector<std::string>& predictions, const std::string& truth,
                  const std::vector<std::size_t>& ks) {
  std::string truth_key = chem::canonical_key(truth);
  std::vector<bool> match, valid;
  for (const auto& p : predictions) {
    bool ok = chem::is_valid(p);
    valid.push_back(ok);
    bool hit = false;
    if (ok) {
      try {
        hit = chem::canonical_key(p) == truth_key;
      } catch (const std::exception&) {
        hit = false;
      }
    }
    match.push_back(hit);
  }
  TopK out;
  out.ks = ks;
  for (std::size_t k : ks) {
    const std::size_t n = std::min(k, predictions.size());
    bool hit = false;
    std::size_t good = 0;
    for (std::size_t i = 0; i < n; ++i) {
      hit = hit || match[i];
      good += valid[i] ? 1 : 0;
    }
    out.hit.push_back(hit);
    out.validity.push_back(n == 0 ? 0.0 : static_cast<double>(good) / static_cast<double>(n));
  }
  return out;
}

}  // namespace retro3d::model
