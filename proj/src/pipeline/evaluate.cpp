#include <algorithm>

#include "retro3d/pipeline.hpp"

namespace retro3d::pipeline {

Vocab vocab_of(const model::Checkpoint& ck) {
  if (!ck.meta.contains("vocab")) throw std::invalid_argument("checkpoint carries no vocabulary");
  return Vocab::from_tokens(ck.meta.at("vocab").get<std::vector<std::string>>());
}

std::vector<Prediction> predict(const model::Checkpoint& ck, const model::ModelInput& input, std::size_t beam) {
  Vocab vocab = vocab_of(ck);
  model::ModelScorer scorer(ck.params, ck.config, input);
  model::DecodeResult result = model::beam_search(scorer, beam, ck.config.max_length - 1);
  std::vector<Prediction> out;
  for (const auto& c : result.candidates) {
    Prediction p;
    p.score = c.score;
    bool ended = !c.tokens.empty() && c.tokens.back() == model::kEos;
    auto text = vocab.decode(c.tokens);
    if (text && ended) {
      p.smiles = *text;
      p.valid = chem::is_valid(p.smiles);
    }
    out.push_back(std::move(p));
  }
  return out;
}

EvalReport evaluate(const model::Checkpoint& ck, const std::vector<TokenizedReaction>& examples, std::size_t beam,
                    const std::vector<std::size_t>& ks, std::size_t threads) {
  if (ks.empty()) throw std::invalid_argument("evaluate: no k values");
  if (beam < *std::max_element(ks.begin(), ks.end())) throw std::invalid_argument("evaluate: beam must be at least max(k)");
  EvalReport report;
  report.ks = ks;
  report.examples = examples.size();
  report.predictions.resize(examples.size());
  report.truths.resize(examples.size());
  std::vector<model::TopK> per(examples.size());
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    std::string truth;
    for (const auto& t : examples[i].reactant_tokens) truth += t.text;
    report.truths[i] = truth;
    auto preds = predict(ck, examples[i].input, beam);
    std::vector<std::string> smiles;
    for (const auto& p : preds) smiles.push_back(p.smiles);
    per[i] = model::topk_metrics(smiles, truth, ks);
    const std::string key = chem::canonical_key(truth);
    for (auto& p : preds) {
      if (!p.valid) continue;
      try {
        p.hit = chem::canonical_key(p.smiles) == key;
      } catch (const std::exception&) {
        p.hit = false;
      }
    }
    report.predictions[i] = std::move(preds);
  });
  report.accuracy.assign(ks.size(), 0.0);
  report.validity.assign(ks.size(), 0.0);
  for (const auto& t : per) {
    for (std::size_t k = 0; k < ks.size(); ++k) {
      report.accuracy[k] += t.hit[k] ? 1.0 : 0.0;
      report.validity[k] += t.validity[k];
    }
  }
  if (!examples.empty()) {
    for (std::size_t k = 0; k < ks.size(); ++k) {
      report.accuracy[k] *= 100.0 / static_cast<double>(examples.size());
      report.validity[k] *= 100.0 / static_cast<double>(examples.size());
    }
  }
  return report;
}

}  // namespace retro3d::pipeline
