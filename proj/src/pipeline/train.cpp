#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "retro3d/pipeline.hpp"

namespace retro3d::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("run config: " + what); };
  if (batch_size == 0) fail("batch_size must be at least 1");
  if (patience == 0) fail("patience must be at least 1");
  if (keep_best == 0) fail("keep_best must be at least 1");
  if (validate_every == 0) fail("validate_every must be at least 1");
  if (train.empty() && reactions.empty()) fail("either train or reactions is required");
  if (ks.empty()) fail("ks must not be empty");
  if (eval_beam < *std::max_element(ks.begin(), ks.end())) fail("eval_beam must be at least max(ks)");
}

json to_json(const RunConfig& c) {
  json j{{"reactions", c.reactions},
         {"train", c.train},
         {"valid", c.valid},
         {"test", c.test},
         {"split", c.split},
         {"conformers", c.conformers},
         {"vocab", c.vocab},
         {"out_dir", c.out_dir},
         {"model", model::to_json(c.model)},
         {"optim", model::to_json(c.optim)},
         {"seed", c.seed},
         {"augment", c.augment},
         {"batch_size", c.batch_size},
         {"max_epochs", c.max_epochs},
         {"max_steps", c.max_steps},
         {"patience", c.patience},
         {"keep_best", c.keep_best},
         {"validate_every", c.validate_every},
         {"valid_limit", c.valid_limit},
         {"on_missing_conformer", c.on_missing_conformer == MissingConformer::Skip ? "skip" : "zero"},
         {"class_tokens", c.class_tokens},
         {"eval_beam", c.eval_beam},
         {"ks", c.ks}};
  j["target_top1"] = c.target_top1 ? json(*c.target_top1) : json(nullptr);
  return j;
}

RunConfig run_config_from_json(const json& j, const std::string& base_dir) {
  RunConfig c;
  const json known = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw std::invalid_argument("run config: unknown key " + it.key());
  auto path = [&](const char* key, std::string& field) {
    if (!j.contains(key)) return;
    field = j.at(key).get<std::string>();
    if (!field.empty() && !base_dir.empty() && fs::path(field).is_relative()) field = (fs::path(base_dir) / field).string();
  };
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  path("reactions", c.reactions);
  path("train", c.train);
  path("valid", c.valid);
  path("test", c.test);
  path("conformers", c.conformers);
  path("vocab", c.vocab);
  path("out_dir", c.out_dir);
  get("split", c.split);
  if (j.contains("model")) c.model = model::config_from_json(j.at("model"));
  if (j.contains("optim")) c.optim = model::optim_from_json(j.at("optim"));
  get("seed", c.seed);
  get("augment", c.augment);
  get("batch_size", c.batch_size);
  get("max_epochs", c.max_epochs);
  get("max_steps", c.max_steps);
  get("patience", c.patience);
  get("keep_best", c.keep_best);
  get("validate_every", c.validate_every);
  get("valid_limit", c.valid_limit);
  if (j.contains("target_top1") && !j.at("target_top1").is_null()) c.target_top1 = j.at("target_top1").get<double>();
  if (j.contains("on_missing_conformer")) {
    c.on_missing_conformer = missing_conformer_from_string(j.at("on_missing_conformer").get<std::string>());
  }
  get("class_tokens", c.class_tokens);
  get("eval_beam", c.eval_beam);
  get("ks", c.ks);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  std::string base = fs::path(path).parent_path().string();
  // paths in shipped configs are relative to the repository root, one level up
  if (j.contains("paths_relative_to")) {
    base = (fs::path(base) / j.at("paths_relative_to").get<std::string>()).string();
    j.erase("paths_relative_to");
  }
  return run_config_from_json(j, base);
}

namespace {

struct Splits {
  std::vector<ReactionLine> train, valid, test;
};

Splits resolve_splits(const RunConfig& c) {
  Splits s;
  if (!c.train.empty()) {
    s.train = read_reactions(c.train);
    if (!c.valid.empty()) s.valid = read_reactions(c.valid);
    if (!c.test.empty()) s.test = read_reactions(c.test);
    return s;
  }
  auto parts = split_reactions(c.reactions, c.split, c.seed);
  if (parts.size() > 0) s.train = parts[0];
  if (parts.size() > 1) s.valid = parts[1];
  if (parts.size() > 2) s.test = parts[2];
  return s;
}

double greedy_top1(const nn::Params& params, const model::ModelConfig& cfg, const std::vector<TokenizedReaction>& ex,
                   std::size_t limit) {
  const std::size_t n = limit == 0 ? ex.size() : std::min(limit, ex.size());
  if (n == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    model::ModelScorer scorer(params, cfg, ex[i].input);
    model::Candidate c = model::greedy(scorer, cfg.max_length - 1);
    std::vector<int> want = ex[i].input.tgt;
    want.push_back(model::kEos);
    if (c.tokens == want) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace

TrainResult train(const RunConfig& config, const TrainHooks& hooks) {
  config.validate();
  fs::create_directories(config.out_dir);
  Splits splits = resolve_splits(config);

  Vocab vocab;
  if (!config.vocab.empty()) {
    vocab = Vocab::load(config.vocab);
  } else {
    std::vector<std::string> files;
    // build from the resolved splits so split-only runs work too
    const fs::path tmp = fs::path(config.out_dir) / "reactions.all.txt";
    {
      std::ofstream out(tmp);
      for (const auto* part : {&splits.train, &splits.valid, &splits.test})
        for (const auto& r : *part) out << r.text << (r.klass ? "\t" + std::to_string(*r.klass) : "") << '\n';
    }
    vocab = build_vocab({tmp.string()}, config.class_tokens);
    fs::remove(tmp);
  }
  vocab.save((fs::path(config.out_dir) / "vocab.txt").string());

  model::ModelConfig mc = config.model;
  mc.vocab_size = vocab.size();
  mc.validate();

  ConformerIndex conformers;
  if (!config.conformers.empty()) conformers = conformer::load_jsonl(config.conformers);
  const ConformerIndex* index = config.conformers.empty() ? nullptr : &conformers;
  AssembleOptions opts;
  opts.on_missing_conformer = config.on_missing_conformer;
  opts.class_tokens = config.class_tokens;
  opts.max_length = mc.max_length;
  Dataset train_set = load_dataset(splits.train, index, vocab, opts);
  Dataset valid_set = load_dataset(splits.valid.empty() ? splits.train : splits.valid, index, vocab, opts);
  if (train_set.examples.empty()) throw std::runtime_error("no usable training reactions");

  std::ofstream log((fs::path(config.out_dir) / "metrics.jsonl").string(), std::ios::binary);
  auto emit = [&](const json& j) {
    log << j.dump() << '\n';
    log.flush();
    if (hooks.on_log) hooks.on_log(j);
  };
  emit({{"event", "start"},
        {"train", train_set.examples.size()},
        {"valid", valid_set.examples.size()},
        {"rejected", train_set.rejected.size()},
        {"vocab", vocab.size()}});

  nn::Params params = model::init_params(mc, config.seed);
  model::Adam adam(config.optim);
  TrainResult result;
  std::vector<std::pair<double, std::string>> best;  // (top1, path), best first
  std::size_t stale = 0, step = 0;
  json meta_base{{"vocab", vocab.tokens()}, {"class_tokens", config.class_tokens}};

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    result.epochs = epoch;
    std::mt19937_64 rng(nn::mix_seed(config.seed, epoch));
    std::vector<std::size_t> order(train_set.examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    // fresh random product roots per epoch
    std::vector<TokenizedReaction> epoch_examples(train_set.examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::size_t k = order[i];
      if (!config.augment) {
        epoch_examples[i] = train_set.examples[k];
        continue;
      }
      AssembleOptions aug = opts;
      aug.product_root = static_cast<int>(rng() % train_set.examples[k].input.graph.size());
      AssembleResult r = assemble(train_set.lines[k], index, vocab, aug);
      epoch_examples[i] = r.example ? std::move(*r.example) : train_set.examples[k];
    }

    // length buckets: sort within windows of eight batches, then shuffle the batches
    const std::size_t window = config.batch_size * 8;
    std::vector<std::size_t> idx(epoch_examples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t s = 0; s < idx.size(); s += window) {
      auto end = idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + window));
      std::stable_sort(idx.begin() + static_cast<std::ptrdiff_t>(s), end, [&](std::size_t a, std::size_t b) {
        return epoch_examples[a].input.src.size() + epoch_examples[a].input.tgt.size() <
               epoch_examples[b].input.src.size() + epoch_examples[b].input.tgt.size();
      });
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t s = 0; s < idx.size(); s += config.batch_size)
      batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                           idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + config.batch_size)));
    for (std::size_t i = batches.size(); i > 1; --i) std::swap(batches[i - 1], batches[rng() % i]);

    bool stop = false;
    for (const auto& batch : batches) {
      ++step;
      std::size_t tokens = 0;
      for (std::size_t k : batch) tokens += epoch_examples[k].input.tgt.size() + 1;
      std::map<std::string, std::vector<double>> acc;
      model::LossParts sum;
      for (std::size_t e = 0; e < batch.size(); ++e) {
        const auto& ex = epoch_examples[batch[e]];
        Tape tape;
        nn::Bound b(tape, params);
        model::LossResult lr = model::loss(b, mc, ex.input, nn::mix_seed(nn::mix_seed(config.seed, step), e));
        const double w = static_cast<double>(lr.parts.tokens) / static_cast<double>(tokens);
        auto grads = b.gradients(tape.backward(lr.total));
        for (const auto& [name, g] : grads) {
          auto& dst = acc[name];
          if (dst.empty()) dst.assign(g.size(), 0.0);
          auto gd = g.data();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * gd[i];
        }
        sum.total += w * lr.parts.total;
        sum.ce += w * lr.parts.ce;
        sum.kl += w * lr.parts.kl;
        sum.sa += w * lr.parts.sa;
      }
      std::map<std::string, Tensor> grads;
      for (auto& [name, g] : acc) grads.emplace(name, Tensor(params.at(name).shape(), std::move(g)));
      const double rate = model::noam_lr(config.optim, mc.dim, step);
      adam.step(params, grads, rate);
      result.last_ce = sum.ce;
      emit({{"step", step},
            {"epoch", epoch},
            {"loss", sum.total},
            {"ce", sum.ce},
            {"kl", sum.kl},
            {"sa", sum.sa},
            {"lr", rate},
            {"tokens", tokens}});
      if (config.max_steps && step >= config.max_steps) {
        stop = true;
        result.stop_reason = "max_steps";
        break;
      }
    }
    result.steps = step;

    const bool last = stop || epoch == config.max_epochs;
    if (epoch % config.validate_every == 0 || last) {
      double top1 = greedy_top1(params, mc, valid_set.examples, config.valid_limit);
      emit({{"event", "validate"}, {"epoch", epoch}, {"step", step}, {"val_top1", top1}});
      if (top1 > result.best_top1) {
        result.best_top1 = top1;
        stale = 0;
      } else {
        ++stale;
      }
      // keep the best checkpoints on disk
      bool qualifies = best.size() < config.keep_best || top1 > best.back().first;
      if (qualifies) {
        std::string path = (fs::path(config.out_dir) / ("epoch" + std::to_string(epoch) + ".r3d")).string();
        json meta = meta_base;
        meta["epoch"] = epoch;
        meta["step"] = step;
        meta["val_top1"] = top1;
        model::save_checkpoint(path, {mc, meta, params});
        best.emplace_back(top1, path);
        std::stable_sort(best.begin(), best.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        if (best.size() > config.keep_best) {
          fs::remove(best.back().second);
          best.pop_back();
        }
      }
      if (config.target_top1 && top1 >= *config.target_top1) {
        result.stop_reason = "target reached";
        break;
      }
      if (stale >= config.patience) {
        result.stop_reason = "early stop";
        break;
      }
    }
    if (stop) break;
  }
  if (result.stop_reason.empty()) result.stop_reason = "max_epochs";

  for (const auto& [score, path] : best) result.kept.push_back(path);
  std::vector<model::Checkpoint> cks;
  for (const auto& p : result.kept) cks.push_back(model::load_checkpoint(p));
  model::Checkpoint avg = model::average_checkpoints(cks);
  avg.meta = meta_base;
  avg.meta["averaged"] = result.kept;
  result.averaged = (fs::path(config.out_dir) / "averaged.r3d").string();
  model::save_checkpoint(result.averaged, avg);
  model::save_checkpoint((fs::path(config.out_dir) / "last.r3d").string(), {mc, meta_base, params});
  emit({{"event", "end"}, {"steps", step}, {"epochs", result.epochs}, {"stop", result.stop_reason},
        {"best_val_top1", result.best_top1}});
  return result;
}

}  // namespace retro3d::pipeline
