#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "retro3d/chem.hpp"
#include "retro3d/conformer.hpp"
#include "retro3d/model.hpp"

namespace retro3d::pipeline {

/// Token vocabulary: the four reserved tokens, then sorted token texts.
class Vocab {
 public:
  static const std::vector<std::string>& specials();
  static Vocab build(const std::vector<std::string>& texts);
  static Vocab from_tokens(std::vector<std::string> tokens);
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  int id(const std::string& text) const;  // kUnk when unknown
  const std::string& text(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const std::vector<chem::Token>& tokens) const;
  /// Concatenated texts up to EOS; nullopt when a reserved token other than EOS appears.
  std::optional<std::string> decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct ReactionLine {
  std::string text;          // "reactants>>product"
  std::optional<int> klass;  // second tab-separated column when present
  std::size_t line = 0;      // 1-based line number in the source file
};

std::vector<ReactionLine> read_reactions(const std::string& path);
std::string class_token(int klass);

/// Vocabulary over the map-free tokens of every reaction in `files`.
Vocab build_vocab(const std::vector<std::string>& files, bool class_tokens = false);

enum class MissingConformer { Skip, Zero };
MissingConformer missing_conformer_from_string(const std::string& s);

struct AssembleOptions {
  MissingConformer on_missing_conformer = MissingConformer::Skip;
  /// Product DFS root (atom index of the original product); nullopt keeps the written order.
  std::optional<int> product_root;
  bool class_tokens = false;
  std::size_t max_length = 256;
};

struct TokenizedReaction {
  std::string product;    // mapped, as fed (possibly re-rooted)
  std::string reactants;  // mapped, root-aligned
  std::vector<chem::Token> product_tokens;   // without maps
  std::vector<chem::Token> reactant_tokens;  // without maps
  model::ModelInput input;
  std::size_t line = 0;
};

struct AssembleResult {
  std::optional<TokenizedReaction> example;
  std::string reason;  // why it was rejected
};

using ConformerIndex = std::unordered_map<std::string, conformer::ConformerRecord>;

/// Filter, root-align, tokenize, bind conformer, build the alignment map.
AssembleResult assemble(const ReactionLine& reaction, const ConformerIndex* conformers, const Vocab& vocab,
                        const AssembleOptions& options);

/// Inference-side input for a product alone.
model::ModelInput product_input(const std::string& product, const conformer::Conformer* conformer,
                                const Vocab& vocab, std::optional<int> klass = std::nullopt,
                                bool class_tokens = false);

struct RunConfig {
  std::string reactions;  // split into train/valid/test when the explicit files are empty
  std::string train, valid, test;
  std::vector<double> split{0.8, 0.1, 0.1};
  std::string conformers;
  std::string vocab;  // built and written to out_dir when empty
  std::string out_dir = "run";
  model::ModelConfig model;
  model::OptimConfig optim;
  std::uint64_t seed = 1;
  bool augment = true;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 1000;
  std::size_t max_steps = 0;  // 0 = no limit
  std::size_t patience = 7;
  std::size_t keep_best = 7;
  std::size_t validate_every = 1;  // epochs
  std::size_t valid_limit = 0;     // 0 = whole validation set
  std::optional<double> target_top1;  // stop once validation top-1 reaches it
  MissingConformer on_missing_conformer = MissingConformer::Skip;
  bool class_tokens = false;
  std::size_t eval_beam = 10;
  std::vector<std::size_t> ks{1, 3, 5, 10};

  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Relative paths are resolved against `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::string& base_dir = "");
RunConfig load_run_config(const std::string& path);

struct Dataset {
  std::vector<TokenizedReaction> examples;
  std::vector<ReactionLine> lines;  // aligned with examples
  std::vector<std::pair<std::size_t, std::string>> rejected;  // (line, reason)
};

/// Assembles every line; rejected lines are kept with their reason.
Dataset load_dataset(const std::vector<ReactionLine>& lines, const ConformerIndex* conformers, const Vocab& vocab,
                     const AssembleOptions& options, std::size_t threads = 0);

/// Deterministic train/valid/test split of the lines of `path`.
std::vector<std::vector<ReactionLine>> split_reactions(const std::string& path, const std::vector<double>& fractions,
                                                       std::uint64_t seed);

struct TrainResult {
  std::size_t steps = 0;
  std::size_t epochs = 0;
  double best_top1 = -1.0;
  double last_ce = 0.0;  // token-weighted CE of the final step
  std::vector<std::string> kept;  // best checkpoints, best first
  std::string averaged;
  std::string stop_reason;
};

/// Training callbacks for tests and the acceptance harness.
struct TrainHooks {
  std::function<void(const nlohmann::json&)> on_log;
};

TrainResult train(const RunConfig& config, const TrainHooks& hooks = {});

struct Prediction {
  std::string smiles;
  double score = 0.0;
  bool valid = false;
  bool hit = false;
};

struct EvalReport {
  std::vector<std::size_t> ks;
  std::vector<double> accuracy;  // percent, per k
  std::vector<double> validity;  // percent, per k
  std::size_t examples = 0;
  std::vector<std::vector<Prediction>> predictions;  // per example, rank order
  std::vector<std::string> truths;
};

/// Beam search over every example. beam ≥ max(ks).
EvalReport evaluate(const model::Checkpoint& checkpoint, const std::vector<TokenizedReaction>& examples,
                    std::size_t beam, const std::vector<std::size_t>& ks, std::size_t threads = 0);

/// Decoded candidates as SMILES (invalid sequences become "").
std::vector<Prediction> predict(const model::Checkpoint& checkpoint, const model::ModelInput& input, std::size_t beam);

Vocab vocab_of(const model::Checkpoint& checkpoint);

/// Worker count: R3D_THREADS when set, else hardware concurrency.
std::size_t default_threads();

/// Runs f(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& f);

}  // namespace retro3d::pipeline
