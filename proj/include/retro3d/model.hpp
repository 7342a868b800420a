#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "retro3d/attention.hpp"
#include "retro3d/chem.hpp"
#include "retro3d/conformer.hpp"
#include "retro3d/nn.hpp"

#include "json.hpp"

namespace retro3d::model {

constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;
constexpr int kUnk = 3;
constexpr std::size_t kSpecials = 4;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t dim = 512;
  std::size_t heads = 8;
  std::size_t spatial_heads = 4;
  std::size_t layers_enc = 6;
  std::size_t layers_dec = 6;
  std::size_t ffn_dim = 2048;
  std::size_t kernels = 512;
  int comenet_layers = 3;
  double dropout_ffn = 0.1;
  double dropout_attn = 0.1;
  double dropout_emb = 0.1;
  std::size_t max_length = 256;
  double alpha = 0.5;  // R-Drop KL weight
  double beta = 1.0;   // alignment loss weight
  bool negate_gaussian = true;
  double spatial_cutoff_angstrom = 0.0;  // 0 = no hard mask
  std::string sam_loss_mode = "row_ce";
  bool zero_3d = false;  // Φ⁰ = 0 and P3D = 0 for every example

  void validate() const;
  bool any_dropout() const { return dropout_ffn > 0 || dropout_attn > 0 || dropout_emb > 0; }
};

nlohmann::json to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys are an error.
ModelConfig config_from_json(const nlohmann::json& j);

/// Everything the network needs about one reaction. Token ids are unframed.
struct ModelInput {
  std::vector<int> src;                  // product token ids
  std::vector<int> src_atom;             // product token → atom index or -1
  chem::MolGraph graph;                  // product graph
  bool has_3d = false;                   // conformer available
  conformer::GeoFeatures geo;            // when has_3d
  attention::PairGeometry pairs;         // framed with BOS/EOS
  std::vector<int> tgt;                  // reactant token ids (empty at inference)
  chem::AlignmentMap sam;                // reactant tokens × product tokens
};

/// Builds the model-facing view of a product. `ids` may start with `leading`
/// extra non-atom ids (a reaction-class token) before the product's own ids.
/// `conformer` may be null (no 3D information).
ModelInput make_input(const std::vector<chem::Token>& product, const std::vector<int>& ids,
                      const conformer::Conformer* conformer, std::size_t leading = 0);

nn::Params init_params(const ModelConfig& config, std::uint64_t seed);
std::size_t parameter_count(const nn::Params& params);

/// Dropout seeds: one stream per forward pass, advanced per call site.
class DropoutStream {
 public:
  DropoutStream(std::uint64_t seed, bool active) : seed_(seed), active_(active) {}
  bool active() const { return active_; }
  std::uint64_t next() { return nn::mix_seed(seed_, counter_++); }

 private:
  std::uint64_t seed_;
  bool active_;
  std::uint64_t counter_ = 0;
};

/// Attention probabilities collected during a forward pass.
struct AttentionTrace {
  std::vector<std::vector<Tensor>> encoder;  // [layer][head] M×M
  std::vector<std::vector<Tensor>> cross;    // [layer][head] T×M
};

struct Encoded {
  Var memory;  // [M, dim], M = src + 2
  Var phi;     // [M·M, K] weights after the last refinement
};

Encoded encode(nn::Bound& p, const ModelConfig& config, const ModelInput& input, DropoutStream& drop,
               AttentionTrace* trace = nullptr);

struct Decoded {
  Var logits;                // [T, vocab]
  Var cross_attention;       // [T, M] final layer, averaged over heads
  std::vector<Var> cross_heads;
};

/// Teacher-forced decoder over `prefix` (starts with BOS).
Decoded decode(nn::Bound& p, const ModelConfig& config, const std::vector<int>& prefix, const Var& memory,
               DropoutStream& drop, AttentionTrace* trace = nullptr);

struct LossParts {
  double total = 0.0;
  double ce = 0.0;
  double kl = 0.0;
  double sa = 0.0;
  std::size_t tokens = 0;  // target tokens (reactants + EOS)
  bool sam_empty = false;
};

struct LossResult {
  Var total;
  LossParts parts;
};

/// CE (mean over passes) + α·KL + β·L_SA. Two passes when any dropout is active.
LossResult loss(nn::Bound& p, const ModelConfig& config, const ModelInput& input, std::uint64_t seed);

/// Row-normalised SAM in decoder-target × memory coordinates, plus the rows used.
std::pair<Tensor, std::vector<std::uint8_t>> sam_target(const ModelInput& input);

// ---- decoding ----

class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  /// Log-probabilities of the next token after `prefix` (prefix[0] is BOS).
  virtual std::vector<double> next(const std::vector<int>& prefix) = 0;
};

struct Candidate {
  std::vector<int> tokens;  // without BOS; ends with EOS unless cut at max length
  double score = 0.0;       // total log-probability
};

struct DecodeResult {
  std::vector<Candidate> candidates;
};

/// `max_steps` bounds the number of generated tokens.
DecodeResult beam_search(StepScorer& scorer, std::size_t beam, std::size_t max_steps);
Candidate greedy(StepScorer& scorer, std::size_t max_steps);

/// Incremental decoder over an encoded product; caches per-layer keys/values.
class ModelScorer : public StepScorer {
 public:
  ModelScorer(const nn::Params& params, const ModelConfig& config, const ModelInput& input);
  std::size_t vocab_size() const override { return config_.vocab_size; }
  std::vector<double> next(const std::vector<int>& prefix) override;
  const Tensor& memory() const { return memory_; }

 private:
  struct State {
    std::vector<std::vector<double>> keys;    // per layer, rows of dim
    std::vector<std::vector<double>> values;  // per layer
    std::vector<double> log_probs;
  };
  State extend(const State& from, const std::vector<int>& prefix);

  const nn::Params& params_;
  ModelConfig config_;
  Tensor memory_;
  std::vector<Tensor> cross_keys_, cross_values_;
  std::map<std::vector<int>, State> states_;
};

struct TopK {
  std::vector<std::size_t> ks;
  std::vector<bool> hit;        // per k
  std::vector<double> validity; // per k, fraction of the first k candidates
};

/// `predictions` are SMILES strings in rank order.
TopK topk_metrics(const std::vector<std::string>& predictions, const std::string& truth,
                  const std::vector<std::size_t>& ks);

// ---- optimisation ----

struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double weight_decay = 1e-3;
  double lr_factor = 2.0;
  std::size_t warmup = 8000;
  /// Overrides the schedule when set.
  std::optional<double> fixed_lr;
};

nlohmann::json to_json(const OptimConfig& config);
OptimConfig optim_from_json(const nlohmann::json& j);

/// factor · dim^-0.5 · min(step^-0.5, step · warmup^-1.5), step counted from 1.
double noam_lr(const OptimConfig& config, std::size_t dim, std::size_t step);

class Adam {
 public:
  explicit Adam(OptimConfig config) : config_(config) {}
  /// One update with L2 weight decay folded into the gradient.
  void step(nn::Params& params, const std::map<std::string, Tensor>& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  OptimConfig config_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

// ---- checkpoints ----

struct Checkpoint {
  ModelConfig config;
  nlohmann::json meta;  // vocabulary, training state
  nn::Params params;
};

/// "R3D1", u64 header length, header JSON {"config", "meta"}, then per parameter:
/// u32 name length, name, u32 rank, u64 dims, little-endian float64 values.
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);
/// Parameter-wise arithmetic mean; configs must agree.
Checkpoint average_checkpoints(const std::vector<Checkpoint>& checkpoints);

}  // namespace retro3d::model
