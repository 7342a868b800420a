#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <unordered_map>

#include "retro3d/autodiff.hpp"
#include "retro3d/ops.hpp"

namespace retro3d::nn {

/// Named trainable tensors; ordered by name so iteration is deterministic.
using Params = std::map<std::string, Tensor>;

Tensor xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng);
Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng);

/// Adds `prefix.w` [in, out] (Xavier) and `prefix.b` [out] (zeros).
void init_linear(Params& params, const std::string& prefix, std::size_t in, std::size_t out,
                 std::mt19937_64& rng);
/// Adds `prefix.g` (ones) and `prefix.b` (zeros).
void init_layernorm(Params& params, const std::string& prefix, std::size_t dim);

/// Puts parameters on a tape on first use, so one forward pass records each
/// parameter once and gradients can be read back by name.
class Bound {
 public:
  Bound(Tape& tape, const Params& params) : tape_(tape), params_(params) {}

  Var operator()(const std::string& name);
  Tape& tape() const { return tape_; }
  const Params& params() const { return params_; }
  bool has(const std::string& name) const { return params_.count(name) != 0; }
  /// Uses `value` for `name` instead of a fresh leaf (gradient checks).
  void bind(const std::string& name, const Var& value) { vars_.insert_or_assign(name, value); }

  /// Gradient per parameter that was used; unused parameters are absent.
  std::map<std::string, Tensor> gradients(const Gradients& grads) const;

 private:
  Tape& tape_;
  const Params& params_;
  std::unordered_map<std::string, Var> vars_;
};

/// x · W + b with `prefix.w`, `prefix.b`.
Var linear(Bound& p, const std::string& prefix, const Var& x);
Var layer_norm(Bound& p, const std::string& prefix, const Var& x);

/// Deterministic 64-bit mixing used for dropout seeds.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace retro3d::nn
