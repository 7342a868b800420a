#include "retro3d/nn.hpp"

#include <cmath>

namespace retro3d::nn {

Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = u(rng);
  return Tensor(std::move(shape), std::move(data));
}

Tensor xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  return uniform({rows, cols}, -limit, limit, rng);
}

void init_linear(Params& params, const std::string& prefix, std::size_t in, std::size_t out,
                 std::mt19937_64& rng) {
  params[prefix + ".w"] = xavier_uniform(in, out, rng);
  params[prefix + ".b"] = Tensor::zeros({out});
}

void init_layernorm(Params& params, const std::string& prefix, std::size_t dim) {
  params[prefix + ".g"] = Tensor::filled({dim}, 1.0);
  params[prefix + ".b"] = Tensor::zeros({dim});
}

Var Bound::operator()(const std::string& name) {
  auto it = vars_.find(name);
  if (it != vars_.end()) return it->second;
  auto p = params_.find(name);
  if (p == params_.end()) throw std::out_of_range("unknown parameter " + name);
  Var v = tape_.leaf(p->second);
  vars_.emplace(name, v);
  return v;
}

std::map<std::string, Tensor> Bound::gradients(const Gradients& grads) const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, var] : vars_) out.emplace(name, grads[var]);
  return out;
}

Var linear(Bound& p, const std::string& prefix, const Var& x) {
  return add_rowvec(matmul(x, p(prefix + ".w")), p(prefix + ".b"));
}

Var layer_norm(Bound& p, const std::string& prefix, const Var& x) {
  return layernorm(x, p(prefix + ".g"), p(prefix + ".b"));
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

}  // namespace retro3d::nn
