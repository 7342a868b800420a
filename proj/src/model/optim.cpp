#include <algorithm>
#include <cmath>

#include "retro3d/model.hpp"

namespace retro3d::model {

using nlohmann::json;

json to_json(const OptimConfig& c) {
  json j{{"beta1", c.beta1},         {"beta2", c.beta2},         {"eps", c.eps},
         {"weight_decay", c.weight_decay}, {"lr_factor", c.lr_factor}, {"warmup", c.warmup}};
  j["fixed_lr"] = c.fixed_lr ? json(*c.fixed_lr) : json(nullptr);
  return j;
}

OptimConfig optim_from_json(const json& j) {
  OptimConfig c;
  const json known = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw std::invalid_argument("optimizer config: unknown key " + it.key());
  if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
  if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
  if (j.contains("eps")) c.eps = j.at("eps").get<double>();
  if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("lr_factor")) c.lr_factor = j.at("lr_factor").get<double>();
  if (j.contains("warmup")) c.warmup = j.at("warmup").get<std::size_t>();
  if (j.contains("fixed_lr") && !j.at("fixed_lr").is_null()) c.fixed_lr = j.at("fixed_lr").get<double>();
  if (c.warmup == 0) throw std::invalid_argument("optimizer config: warmup must be positive");
  if (c.eps <= 0.0) throw std::invalid_argument("optimizer config: eps must be positive");
  return c;
}

double noam_lr(const OptimConfig& c, std::size_t dim, std::size_t step) {
  if (c.fixed_lr) return *c.fixed_lr;
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double w = static_cast<double>(c.warmup);
  return c.lr_factor / std::sqrt(static_cast<double>(dim)) * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

void Adam::step(nn::Params& params, const std::map<std::string, Tensor>& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& [name, value] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    auto w = value.data();
    auto gd = g->second.data();
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(w.size(), 0.0);
      v.assign(w.size(), 0.0);
    }
    std::vector<double> out(w.begin(), w.end());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double grad = gd[i] + config_.weight_decay * w[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad * grad;
      out[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
    value = Tensor(value.shape(), std::move(out));
  }
}

}  // namespace retro3d::model
