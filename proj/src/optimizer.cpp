#include "spanqa/optimizer.hpp"

#include <cmath>

#include "spanqa/errors.hpp"

namespace spanqa {

AdamState init_adam(const ModelParams& params) {
  AdamState s;
  for (const auto& [name, t] : params) {
    s.m.emplace(name, Tensor::zeros(t.shape()));
    s.v.emplace(name, Tensor::zeros(t.shape()));
  }
  return s;
}

double global_norm(const ParamGrads& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.values()) sq += v * v;
  return std::sqrt(sq);
}

double clip_by_global_norm(ParamGrads& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& v : g.mutable_values()) v *= scale;
  }
  return norm;
}

void adam_update(ModelParams& params, const ParamGrads& grads, AdamState& state, const AdamOptions& options) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(options.beta1, t);
  const double bc2 = 1.0 - std::pow(options.beta2, t);
  for (auto& [name, p] : params) {
    auto g_it = grads.find(name);
    if (g_it == grads.end()) throw TrainingError("no gradient for parameter '" + name + "'");
    auto pv = p.mutable_values();
    auto mv = state.m.at(name).mutable_values();
    auto vv = state.v.at(name).mutable_values();
    const auto gv = g_it->second.values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      mv[i] = options.beta1 * mv[i] + (1.0 - options.beta1) * gv[i];
      vv[i] = options.beta2 * vv[i] + (1.0 - options.beta2) * gv[i] * gv[i];
      const double m_hat = mv[i] / bc1;
      const double v_hat = vv[i] / bc2;
      pv[i] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
  }
}

}  // namespace spanqa
