#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "spanqa/model.hpp"

namespace spanqa {

using ParamGrads = std::map<std::string, Tensor>;

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;

  bool operator==(const AdamOptions&) const = default;
};

struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

AdamState init_adam(const ModelParams& params);

double global_norm(const ParamGrads& grads);

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_by_global_norm(ParamGrads& grads, double max_norm);

void adam_update(ModelParams& params, const ParamGrads& grads, AdamState& state, const AdamOptions& options);

}  // namespace spanqa
