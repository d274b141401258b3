#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spanqa/data.hpp"
#include "spanqa/model.hpp"

namespace spanqa {

inline constexpr double kOpGradTolerance = 1e-4;
inline constexpr double kModelGradTolerance = 1e-3;
inline constexpr double kGradCheckEps = 1e-5;

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  double max_abs_error = 0.0;
  std::string detail;  // worst coordinate, when the input has names
  bool passed() const { return max_rel_error < tolerance; }
};

// A model small enough to finite-difference every parameter:
// h=4, d=6, Lc=7, Lq=5, B=2, dropout off. The second example is shorter
// than the first on both sides so padding paths are exercised.
struct TinyProblem {
  ModelConfig config;
  EmbeddingTable table;
  Batch batch;
  ModelParams params;
};

TinyProblem make_tiny_problem(std::uint64_t seed);

// Flattens params in name order, and the inverse that rebuilds them from
// slices of a single (possibly graph-bound) vector.
Tensor flatten_params(const ModelParams& params);
ModelParams unflatten_params(const Tensor& flat, const ModelParams& like);

std::vector<GradCheckCase> run_op_gradchecks(std::uint64_t seed);

// Full loss gradient of the tiny problem against finite differences.
GradCheckResult model_grad_check(std::uint64_t seed);
GradCheckCase run_model_gradcheck(std::uint64_t seed);

// "name[i]" for a flat index into flatten_params order.
std::string flat_param_name(const ModelParams& params, std::size_t index);

}  // namespace spanqa
