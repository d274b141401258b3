#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>

#include "spanqa/checkpoint.hpp"
#include "spanqa/data.hpp"
#include "spanqa/model.hpp"
#include "spanqa/optimizer.hpp"
#include "spanqa/span_decoder.hpp"

namespace spanqa {

struct LossAndGrads {
  double loss = 0.0;
  ParamGrads grads;
};

// forward -> loss -> backward, gradients keyed by parameter name.
LossAndGrads compute_gradients(const ModelParams& params, const Batch& batch, const EmbeddingTable& table,
                               const ModelConfig& config, bool training, std::uint64_t dropout_seed);

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
};

// One optimizer step: gradients, global-norm clip, Adam. Throws
// TrainingError naming the first non-finite tensor when the loss is NaN/Inf.
StepResult train_step(ModelParams& params, const Batch& batch, AdamState& optimizer, const EmbeddingTable& table,
                      const ModelConfig& config, const AdamOptions& adam, std::uint64_t dropout_seed);

// Inference over examples; keyed by qid, answer text filled in.
std::map<std::string, SpanPrediction> predict_spans(std::span<const QAExample> examples, const ModelParams& params,
                                                    const EmbeddingTable& table, const ModelConfig& config,
                                                    const SpanOptions& options, std::size_t batch_size = 40);

struct TrainLogRecord {
  std::uint64_t iteration = 0;
  double loss = 0.0;
  std::optional<double> dev_f1;
  std::optional<double> dev_em;
  std::optional<double> seconds;
};

std::string to_json_line(const TrainLogRecord& record);

struct TrainRunOptions {
  std::uint64_t target_iterations = 0;
  std::span<const QAExample> dev;
  bool record_timing = false;
  std::function<void(const TrainLogRecord&)> on_record;
  // Called with the current state whenever dev F1 improves.
  std::function<void(const Checkpoint&)> on_best;
};

// Fresh training state: initialized params, zeroed Adam moments, iteration 0.
Checkpoint initial_state(const ModelConfig& config, const TrainSettings& settings);

// Batch order for iteration i is a pure function of (rng.seed, i), so a run
// resumed from a checkpoint replays the uninterrupted trajectory.
void train(Checkpoint& state, std::span<const QAExample> examples, const EmbeddingTable& table,
           const TrainRunOptions& options);

std::uint64_t epoch_shuffle_seed(std::uint64_t seed, std::uint64_t epoch);
std::uint64_t step_dropout_seed(std::uint64_t seed, std::uint64_t iteration);

}  // namespace spanqa
