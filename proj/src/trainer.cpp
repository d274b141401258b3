#include "spanqa/trainer.hpp"

#include <chrono>
#include <cmath>

#include "json.hpp"
#include "spanqa/errors.hpp"
#include "spanqa/evaluator.hpp"
#include "spanqa/random.hpp"

namespace spanqa {

namespace {

std::optional<std::string> first_non_finite(const std::map<std::string, Tensor>& tensors, const std::string& prefix) {
  for (const auto& [name, t] : tensors) {
    for (double v : t.values()) {
      if (!std::isfinite(v)) return prefix + name;
    }
  }
  return std::nullopt;
}

}  // namespace

std::uint64_t epoch_shuffle_seed(std::uint64_t seed, std::uint64_t epoch) {
  return mix_seed(seed, 0x5eed000000000000ULL + epoch);
}

std::uint64_t step_dropout_seed(std::uint64_t seed, std::uint64_t iteration) {
  return mix_seed(seed, 0xd809000000000000ULL + iteration);
}

LossAndGrads compute_gradients(const ModelParams& params, const Batch& batch, const EmbeddingTable& table,
                               const ModelConfig& config, bool training, std::uint64_t dropout_seed) {
  Graph graph;
  const ModelParams bound = bind(graph, params);
  const auto out = forward(batch, bound, table, config, training, dropout_seed);
  const Tensor total = loss(out, batch.gold_starts, batch.gold_ends, batch.context_mask);
  const Gradients grads = graph.backward(total);
  LossAndGrads r;
  r.loss = total.item();
  for (const auto& [name, t] : bound) r.grads.emplace(name, grads.of(t));
  return r;
}

StepResult train_step(ModelParams& params, const Batch& batch, AdamState& optimizer, const EmbeddingTable& table,
                      const ModelConfig& config, const AdamOptions& adam, std::uint64_t dropout_seed) {
  auto [value, grads] = compute_gradients(params, batch, table, config, config.dropout_rate > 0.0, dropout_seed);
  if (!std::isfinite(value)) {
    auto culprit = first_non_finite(params, "parameter ");
    if (!culprit) culprit = first_non_finite(grads, "gradient of ");
    throw TrainingError("non-finite loss; first non-finite tensor: " + culprit.value_or("loss"));
  }
  if (auto bad = first_non_finite(grads, "gradient of ")) throw TrainingError("non-finite " + *bad);
  StepResult r;
  r.loss = value;
  r.grad_norm = clip_by_global_norm(grads, adam.clip_norm);
  adam_update(params, grads, optimizer, adam);
  return r;
}

std::map<std::string, SpanPrediction> predict_spans(std::span<const QAExample> examples, const ModelParams& params,
                                                    const EmbeddingTable& table, const ModelConfig& config,
                                                    const SpanOptions& options, std::size_t batch_size) {
  BatchOptions bo;
  bo.batch_size = batch_size;
  bo.context_cap = config.context_cap;
  bo.require_gold = false;
  const auto set = build_batches(examples, table, bo);
  std::map<std::string, SpanPrediction> out;
  for (const auto& batch : set.batches) {
    const auto fwd = forward(batch, params, table, config, false);
    const std::size_t L = batch.context_len;
    for (std::size_t b = 0; b < batch.size; ++b) {
      const auto row = [&](const Tensor& t) { return t.values().subspan(b * L, L); };
      auto span = best_span(row(fwd.p_start), row(fwd.p_end), row(batch.context_mask), options);
      span.answer_text = span_text(examples[batch.example_index[b]], span.start, span.end);
      out[batch.qids[b]] = std::move(span);
    }
  }
  // Questions the model cannot read (empty context or question) get an empty answer.
  for (const auto& ex : examples) out.try_emplace(ex.qid);
  return out;
}

std::string to_json_line(const TrainLogRecord& record) {
  nlohmann::json j = {{"iteration", record.iteration}, {"loss", record.loss}};
  if (record.dev_f1) j["dev_f1"] = *record.dev_f1;
  if (record.dev_em) j["dev_em"] = *record.dev_em;
  if (record.seconds) j["seconds"] = *record.seconds;
  return j.dump();
}

Checkpoint initial_state(const ModelConfig& config, const TrainSettings& settings) {
  Checkpoint s;
  s.config = config;
  s.training = settings;
  s.params = init_params(config);
  s.optimizer = init_adam(s.params);
  s.rng = {config.seed, 0};
  return s;
}

void train(Checkpoint& state, std::span<const QAExample> examples, const EmbeddingTable& table,
           const TrainRunOptions& options) {
  state.config.validate();
  BatchOptions bo;
  bo.batch_size = state.training.batch_size;
  bo.context_cap = state.config.context_cap;
  bo.require_gold = true;

  std::optional<std::uint64_t> cached_epoch;
  BatchSet epoch_batches;
  const SpanOptions span{state.training.max_answer_len};

  while (state.iteration < options.target_iterations) {
    const auto started = std::chrono::steady_clock::now();
    const std::uint64_t it = state.iteration;
    if (!cached_epoch || epoch_batches.batches.empty() ||
        *cached_epoch != it / epoch_batches.batches.size()) {
      // Batch count does not depend on the shuffle, so probe with epoch 0's.
      bo.shuffle_seed = epoch_shuffle_seed(state.rng.seed, 0);
      const std::size_t per_epoch = build_batches(examples, table, bo).batches.size();
      if (per_epoch == 0) throw TrainingError("no usable training examples");
      const std::uint64_t epoch = it / per_epoch;
      bo.shuffle_seed = epoch_shuffle_seed(state.rng.seed, epoch);
      epoch_batches = build_batches(examples, table, bo);
      cached_epoch = epoch;
    }
    const Batch& batch = epoch_batches.batches[it % epoch_batches.batches.size()];
    const auto step = train_step(state.params, batch, state.optimizer, table, state.config, state.training.adam,
                                 step_dropout_seed(state.rng.seed, it));
    ++state.iteration;
    state.rng.counter = state.iteration;

    TrainLogRecord rec;
    rec.iteration = state.iteration;
    rec.loss = step.loss;
    bool improved = false;
    if (!options.dev.empty() && state.training.eval_every > 0 && state.iteration % state.training.eval_every == 0) {
      const auto preds = predict_spans(options.dev, state.params, table, state.config, span);
      std::map<std::string, std::string> answers;
      for (const auto& [qid, p] : preds) answers[qid] = p.answer_text;
      const auto report = evaluate(answers, options.dev);
      rec.dev_f1 = report.f1;
      rec.dev_em = report.em;
      if (report.f1 > state.best_dev_f1) {
        state.best_dev_f1 = report.f1;
        improved = true;
      }
    }
    if (options.record_timing) {
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    if (options.on_record) options.on_record(rec);
    if (improved && options.on_best) options.on_best(state);
  }
}

}  // namespace spanqa
