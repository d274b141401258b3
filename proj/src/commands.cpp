#include "spanqa/commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include "spanqa/data.hpp"
#include "spanqa/errors.hpp"
#include "spanqa/evaluator.hpp"
#include "spanqa/gradient_suite.hpp"
#include "spanqa/trainer.hpp"

namespace spanqa {

namespace fs = std::filesystem;

namespace {

bool require_file(const fs::path& p, const char* what, std::ostream& err) {
  std::error_code ec;
  if (!fs::is_regular_file(p, ec)) {
    err << "error: " << what << " file not found: " << p.string() << "\n";
    return false;
  }
  return true;
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * fraction);
  return buf;
}

void print_histogram(std::ostream& out, const std::array<std::size_t, DatasetStats::kBuckets>& hist,
                     std::size_t width) {
  for (std::size_t i = 0; i < hist.size(); ++i) {
    char label[32];
    if (i + 1 == hist.size()) {
      std::snprintf(label, sizeof label, "%zu+", i * width);
    } else {
      std::snprintf(label, sizeof label, "%zu-%zu", i * width, (i + 1) * width - 1);
    }
    char line[64];
    std::snprintf(line, sizeof line, "  %-10s %10zu\n", label, hist[i]);
    out << line;
  }
}

struct LoadedModel {
  Checkpoint ckpt;
  EmbeddingTable table;
};

// Shared front half of eval/predict. Returns an exit code on failure.
std::optional<int> load_for_inference(const fs::path& ckpt_path, const fs::path& data,
                                      const std::optional<fs::path>& glove, LoadedModel& model,
                                      SquadData& squad, std::ostream& err) {
  if (!require_file(ckpt_path, "checkpoint", err) || !require_file(data, "data", err)) return kExitMissingInput;
  model.ckpt = load_checkpoint(ckpt_path);
  const fs::path glove_path = glove ? *glove : fs::path(model.ckpt.glove_path);
  if (!require_file(glove_path, "embedding", err)) return kExitMissingInput;
  model.table = load_glove(glove_path, model.ckpt.config.embedding_dim);
  squad = load_squad(data);
  return std::nullopt;
}

}  // namespace

int cmd_stats(const fs::path& data, std::ostream& out, std::ostream& err) {
  if (!require_file(data, "data", err)) return kExitMissingInput;
  try {
    const auto squad = load_squad(data);
    const auto s = dataset_stats(squad.examples);
    out << "examples              " << s.example_count << "\n";
    out << "aligned answers       " << s.answer_count << "\n";
    out << "alignment failures    " << squad.alignment_failures << "\n";
    out << "answers < " << s.answer_threshold << " tokens   " << percent(s.answer_fraction) << " (" << s.answers_short
        << " / " << s.answer_count << ")\n";
    out << "contexts < " << s.context_threshold << " tokens " << percent(s.context_fraction) << " ("
        << s.contexts_short << " / " << s.example_count << ")\n";
    out << "answer length histogram (tokens)\n";
    print_histogram(out, s.answer_histogram, DatasetStats::kAnswerBucketWidth);
    out << "context length histogram (tokens)\n";
    print_histogram(out, s.context_histogram, DatasetStats::kContextBucketWidth);
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int cmd_train(const TrainCommand& cmd, std::ostream& out, std::ostream& err) {
  if (!require_file(cmd.train, "training data", err) || !require_file(cmd.glove, "embedding", err)) {
    return kExitMissingInput;
  }
  if (!cmd.dev.empty() && !require_file(cmd.dev, "dev data", err)) return kExitMissingInput;
  if (!cmd.resume.empty() && !require_file(cmd.resume, "resume checkpoint", err)) return kExitMissingInput;
  try {
    Checkpoint state;
    if (!cmd.resume.empty()) {
      state = load_checkpoint(cmd.resume);
    } else {
      state = initial_state(cmd.model, cmd.settings);
    }
    state.glove_path = fs::absolute(cmd.glove).string();
    const auto train_data = load_squad(cmd.train);
    SquadData dev_data;
    if (!cmd.dev.empty()) dev_data = load_squad(cmd.dev);
    const auto table = load_glove(cmd.glove, state.config.embedding_dim);

    const fs::path log_path = cmd.log.empty() ? fs::path(cmd.out.string() + ".log.jsonl") : cmd.log;
    std::ofstream log(log_path, cmd.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) {
      err << "error: cannot write log file " << log_path.string() << "\n";
      return kExitUnwritableOutput;
    }
    out << "training examples " << train_data.examples.size() << " (alignment failures "
        << train_data.alignment_failures << "), parameters " << param_count(state.params) << ", starting at iteration "
        << state.iteration << "\n";

    const fs::path best_path = cmd.out.string() + ".best";
    TrainRunOptions opts;
    opts.target_iterations = cmd.iterations;
    opts.dev = dev_data.examples;
    opts.record_timing = cmd.log_timing;
    opts.on_record = [&](const TrainLogRecord& rec) {
      log << to_json_line(rec) << "\n";
      log.flush();
      if (rec.iteration == 1 || rec.iteration % 50 == 0 || rec.dev_f1) out << to_json_line(rec) << "\n";
    };
    opts.on_best = [&](const Checkpoint& ck) { save_checkpoint(best_path, ck); };
    train(state, train_data.examples, table, opts);
    try {
      save_checkpoint(cmd.out, state);
    } catch (const CheckpointError& e) {
      err << "error: " << e.what() << "\n";
      return kExitUnwritableOutput;
    }
    out << "wrote " << cmd.out.string() << "\n";
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int cmd_eval(const fs::path& ckpt, const fs::path& data, const std::optional<fs::path>& glove,
             std::optional<std::size_t> max_answer_len, std::ostream& out, std::ostream& err) {
  try {
    LoadedModel model;
    SquadData squad;
    if (auto code = load_for_inference(ckpt, data, glove, model, squad, err)) return *code;
    const SpanOptions span{max_answer_len.value_or(model.ckpt.training.max_answer_len)};
    const auto preds = predict_spans(squad.examples, model.ckpt.params, model.table, model.ckpt.config, span);
    std::map<std::string, std::string> answers;
    for (const auto& [qid, p] : preds) answers[qid] = p.answer_text;
    out << format_report(evaluate(answers, squad.examples));
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int cmd_predict(const fs::path& ckpt, const fs::path& data, const fs::path& out_path,
                const std::optional<fs::path>& glove, std::optional<std::size_t> max_answer_len, std::ostream& out,
                std::ostream& err) {
  try {
    LoadedModel model;
    SquadData squad;
    if (auto code = load_for_inference(ckpt, data, glove, model, squad, err)) return *code;
    const SpanOptions span{max_answer_len.value_or(model.ckpt.training.max_answer_len)};
    const auto preds = predict_spans(squad.examples, model.ckpt.params, model.table, model.ckpt.config, span);
    std::map<std::string, std::string> answers;
    for (const auto& [qid, p] : preds) answers[qid] = p.answer_text;
    std::ofstream file(out_path, std::ios::binary | std::ios::trunc);
    if (!file) {
      err << "error: cannot write predictions to " << out_path.string() << "\n";
      return kExitUnwritableOutput;
    }
    file << predictions_json(answers);
    if (!file.flush()) {
      err << "error: write failed for " << out_path.string() << "\n";
      return kExitUnwritableOutput;
    }
    out << "wrote " << answers.size() << " predictions to " << out_path.string() << "\n";
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int cmd_gradcheck(std::uint64_t seed, std::ostream& out, std::ostream& err) {
  try {
    auto cases = run_op_gradchecks(seed);
    cases.push_back(run_model_gradcheck(seed));
    bool ok = true;
    for (const auto& c : cases) {
      char line[200];
      std::snprintf(line, sizeof line, "%-4s %-30s max rel error %.3e (limit %.0e)  max abs error %.1e", c.passed() ? "PASS" : "FAIL",
                    c.name.c_str(), c.max_rel_error, c.tolerance, c.max_abs_error);
      out << line;
      if (!c.detail.empty()) out << "  " << c.detail;
      out << "\n";
      ok = ok && c.passed();
    }
    return ok ? kExitOk : kExitFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace spanqa
