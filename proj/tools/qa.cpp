#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "spanqa/commands.hpp"

int main(int argc, char** argv) {
  using namespace spanqa;
  CLI::App app{"Span-extraction question answering: train, evaluate and inspect."};
  app.require_subcommand(1);

  std::string data, dev, glove, out, ckpt, log, resume;
  std::uint64_t seed = 0;

  auto* stats = app.add_subcommand("stats", "Print dataset length statistics");
  stats->add_option("--data", data, "SQuAD-format JSON file")->required();

  TrainCommand train_cmd;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoints");
  train->add_option("--data", data, "training SQuAD JSON")->required();
  train->add_option("--dev", dev, "dev SQuAD JSON for periodic evaluation");
  train->add_option("--glove", glove, "GloVe text embeddings")->required();
  train->add_option("--out", out, "checkpoint path (best dev model goes to <out>.best)")->required();
  train->add_option("--log", log, "JSONL training log (default <out>.log.jsonl)");
  train->add_option("--resume", resume, "checkpoint to continue training from");
  train->add_option("--iters", train_cmd.iterations, "total iterations to reach")->capture_default_str();
  train->add_option("--batch-size", train_cmd.settings.batch_size)->capture_default_str();
  train->add_option("--hidden", train_cmd.model.hidden_size)->capture_default_str();
  train->add_option("--dropout", train_cmd.model.dropout_rate)->capture_default_str();
  train->add_option("--embed-dim", train_cmd.model.embedding_dim)->capture_default_str();
  train->add_option("--context-cap", train_cmd.model.context_cap)->capture_default_str();
  train->add_option("--max-answer-len", train_cmd.settings.max_answer_len)->capture_default_str();
  train->add_option("--seed", train_cmd.model.seed)->capture_default_str();
  train->add_option("--eval-every", train_cmd.settings.eval_every)->capture_default_str();
  train->add_option("--lr", train_cmd.settings.adam.lr)->capture_default_str();
  train->add_flag("--log-timing", train_cmd.log_timing, "add wall-clock seconds to log records");

  std::optional<std::size_t> max_len;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a SQuAD file");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--data", data)->required();
  eval->add_option("--glove", glove, "override the embedding path stored in the checkpoint");
  eval->add_option("--max-answer-len", max_len);

  auto* predict = app.add_subcommand("predict", "Write {qid: answer} predictions JSON");
  predict->add_option("--ckpt", ckpt)->required();
  predict->add_option("--data", data)->required();
  predict->add_option("--out", out)->required();
  predict->add_option("--glove", glove, "override the embedding path stored in the checkpoint");
  predict->add_option("--max-answer-len", max_len);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op and the model");
  gradcheck->add_option("--seed", seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  const auto glove_override = glove.empty() ? std::nullopt : std::optional<std::filesystem::path>(glove);
  if (stats->parsed()) return cmd_stats(data, std::cout, std::cerr);
  if (train->parsed()) {
    train_cmd.train = data;
    train_cmd.dev = dev;
    train_cmd.glove = glove;
    train_cmd.out = out;
    train_cmd.log = log;
    train_cmd.resume = resume;
    return cmd_train(train_cmd, std::cout, std::cerr);
  }
  if (eval->parsed()) return cmd_eval(ckpt, data, glove_override, max_len, std::cout, std::cerr);
  if (predict->parsed()) return cmd_predict(ckpt, data, out, glove_override, max_len, std::cout, std::cerr);
  if (gradcheck->parsed()) return cmd_gradcheck(seed, std::cout, std::cerr);
  return kExitFailure;
}
