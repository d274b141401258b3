#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>

#include "spanqa/checkpoint.hpp"
#include "spanqa/model.hpp"

namespace spanqa {

// Process exit codes shared by every subcommand.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitMissingInput = 2,
  kExitUnwritableOutput = 3,
};

int cmd_stats(const std::filesystem::path& data, std::ostream& out, std::ostream& err);

struct TrainCommand {
  std::filesystem::path train;
  std::filesystem::path dev;  // optional
  std::filesystem::path glove;
  std::filesystem::path out;
  std::filesystem::path log;     // defaults to <out>.log.jsonl
  std::filesystem::path resume;  // optional checkpoint to continue from
  ModelConfig model;
  TrainSettings settings;
  std::uint64_t iterations = 50000;
  bool log_timing = false;
};

int cmd_train(const TrainCommand& cmd, std::ostream& out, std::ostream& err);

// `glove` overrides the embedding path recorded in the checkpoint.
int cmd_eval(const std::filesystem::path& ckpt, const std::filesystem::path& data,
             const std::optional<std::filesystem::path>& glove, std::optional<std::size_t> max_answer_len,
             std::ostream& out, std::ostream& err);

int cmd_predict(const std::filesystem::path& ckpt, const std::filesystem::path& data,
                const std::filesystem::path& out_path, const std::optional<std::filesystem::path>& glove,
                std::optional<std::size_t> max_answer_len, std::ostream& out, std::ostream& err);

int cmd_gradcheck(std::uint64_t seed, std::ostream& out, std::ostream& err);

}  // namespace spanqa
