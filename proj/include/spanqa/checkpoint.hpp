#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "spanqa/model.hpp"
#include "spanqa/optimizer.hpp"

namespace spanqa {

// Binary layout:
//   "QACKPT1\n"
//   u64 little-endian length N of the metadata block
//   N bytes of JSON metadata (config, iteration, RNG, tensor manifest)
//   concatenated little-endian float64 payloads at the manifest's offsets
inline constexpr std::string_view kCheckpointMagic = "QACKPT1\n";
inline constexpr int kCheckpointVersion = 1;

struct TrainSettings {
  AdamOptions adam;
  std::size_t batch_size = 40;
  std::size_t max_answer_len = 20;
  std::size_t eval_every = 500;

  bool operator==(const TrainSettings&) const = default;
};

// Counter-based stream: batch order and dropout masks for iteration i are a
// pure function of (seed, i), so the pair is the whole generator state.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  bool operator==(const RngState&) const = default;
};

struct Checkpoint {
  ModelConfig config;
  TrainSettings training;
  std::uint64_t iteration = 0;
  double best_dev_f1 = -1.0;
  std::string glove_path;
  ModelParams params;
  AdamState optimizer;
  RngState rng;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);

// Writes to a sibling temp file and renames it over `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace spanqa
