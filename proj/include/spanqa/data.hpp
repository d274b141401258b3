#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "spanqa/tensor.hpp"

namespace spanqa {

// ---- tokenization --------------------------------------------------------

// Lowercased token plus the byte range [begin, end) it came from.
struct Token {
  std::string text;
  std::size_t begin = 0;
  std::size_t end = 0;

  bool operator==(const Token&) const = default;
};

// Whitespace split, then leading/trailing punctuation peeled off one
// character at a time. Punctuation inside a word ("11:28", "10-7", "gano's")
// stays put.
std::vector<Token> tokenize(std::string_view text);

// Byte offset of every code point boundary; entry i is where code point i
// starts, the last entry is text.size().
std::vector<std::size_t> codepoint_offsets(std::string_view text);

// ---- SQuAD ---------------------------------------------------------------

struct TokenSpan {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // inclusive

  std::size_t length() const { return end - start + 1; }
  bool operator==(const TokenSpan&) const = default;
};

struct QAExample {
  std::string qid;
  std::string context;
  std::string question;
  std::vector<Token> context_tokens;
  std::vector<Token> question_tokens;
  std::vector<std::string> answer_texts;
  // Aligned from the first answer; empty when alignment failed.
  std::optional<TokenSpan> gold_span;
};

struct SquadData {
  std::vector<QAExample> examples;
  std::size_t alignment_failures = 0;
};

// Smallest inclusive token range covering bytes [answer_start, answer_start + answer.size()).
TokenSpan align_answer(std::span<const Token> context_tokens, std::string_view context,
                       std::string_view answer_text, std::size_t answer_start_byte);

SquadData parse_squad(std::string_view json_text, const std::string& source = "<memory>");
SquadData load_squad(const std::filesystem::path& path);

// ---- embeddings ----------------------------------------------------------

class EmbeddingTable {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  EmbeddingTable() = default;
  // `rows` holds words.size() × dim floats; PAD and UNK rows are prepended.
  EmbeddingTable(std::size_t dim, std::vector<std::string> words, std::vector<double> rows);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t vocab_size() const noexcept { return dim_ ? matrix_.size() / dim_ : 0; }
  std::size_t id(std::string_view word) const;
  bool contains(std::string_view word) const { return ids_.count(std::string(word)) != 0; }
  std::span<const double> row(std::size_t id) const;

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::size_t> ids_;
  std::vector<double> matrix_;
};

EmbeddingTable load_glove(const std::filesystem::path& path, std::size_t dim);

// ---- batching ------------------------------------------------------------

inline constexpr std::size_t kDefaultContextCap = 300;

struct Batch {
  std::size_t size = 0;
  std::size_t context_len = 0;
  std::size_t question_len = 0;
  std::vector<std::size_t> context_ids;   // size × context_len, PAD-filled
  std::vector<std::size_t> question_ids;  // size × question_len
  Tensor context_mask;                    // [size × context_len] of 0/1
  Tensor question_mask;                   // [size × question_len]
  std::vector<std::size_t> gold_starts;
  std::vector<std::size_t> gold_ends;
  std::vector<std::string> qids;
  std::vector<std::size_t> example_index;  // position in the source example list
};

struct BatchOptions {
  std::size_t batch_size = 40;
  std::size_t context_cap = kDefaultContextCap;
  std::optional<std::uint64_t> shuffle_seed;
  // Training drops examples without a usable gold span; evaluation keeps
  // them with gold = 0.
  bool require_gold = true;
};

struct BatchSet {
  std::vector<Batch> batches;
  std::size_t dropped = 0;
};

BatchSet build_batches(std::span<const QAExample> examples, const EmbeddingTable& table,
                       const BatchOptions& options);

// ---- statistics ----------------------------------------------------------

struct DatasetStats {
  static constexpr std::size_t kBuckets = 10;
  static constexpr std::size_t kAnswerBucketWidth = 5;
  static constexpr std::size_t kContextBucketWidth = 50;

  std::size_t example_count = 0;
  std::size_t answer_count = 0;  // examples with an aligned answer
  std::size_t answers_short = 0;
  std::size_t contexts_short = 0;
  std::size_t answer_threshold = 20;
  std::size_t context_threshold = 300;
  double answer_fraction = 0.0;   // answers with length < answer_threshold
  double context_fraction = 0.0;  // contexts with length < context_threshold
  std::array<std::size_t, kBuckets> answer_histogram{};
  std::array<std::size_t, kBuckets> context_histogram{};
};

DatasetStats dataset_stats(std::span<const QAExample> examples, std::size_t answer_threshold = 20,
                           std::size_t context_threshold = 300);

}  // namespace spanqa
