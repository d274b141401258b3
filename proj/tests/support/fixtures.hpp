#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spanqa/data.hpp"
#include "spanqa/random.hpp"

namespace spanqa::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

struct FixtureQuestion {
  std::string id;
  std::string question;
  // (text, answer_start in code points)
  std::vector<std::pair<std::string, std::size_t>> answers;
};

struct FixtureParagraph {
  std::string context;
  std::vector<FixtureQuestion> questions;
};

// SQuAD v1.1 JSON with a single article.
std::string squad_json(const std::vector<FixtureParagraph>& paragraphs);

// Code-point offset of the first occurrence of `needle` in `text`.
std::size_t char_offset(const std::string& text, const std::string& needle);

// GloVe text with one random vector per word.
std::string glove_text(const std::vector<std::string>& words, std::size_t dim, std::uint64_t seed);

// A learnable toy reading task: each context hides a "cue cue was ANSWER"
// sentence among filler sentences and the question repeats the cue words.
struct SyntheticOptions {
  std::size_t examples = 32;
  std::size_t dim = 50;
  std::size_t min_sentences = 4;
  std::size_t max_sentences = 7;
  std::uint64_t seed = 7;
};

struct SyntheticCorpus {
  std::string squad;
  std::string glove;
  std::vector<std::string> vocabulary;
};

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& options = {});

// Writes corpus files into `dir` and returns (squad path, glove path).
std::pair<std::filesystem::path, std::filesystem::path> write_corpus(const SyntheticCorpus& corpus,
                                                                     const std::filesystem::path& dir);

// Hand-written paragraphs with tricky tokenization: clock times, scores,
// possessives, quotes and capitalized names.
std::vector<FixtureParagraph> football_paragraphs();

struct MetricCase {
  std::string prediction;
  std::string truth;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int em = 0;
};

// Hand-scored prediction/answer pairs; fractions are stored as [num, den].
std::vector<MetricCase> load_metric_cases(const std::filesystem::path& path);

// Short answer-like strings mixing articles, punctuation, case and
// repeated words.
std::string random_answer(SplitMix& rng);

// Softmax of random logits. Every few draws the logits are rounded to a
// coarse grid so exact ties show up.
std::vector<double> random_distribution(std::size_t n, SplitMix& rng);

}  // namespace spanqa::test
