#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spanqa/data.hpp"

namespace spanqa {

enum class QuestionCategory { Who, When, Where, Why, What, Which, How, Other };

inline constexpr std::array<QuestionCategory, 8> kAllCategories = {
    QuestionCategory::Who,   QuestionCategory::When, QuestionCategory::Where, QuestionCategory::Why,
    QuestionCategory::What,  QuestionCategory::Which, QuestionCategory::How, QuestionCategory::Other};

std::string_view category_name(QuestionCategory c);

struct MatchStats {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int em = 0;
};

// Official SQuAD normalization: lower case, strip ASCII punctuation, drop
// the articles a/an/the, split on whitespace.
std::vector<std::string> normalize_answer(std::string_view text);

// Token-multiset overlap. Two empty answers match perfectly; one empty
// answer scores 0.
MatchStats f1_score(std::string_view prediction, std::string_view truth);
int em_score(std::string_view prediction, std::string_view truth);

// First keyword of who/when/where/why/what/which/how (in that order) present
// as a whole word, case-insensitively.
QuestionCategory categorize_question(std::string_view question);

struct CategoryScore {
  double f1 = 0.0;  // percent
  double em = 0.0;  // percent
  std::size_t count = 0;
};

struct EvalReport {
  double f1 = 0.0;  // percent
  double em = 0.0;  // percent
  std::size_t total = 0;
  std::size_t missing = 0;
  std::map<QuestionCategory, CategoryScore> categories;
};

struct Prediction {
  std::string qid;
  std::string text;
};

// Max over each question's ground truths; unanswered questions score 0 and
// are counted in `missing`. Duplicate prediction ids are rejected.
EvalReport evaluate(std::span<const Prediction> predictions, std::span<const QAExample> examples);
EvalReport evaluate(const std::map<std::string, std::string>& predictions, std::span<const QAExample> examples);

// {qid: answer} JSON. Parsing rejects duplicate keys.
std::vector<Prediction> parse_predictions(std::string_view json_text);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);
std::string predictions_json(const std::map<std::string, std::string>& predictions);

std::string format_report(const EvalReport& report);

}  // namespace spanqa
