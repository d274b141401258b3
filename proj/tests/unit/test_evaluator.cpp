#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "fixtures.hpp"
#include "spanqa/errors.hpp"
#include "spanqa/evaluator.hpp"

using namespace spanqa;
using doctest::Approx;

namespace {

QAExample make_example(std::string qid, std::string question, std::vector<std::string> answers) {
  QAExample ex;
  ex.qid = std::move(qid);
  ex.question = std::move(question);
  ex.answer_texts = std::move(answers);
  return ex;
}

using Tokens = std::vector<std::string>;

}  // namespace

TEST_CASE("normalize_answer") {
  CHECK(normalize_answer("The Late Show") == Tokens{"late", "show"});
  CHECK(normalize_answer("").empty());
  CHECK(normalize_answer("the most giving Super Bowl ever") == Tokens{"most", "giving", "super", "bowl", "ever"});
  CHECK(normalize_answer("  Denver,  the   Broncos! ") == Tokens{"denver", "broncos"});
  CHECK(normalize_answer("anthem") == Tokens{"anthem"});
}

TEST_CASE("hand-scored metric table") {
  const auto cases = test::load_metric_cases(SPANQA_TEST_DATA_DIR "/metric_cases.json");
  REQUIRE(cases.size() >= 10);
  for (const auto& c : cases) {
    CAPTURE(c.prediction);
    CAPTURE(c.truth);
    const auto m = f1_score(c.prediction, c.truth);
    CHECK(m.precision == Approx(c.precision).epsilon(1e-15));
    CHECK(m.recall == Approx(c.recall).epsilon(1e-15));
    CHECK(m.f1 == Approx(c.f1).epsilon(1e-15));
    CHECK(m.em == c.em);
    CHECK(em_score(c.prediction, c.truth) == c.em);
  }
}

TEST_CASE("f1 and em examples") {
  CHECK(f1_score("Denver Broncos", "Denver Broncos").f1 == 1.0);
  CHECK(f1_score("Carolina Panthers", "Denver Broncos").f1 == 0.0);
  const auto m = f1_score("giving super bowl ever", "the most giving Super Bowl ever");
  CHECK(m.precision == 1.0);
  CHECK(m.recall == Approx(0.8));
  CHECK(m.f1 == Approx(8.0 / 9.0));
  CHECK(em_score("Levi's Stadium", "Levi's Stadium") == 1);
  CHECK(em_score("stephen colbert", "The Late Show with Stephen Colbert") == 0);
  CHECK(em_score("the late show", "The Late Show") == 1);
  CHECK(f1_score("", "").f1 == 1.0);
  CHECK(f1_score("", "cat").f1 == 0.0);
  CHECK(f1_score("the", "cat").f1 == 0.0);
}

TEST_CASE("metric properties over random pairs") {
  SplitMix rng(2024);
  for (int i = 0; i < 10000; ++i) {
    const auto a = test::random_answer(rng);
    const auto b = test::random_answer(rng);
    CAPTURE(a);
    CAPTURE(b);
    const auto ab = f1_score(a, b);
    const auto ba = f1_score(b, a);
    REQUIRE(ab.f1 == ba.f1);
    REQUIRE(em_score(a, b) == em_score(b, a));
    REQUIRE(ab.f1 >= 0.0);
    REQUIRE(ab.f1 <= 1.0);
    if (ab.em == 1) REQUIRE(ab.f1 == 1.0);
    REQUIRE(em_score(a, a) == 1);
    REQUIRE(f1_score(a, a).f1 == 1.0);
  }
}

TEST_CASE("categorize_question") {
  CHECK(categorize_question("Who had a 12-yard rush on this drive?") == QuestionCategory::Who);
  CHECK(categorize_question("How much time was left in the quarter?") == QuestionCategory::How);
  CHECK(categorize_question("Name the stadium.") == QuestionCategory::Other);
  CHECK(categorize_question("WHEN did it start?") == QuestionCategory::When);
  // Whole words only.
  CHECK(categorize_question("Somewhat whole showed nothing.") == QuestionCategory::Other);
  // Fixed order decides questions with two keywords.
  CHECK(categorize_question("What happened when the lights went out?") == QuestionCategory::When);
  CHECK(categorize_question("Which team, and how?") == QuestionCategory::Which);
  CHECK(category_name(QuestionCategory::Other) == "Other");
}

TEST_CASE("evaluate") {
  SUBCASE("max over ground truths") {
    const std::vector<QAExample> ex{make_example("q1", "Who?", {"a", "b", "c"})};
    const auto r = evaluate(std::map<std::string, std::string>{{"q1", "b"}}, ex);
    CHECK(r.em == 100.0);
    CHECK(r.f1 == 100.0);
  }
  SUBCASE("scaling") {
    const std::vector<QAExample> ex{make_example("q1", "Who?", {"red blue"})};
    const auto r = evaluate(std::map<std::string, std::string>{{"q1", "red green"}}, ex);
    CHECK(r.f1 == Approx(50.0));
    CHECK(r.em == 0.0);
  }
  SUBCASE("two questions") {
    const std::vector<QAExample> ex{make_example("q1", "Who?", {"red"}), make_example("q2", "Who?", {"blue"})};
    const auto r = evaluate(std::map<std::string, std::string>{{"q1", "red"}, {"q2", "green"}}, ex);
    CHECK(r.em == 50.0);
    CHECK(r.total == 2);
  }
  SUBCASE("missing predictions score zero and are counted") {
    const std::vector<QAExample> ex{make_example("q1", "Who?", {"red"}), make_example("q2", "When?", {"blue"})};
    const auto r = evaluate(std::map<std::string, std::string>{{"q1", "red"}}, ex);
    CHECK(r.missing == 1);
    CHECK(r.total == 2);
    CHECK(r.em == 50.0);
    CHECK(r.categories.at(QuestionCategory::When).f1 == 0.0);
    CHECK(format_report(r).find("missing predictions: 1") != std::string::npos);
  }
  SUBCASE("duplicate prediction ids are rejected") {
    const std::vector<QAExample> ex{make_example("q1", "Who?", {"red"})};
    const std::vector<Prediction> preds{{"q1", "red"}, {"q1", "blue"}};
    CHECK_THROWS_AS(evaluate(preds, ex), InputError);
  }
  SUBCASE("empty input") {
    const auto r = evaluate(std::map<std::string, std::string>{}, std::span<const QAExample>{});
    CHECK(r.total == 0);
    CHECK(r.f1 == 0.0);
  }
}

TEST_CASE("evaluate is invariant to example and answer order") {
  static const char* questions[] = {"Who won?", "When did it end?", "Where was it?", "Why?", "What score?",
                                    "Which team?", "How long?", "Name it."};
  SplitMix rng(99);
  std::vector<QAExample> ex;
  std::map<std::string, std::string> preds;
  for (int i = 0; i < 60; ++i) {
    std::vector<std::string> answers;
    for (std::size_t k = 0, n = 1 + rng.below(3); k < n; ++k) answers.push_back(test::random_answer(rng));
    const std::string qid = "q" + std::to_string(i);
    ex.push_back(make_example(qid, questions[rng.below(std::size(questions))], answers));
    if (rng.uniform() < 0.9) preds[qid] = test::random_answer(rng);
  }
  const auto base = evaluate(preds, ex);
  std::size_t counted = 0;
  for (const auto& [cat, s] : base.categories) counted += s.count;
  CHECK(counted == base.total);

  for (int trial = 0; trial < 5; ++trial) {
    auto shuffled = ex;
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
    for (auto& e : shuffled) std::reverse(e.answer_texts.begin(), e.answer_texts.end());
    const auto r = evaluate(preds, shuffled);
    CHECK(r.f1 == base.f1);
    CHECK(r.em == base.em);
    CHECK(r.missing == base.missing);
    for (const auto& [cat, s] : base.categories) {
      CHECK(r.categories.at(cat).f1 == s.f1);
      CHECK(r.categories.at(cat).count == s.count);
    }
  }
}

TEST_CASE("prediction files") {
  const std::map<std::string, std::string> preds{{"b", "Stephen Colbert"}, {"a", "Beyoncé"}, {"c", ""}};
  const auto text = predictions_json(preds);
  CHECK(text.find("\"a\"") < text.find("\"b\""));
  CHECK(text.find("\"b\"") < text.find("\"c\""));
  const auto parsed = parse_predictions(text);
  REQUIRE(parsed.size() == 3);
  std::map<std::string, std::string> back;
  for (const auto& p : parsed) back[p.qid] = p.text;
  CHECK(back == preds);

  CHECK_THROWS_AS(parse_predictions(R"({"q1": "a", "q1": "b"})"), InputError);
  CHECK_THROWS_AS(parse_predictions("[1, 2]"), SchemaError);
  CHECK_THROWS_AS(parse_predictions(R"({"q1": 3})"), SchemaError);
  CHECK_THROWS_AS(parse_predictions("{"), ParseError);
  CHECK(parse_predictions("{}").empty());
}
