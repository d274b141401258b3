#include "spanqa/evaluator.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "spanqa/errors.hpp"

namespace spanqa {

using nlohmann::json;

namespace {

bool ascii_punct(unsigned char c) { return std::ispunct(c) != 0; }
bool ascii_space(unsigned char c) { return c == ' ' || (c >= '\t' && c <= '\r'); }

std::string lower_case(std::string_view text) {
  std::string s(text);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (c >= 'A' && c <= 'Z') {
      s[i] = static_cast<char>(c + 32);
    } else if (c == 0xC3 && i + 1 < s.size()) {
      // Latin-1 capitals U+00C0..U+00DE live at C3 80..C3 9E.
      const auto n = static_cast<unsigned char>(s[i + 1]);
      if (n >= 0x80 && n <= 0x9E && n != 0x97) s[i + 1] = static_cast<char>(n + 32);
      ++i;
    }
  }
  return s;
}

std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && ascii_space(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !ascii_space(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

struct Scored {
  double f1 = 0.0;
  int em = 0;
};

}  // namespace

std::string_view category_name(QuestionCategory c) {
  switch (c) {
    case QuestionCategory::Who: return "Who";
    case QuestionCategory::When: return "When";
    case QuestionCategory::Where: return "Where";
    case QuestionCategory::Why: return "Why";
    case QuestionCategory::What: return "What";
    case QuestionCategory::Which: return "Which";
    case QuestionCategory::How: return "How";
    case QuestionCategory::Other: return "Other";
  }
  return "Other";
}

std::vector<std::string> normalize_answer(std::string_view text) {
  std::string s = lower_case(text);
  s.erase(std::remove_if(s.begin(), s.end(), [](char c) { return ascii_punct(static_cast<unsigned char>(c)); }),
          s.end());
  auto tokens = words(s);
  std::erase_if(tokens, [](const std::string& t) { return t == "a" || t == "an" || t == "the"; });
  return tokens;
}

MatchStats f1_score(std::string_view prediction, std::string_view truth) {
  const auto pred = normalize_answer(prediction);
  const auto gold = normalize_answer(truth);
  MatchStats m;
  m.em = pred == gold ? 1 : 0;
  if (pred.empty() || gold.empty()) {
    const double v = pred.empty() && gold.empty() ? 1.0 : 0.0;
    m.precision = m.recall = m.f1 = v;
    return m;
  }
  std::unordered_map<std::string, long> counts;
  for (const auto& t : gold) ++counts[t];
  std::size_t overlap = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return m;
  m.precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  m.recall = static_cast<double>(overlap) / static_cast<double>(gold.size());
  m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

int em_score(std::string_view prediction, std::string_view truth) {
  return normalize_answer(prediction) == normalize_answer(truth) ? 1 : 0;
}

QuestionCategory categorize_question(std::string_view question) {
  std::set<std::string> present;
  std::string cur;
  for (char ch : lower_case(question)) {
    if (std::isalnum(static_cast<unsigned char>(ch)) || (static_cast<unsigned char>(ch) & 0x80)) {
      cur.push_back(ch);
    } else if (!cur.empty()) {
      present.insert(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) present.insert(std::move(cur));
  static constexpr std::pair<const char*, QuestionCategory> order[] = {
      {"who", QuestionCategory::Who},   {"when", QuestionCategory::When},   {"where", QuestionCategory::Where},
      {"why", QuestionCategory::Why},   {"what", QuestionCategory::What},   {"which", QuestionCategory::Which},
      {"how", QuestionCategory::How}};
  for (const auto& [word, cat] : order) {
    if (present.count(word)) return cat;
  }
  return QuestionCategory::Other;
}

EvalReport evaluate(std::span<const Prediction> predictions, std::span<const QAExample> examples) {
  std::unordered_map<std::string, const std::string*> by_id;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.qid, &p.text).second) throw InputError("duplicate prediction for question '" + p.qid + "'");
  }
  // Sum in qid order so the result does not depend on example order.
  std::vector<const QAExample*> order;
  for (const auto& ex : examples) order.push_back(&ex);
  std::stable_sort(order.begin(), order.end(), [](const QAExample* a, const QAExample* b) { return a->qid < b->qid; });

  EvalReport r;
  std::map<QuestionCategory, std::pair<double, double>> sums;
  double f1_sum = 0.0, em_sum = 0.0;
  for (const QAExample* ex : order) {
    Scored s;
    auto it = by_id.find(ex->qid);
    if (it == by_id.end()) {
      ++r.missing;
    } else {
      for (const auto& truth : ex->answer_texts) {
        const auto m = f1_score(*it->second, truth);
        s.f1 = std::max(s.f1, m.f1);
        s.em = std::max(s.em, m.em);
      }
    }
    ++r.total;
    f1_sum += s.f1;
    em_sum += s.em;
    const auto cat = categorize_question(ex->question);
    auto& [cf1, cem] = sums[cat];
    cf1 += s.f1;
    cem += s.em;
    ++r.categories[cat].count;
  }
  if (r.total) {
    r.f1 = 100.0 * f1_sum / static_cast<double>(r.total);
    r.em = 100.0 * em_sum / static_cast<double>(r.total);
  }
  for (auto& [cat, score] : r.categories) {
    score.f1 = 100.0 * sums[cat].first / static_cast<double>(score.count);
    score.em = 100.0 * sums[cat].second / static_cast<double>(score.count);
  }
  return r;
}

EvalReport evaluate(const std::map<std::string, std::string>& predictions, std::span<const QAExample> examples) {
  std::vector<Prediction> list;
  for (const auto& [qid, text] : predictions) list.push_back({qid, text});
  return evaluate(list, examples);
}

std::vector<Prediction> parse_predictions(std::string_view json_text) {
  std::set<std::string> seen;
  std::string duplicate;
  const json::parser_callback_t cb = [&](int depth, json::parse_event_t event, json& parsed) {
    if (event == json::parse_event_t::key && depth == 1) {
      const auto key = parsed.get<std::string>();
      if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
    }
    return true;
  };
  json doc;
  try {
    doc = json::parse(json_text, cb);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("predictions: ") + e.what());
  }
  if (!duplicate.empty()) throw InputError("duplicate prediction for question '" + duplicate + "'");
  if (!doc.is_object()) throw SchemaError("predictions: expected a JSON object of {qid: answer}");
  std::vector<Prediction> out;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!it.value().is_string()) throw SchemaError("predictions: answer for '" + it.key() + "' must be a string");
    out.push_back({it.key(), it.value().get<std::string>()});
  }
  return out;
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_predictions(buf.str());
}

std::string predictions_json(const std::map<std::string, std::string>& predictions) {
  json doc = json::object();
  for (const auto& [qid, text] : predictions) doc[qid] = text;
  return doc.dump(2, ' ', false, json::error_handler_t::replace) + "\n";
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-10s %8s %8s %8s\n", "Category", "F1", "EM", "Count");
  os << line;
  std::snprintf(line, sizeof line, "%-10s %8.2f %8.2f %8zu\n", "Total", report.f1, report.em, report.total);
  os << line;
  for (auto cat : kAllCategories) {
    auto it = report.categories.find(cat);
    if (it == report.categories.end()) continue;
    std::snprintf(line, sizeof line, "%-10s %8.2f %8.2f %8zu\n", std::string(category_name(cat)).c_str(),
                  it->second.f1, it->second.em, it->second.count);
    os << line;
  }
  if (report.missing) os << "missing predictions: " << report.missing << "\n";
  return os.str();
}

}  // namespace spanqa
