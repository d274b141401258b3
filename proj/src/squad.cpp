#include <fstream>
#include <sstream>

#include "json.hpp"
#include "spanqa/data.hpp"
#include "spanqa/errors.hpp"

namespace spanqa {

using nlohmann::json;

namespace {

const json& field(const json& obj, const char* name, const std::string& where) {
  if (!obj.is_object()) throw SchemaError(where + ": expected an object");
  auto it = obj.find(name);
  if (it == obj.end()) throw SchemaError(where + ": missing field '" + name + "'");
  return *it;
}

std::string string_field(const json& obj, const char* name, const std::string& where) {
  const json& v = field(obj, name, where);
  if (!v.is_string()) throw SchemaError(where + ": field '" + name + "' must be a string");
  return v.get<std::string>();
}

const json& array_field(const json& obj, const char* name, const std::string& where) {
  const json& v = field(obj, name, where);
  if (!v.is_array()) throw SchemaError(where + ": field '" + name + "' must be an array");
  return v;
}

// SQuAD ids may be strings or (in hand-made files) integers.
std::string id_field(const json& obj, const std::string& where) {
  const json& v = field(obj, "id", where);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw SchemaError(where + ": field 'id' must be a string");
}

}  // namespace

TokenSpan align_answer(std::span<const Token> context_tokens, std::string_view context,
                       std::string_view answer_text, std::size_t answer_start_byte) {
  const std::size_t begin = answer_start_byte;
  const std::size_t end = begin + answer_text.size();
  if (answer_text.empty() || end > context.size()) {
    throw AlignmentError("answer at byte " + std::to_string(begin) + " (length " +
                         std::to_string(answer_text.size()) + ") is outside the context");
  }
  if (context.substr(begin, answer_text.size()) != answer_text) {
    throw AlignmentError("answer text does not occur at byte " + std::to_string(begin));
  }
  std::optional<std::size_t> first, last;
  for (std::size_t i = 0; i < context_tokens.size(); ++i) {
    const auto& t = context_tokens[i];
    if (t.end > begin && t.begin < end) {
      if (!first) first = i;
      last = i;
    }
  }
  if (!first) throw AlignmentError("no token covers answer '" + std::string(answer_text) + "'");
  return {*first, *last};
}

SquadData parse_squad(std::string_view json_text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(source + ": " + e.what());
  }
  SquadData out;
  const json& articles = array_field(doc, "data", source);
  for (std::size_t a = 0; a < articles.size(); ++a) {
    const std::string at = source + ": data[" + std::to_string(a) + "]";
    const json& paragraphs = array_field(articles[a], "paragraphs", at);
    for (std::size_t p = 0; p < paragraphs.size(); ++p) {
      const std::string pt = at + ".paragraphs[" + std::to_string(p) + "]";
      const std::string context = string_field(paragraphs[p], "context", pt);
      const auto context_tokens = tokenize(context);
      const auto cp_offsets = codepoint_offsets(context);
      const json& qas = array_field(paragraphs[p], "qas", pt);
      for (std::size_t q = 0; q < qas.size(); ++q) {
        const std::string qt = pt + ".qas[" + std::to_string(q) + "]";
        QAExample ex;
        ex.qid = id_field(qas[q], qt);
        ex.question = string_field(qas[q], "question", qt);
        ex.context = context;
        ex.context_tokens = context_tokens;
        ex.question_tokens = tokenize(ex.question);
        const json& answers = array_field(qas[q], "answers", qt);
        if (answers.empty()) throw SchemaError(qt + ": 'answers' is empty");
        std::optional<std::size_t> first_start;
        for (std::size_t k = 0; k < answers.size(); ++k) {
          const std::string kt = qt + ".answers[" + std::to_string(k) + "]";
          ex.answer_texts.push_back(string_field(answers[k], "text", kt));
          const json& start = field(answers[k], "answer_start", kt);
          if (!start.is_number_integer() || start.get<long long>() < 0) {
            throw SchemaError(kt + ": field 'answer_start' must be a non-negative integer");
          }
          if (k == 0) first_start = start.get<std::size_t>();
        }
        // answer_start counts code points, not bytes.
        try {
          if (*first_start >= cp_offsets.size()) throw AlignmentError("answer_start past end of context");
          ex.gold_span = align_answer(ex.context_tokens, ex.context, ex.answer_texts.front(),
                                      cp_offsets[*first_start]);
        } catch (const AlignmentError&) {
          ++out.alignment_failures;
        }
        out.examples.push_back(std::move(ex));
      }
    }
  }
  return out;
}

SquadData load_squad(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_squad(buf.str(), path.string());
}

}  // namespace spanqa
