#include "fixtures.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "spanqa/random.hpp"

namespace spanqa::test {

namespace fs = std::filesystem;

TempDir::TempDir() {
  static std::uint64_t counter = 0;
  const auto stamp = static_cast<std::uint64_t>(reinterpret_cast<std::uintptr_t>(this)) ^ ++counter;
  for (std::uint64_t attempt = 0;; ++attempt) {
    char name[64];
    std::snprintf(name, sizeof name, "spanqa-test-%016llx",
                  static_cast<unsigned long long>(splitmix64(stamp + attempt * 0x9e37)));
    path_ = fs::temp_directory_path() / name;
    if (fs::create_directory(path_)) break;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string squad_json(const std::vector<FixtureParagraph>& paragraphs) {
  nlohmann::json paras = nlohmann::json::array();
  for (const auto& p : paragraphs) {
    nlohmann::json qas = nlohmann::json::array();
    for (const auto& q : p.questions) {
      nlohmann::json answers = nlohmann::json::array();
      for (const auto& [text, start] : q.answers) answers.push_back({{"text", text}, {"answer_start", start}});
      qas.push_back({{"id", q.id}, {"question", q.question}, {"answers", answers}});
    }
    paras.push_back({{"context", p.context}, {"qas", qas}});
  }
  nlohmann::json doc = {{"version", "1.1"},
                        {"data", nlohmann::json::array({{{"title", "fixture"}, {"paragraphs", paras}}})}};
  return doc.dump();
}

std::size_t char_offset(const std::string& text, const std::string& needle) {
  const auto byte = text.find(needle);
  if (byte == std::string::npos) throw std::runtime_error("'" + needle + "' not in fixture text");
  std::size_t cps = 0;
  for (std::size_t i = 0; i < byte; ++i) {
    if ((static_cast<unsigned char>(text[i]) & 0xC0) != 0x80) ++cps;
  }
  return cps;
}

std::string glove_text(const std::vector<std::string>& words, std::size_t dim, std::uint64_t seed) {
  SplitMix rng(seed);
  std::string out;
  char buf[32];
  for (const auto& w : words) {
    out += w;
    for (std::size_t k = 0; k < dim; ++k) {
      std::snprintf(buf, sizeof buf, " %.6f", rng.uniform(-1.0, 1.0));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

namespace {

std::string capitalize(std::string w) {
  if (!w.empty()) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

std::vector<std::string> pseudo_words(std::size_t n, SplitMix& rng) {
  static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st"};
  static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  std::vector<std::string> words;
  std::unordered_map<std::string, bool> seen;
  while (words.size() < n) {
    std::string w;
    const std::size_t syllables = 2 + rng.below(2);
    for (std::size_t s = 0; s < syllables; ++s) {
      w += onsets[rng.below(std::size(onsets))];
      w += vowels[rng.below(std::size(vowels))];
    }
    if (!seen[w]) {
      seen[w] = true;
      words.push_back(w);
    }
  }
  return words;
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& options) {
  SplitMix rng(options.seed);
  const auto filler = pseudo_words(300, rng);
  static const char* wh[] = {"what", "who", "when", "where", "which", "how", "why"};

  std::vector<FixtureParagraph> paragraphs;
  for (std::size_t e = 0; e < options.examples; ++e) {
    auto word = [&] { return filler[rng.below(filler.size())]; };
    const std::size_t sentences =
        options.min_sentences + rng.below(options.max_sentences - options.min_sentences + 1);
    const std::size_t target = rng.below(sentences);
    const std::string cue1 = word(), cue2 = word();

    std::string context, answer;
    for (std::size_t s = 0; s < sentences; ++s) {
      if (!context.empty()) context += ' ';
      if (s == target) {
        const std::size_t len = 1 + rng.below(4);
        for (std::size_t k = 0; k < len; ++k) {
          std::string w = word();
          if (rng.uniform() < 0.4) w = capitalize(w);
          answer += (k ? " " : "") + w;
        }
        context += capitalize(cue1) + " " + cue2 + " was ";
        const std::size_t start = context.size();
        context += answer + ".";
        FixtureQuestion q;
        q.id = "syn" + std::to_string(e);
        q.question = capitalize(wh[rng.below(std::size(wh))]) + " " + cue1 + " " + cue2 + "?";
        q.answers = {{answer, start}, {answer, start}};
        paragraphs.push_back({});
        paragraphs.back().questions.push_back(q);
      } else {
        const std::size_t len = 6 + rng.below(7);
        for (std::size_t k = 0; k < len; ++k) context += (k ? " " : "") + (k ? word() : capitalize(word()));
        context += ".";
      }
    }
    paragraphs.back().context = context;
  }

  std::vector<std::string> vocab = filler;
  for (const char* w : wh) vocab.push_back(w);
  vocab.push_back("was");
  vocab.push_back(".");
  vocab.push_back("?");

  SyntheticCorpus corpus;
  corpus.squad = squad_json(paragraphs);
  corpus.glove = glove_text(vocab, options.dim, mix_seed(options.seed, 1));
  corpus.vocabulary = std::move(vocab);
  return corpus;
}

std::pair<fs::path, fs::path> write_corpus(const SyntheticCorpus& corpus, const fs::path& dir) {
  const auto squad = dir / "train.json", glove = dir / "glove.txt";
  write_text(squad, corpus.squad);
  write_text(glove, corpus.glove);
  return {squad, glove};
}

std::vector<FixtureParagraph> football_paragraphs() {
  std::vector<FixtureParagraph> ps(3);

  ps[0].context =
      "After a long reception on the left side, Stewart ran for 12 yards and set up Gano's 39-yard field goal.";
  ps[0].questions.push_back({"fb-rush", "Who had a 12-yard rush on this drive?",
                             {{"Stewart", char_offset(ps[0].context, "Stewart")}}});

  ps[1].context =
      "Jonathan Stewart scored from one yard out, making it 10-7 with 11:28 left in the second quarter.";
  ps[1].questions.push_back({"fb-clock", "How much time was left in the quarter when Stewart scored?",
                             {{"11:28", char_offset(ps[1].context, "11:28")}}});
  ps[1].questions.push_back({"fb-score", "What was the score after the touchdown?",
                             {{"10-7", char_offset(ps[1].context, "10-7")}}});

  ps[2].context =
      "The host committee promised to be \"the most giving Super Bowl ever\" and CBS followed the game with "
      "The Late Show with Stephen Colbert.";
  ps[2].questions.push_back({"fb-vow", "What did the committee promise to be?",
                             {{"the most giving Super Bowl ever", char_offset(ps[2].context, "the most giving")},
                              {"most giving Super Bowl ever", char_offset(ps[2].context, "most giving")}}});
  ps[2].questions.push_back({"fb-show", "Which show followed the game?",
                             {{"The Late Show with Stephen Colbert", char_offset(ps[2].context, "The Late Show")}}});
  return ps;
}

std::vector<MetricCase> load_metric_cases(const fs::path& path) {
  const auto doc = nlohmann::json::parse(read_text(path));
  const auto frac = [](const nlohmann::json& f) { return f.at(0).get<double>() / f.at(1).get<double>(); };
  std::vector<MetricCase> out;
  for (const auto& c : doc) {
    out.push_back({c.at("prediction").get<std::string>(), c.at("truth").get<std::string>(), frac(c.at("precision")),
                   frac(c.at("recall")), frac(c.at("f1")), c.at("em").get<int>()});
  }
  return out;
}

std::string random_answer(SplitMix& rng) {
  static const char* words[] = {"the", "a", "an", "The", "Super", "bowl", "Bowl", "ever", "giving", "most",
                                "cat", "Cat", "11:28", "10-7", "Denver", "show", "late", "colbert", "é", "x"};
  static const char* joiners[] = {" ", " ", " ", "  ", ", ", ". ", "-", "\t", "!"};
  std::string s;
  const std::size_t n = rng.below(7);
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += joiners[rng.below(std::size(joiners))];
    s += words[rng.below(std::size(words))];
  }
  if (rng.uniform() < 0.2) s += "?";
  return s;
}

std::vector<double> random_distribution(std::size_t n, SplitMix& rng) {
  const double scale = rng.uniform(0.1, 6.0);
  const bool coarse = rng.below(4) == 0;
  std::vector<double> p(n);
  double total = 0.0;
  for (double& v : p) {
    double logit = rng.uniform(-scale, scale);
    if (coarse) logit = std::round(logit);
    v = std::exp(logit);
    total += v;
  }
  for (double& v : p) v /= total;
  return p;
}

}  // namespace spanqa::test
