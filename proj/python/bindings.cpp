#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "spanqa/checkpoint.hpp"
#include "spanqa/data.hpp"
#include "spanqa/errors.hpp"
#include "spanqa/evaluator.hpp"
#include "spanqa/gradient_suite.hpp"
#include "spanqa/span_decoder.hpp"
#include "spanqa/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace spanqa;

namespace {

py::tuple span_tuple(const SpanPrediction& p) { return py::make_tuple(p.start, p.end, p.score); }

py::dict config_dict(const ModelConfig& c) {
  py::dict d;
  d["hidden_size"] = c.hidden_size;
  d["dropout_rate"] = c.dropout_rate;
  d["embedding_dim"] = c.embedding_dim;
  d["encoder_layers"] = c.encoder_layers;
  d["context_cap"] = c.context_cap;
  d["seed"] = c.seed;
  return d;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d, cats;
  d["f1"] = r.f1;
  d["em"] = r.em;
  d["total"] = r.total;
  d["missing"] = r.missing;
  for (const auto& [cat, s] : r.categories) {
    py::dict c;
    c["f1"] = s.f1;
    c["em"] = s.em;
    c["count"] = s.count;
    cats[py::str(std::string(category_name(cat)))] = c;
  }
  d["categories"] = cats;
  return d;
}

// A trained checkpoint plus its embeddings, ready to answer questions.
class Predictor {
 public:
  Predictor(const fs::path& checkpoint, const std::optional<fs::path>& glove) {
    ckpt_ = load_checkpoint(checkpoint);
    table_ = load_glove(glove ? *glove : fs::path(ckpt_.glove_path), ckpt_.config.embedding_dim);
  }

  std::map<std::string, std::string> predict(const fs::path& data, std::optional<std::size_t> max_answer_len) const {
    const auto squad = load_squad(data);
    py::gil_scoped_release release;
    const SpanOptions span{max_answer_len.value_or(ckpt_.training.max_answer_len)};
    std::map<std::string, std::string> out;
    for (const auto& [qid, p] : predict_spans(squad.examples, ckpt_.params, table_, ckpt_.config, span)) {
      out[qid] = p.answer_text;
    }
    return out;
  }

  const Checkpoint& checkpoint() const { return ckpt_; }

 private:
  Checkpoint ckpt_;
  EmbeddingTable table_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of spanqa";
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.def("tokenize", [](const std::string& text) {
    std::vector<py::tuple> out;
    for (const auto& t : tokenize(text)) out.push_back(py::make_tuple(t.text, t.begin, t.end));
    return out;
  }, py::arg("text"), "Lowercased tokens as (text, begin_byte, end_byte).");

  m.def("normalize_answer", [](const std::string& s) { return normalize_answer(s); }, py::arg("text"));
  m.def("f1_score", [](const std::string& pred, const std::string& truth) {
    const auto s = f1_score(pred, truth);
    py::dict d;
    d["precision"] = s.precision;
    d["recall"] = s.recall;
    d["f1"] = s.f1;
    d["em"] = s.em;
    return d;
  }, py::arg("prediction"), py::arg("truth"));
  m.def("em_score", [](const std::string& pred, const std::string& truth) { return em_score(pred, truth); },
        py::arg("prediction"), py::arg("truth"));
  m.def("categorize_question",
        [](const std::string& q) { return std::string(category_name(categorize_question(q))); },
        py::arg("question"));

  m.def("smart_span_score", [](double ps, double pe, std::size_t s, std::size_t e) {
    return smart_span_score(ps, pe, s, e);
  }, py::arg("p_start"), py::arg("p_end"), py::arg("start"), py::arg("end"));
  m.def("best_span", [](const std::vector<double>& ps, const std::vector<double>& pe,
                        const std::vector<double>& mask, std::size_t max_len) {
    return span_tuple(best_span(ps, pe, mask, {max_len}));
  }, py::arg("p_start"), py::arg("p_end"), py::arg("mask") = std::vector<double>{}, py::arg("max_len") = 20,
     "(start, end, score) maximizing the length-penalized span score.");
  m.def("oracle_best_span", [](const std::vector<double>& ps, const std::vector<double>& pe,
                               const std::vector<double>& mask) {
    return span_tuple(oracle_best_span(ps, pe, mask));
  }, py::arg("p_start"), py::arg("p_end"), py::arg("mask") = std::vector<double>{});
  m.def("raw_product_span", [](const std::vector<double>& ps, const std::vector<double>& pe,
                               const std::vector<double>& mask, std::size_t max_len) {
    return span_tuple(raw_product_span(ps, pe, mask, max_len));
  }, py::arg("p_start"), py::arg("p_end"), py::arg("mask") = std::vector<double>{}, py::arg("max_len") = 20);

  m.def("dataset_stats", [](const fs::path& path) {
    const auto squad = load_squad(path);
    const auto s = dataset_stats(squad.examples);
    py::dict d;
    d["examples"] = s.example_count;
    d["aligned_answers"] = s.answer_count;
    d["alignment_failures"] = squad.alignment_failures;
    d["answer_fraction"] = s.answer_fraction;
    d["context_fraction"] = s.context_fraction;
    d["answer_histogram"] = std::vector<std::size_t>(s.answer_histogram.begin(), s.answer_histogram.end());
    d["context_histogram"] = std::vector<std::size_t>(s.context_histogram.begin(), s.context_histogram.end());
    return d;
  }, py::arg("path"));

  m.def("evaluate", [](const std::map<std::string, std::string>& predictions, const fs::path& data) {
    const auto squad = load_squad(data);
    return report_dict(evaluate(predictions, squad.examples));
  }, py::arg("predictions"), py::arg("data"));

  m.def("gradcheck", [](std::uint64_t seed) {
    auto cases = run_op_gradchecks(seed);
    cases.push_back(run_model_gradcheck(seed));
    std::vector<py::dict> out;
    for (const auto& c : cases) {
      py::dict d;
      d["name"] = c.name;
      d["max_rel_error"] = c.max_rel_error;
      d["tolerance"] = c.tolerance;
      d["max_abs_error"] = c.max_abs_error;
      d["passed"] = c.passed();
      out.push_back(d);
    }
    return out;
  }, py::arg("seed") = 0);

  m.def("default_param_count", [](std::size_t hidden, std::size_t embed_dim) {
    ModelConfig c;
    c.hidden_size = hidden;
    c.embedding_dim = embed_dim;
    return param_count(init_params(c));
  }, py::arg("hidden") = 150, py::arg("embed_dim") = 100);

  py::class_<Predictor>(m, "Predictor")
      .def(py::init<const fs::path&, const std::optional<fs::path>&>(), py::arg("checkpoint"),
           py::arg("glove") = std::nullopt)
      .def("predict", &Predictor::predict, py::arg("data"), py::arg("max_answer_len") = std::nullopt,
           "{qid: answer text} for every question in a SQuAD-format file.")
      .def_property_readonly("config", [](const Predictor& p) { return config_dict(p.checkpoint().config); })
      .def_property_readonly("iteration", [](const Predictor& p) { return p.checkpoint().iteration; })
      .def_property_readonly("param_count", [](const Predictor& p) { return param_count(p.checkpoint().params); });
}
