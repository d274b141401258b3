#include "spanqa/gradient_suite.hpp"

#include <cstdio>
#include <functional>

#include "spanqa/errors.hpp"
#include "spanqa/random.hpp"

namespace spanqa {

namespace {

// Values in ±[0.1, 1] keep relu/row_max inputs clear of their kinks.
Tensor random_tensor(Shape shape, SplitMix& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_values()) {
    const double mag = rng.uniform(0.1, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

Tensor positive_tensor(Shape shape, SplitMix& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_values()) v = rng.uniform(0.1, 1.0);
  return t;
}

// Contracts an op's output with fixed random weights so every output
// coordinate contributes a distinct amount.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  SplitMix rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng)));
}

}  // namespace

TinyProblem make_tiny_problem(std::uint64_t seed) {
  TinyProblem p;
  p.config.hidden_size = 4;
  p.config.embedding_dim = 6;
  p.config.dropout_rate = 0.0;
  p.config.seed = seed;

  SplitMix rng(mix_seed(seed, 17));
  std::vector<std::string> words;
  std::vector<double> rows;
  for (int w = 0; w < 12; ++w) {
    words.push_back("w" + std::to_string(w));
    for (int k = 0; k < 6; ++k) rows.push_back(rng.uniform(-1.0, 1.0));
  }
  p.table = EmbeddingTable(6, std::move(words), std::move(rows));

  Batch& b = p.batch;
  b.size = 2;
  b.context_len = 7;
  b.question_len = 5;
  const std::size_t clen[] = {7, 5}, qlen[] = {5, 3};
  std::vector<double> cmask(14, 0.0), qmask(10, 0.0);
  b.context_ids.assign(14, EmbeddingTable::kPad);
  b.question_ids.assign(10, EmbeddingTable::kPad);
  for (std::size_t e = 0; e < 2; ++e) {
    for (std::size_t t = 0; t < clen[e]; ++t) {
      b.context_ids[e * 7 + t] = 2 + rng.below(12);
      cmask[e * 7 + t] = 1.0;
    }
    for (std::size_t t = 0; t < qlen[e]; ++t) {
      b.question_ids[e * 5 + t] = 2 + rng.below(12);
      qmask[e * 5 + t] = 1.0;
    }
    b.qids.push_back("tiny" + std::to_string(e));
    b.example_index.push_back(e);
  }
  b.context_ids[3] = EmbeddingTable::kUnk;
  b.context_mask = Tensor({2, 7}, std::move(cmask));
  b.question_mask = Tensor({2, 5}, std::move(qmask));
  b.gold_starts = {2, 1};
  b.gold_ends = {4, 3};
  p.params = init_params(p.config);
  // Nonzero biases so their gradients are not trivially structured.
  for (auto& [name, t] : p.params) {
    if (name.ends_with(".b")) {
      for (double& v : t.mutable_values()) v += rng.uniform(-0.2, 0.2);
    }
  }
  return p;
}

Tensor flatten_params(const ModelParams& params) {
  std::vector<double> flat;
  for (const auto& [name, t] : params) flat.insert(flat.end(), t.values().begin(), t.values().end());
  const std::size_t n = flat.size();
  return Tensor({n}, std::move(flat));
}

ModelParams unflatten_params(const Tensor& flat, const ModelParams& like) {
  ModelParams out;
  std::size_t offset = 0;
  for (const auto& [name, t] : like) {
    out.emplace(name, reshape(slice(flat, 0, offset, offset + t.size()), t.shape()));
    offset += t.size();
  }
  return out;
}

std::vector<GradCheckCase> run_op_gradchecks(std::uint64_t seed) {
  SplitMix rng(mix_seed(seed, 1));
  std::vector<GradCheckCase> cases;
  auto check = [&](const std::string& name, const Tensor& x, const std::function<Tensor(const Tensor&)>& op) {
    const std::uint64_t wseed = rng.next();
    const auto r = grad_check([&](const Tensor& v) { return weighted_sum(op(v), wseed); }, x, kGradCheckEps);
    cases.push_back({name, r.max_rel_error, kOpGradTolerance, r.max_abs_error, {}});
  };

  const Tensor A = random_tensor({3, 4}, rng), B = random_tensor({4, 5}, rng);
  check("matmul (left)", A, [&](const Tensor& v) { return matmul(v, B); });
  check("matmul (right)", B, [&](const Tensor& v) { return matmul(A, v); });
  check("transpose", A, [](const Tensor& v) { return transpose(v); });

  const Tensor X = random_tensor({3, 4}, rng), Y = random_tensor({3, 4}, rng);
  const Tensor s = Tensor::scalar(0.7);
  for (auto op : {Elementwise::Add, Elementwise::Sub, Elementwise::Mul}) {
    static constexpr const char* names[] = {"add", "sub", "mul"};
    const std::string n = names[static_cast<int>(op)];
    check(n + " (left)", X, [&](const Tensor& v) { const Tensor a[] = {v, Y}; return elementwise(op, a); });
    check(n + " (right)", Y, [&](const Tensor& v) { const Tensor a[] = {X, v}; return elementwise(op, a); });
    check(n + " (scalar)", s, [&](const Tensor& v) { const Tensor a[] = {X, v}; return elementwise(op, a); });
  }
  check("tanh", X, [](const Tensor& v) { return tanh(v); });
  check("sigmoid", X, [](const Tensor& v) { return sigmoid(v); });
  check("relu", X, [](const Tensor& v) { return relu(v); });

  const Tensor row = random_tensor({4}, rng);
  check("add_rowvec (matrix)", X, [&](const Tensor& v) { return add_rowvec(v, row); });
  check("add_rowvec (vector)", row, [&](const Tensor& v) { return add_rowvec(X, v); });
  check("mul_rowvec (matrix)", X, [&](const Tensor& v) { return mul_rowvec(v, row); });
  check("mul_rowvec (vector)", row, [&](const Tensor& v) { return mul_rowvec(X, v); });

  const Tensor C3 = random_tensor({2, 3, 4}, rng), D3 = random_tensor({2, 2, 4}, rng);
  check("concat", C3, [&](const Tensor& v) { return concat({v, D3, v}, 1); });
  check("slice", C3, [](const Tensor& v) { return slice(v, 1, 1, 3); });
  check("reshape", C3, [](const Tensor& v) { return reshape(v, {6, 4}); });
  check("sum", X, [](const Tensor& v) { return sum(v); });
  check("row_max", X, [](const Tensor& v) { return row_max(v); });

  const Tensor mask({3, 4}, std::vector<double>{1, 1, 0, 1, 1, 0, 0, 0, 1, 1, 1, 1});
  check("masked_softmax", X, [&](const Tensor& v) { return masked_softmax(v, mask); });
  const std::vector<std::size_t> gold = {3, 0, 2};
  check("cross_entropy", positive_tensor({3, 4}, rng),
        [&](const Tensor& v) { return cross_entropy(v, gold, mask); });
  check("dropout", X, [](const Tensor& v) { return dropout(v, 0.4, true, 99); });
  // A node consumed twice must accumulate both contributions.
  check("shared node", X, [](const Tensor& v) { return mul(tanh(v), v); });

  const Tensor xz = random_tensor({3, 2, 8}, rng), state = random_tensor({3, 4}, rng);
  const Tensor W_h = random_tensor({2, 8}, rng);
  const Tensor keep({3}, std::vector<double>{1, 0, 1});
  check("lstm_step (inputs)", xz, [&](const Tensor& v) { return lstm_step(v, 1, state, W_h, keep); });
  check("lstm_step (state)", state, [&](const Tensor& v) { return lstm_step(xz, 1, v, W_h, keep); });
  check("lstm_step (recurrent weights)", W_h, [&](const Tensor& v) { return lstm_step(xz, 0, state, v, keep); });

  // Composite layers, checked with respect to their weights and inputs.
  const Tensor seq = random_tensor({2, 4, 3}, rng);
  const Tensor seq_mask({2, 4}, std::vector<double>{1, 1, 1, 1, 1, 1, 0, 0});
  const LstmWeights w{random_tensor({8, 5}, rng), random_tensor({8}, rng)};
  check("lstm (weights)", w.W, [&](const Tensor& v) { return lstm(seq, {v, w.b}, seq_mask, false); });
  check("lstm (inputs, reversed)", seq, [&](const Tensor& v) { return lstm(v, w, seq_mask, true); });

  const Tensor H = random_tensor({2, 4, 2}, rng), U = random_tensor({2, 3, 2}, rng);
  const Tensor w_sim = random_tensor({6}, rng);
  const Tensor qmask({2, 3}, std::vector<double>{1, 1, 1, 1, 1, 0});
  check("bidaf_attention (context)", H, [&](const Tensor& v) { return bidaf_attention(v, U, w_sim, seq_mask, qmask); });
  check("bidaf_attention (question)", U, [&](const Tensor& v) { return bidaf_attention(H, v, w_sim, seq_mask, qmask); });
  check("bidaf_attention (w_sim)", w_sim, [&](const Tensor& v) { return bidaf_attention(H, U, v, seq_mask, qmask); });
  return cases;
}

std::string flat_param_name(const ModelParams& params, std::size_t index) {
  std::size_t offset = 0;
  for (const auto& [name, t] : params) {
    if (index < offset + t.size()) return name + "[" + std::to_string(index - offset) + "]";
    offset += t.size();
  }
  throw IndexError("flat parameter index " + std::to_string(index) + " out of range");
}

GradCheckResult model_grad_check(std::uint64_t seed) {
  const TinyProblem p = make_tiny_problem(seed);
  const auto f = [&](const Tensor& flat) {
    const ModelParams params = unflatten_params(flat, p.params);
    const auto out = forward(p.batch, params, p.table, p.config, false);
    return loss(out, p.batch.gold_starts, p.batch.gold_ends, p.batch.context_mask);
  };
  return grad_check(f, flatten_params(p.params), kGradCheckEps);
}

GradCheckCase run_model_gradcheck(std::uint64_t seed) {
  const auto r = model_grad_check(seed);
  char buf[160];
  std::snprintf(buf, sizeof buf, "worst %s analytic %.3e numeric %.3e",
                flat_param_name(make_tiny_problem(seed).params, r.worst_index).c_str(), r.analytic, r.numeric);
  return {"end-to-end model loss", r.max_rel_error, kModelGradTolerance, r.max_abs_error, buf};
}

}  // namespace spanqa
