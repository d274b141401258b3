#include "spanqa/model.hpp"

#include <cmath>

#include "spanqa/errors.hpp"
#include "spanqa/random.hpp"

namespace spanqa {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tensor xavier(Shape shape, std::uint64_t seed) {
  const std::size_t fan_out = shape.size() == 2 ? shape[0] : 1;
  const std::size_t fan_in = shape.back();
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  SplitMix rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.mutable_values()) v = rng.uniform(-limit, limit);
  return t;
}

const Tensor& param(const ModelParams& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ConfigError("missing model parameter '" + name + "'");
  return it->second;
}

BiLstmLayer layer(const ModelParams& params, const std::string& prefix) {
  return {{param(params, prefix + ".fw.W"), param(params, prefix + ".fw.b")},
          {param(params, prefix + ".bw.W"), param(params, prefix + ".bw.b")}};
}

std::vector<std::size_t> prefix_lengths(const Tensor& mask, std::string_view what) {
  const std::size_t B = mask.dim(0), L = mask.dim(1);
  std::vector<std::size_t> lens(B, 0);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t n = 0;
    while (n < L && mask.at(b, n) != 0.0) ++n;
    for (std::size_t t = n; t < L; ++t) {
      if (mask.at(b, t) != 0.0) {
        throw DimensionError(std::string(what) + " mask row " + std::to_string(b) + " is not right-padded");
      }
    }
    if (n == 0) throw DegenerateMaskError(std::string(what) + " mask row " + std::to_string(b) + " is empty");
    lens[b] = n;
  }
  return lens;
}

// FC2(relu(FC1([G ; M]))) per position.
Tensor output_head(const Tensor& G, const Tensor& M, const ModelParams& params, const std::string& prefix,
                   const Tensor& mask, DropoutStream& dropout) {
  const std::size_t B = G.dim(0), L = G.dim(1);
  const Tensor x = concat({G, M}, 2);
  const std::size_t width = x.dim(2);
  const Tensor flat = dropout.apply(reshape(x, {B * L, width}));
  const Tensor hidden = relu(add_rowvec(matmul(flat, transpose(param(params, prefix + ".fc1.W"))),
                                        param(params, prefix + ".fc1.b")));
  const Tensor logits = add_rowvec(matmul(hidden, transpose(param(params, prefix + ".fc2.W"))),
                                   param(params, prefix + ".fc2.b"));
  std::vector<double> penalty(B * L);
  const auto m = mask.values();
  for (std::size_t i = 0; i < penalty.size(); ++i) penalty[i] = m[i] != 0.0 ? 0.0 : kMaskedLogit;
  return add(mul(reshape(logits, {B, L}), mask), Tensor({B, L}, std::move(penalty)));
}

}  // namespace

void ModelConfig::validate() const {
  if (hidden_size < 1) throw ConfigError("hidden size must be at least 1");
  if (embedding_dim < 1) throw ConfigError("embedding dim must be at least 1");
  if (!(dropout_rate >= 0.0) || dropout_rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (encoder_layers != 2) throw ConfigError("the encoder has exactly 2 layers");
  if (context_cap < 1) throw ConfigError("context cap must be at least 1");
}

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  const std::size_t h = config.hidden_size;
  ModelParams p;
  auto add_matrix = [&](const std::string& name, Shape shape) {
    p.emplace(name, xavier(std::move(shape), mix_seed(config.seed, fnv1a(name))));
  };
  auto add_lstm = [&](const std::string& prefix, std::size_t in) {
    for (const char* dir : {".fw", ".bw"}) {
      add_matrix(prefix + dir + ".W", {4 * h, h + in});
      Tensor b = Tensor::zeros({4 * h});
      auto bv = b.mutable_values();
      for (std::size_t k = h; k < 2 * h; ++k) bv[k] = 1.0;  // forget gate
      p.emplace(prefix + dir + ".b", std::move(b));
    }
  };
  auto add_head = [&](const std::string& prefix) {
    add_matrix(prefix + ".fc1.W", {h, 10 * h});
    p.emplace(prefix + ".fc1.b", Tensor::zeros({h}));
    add_matrix(prefix + ".fc2.W", {1, h});
    p.emplace(prefix + ".fc2.b", Tensor::zeros({1}));
  };
  add_lstm("encoder.l0", config.embedding_dim);
  add_lstm("encoder.l1", 2 * h);
  add_matrix("attention.w_sim", {6 * h});
  add_lstm("start_decoder", 8 * h);
  add_lstm("end_decoder", 10 * h);
  add_head("start_head");
  add_head("end_head");
  return p;
}

std::size_t param_count(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

ModelParams clone(const ModelParams& params) {
  ModelParams out;
  for (const auto& [name, t] : params) out.emplace(name, t.detach());
  return out;
}

ModelParams bind(Graph& graph, const ModelParams& params) {
  ModelParams out;
  for (const auto& [name, t] : params) out.emplace(name, graph.variable(t));
  return out;
}

Tensor DropoutStream::apply(const Tensor& x) {
  const std::uint64_t call = calls_++;
  if (!training_ || rate_ == 0.0) return x;
  return dropout(x, rate_, true, mix_seed(seed_, call));
}

Tensor embed(std::span<const std::size_t> ids, std::size_t rows, std::size_t cols, const EmbeddingTable& table) {
  if (ids.size() != rows * cols) {
    throw DimensionError("embed: " + std::to_string(ids.size()) + " ids for a " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " grid");
  }
  const std::size_t d = table.dim();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto row = table.row(ids[i]);
    std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return Tensor({rows, cols, d}, std::move(out));
}

Tensor lstm(const Tensor& inputs, const LstmWeights& w, const Tensor& mask, bool reverse) {
  if (inputs.rank() != 3) throw DimensionError("lstm: inputs must be [B x L x in], got " + to_string(inputs.shape()));
  const std::size_t B = inputs.dim(0), L = inputs.dim(1), in = inputs.dim(2);
  const std::size_t h = w.b.size() / 4;
  if (w.b.size() != 4 * h || w.W.shape() != Shape{4 * h, h + in}) {
    throw DimensionError("lstm: weights " + to_string(w.W.shape()) + " do not fit input width " +
                         std::to_string(in) + " and hidden " + std::to_string(h));
  }
  if (mask.shape() != Shape{B, L}) {
    throw DimensionError("lstm: mask " + to_string(mask.shape()) + " does not match inputs " +
                         to_string(inputs.shape()));
  }
  const Tensor Wt = transpose(w.W);
  const Tensor W_h = slice(Wt, 0, 0, h);
  const Tensor W_x = slice(Wt, 0, h, h + in);
  const Tensor xz =
      reshape(add_rowvec(matmul(reshape(inputs, {B * L, in}), W_x), w.b), {B, L, 4 * h});

  Tensor state = Tensor::zeros({B, 2 * h});
  std::vector<Tensor> outputs(L);
  for (std::size_t step = 0; step < L; ++step) {
    const std::size_t t = reverse ? L - 1 - step : step;
    std::vector<double> keep(B);
    for (std::size_t b = 0; b < B; ++b) keep[b] = mask.at(b, t) != 0.0 ? 1.0 : 0.0;
    const Tensor packed = lstm_step(xz, t, state, W_h, Tensor({B}, std::move(keep)));
    state = slice(packed, 1, 0, 2 * h);
    outputs[t] = reshape(slice(packed, 1, 2 * h, 3 * h), {B, 1, h});
  }
  return concat(outputs, 1);
}

Tensor bilstm(const Tensor& inputs, std::span<const BiLstmLayer> layers, const Tensor& mask,
              DropoutStream& dropout) {
  Tensor x = inputs;
  for (const auto& layer : layers) {
    const Tensor in = dropout.apply(x);
    x = concat({lstm(in, layer.forward, mask, false), lstm(in, layer.backward, mask, true)}, 2);
  }
  return x;
}

Tensor bidaf_attention(const Tensor& context, const Tensor& question, const Tensor& w_sim,
                       const Tensor& context_mask, const Tensor& question_mask) {
  if (context.rank() != 3 || question.rank() != 3 || context.dim(0) != question.dim(0) ||
      context.dim(2) != question.dim(2)) {
    throw DimensionError("bidaf_attention: context " + to_string(context.shape()) + " and question " +
                         to_string(question.shape()) + " are incompatible");
  }
  const std::size_t B = context.dim(0), Lc = context.dim(1), Lq = question.dim(1), d = context.dim(2);
  if (w_sim.size() != 3 * d) {
    throw DimensionError("bidaf_attention: w_sim " + to_string(w_sim.shape()) + " needs " +
                         std::to_string(3 * d) + " entries");
  }
  if (context_mask.shape() != Shape{B, Lc} || question_mask.shape() != Shape{B, Lq}) {
    throw DimensionError("bidaf_attention: masks " + to_string(context_mask.shape()) + "/" +
                         to_string(question_mask.shape()) + " do not match inputs");
  }
  const auto clen = prefix_lengths(context_mask, "context");
  const auto qlen = prefix_lengths(question_mask, "question");

  // S[i][j] = w_c·c_i + w_q·q_j + w_cq·(c_i ∘ q_j)
  const Tensor w = reshape(w_sim, {1, 3 * d});
  const Tensor w_c = transpose(slice(w, 1, 0, d));
  const Tensor w_q = transpose(slice(w, 1, d, 2 * d));
  const Tensor w_cq = slice(w, 1, 2 * d, 3 * d);

  std::vector<Tensor> rows;
  rows.reserve(B);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t lc = clen[b], lq = qlen[b];
    const Tensor H = reshape(slice(slice(context, 0, b, b + 1), 1, 0, lc), {lc, d});
    const Tensor U = reshape(slice(slice(question, 0, b, b + 1), 1, 0, lq), {lq, d});
    const Tensor S = add(add(matmul(matmul(H, w_c), Tensor::ones({1, lq})),
                             matmul(Tensor::ones({lc, 1}), transpose(matmul(U, w_q)))),
                         matmul(mul_rowvec(H, w_cq), transpose(U)));
    // context-to-question
    const Tensor a = masked_softmax(S, Tensor::ones({lc, lq}));
    const Tensor U_att = matmul(a, U);
    // question-to-context
    const Tensor beta = masked_softmax(reshape(row_max(S), {1, lc}), Tensor::ones({1, lc}));
    const Tensor h_att = matmul(beta, H);
    Tensor G = concat({H, U_att, mul(H, U_att), mul_rowvec(H, h_att)}, 1);
    if (lc < Lc) G = concat({G, Tensor::zeros({Lc - lc, 4 * d})}, 0);
    rows.push_back(reshape(G, {1, Lc, 4 * d}));
  }
  return concat(rows, 0);
}

DecoderOutput start_decoder(const Tensor& G, const ModelParams& params, const Tensor& mask,
                            DropoutStream& dropout) {
  const BiLstmLayer layers[] = {layer(params, "start_decoder")};
  Tensor M = bilstm(G, layers, mask, dropout);
  Tensor logits = output_head(G, M, params, "start_head", mask, dropout);
  return {std::move(M), std::move(logits)};
}

DecoderOutput end_decoder(const Tensor& G, const Tensor& start_states, const ModelParams& params,
                          const Tensor& mask, DropoutStream& dropout) {
  const BiLstmLayer layers[] = {layer(params, "end_decoder")};
  Tensor M = bilstm(concat({G, start_states}, 2), layers, mask, dropout);
  Tensor logits = output_head(G, M, params, "end_head", mask, dropout);
  return {std::move(M), std::move(logits)};
}

ForwardOutput forward(const Batch& batch, const ModelParams& params, const EmbeddingTable& table,
                      const ModelConfig& config, bool training, std::uint64_t dropout_seed) {
  if (table.dim() != config.embedding_dim) {
    throw ConfigError("embedding table width " + std::to_string(table.dim()) + " does not match config " +
                      std::to_string(config.embedding_dim));
  }
  DropoutStream dropout(config.dropout_rate, training, dropout_seed);
  const Tensor ctx = embed(batch.context_ids, batch.size, batch.context_len, table);
  const Tensor qst = embed(batch.question_ids, batch.size, batch.question_len, table);
  const BiLstmLayer encoder[] = {layer(params, "encoder.l0"), layer(params, "encoder.l1")};
  const Tensor H = bilstm(ctx, encoder, batch.context_mask, dropout);
  const Tensor U = bilstm(qst, encoder, batch.question_mask, dropout);
  Tensor G = bidaf_attention(H, U, param(params, "attention.w_sim"), batch.context_mask, batch.question_mask);
  auto start = start_decoder(G, params, batch.context_mask, dropout);
  auto end = end_decoder(G, start.states, params, batch.context_mask, dropout);
  return {masked_softmax(start.logits, batch.context_mask), masked_softmax(end.logits, batch.context_mask),
          std::move(G), std::move(start.states)};
}

Tensor loss(const ForwardOutput& out, std::span<const std::size_t> gold_starts,
            std::span<const std::size_t> gold_ends, const Tensor& mask) {
  return add(cross_entropy(out.p_start, gold_starts, mask), cross_entropy(out.p_end, gold_ends, mask));
}

}  // namespace spanqa
