#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "spanqa/data.hpp"
#include "spanqa/tensor.hpp"

namespace spanqa {

// Defaults are the best configuration of the hyperparameter sweep
// (hidden 150, dropout 0.2, embedding 100).
struct ModelConfig {
  std::size_t hidden_size = 150;
  double dropout_rate = 0.2;
  std::size_t embedding_dim = 100;
  std::size_t encoder_layers = 2;
  std::size_t context_cap = kDefaultContextCap;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Named trainable tensors. Names are stable and double as checkpoint keys:
//   encoder.l{0,1}.{fw,bw}.{W,b}     W [4h × (h+in)], gate rows i|f|g|o, columns [h_prev ; x]
//   attention.w_sim                  [6h]
//   {start,end}_decoder.{fw,bw}.{W,b}
//   {start,end}_head.fc1.{W,b}       W [h × 10h]
//   {start,end}_head.fc2.{W,b}       W [1 × h]
using ModelParams = std::map<std::string, Tensor>;

ModelParams init_params(const ModelConfig& config);
std::size_t param_count(const ModelParams& params);

// Deep copy; plain copies of a ModelParams share storage.
ModelParams clone(const ModelParams& params);

// Registers every parameter as a variable of `graph`.
ModelParams bind(Graph& graph, const ModelParams& params);

// Hands out one dropout seed per call site so a forward pass is reproducible
// from a single seed.
class DropoutStream {
 public:
  DropoutStream(double rate, bool training, std::uint64_t seed) : rate_(rate), training_(training), seed_(seed) {}
  static DropoutStream off() { return {0.0, false, 0}; }

  Tensor apply(const Tensor& x);
  bool training() const { return training_; }

 private:
  double rate_;
  bool training_;
  std::uint64_t seed_;
  std::uint64_t calls_ = 0;
};

struct LstmWeights {
  Tensor W;
  Tensor b;
};

struct BiLstmLayer {
  LstmWeights forward;
  LstmWeights backward;
};

// Frozen lookup: the result never joins a graph.
Tensor embed(std::span<const std::size_t> ids, std::size_t rows, std::size_t cols, const EmbeddingTable& table);

// One direction over [B × L × in]; masked steps carry state and emit zeros.
Tensor lstm(const Tensor& inputs, const LstmWeights& w, const Tensor& mask, bool reverse);

// Stacked bidirectional LSTM, [B × L × in] -> [B × L × 2h]. Dropout hits
// each layer's input.
Tensor bilstm(const Tensor& inputs, std::span<const BiLstmLayer> layers, const Tensor& mask,
              DropoutStream& dropout);

// Context [B × Lc × 2h] and question [B × Lq × 2h] -> G [B × Lc × 8h].
// Masks must be right-padded; rows of G at padded context positions are 0.
Tensor bidaf_attention(const Tensor& context, const Tensor& question, const Tensor& w_sim,
                       const Tensor& context_mask, const Tensor& question_mask);

struct DecoderOutput {
  Tensor states;  // [B × Lc × 2h]
  Tensor logits;  // [B × Lc], masked positions at -1e30
};

DecoderOutput start_decoder(const Tensor& G, const ModelParams& params, const Tensor& mask,
                            DropoutStream& dropout);
DecoderOutput end_decoder(const Tensor& G, const Tensor& start_states, const ModelParams& params,
                          const Tensor& mask, DropoutStream& dropout);

struct ForwardOutput {
  Tensor p_start;  // [B × Lc]
  Tensor p_end;
  Tensor attention;     // G
  Tensor start_states;  // M_start
};

ForwardOutput forward(const Batch& batch, const ModelParams& params, const EmbeddingTable& table,
                      const ModelConfig& config, bool training, std::uint64_t dropout_seed = 0);

// Sum of the batch-mean start and end cross-entropies.
Tensor loss(const ForwardOutput& out, std::span<const std::size_t> gold_starts,
            std::span<const std::size_t> gold_ends, const Tensor& mask);

inline constexpr double kMaskedLogit = -1e30;

}  // namespace spanqa
