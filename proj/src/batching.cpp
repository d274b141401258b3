#include <algorithm>

#include "spanqa/data.hpp"
#include "spanqa/errors.hpp"
#include "spanqa/random.hpp"

namespace spanqa {

BatchSet build_batches(std::span<const QAExample> examples, const EmbeddingTable& table,
                       const BatchOptions& options) {
  if (options.batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (options.context_cap < 1) throw ConfigError("context cap must be at least 1");

  BatchSet out;
  std::vector<std::size_t> order;
  order.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    const bool usable = !ex.context_tokens.empty() && !ex.question_tokens.empty();
    const bool has_gold = ex.gold_span && ex.gold_span->end < options.context_cap;
    if (!usable || (options.require_gold && !has_gold)) {
      ++out.dropped;
      continue;
    }
    order.push_back(i);
  }
  if (options.shuffle_seed) {
    SplitMix rng(*options.shuffle_seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }

  for (std::size_t first = 0; first < order.size(); first += options.batch_size) {
    const std::size_t count = std::min(options.batch_size, order.size() - first);
    Batch b;
    b.size = count;
    for (std::size_t k = 0; k < count; ++k) {
      const auto& ex = examples[order[first + k]];
      b.context_len = std::max(b.context_len, std::min(ex.context_tokens.size(), options.context_cap));
      b.question_len = std::max(b.question_len, ex.question_tokens.size());
    }
    b.context_ids.assign(count * b.context_len, EmbeddingTable::kPad);
    b.question_ids.assign(count * b.question_len, EmbeddingTable::kPad);
    std::vector<double> cmask(count * b.context_len, 0.0);
    std::vector<double> qmask(count * b.question_len, 0.0);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t idx = order[first + k];
      const auto& ex = examples[idx];
      const std::size_t lc = std::min(ex.context_tokens.size(), options.context_cap);
      for (std::size_t t = 0; t < lc; ++t) {
        b.context_ids[k * b.context_len + t] = table.id(ex.context_tokens[t].text);
        cmask[k * b.context_len + t] = 1.0;
      }
      for (std::size_t t = 0; t < ex.question_tokens.size(); ++t) {
        b.question_ids[k * b.question_len + t] = table.id(ex.question_tokens[t].text);
        qmask[k * b.question_len + t] = 1.0;
      }
      const bool has_gold = ex.gold_span && ex.gold_span->end < options.context_cap;
      b.gold_starts.push_back(has_gold ? ex.gold_span->start : 0);
      b.gold_ends.push_back(has_gold ? ex.gold_span->end : 0);
      b.qids.push_back(ex.qid);
      b.example_index.push_back(idx);
    }
    b.context_mask = Tensor({count, b.context_len}, std::move(cmask));
    b.question_mask = Tensor({count, b.question_len}, std::move(qmask));
    out.batches.push_back(std::move(b));
  }
  return out;
}

}  // namespace spanqa
