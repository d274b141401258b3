#include <algorithm>

#include "spanqa/data.hpp"
#include "spanqa/errors.hpp"

namespace spanqa {

DatasetStats dataset_stats(std::span<const QAExample> examples, std::size_t answer_threshold,
                           std::size_t context_threshold) {
  if (examples.empty()) throw EmptyInputError("dataset statistics need at least one example");
  DatasetStats s;
  s.answer_threshold = answer_threshold;
  s.context_threshold = context_threshold;
  s.example_count = examples.size();
  const auto bucket = [](std::size_t v, std::size_t width) {
    return std::min(v / width, DatasetStats::kBuckets - 1);
  };
  for (const auto& ex : examples) {
    const std::size_t lc = ex.context_tokens.size();
    if (lc < context_threshold) ++s.contexts_short;
    ++s.context_histogram[bucket(lc, DatasetStats::kContextBucketWidth)];
    if (ex.gold_span) {
      const std::size_t la = ex.gold_span->length();
      ++s.answer_count;
      if (la < answer_threshold) ++s.answers_short;
      ++s.answer_histogram[bucket(la, DatasetStats::kAnswerBucketWidth)];
    }
  }
  s.context_fraction = static_cast<double>(s.contexts_short) / static_cast<double>(s.example_count);
  s.answer_fraction =
      s.answer_count ? static_cast<double>(s.answers_short) / static_cast<double>(s.answer_count) : 0.0;
  return s;
}

}  // namespace spanqa
