#include "spanqa/span_decoder.hpp"

#include "spanqa/errors.hpp"

namespace spanqa {

namespace {

void check_inputs(std::span<const double> p_start, std::span<const double> p_end, std::span<const double> mask) {
  if (p_start.size() != p_end.size() || (!mask.empty() && mask.size() != p_start.size())) {
    throw DimensionError("span decoding: distributions of length " + std::to_string(p_start.size()) + " and " +
                         std::to_string(p_end.size()) + " with mask of " + std::to_string(mask.size()));
  }
}

bool real(std::span<const double> mask, std::size_t i) { return mask.empty() || mask[i] != 0.0; }

// Scans start ascending, end ascending, replacing only on a strict
// improvement, which yields the (smaller start, smaller end) tie-break.
template <typename Score>
SpanPrediction scan(std::span<const double> p_start, std::span<const double> p_end, std::span<const double> mask,
                    std::size_t max_len, Score score) {
  check_inputs(p_start, p_end, mask);
  const std::size_t L = p_start.size();
  bool found = false;
  SpanPrediction best;
  for (std::size_t s = 0; s < L; ++s) {
    if (!real(mask, s)) continue;
    const std::size_t last = max_len == 0 ? L : std::min(L, s + max_len);
    for (std::size_t e = s; e < last; ++e) {
      if (!real(mask, e)) continue;
      const double v = score(s, e);
      if (!found || v > best.score) {
        best = {s, e, v, {}};
        found = true;
      }
    }
  }
  if (!found) throw DegenerateMaskError("span decoding: every position is masked");
  return best;
}

}  // namespace

double smart_span_score(double p_start, double p_end, std::size_t start, std::size_t end, double log_base) {
  if (start > end) {
    throw OrderingError("span start " + std::to_string(start) + " is after end " + std::to_string(end));
  }
  const double length = static_cast<double>(end - start + 1);
  const double penalty = log_base == std::numbers::e ? std::log(length) : std::log(length) / std::log(log_base);
  return p_start * p_end / (penalty + 1.0);
}

SpanPrediction best_span(std::span<const double> p_start, std::span<const double> p_end,
                         std::span<const double> mask, const SpanOptions& options) {
  if (options.max_len < 1) throw ConfigError("max answer length must be at least 1");
  return scan(p_start, p_end, mask, options.max_len, [&](std::size_t s, std::size_t e) {
    return smart_span_score(p_start[s], p_end[e], s, e, options.log_base);
  });
}

SpanPrediction oracle_best_span(std::span<const double> p_start, std::span<const double> p_end,
                                std::span<const double> mask, double log_base) {
  check_inputs(p_start, p_end, mask);
  const std::size_t L = p_start.size();
  bool found = false;
  SpanPrediction best;
  for (std::size_t s = 0; s < L; ++s) {
    for (std::size_t e = 0; e < L; ++e) {
      if (e < s || !real(mask, s) || !real(mask, e)) continue;
      const double v = smart_span_score(p_start[s], p_end[e], s, e, log_base);
      const bool better = !found || v > best.score ||
                          (v == best.score && (s < best.start || (s == best.start && e < best.end)));
      if (better) {
        best = {s, e, v, {}};
        found = true;
      }
    }
  }
  if (!found) throw DegenerateMaskError("span decoding: every position is masked");
  return best;
}

SpanPrediction raw_product_span(std::span<const double> p_start, std::span<const double> p_end,
                                std::span<const double> mask, std::size_t max_len) {
  if (max_len < 1) throw ConfigError("max answer length must be at least 1");
  return scan(p_start, p_end, mask, max_len, [&](std::size_t s, std::size_t e) { return p_start[s] * p_end[e]; });
}

std::string span_text(const QAExample& example, std::size_t start, std::size_t end) {
  if (start > end || end >= example.context_tokens.size()) {
    throw IndexError("span [" + std::to_string(start) + ", " + std::to_string(end) + "] outside context of " +
                     std::to_string(example.context_tokens.size()) + " tokens");
  }
  const std::size_t b = example.context_tokens[start].begin;
  const std::size_t e = example.context_tokens[end].end;
  return example.context.substr(b, e - b);
}

}  // namespace spanqa
