#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>

#include "spanqa/data.hpp"

namespace spanqa {

struct SpanPrediction {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  double score = 0.0;
  std::string answer_text;
};

struct SpanOptions {
  std::size_t max_len = 20;
  // Base of the logarithm in the length penalty; e by default.
  double log_base = std::numbers::e;
};

// p_start · p_end / (log(end - start + 1) + 1)
double smart_span_score(double p_start, double p_end, std::size_t start, std::size_t end,
                        double log_base = std::numbers::e);

// Argmax of smart_span_score over unmasked start <= end < start + max_len.
// Ties go to the smaller start, then the smaller end. An empty mask means all
// positions are real.
SpanPrediction best_span(std::span<const double> p_start, std::span<const double> p_end,
                         std::span<const double> mask, const SpanOptions& options = {});

// Exhaustive scan of every ordered pair with no length cap.
SpanPrediction oracle_best_span(std::span<const double> p_start, std::span<const double> p_end,
                                std::span<const double> mask, double log_base = std::numbers::e);

// Argmax of p_start · p_end under the same constraints as best_span.
SpanPrediction raw_product_span(std::span<const double> p_start, std::span<const double> p_end,
                                std::span<const double> mask, std::size_t max_len = 20);

// Original-case substring of the context covered by the token span.
std::string span_text(const QAExample& example, std::size_t start, std::size_t end);

}  // namespace spanqa
