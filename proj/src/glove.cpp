#include <charconv>
#include <fstream>

#include "spanqa/data.hpp"
#include "spanqa/errors.hpp"

namespace spanqa {

EmbeddingTable::EmbeddingTable(std::size_t dim, std::vector<std::string> words, std::vector<double> rows)
    : dim_(dim) {
  if (dim == 0) throw ConfigError("embedding dim must be positive");
  if (rows.size() != words.size() * dim) {
    throw FormatError("embedding matrix has " + std::to_string(rows.size()) + " values for " +
                      std::to_string(words.size()) + " words of width " + std::to_string(dim));
  }
  matrix_.assign(2 * dim, 0.0);
  if (!words.empty()) {
    for (std::size_t w = 0; w < words.size(); ++w)
      for (std::size_t k = 0; k < dim; ++k) matrix_[dim + k] += rows[w * dim + k];
    for (std::size_t k = 0; k < dim; ++k) matrix_[dim + k] /= static_cast<double>(words.size());
  }
  matrix_.insert(matrix_.end(), rows.begin(), rows.end());
  ids_.reserve(words.size());
  for (std::size_t w = 0; w < words.size(); ++w) {
    // First occurrence wins for duplicated words.
    ids_.emplace(std::move(words[w]), w + 2);
  }
}

std::size_t EmbeddingTable::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnk : it->second;
}

std::span<const double> EmbeddingTable::row(std::size_t id) const {
  if (id >= vocab_size()) {
    throw IndexError("embedding id " + std::to_string(id) + " out of range for vocabulary of " +
                     std::to_string(vocab_size()));
  }
  return std::span<const double>(matrix_).subspan(id * dim_, dim_);
}

EmbeddingTable load_glove(const std::filesystem::path& path, std::size_t dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  std::vector<std::string> words;
  std::vector<double> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected a word followed by " +
                        std::to_string(dim) + " floats");
    }
    words.emplace_back(line, 0, sp);
    const char* p = line.data() + sp;
    const char* end = line.data() + line.size();
    std::size_t count = 0;
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad float near column " +
                          std::to_string(p - line.data() + 1));
      }
      rows.push_back(v);
      ++count;
      p = next;
    }
    if (count != dim) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                        " floats, found " + std::to_string(count));
    }
  }
  return EmbeddingTable(dim, std::move(words), std::move(rows));
}

}  // namespace spanqa
