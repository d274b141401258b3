#include <cstdint>

#include "spanqa/data.hpp"

namespace spanqa {

namespace {

struct CodePoint {
  char32_t value;
  std::size_t begin;
  std::size_t end;
};

// Lenient UTF-8 decode: malformed bytes come through as single code points
// so offsets always tile the input.
std::vector<CodePoint> decode(std::string_view s) {
  std::vector<CodePoint> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    char32_t cp = c;
    if (c >= 0xF0 && c < 0xF8) {
      len = 4;
      cp = c & 0x07;
    } else if (c >= 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if (c >= 0xC0) {
      len = 2;
      cp = c & 0x1F;
    }
    if (len > 1) {
      bool ok = i + len <= s.size();
      for (std::size_t k = 1; ok && k < len; ++k) {
        const auto cc = static_cast<unsigned char>(s[i + k]);
        if ((cc & 0xC0) != 0x80) ok = false;
        cp = (cp << 6) | (cc & 0x3F);
      }
      if (!ok) {
        len = 1;
        cp = c;
      }
    }
    out.push_back({cp, i, i + len});
    i += len;
  }
  return out;
}

bool is_space(char32_t c) {
  switch (c) {
    case ' ': case '\t': case '\n': case '\r': case '\f': case '\v':
    case 0x00A0: case 0x1680: case 0x202F: case 0x205F: case 0x3000: case 0xFEFF:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200B;
  }
}

bool is_punct(char32_t c) {
  if (c < 0x80) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
           (c >= 0x7B && c <= 0x7E);
  }
  switch (c) {
    case 0x00A1: case 0x00A7: case 0x00AB: case 0x00B6: case 0x00B7: case 0x00BB: case 0x00BF:
      return true;
    default:
      return c >= 0x2010 && c <= 0x205E;
  }
}

void append_utf8(std::string& out, char32_t c) {
  if (c < 0x80) {
    out.push_back(static_cast<char>(c));
  } else if (c < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (c >> 6)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else if (c < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (c >> 12)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (c >> 18)));
    out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  }
}

// ASCII and Latin-1 upper case only; GloVe vocabularies are lower case.
char32_t lower(char32_t c) {
  if (c >= 'A' && c <= 'Z') return c + 32;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
  return c;
}

Token make_token(std::string_view src, std::span<const CodePoint> cps) {
  Token t;
  t.begin = cps.front().begin;
  t.end = cps.back().end;
  for (const auto& cp : cps) {
    // Keep malformed bytes verbatim.
    if (cp.end - cp.begin == 1 && cp.value >= 0x80) {
      t.text.push_back(src[cp.begin]);
    } else {
      append_utf8(t.text, lower(cp.value));
    }
  }
  return t;
}

}  // namespace

std::vector<std::size_t> codepoint_offsets(std::string_view text) {
  std::vector<std::size_t> offsets;
  for (const auto& cp : decode(text)) offsets.push_back(cp.begin);
  offsets.push_back(text.size());
  return offsets;
}

std::vector<Token> tokenize(std::string_view text) {
  const auto cps = decode(text);
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < cps.size()) {
    if (is_space(cps[i].value)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < cps.size() && !is_space(cps[j].value)) ++j;
    // chunk is cps[i, j)
    std::size_t lo = i, hi = j;
    while (lo < hi && is_punct(cps[lo].value)) ++lo;
    while (hi > lo && is_punct(cps[hi - 1].value)) --hi;
    const std::span<const CodePoint> all(cps);
    for (std::size_t k = i; k < lo; ++k) tokens.push_back(make_token(text, all.subspan(k, 1)));
    if (lo < hi) tokens.push_back(make_token(text, all.subspan(lo, hi - lo)));
    for (std::size_t k = hi; k < j; ++k) tokens.push_back(make_token(text, all.subspan(k, 1)));
    i = j;
  }
  return tokens;
}

}  // namespace spanqa
