#pragma once

// UTF-8 helpers. All lengths in the harness are counted in unicode code
// points, never bytes or graphemes.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mgtbench/errors.hpp"

namespace mgtbench::text {

namespace detail {

// Decodes one code point starting at `pos`, returning its byte length.
inline std::size_t decode_at(std::string_view s, std::size_t pos, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  std::size_t len = 0;
  if (b0 < 0x80) {
    cp = b0;
    return 1;
  } else if ((b0 & 0xE0) == 0xC0) {
    cp = b0 & 0x1F;
    len = 2;
  } else if ((b0 & 0xF0) == 0xE0) {
    cp = b0 & 0x0F;
    len = 3;
  } else if ((b0 & 0xF8) == 0xF0) {
    cp = b0 & 0x07;
    len = 4;
  } else {
    throw InputError("invalid UTF-8 lead byte at offset " + std::to_string(pos));
  }
  if (pos + len > s.size()) throw InputError("truncated UTF-8 sequence at offset " + std::to_string(pos));
  for (std::size_t i = 1; i < len; ++i) {
    const auto b = static_cast<unsigned char>(s[pos + i]);
    if ((b & 0xC0) != 0x80) throw InputError("invalid UTF-8 continuation byte at offset " + std::to_string(pos + i));
    cp = (cp << 6) | (b & 0x3F);
  }
  return len;
}

}  // namespace detail

inline bool is_unicode_space(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

inline std::size_t codepoint_count(std::string_view s) {
  std::size_t n = 0;
  char32_t cp = 0;
  for (std::size_t pos = 0; pos < s.size(); ++n) pos += detail::decode_at(s, pos, cp);
  return n;
}

// Byte offset of the `n`-th code point, or s.size() if the string is shorter.
inline std::size_t byte_offset_of(std::string_view s, std::size_t n) {
  std::size_t pos = 0;
  char32_t cp = 0;
  for (std::size_t i = 0; i < n && pos < s.size(); ++i) pos += detail::decode_at(s, pos, cp);
  return pos;
}

// First `n` code points of `s` (whole string when shorter).
inline std::string take_codepoints(std::string_view s, std::size_t n) {
  return std::string(s.substr(0, byte_offset_of(s, n)));
}

// Splits on runs of unicode whitespace; leading/trailing runs yield no tokens.
inline std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  std::size_t pos = 0;
  std::size_t start = std::string_view::npos;
  char32_t cp = 0;
  while (pos < s.size()) {
    const std::size_t len = detail::decode_at(s, pos, cp);
    if (is_unicode_space(cp)) {
      if (start != std::string_view::npos) {
        words.emplace_back(s.substr(start, pos - start));
        start = std::string_view::npos;
      }
    } else if (start == std::string_view::npos) {
      start = pos;
    }
    pos += len;
  }
  if (start != std::string_view::npos) words.emplace_back(s.substr(start));
  return words;
}

// Drops leading unicode whitespace.
inline std::string_view trim_left(std::string_view s) {
  std::size_t pos = 0;
  char32_t cp = 0;
  while (pos < s.size()) {
    const std::size_t len = detail::decode_at(s, pos, cp);
    if (!is_unicode_space(cp)) break;
    pos += len;
  }
  return s.substr(pos);
}

inline std::string_view trim(std::string_view s) {
  s = trim_left(s);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\n' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

}  // namespace mgtbench::text
