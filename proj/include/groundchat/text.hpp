#pragma once

// Text utilities shared by every module: Unicode normalization, case
// folding, word tokenization, hashing and the bundled stopword list.

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "groundchat/errors.hpp"

namespace groundchat::text {

inline std::string to_utf8(const icu::UnicodeString& u) {
  std::string out;
  u.toUTF8String(out);
  return out;
}

// NFC, then collapse every run of Unicode whitespace into one ASCII space and
// trim both ends.
inline std::string normalize(std::string_view s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw BackendError("ICU NFC normalizer unavailable");
  icu::UnicodeString in = icu::UnicodeString::fromUTF8(
      icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  icu::UnicodeString composed = nfc->normalize(in, status);
  if (U_FAILURE(status)) throw ParseError("invalid UTF-8 text");

  icu::UnicodeString collapsed;
  bool pending_space = false;
  for (int32_t i = 0; i < composed.length();) {
    UChar32 c = composed.char32At(i);
    i += U16_LENGTH(c);
    if (u_isUWhiteSpace(c)) {
      pending_space = collapsed.length() > 0;
      continue;
    }
    if (pending_space) collapsed.append(static_cast<UChar>(' '));
    pending_space = false;
    collapsed.append(c);
  }
  return to_utf8(collapsed);
}

// Dedup key: normalized then Unicode case-folded.
inline std::string fold_key(std::string_view s) {
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(normalize(s));
  u.foldCase();
  return to_utf8(u);
}

inline std::string lowercase(std::string_view s) {
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(
      icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  u.toLower();
  return to_utf8(u);
}

// Lowercased word tokens. A word is a maximal run of letters, digits,
// apostrophes or underscores; any other non-space character is its own token.
inline std::vector<std::string> words(std::string_view s) {
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(normalize(s));
  u.toLower();
  std::vector<std::string> out;
  icu::UnicodeString cur;
  auto flush = [&] {
    if (cur.length() > 0) {
      out.push_back(to_utf8(cur));
      cur.remove();
    }
  };
  for (int32_t i = 0; i < u.length();) {
    UChar32 c = u.char32At(i);
    i += U16_LENGTH(c);
    if (u_isUWhiteSpace(c)) {
      flush();
    } else if (u_isalnum(c) || c == '\'' || c == '_' || c == 0x2019) {
      cur.append(c);
    } else {
      flush();
      out.push_back(to_utf8(icu::UnicodeString(c)));
    }
  }
  flush();
  return out;
}

inline bool is_punctuation(std::string_view token) {
  if (token.empty()) return false;
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(
      icu::StringPiece(token.data(), static_cast<int32_t>(token.size())));
  for (int32_t i = 0; i < u.length();) {
    UChar32 c = u.char32At(i);
    i += U16_LENGTH(c);
    if (u_isalnum(c)) return false;
  }
  return true;
}

inline std::string join(const std::vector<std::string>& parts,
                        std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// Comma-separated list with surrounding whitespace trimmed; empty items dropped.
inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t end = s.find(sep, start);
    if (end == std::string_view::npos) end = s.size();
    std::string item = normalize(s.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    start = end + 1;
  }
  return out;
}

inline bool starts_with_words(std::string_view text, std::string_view prefix) {
  auto t = words(text);
  auto p = words(prefix);
  if (p.size() > t.size()) return false;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (t[i] != p[i]) return false;
  return true;
}

// 64-bit FNV-1a, optionally seeded by hashing the seed bytes first.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t seed = 0) noexcept {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](unsigned char b) {
    h ^= b;
    h *= 1099511628211ULL;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(seed >> (8 * i)));
  for (unsigned char b : bytes) mix(b);
  return h;
}

// splitmix64 finalizer; turns a hash into a stream of well-mixed words.
inline std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::string_view kStopwordListVersion = "en-basic-1";

inline const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> kWords = {
      "a",     "an",    "the",   "and",   "or",    "but",   "if",    "of",
      "to",    "in",    "on",    "at",    "by",    "for",   "with",  "from",
      "as",    "is",    "am",    "are",   "was",   "were",  "be",    "been",
      "being", "do",    "does",  "did",   "have",  "has",   "had",   "i",
      "me",    "my",    "mine",  "you",   "your",  "yours", "he",    "him",
      "his",   "she",   "her",   "it",    "its",   "we",    "us",    "our",
      "they",  "them",  "their", "this",  "that",  "these", "those", "so",
      "too",   "very",  "just",  "not",   "no",    "yes",   "can",   "will",
      "would", "should", "could", "there", "here", "what",  "which", "who",
      "how",   "when",  "where", "why",   "all",   "any",   "some",  "i'm",
      "it's",  "don't", "that's", "also", "about", "into",  "than",  "then",
      "up",    "out",   "more",  "most",  "much",  "like",  "really", "oh",
  };
  return kWords;
}

// Content tokens: words() minus punctuation and stopwords.
inline std::vector<std::string> content_words(std::string_view s) {
  std::vector<std::string> out;
  for (auto& w : words(s))
    if (!is_punctuation(w) && !stopwords().count(w)) out.push_back(w);
  return out;
}

}  // namespace groundchat::text
