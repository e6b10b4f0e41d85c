#pragma once

// Sentence encoder e(.): the mean of subword vectors. Two encoders ship:
// a deterministic hashed fallback and a table encoder over an exported
// pretrained subword embedding matrix. Encoders are frozen.

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "groundchat/corpus.hpp"
#include "groundchat/errors.hpp"
#include "groundchat/text.hpp"

namespace groundchat {

using Embedding = Eigen::VectorXd;

inline constexpr const char* kHistorySeparator = "</s>";

class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual int dim() const = 0;
  virtual std::string identity() const = 0;
  virtual std::vector<std::string> subwords(const std::string& text) const = 0;
  // Mean of the subword vectors; the zero vector for an empty list.
  virtual Embedding encode_subwords(const std::vector<std::string>& pieces) const = 0;

  Embedding encode_text(const std::string& text) const {
    return encode_subwords(subwords(text));
  }
};

// Hashed bag-of-subwords followed by a fixed seeded sparse random projection.
// Subwords are the lowercased word tokens of text::words. Each subword maps to
// a unit vector with `nnz` nonzero coordinates of value +-1/sqrt(nnz); the
// coordinates and signs are drawn from splitmix64 seeded with
// fnv1a64(subword, seed).
class FallbackEncoder final : public Encoder {
 public:
  // Each subword vector has `nnz` nonzero entries of magnitude norm/sqrt(nnz),
  // so its L2 norm is `norm`.
  explicit FallbackEncoder(int d = 64, std::uint64_t seed = 0, int nnz = 8, double norm = 1.0)
      : d_(d), seed_(seed), nnz_(std::min(nnz, d)), norm_(norm) {
    if (d <= 0) throw DomainError("encoder dimension must be positive");
    if (!(norm > 0.0)) throw DomainError("encoder norm must be positive");
  }

  int dim() const override { return d_; }
  std::string identity() const override {
    std::string id = "fallback:d=" + std::to_string(d_) + ",seed=" + std::to_string(seed_);
    if (norm_ != 1.0) {
      std::ostringstream n;
      n.precision(17);
      n << norm_;
      id += ",norm=" + n.str();
    }
    return id;
  }

  std::vector<std::string> subwords(const std::string& s) const override {
    return text::words(s);
  }

  Embedding subword_vector(const std::string& piece) const {
    Embedding v = Embedding::Zero(d_);
    std::uint64_t state = text::fnv1a64(piece, seed_);
    const double value = norm_ / std::sqrt(static_cast<double>(nnz_));
    int placed = 0;
    while (placed < nnz_) {
      std::uint64_t r = text::splitmix64(state);
      int coord = static_cast<int>(r % static_cast<std::uint64_t>(d_));
      if (v[coord] != 0.0) continue;
      v[coord] = (r >> 63) ? -value : value;
      ++placed;
    }
    return v;
  }

  Embedding encode_subwords(const std::vector<std::string>& pieces) const override {
    Embedding sum = Embedding::Zero(d_);
    if (pieces.empty()) return sum;
    for (auto& p : pieces) sum += subword_vector(p);
    return sum / static_cast<double>(pieces.size());
  }

 private:
  int d_;
  std::uint64_t seed_;
  int nnz_;
  double norm_;
};

// Reads a text embedding table, one "token v1 ... vd" row per line (the
// export format of most pretrained subword embedding matrices). Words missing
// from the table are split greedily into the longest known prefixes.
class TableEncoder final : public Encoder {
 public:
  explicit TableEncoder(const std::string& path) : path_(path) {
    std::ifstream in(path);
    if (!in) throw BackendError("cannot open embedding table " + path);
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ss(line);
      std::string tok;
      if (!(ss >> tok)) continue;
      std::vector<double> vals;
      double v;
      while (ss >> v) vals.push_back(v);
      if (d_ == 0) d_ = static_cast<int>(vals.size());
      if (static_cast<int>(vals.size()) != d_)
        throw ParseError(path + ": inconsistent embedding width for '" + tok + "'");
      table_.emplace(tok, Eigen::Map<Embedding>(vals.data(), d_));
      max_piece_ = std::max(max_piece_, tok.size());
    }
    if (d_ == 0) throw ParseError(path + ": empty embedding table");
  }

  int dim() const override { return d_; }
  std::string identity() const override { return "pretrained:" + path_; }

  std::vector<std::string> subwords(const std::string& s) const override {
    std::vector<std::string> out;
    for (auto& w : text::words(s)) {
      if (table_.count(w)) {
        out.push_back(w);
        continue;
      }
      std::size_t pos = 0;
      while (pos < w.size()) {
        std::size_t len = std::min(max_piece_, w.size() - pos);
        for (; len > 0; --len)
          if (table_.count(w.substr(pos, len))) break;
        if (len == 0) {
          ++pos;
          continue;
        }
        out.push_back(w.substr(pos, len));
        pos += len;
      }
    }
    return out;
  }

  Embedding encode_subwords(const std::vector<std::string>& pieces) const override {
    Embedding sum = Embedding::Zero(d_);
    int n = 0;
    for (auto& p : pieces) {
      auto it = table_.find(p);
      if (it == table_.end()) continue;
      sum += it->second;
      ++n;
    }
    return n ? Embedding(sum / n) : sum;
  }

 private:
  std::string path_;
  int d_ = 0;
  std::size_t max_piece_ = 1;
  std::unordered_map<std::string, Embedding> table_;
};

// Memoizes encode_text. Safe for concurrent readers and inserters.
class CachedEncoder final : public Encoder {
 public:
  explicit CachedEncoder(std::shared_ptr<const Encoder> inner) : inner_(std::move(inner)) {}

  int dim() const override { return inner_->dim(); }
  std::string identity() const override { return inner_->identity(); }
  std::vector<std::string> subwords(const std::string& s) const override {
    return inner_->subwords(s);
  }
  Embedding encode_subwords(const std::vector<std::string>& pieces) const override {
    std::string key = text::join(pieces, "\x1f");
    {
      std::shared_lock lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    Embedding v = inner_->encode_subwords(pieces);
    std::unique_lock lock(mu_);
    cache_.emplace(std::move(key), v);
    return v;
  }
  std::size_t size() const {
    std::shared_lock lock(mu_);
    return cache_.size();
  }

 private:
  std::shared_ptr<const Encoder> inner_;
  mutable std::shared_mutex mu_;
  mutable std::unordered_map<std::string, Embedding> cache_;
};

// "fallback" (optionally "fallback:<dim>") or "pretrained:<table path>".
inline std::shared_ptr<Encoder> make_encoder(const std::string& kind, int fallback_dim = 64,
                                             std::uint64_t seed = 0, double fallback_norm = 1.0) {
  std::shared_ptr<const Encoder> base;
  if (kind == "fallback") {
    base = std::make_shared<FallbackEncoder>(fallback_dim, seed, 8, fallback_norm);
  } else if (kind.rfind("fallback:", 0) == 0) {
    base = std::make_shared<FallbackEncoder>(std::stoi(kind.substr(9)), seed, 8, fallback_norm);
  } else if (kind.rfind("pretrained:", 0) == 0) {
    base = std::make_shared<TableEncoder>(kind.substr(11));
  } else {
    throw ValidationError("unknown encoder kind '" + kind + "'");
  }
  return std::make_shared<CachedEncoder>(std::move(base));
}

inline Embedding encode_text(const std::string& text, const Encoder& enc) {
  return enc.encode_text(text);
}

// Turns are concatenated with a separator subword between them and encoded
// as one text. With `last_turn_only` only the final turn is used.
inline Embedding encode_history(const DialogHistory& history, const Encoder& enc,
                                bool last_turn_only = false) {
  std::vector<std::string> pieces;
  std::size_t begin = last_turn_only && !history.turns.empty() ? history.turns.size() - 1 : 0;
  for (std::size_t i = begin; i < history.turns.size(); ++i) {
    if (i > begin) pieces.push_back(kHistorySeparator);
    auto p = enc.subwords(history.turns[i].text);
    pieces.insert(pieces.end(), p.begin(), p.end());
  }
  return enc.encode_subwords(pieces);
}

}  // namespace groundchat
