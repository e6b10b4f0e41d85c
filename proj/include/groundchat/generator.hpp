#pragma once

// Conditional language model interface p(x | H, C_z): sequence assembly with
// segment indicators, target-only negative log-likelihood and nucleus-sampled
// generation.
//
// Assembled layout (one token per cell):
//
//   persona tokens            | <sep> turn_1 | ... | <sep> turn_n | <sep> x <eos>
//   Persona segment           | speaker of each turn              | responder
//
// The null persona contributes no tokens. target_mask is true exactly on the
// target's tokens including the closing <eos>.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "groundchat/corpus.hpp"
#include "groundchat/errors.hpp"
#include "groundchat/expansion.hpp"
#include "groundchat/latent.hpp"
#include "groundchat/sampling.hpp"
#include "groundchat/text.hpp"

namespace groundchat {

enum class SegmentId : int { Persona = 0, Speaker1 = 1, Speaker2 = 2 };
inline constexpr int kNumSegments = 3;

inline SegmentId segment_of(Speaker s) {
  return s == Speaker::Speaker1 ? SegmentId::Speaker1 : SegmentId::Speaker2;
}

// Word-level vocabulary over text::words tokens with fixed special ids.
class Tokenizer {
 public:
  static constexpr int kPad = 0, kUnk = 1, kEos = 2, kSep = 3;

  Tokenizer() : Tokenizer(std::vector<std::string>{}) {}

  explicit Tokenizer(const std::vector<std::string>& words) {
    for (const char* s : {"<pad>", "<unk>", "<eos>", "<sep>"}) add(s);
    for (auto& w : words) add(w);
  }

  // Frequency-descending, ties lexicographic; tokens below min_count dropped.
  static Tokenizer build(const std::vector<std::string>& texts, int min_count = 1) {
    std::map<std::string, int> counts;
    for (auto& t : texts)
      for (auto& w : text::words(t)) ++counts[w];
    std::vector<std::pair<std::string, int>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(),
                     [](auto& a, auto& b) { return a.second > b.second; });
    std::vector<std::string> vocab;
    for (auto& [w, c] : items)
      if (c >= min_count) vocab.push_back(w);
    return Tokenizer(vocab);
  }

  int size() const { return static_cast<int>(id_to_token_.size()); }

  int id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }
  const std::string& token(int id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }

  std::vector<int> encode(const std::string& s) const {
    std::vector<int> out;
    for (auto& w : text::words(s)) out.push_back(id(w));
    return out;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::vector<std::string> parts;
    for (int i : ids) {
      if (i == kPad || i == kEos || i == kSep) continue;
      parts.push_back(token(i));
    }
    return text::join(parts);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw BackendError("cannot write vocabulary " + path);
    for (auto& t : id_to_token_) out << t << '\n';
  }

  static Tokenizer load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw BackendError("cannot read vocabulary " + path);
    Tokenizer tok;
    tok.id_to_token_.clear();
    tok.token_to_id_.clear();
    std::string line;
    while (std::getline(in, line)) tok.add(line);
    if (tok.size() < 4 || tok.token(kEos) != "<eos>" || tok.token(kSep) != "<sep>")
      throw ParseError(path + ": not a vocabulary file");
    return tok;
  }

 private:
  void add(const std::string& t) {
    if (token_to_id_.count(t)) return;
    token_to_id_.emplace(t, size());
    id_to_token_.push_back(t);
  }

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

struct AssembledInput {
  std::vector<int> tokens;
  std::vector<SegmentId> segments;
  std::vector<bool> target_mask;
  int dropped_turns = 0;

  std::size_t size() const { return tokens.size(); }
  int target_count() const {
    return static_cast<int>(std::count(target_mask.begin(), target_mask.end(), true));
  }
  void push(int token, SegmentId seg, bool target) {
    tokens.push_back(token);
    segments.push_back(seg);
    target_mask.push_back(target);
  }
};

// Responding speaker when the caller does not say: the opposite of the last
// history turn, or speaker2 for an empty history.
inline Speaker responder_for(const DialogHistory& h) {
  return h.turns.empty() ? Speaker::Speaker2 : other(h.turns.back().speaker);
}

// Oldest history turns are dropped until the sequence fits in max_len; the
// persona and the target are never truncated.
inline AssembledInput assemble(const std::string& persona_text, const DialogHistory& history,
                               const std::optional<std::string>& target,
                               const Tokenizer& tok, int max_len,
                               std::optional<Speaker> responder = std::nullopt) {
  const Speaker resp = responder.value_or(responder_for(history));
  const std::vector<int> persona = tok.encode(persona_text);
  std::vector<std::vector<int>> turns;
  for (auto& t : history.turns) turns.push_back(tok.encode(t.text));
  std::vector<int> tgt;
  if (target) {
    tgt = tok.encode(*target);
    tgt.push_back(Tokenizer::kEos);
  }
  std::size_t fixed = persona.size() + 1 + tgt.size();
  std::size_t hist = 0;
  for (auto& t : turns) hist += t.size() + 1;
  std::size_t first = 0;
  while (fixed + hist > static_cast<std::size_t>(max_len) && first < turns.size()) {
    hist -= turns[first].size() + 1;
    ++first;
  }
  if (fixed + hist > static_cast<std::size_t>(max_len))
    throw LengthError("persona and target need " + std::to_string(fixed) +
                      " positions, model allows " + std::to_string(max_len));

  AssembledInput in;
  in.dropped_turns = static_cast<int>(first);
  for (int id : persona) in.push(id, SegmentId::Persona, false);
  for (std::size_t i = first; i < turns.size(); ++i) {
    const SegmentId seg = segment_of(history.turns[i].speaker);
    in.push(Tokenizer::kSep, seg, false);
    for (int id : turns[i]) in.push(id, seg, false);
  }
  const SegmentId rseg = segment_of(resp);
  in.push(Tokenizer::kSep, rseg, false);
  for (int id : tgt) in.push(id, rseg, true);
  return in;
}

inline AssembledInput assemble(const Expansion& persona, const DialogHistory& history,
                               const std::optional<std::string>& target, const Tokenizer& tok,
                               int max_len, std::optional<Speaker> responder = std::nullopt) {
  return assemble(persona.type == ExpansionType::Null ? std::string() : persona.text, history,
                  target, tok, max_len, responder);
}

struct TargetScore {
  double total_nll = 0.0;
  int n_target_tokens = 0;
};

class ConditionalLM {
 public:
  virtual ~ConditionalLM() = default;
  virtual int vocab_size() const = 0;
  virtual int max_len() const = 0;

  // log p(token_t | tokens_<t) for every t; entry 0 is 0.
  virtual std::vector<double> token_log_probs(const AssembledInput& in) const = 0;

  // Log-distribution of the token following the last position.
  virtual VectorXd next_log_probs(const AssembledInput& prefix) const = 0;

  virtual TargetScore score_target(const AssembledInput& in) const {
    auto lp = token_log_probs(in);
    TargetScore s;
    for (std::size_t t = 0; t < in.size(); ++t)
      if (in.target_mask[t]) {
        s.total_nll -= lp[t];
        ++s.n_target_tokens;
      }
    return s;
  }
};

inline TargetScore target_nll(const AssembledInput& in, const ConditionalLM& lm) {
  if (in.target_count() == 0) throw ContractError("target_nll: empty target mask");
  if (!in.target_mask.empty() && in.target_mask.front())
    throw ContractError("target_nll: first position cannot be a target");
  return lm.score_target(in);
}

struct GenerateConfig {
  double nucleus_p = 0.95;
  int max_new_tokens = 32;
  int end_token = Tokenizer::kEos;
  std::uint64_t seed = 0;
};

struct Generation {
  std::vector<int> tokens;  // excludes the end token
  bool ended = false;       // end token produced
  bool truncated = false;   // stopped by max_new_tokens or the context limit
};

template <class Rng>
Generation generate(const AssembledInput& prompt, const ConditionalLM& lm,
                    const GenerateConfig& cfg, Rng& rng) {
  if (prompt.target_count() != 0) throw ContractError("generate: prompt already has a target");
  if (prompt.size() == 0) throw ContractError("generate: empty prompt");
  AssembledInput seq = prompt;
  const SegmentId seg = prompt.segments.back();
  Generation out;
  for (int step = 0; step < cfg.max_new_tokens; ++step) {
    if (static_cast<int>(seq.size()) >= lm.max_len()) break;
    VectorXd lp = lm.next_log_probs(seq);
    VectorXd p = (lp.array() - lp.maxCoeff()).exp().matrix();
    Categorical filtered = nucleus_filter(Categorical(p / p.sum()), cfg.nucleus_p);
    const int next = static_cast<int>(sample(filtered, rng));
    if (next == cfg.end_token) {
      out.ended = true;
      return out;
    }
    out.tokens.push_back(next);
    seq.push(next, seg, false);
  }
  out.truncated = true;
  return out;
}

}  // namespace groundchat
