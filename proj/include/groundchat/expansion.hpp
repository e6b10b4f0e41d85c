#pragma once

// Persona expansion: typed commonsense / paraphrase rewrites of each persona
// sentence, produced by pluggable backends, prefixed, deduplicated and
// assembled into the candidate set the latent choice ranges over.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "groundchat/corpus.hpp"
#include "groundchat/errors.hpp"
#include "groundchat/text.hpp"

namespace groundchat {

// Declaration order is the grouping order used inside a candidate set.
enum class ExpansionType : int {
  Original = 0,
  Paraphrase,
  Null,
  OEffect,
  OReact,
  OWant,
  XAttr,
  XEffect,
  XIntent,
  XNeed,
  XReact,
  XWant,
};

inline constexpr int kNumExpansionTypes = 12;

inline constexpr std::array<ExpansionType, 9> kRelations = {
    ExpansionType::OEffect, ExpansionType::OReact,  ExpansionType::OWant,
    ExpansionType::XAttr,   ExpansionType::XEffect, ExpansionType::XIntent,
    ExpansionType::XNeed,   ExpansionType::XReact,  ExpansionType::XWant,
};

inline bool is_relation(ExpansionType t) {
  return std::find(kRelations.begin(), kRelations.end(), t) != kRelations.end();
}

inline std::string to_string(ExpansionType t) {
  static const std::array<const char*, kNumExpansionTypes> kNames = {
      "original", "paraphrase", "null",    "oEffect", "oReact", "oWant",
      "xAttr",    "xEffect",    "xIntent", "xNeed",   "xReact", "xWant"};
  return kNames[static_cast<int>(t)];
}

inline ExpansionType parse_expansion_type(const std::string& s) {
  for (int i = 0; i < kNumExpansionTypes; ++i) {
    auto t = static_cast<ExpansionType>(i);
    if (to_string(t) == s) return t;
  }
  throw ParseError("unknown expansion type '" + s + "'");
}

struct Expansion {
  std::optional<std::string> source_id;  // absent only for the null entry
  ExpansionType type = ExpansionType::Original;
  std::string text;
  int beam_rank = 0;
  bool operator==(const Expansion&) const = default;
};

struct CandidateSet {
  std::string persona_set_id;
  std::vector<Expansion> candidates;
  std::size_t null_index = 0;

  std::size_t size() const { return candidates.size(); }
  const Expansion& operator[](std::size_t i) const { return candidates[i]; }
};

// ---------------------------------------------------------------------------
// Prefix rules

class PrefixTable {
 public:
  PrefixTable()
      : prefixes_{{ExpansionType::XWant, "I want"},    {ExpansionType::XAttr, "I am"},
                  {ExpansionType::XEffect, "I"},       {ExpansionType::XIntent, "I intend"},
                  {ExpansionType::XNeed, "I need"},    {ExpansionType::XReact, "I feel"},
                  {ExpansionType::OEffect, "Others"},  {ExpansionType::OReact, "Others feel"},
                  {ExpansionType::OWant, "Others want"}} {}

  void set(ExpansionType t, std::string prefix) { prefixes_[t] = std::move(prefix); }

  const std::string& get(ExpansionType t) const {
    auto it = prefixes_.find(t);
    if (it == prefixes_.end())
      throw CapabilityError("no prefix for type " + to_string(t));
    return it->second;
  }

 private:
  std::map<ExpansionType, std::string> prefixes_;
};

// Prepends the relation's prefix to a generated tail unless the tail already
// begins with it (word-wise, case-insensitive).
inline std::string prefix_rule(ExpansionType relation, const std::string& tail,
                               const PrefixTable& table = {}) {
  std::string t = text::normalize(tail);
  if (t.empty()) throw ContractError("prefix_rule: empty tail");
  const std::string& prefix = table.get(relation);
  if (text::starts_with_words(t, prefix)) return t;
  return prefix + " " + t;
}

// ---------------------------------------------------------------------------
// Backends

class ExpanderBackend {
 public:
  virtual ~ExpanderBackend() = default;
  virtual std::string name() const = 0;
  virtual std::set<ExpansionType> capability() const = 0;
  // Up to n raw outputs, best first. Must be deterministic in its arguments.
  virtual std::vector<std::string> generate(const PersonaSentence& sentence,
                                            ExpansionType type, int n,
                                            std::uint64_t seed) const = 0;
};

// Deterministic template expander used in tests and demos. Picks tails from a
// small per-relation lexicon with a hash of (sentence, relation, seed) and
// attaches the sentence's last content word.
class MockExpander final : public ExpanderBackend {
 public:
  std::string name() const override { return "mock"; }

  std::set<ExpansionType> capability() const override {
    std::set<ExpansionType> caps(kRelations.begin(), kRelations.end());
    caps.insert(ExpansionType::Paraphrase);
    return caps;
  }

  static std::string keyword(const std::string& sentence) {
    auto content = text::content_words(sentence);
    if (!content.empty()) return content.back();
    auto all = text::words(sentence);
    return all.empty() ? std::string("it") : all.back();
  }

  std::vector<std::string> generate(const PersonaSentence& sentence, ExpansionType type,
                                    int n, std::uint64_t seed) const override {
    std::vector<std::string> out;
    if (n <= 0) return out;
    const auto& templates = lexicon(type);
    const std::string norm = text::normalize(sentence.text);
    std::uint64_t state = text::fnv1a64(norm + "|" + to_string(type), seed);
    const std::size_t start = text::splitmix64(state) % templates.size();
    const std::string kw = keyword(norm);
    const int count = std::min<int>(n, static_cast<int>(templates.size()));
    for (int i = 0; i < count; ++i) {
      std::string tmpl = templates[(start + static_cast<std::size_t>(i)) % templates.size()];
      out.push_back(fill(tmpl, type == ExpansionType::Paraphrase ? norm : kw));
    }
    return out;
  }

 private:
  static std::string fill(const std::string& tmpl, const std::string& value) {
    std::string s = tmpl;
    auto pos = s.find("{}");
    if (pos != std::string::npos) s.replace(pos, 2, value);
    return s;
  }

  static const std::vector<std::string>& lexicon(ExpansionType t) {
    static const std::map<ExpansionType, std::vector<std::string>> kLexicon = {
        {ExpansionType::XWant,
         {"to talk about {}", "to learn more about {}", "to share {}", "to find more {}",
          "to enjoy {}", "to tell people about {}"}},
        {ExpansionType::XAttr,
         {"passionate about {}", "curious about {}", "devoted to {}", "fond of {}",
          "excited about {}", "proud of {}"}},
        {ExpansionType::XEffect,
         {"gets happy about {}", "spends time on {}", "thinks about {}", "reads about {}",
          "smiles about {}", "practices {}"}},
        {ExpansionType::XIntent,
         {"to enjoy {}", "to have {}", "to keep {}", "to explore {}", "to show {}",
          "to remember {}"}},
        {ExpansionType::XNeed,
         {"to find {}", "time for {}", "to buy {}", "to look for {}", "money for {}",
          "friends who like {}"}},
        {ExpansionType::XReact,
         {"happy about {}", "good about {}", "calm with {}", "lucky to have {}",
          "excited by {}", "glad about {}"}},
        {ExpansionType::OEffect,
         {"ask me about {}", "hear about {}", "learn about {}", "talk about {}",
          "notice {}", "smile at {}"}},
        {ExpansionType::OReact,
         {"interested in {}", "amused by {}", "curious about {}", "impressed by {}",
          "happy about {}", "surprised by {}"}},
        {ExpansionType::OWant,
         {"to know about {}", "to see {}", "to try {}", "to share {}", "to hear about {}",
          "to join me with {}"}},
        {ExpansionType::Paraphrase,
         {"honestly , {}", "{} , you know", "to be honest {}", "{} for sure", "well , {}",
          "i would say {}"}},
    };
    auto it = kLexicon.find(t);
    if (it == kLexicon.end()) throw CapabilityError("mock backend cannot emit " + to_string(t));
    return it->second;
  }
};

struct ExpansionRecord {
  std::string persona_set_id;
  std::string source_id;
  ExpansionType type = ExpansionType::XWant;
  std::string text;
  int beam_rank = 0;
  std::string source_text;  // optional; allows lookup by sentence text
};

inline nlohmann::json to_json(const ExpansionRecord& r) {
  nlohmann::json j{{"persona_set_id", r.persona_set_id},
                   {"source_id", r.source_id},
                   {"type", to_string(r.type)},
                   {"text", r.text},
                   {"beam_rank", r.beam_rank}};
  if (!r.source_text.empty()) j["source_text"] = r.source_text;
  return j;
}

inline std::vector<ExpansionRecord> read_expansion_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw BackendError("cannot open expansion file " + path);
  std::vector<ExpansionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::normalize(line).empty()) continue;
    const std::string ctx = path + ":" + std::to_string(lineno);
    try {
      auto j = nlohmann::json::parse(line);
      ExpansionRecord r;
      r.persona_set_id = j.at("persona_set_id").get<std::string>();
      r.source_id = j.at("source_id").get<std::string>();
      r.type = parse_expansion_type(j.at("type").get<std::string>());
      r.text = text::normalize(j.at("text").get<std::string>());
      r.beam_rank = j.at("beam_rank").get<int>();
      if (r.beam_rank < 0) throw ParseError("negative beam_rank");
      if (j.contains("source_text")) r.source_text = text::normalize(j["source_text"].get<std::string>());
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(ctx + ": malformed expansion record: " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(ctx + ": " + e.what());
    }
  }
  return out;
}

inline void write_expansion_records(const std::vector<ExpansionRecord>& records,
                                    const std::string& path) {
  std::ofstream out(path);
  if (!out) throw BackendError("cannot write expansion file " + path);
  for (auto& r : records) out << to_json(r).dump() << '\n';
}

// Serves precomputed expansions (commonsense generator outputs, back-translated
// paraphrases, or human-revised personas) from an expansion file.
class FileExpander final : public ExpanderBackend {
 public:
  explicit FileExpander(const std::string& path) : path_(path) {
    for (auto& r : read_expansion_records(path)) add(r);
    sort();
  }
  explicit FileExpander(const std::vector<ExpansionRecord>& records) : path_("<memory>") {
    for (auto& r : records) add(r);
    sort();
  }

  std::string name() const override { return "file:" + path_; }
  std::set<ExpansionType> capability() const override { return types_; }

  std::vector<std::string> generate(const PersonaSentence& sentence, ExpansionType type,
                                    int n, std::uint64_t /*seed*/) const override {
    const Bucket* bucket = nullptr;
    if (auto it = by_id_.find(sentence.id); it != by_id_.end()) {
      bucket = &it->second;
    } else if (auto jt = by_text_.find(text::normalize(sentence.text)); jt != by_text_.end()) {
      bucket = &jt->second;
    }
    if (!bucket)
      throw BackendError("no precomputed expansions for sentence " + sentence.id);
    std::vector<std::string> out;
    auto it = bucket->find(type);
    if (it == bucket->end()) return out;
    for (auto& [rank, t] : it->second) {
      if (static_cast<int>(out.size()) >= n) break;
      out.push_back(t);
    }
    return out;
  }

 private:
  using Bucket = std::map<ExpansionType, std::vector<std::pair<int, std::string>>>;

  void add(const ExpansionRecord& r) {
    types_.insert(r.type);
    by_id_[r.source_id][r.type].emplace_back(r.beam_rank, r.text);
    if (!r.source_text.empty()) by_text_[r.source_text][r.type].emplace_back(r.beam_rank, r.text);
  }
  void sort() {
    for (auto* m : {&by_id_, &by_text_})
      for (auto& [k, bucket] : *m)
        for (auto& [t, v] : bucket) std::stable_sort(v.begin(), v.end(), [](auto& a, auto& b) {
            return a.first < b.first;
          });
  }

  std::string path_;
  std::set<ExpansionType> types_;
  std::unordered_map<std::string, Bucket> by_id_;
  std::unordered_map<std::string, Bucket> by_text_;
};

// "mock" or "file:PATH".
inline std::shared_ptr<ExpanderBackend> make_backend(const std::string& spec) {
  if (spec == "mock") return std::make_shared<MockExpander>();
  if (spec.rfind("file:", 0) == 0) return std::make_shared<FileExpander>(spec.substr(5));
  throw ValidationError("unknown expansion backend '" + spec + "'");
}

// ---------------------------------------------------------------------------
// Expansion operations

namespace detail {

inline std::vector<std::string> call_backend(const ExpanderBackend& backend,
                                             const PersonaSentence& sentence,
                                             ExpansionType type, int n, std::uint64_t seed) {
  if (!backend.capability().count(type))
    throw CapabilityError("backend " + backend.name() + " does not support " + to_string(type));
  try {
    return backend.generate(sentence, type, n, seed);
  } catch (const BackendError&) {
    throw;
  } catch (const std::exception& e) {
    throw BackendError("backend " + backend.name() + " failed on sentence " + sentence.id +
                       ": " + e.what());
  }
}

}  // namespace detail

inline std::vector<Expansion> expand_relation(const PersonaSentence& sentence,
                                              ExpansionType relation, int n,
                                              const ExpanderBackend& backend,
                                              std::uint64_t seed = 0,
                                              const PrefixTable& prefixes = {}) {
  if (!is_relation(relation))
    throw CapabilityError(to_string(relation) + " is not a commonsense relation");
  std::vector<Expansion> out;
  if (n <= 0) return out;
  auto tails = detail::call_backend(backend, sentence, relation, n, seed);
  for (auto& tail : tails) {
    if (static_cast<int>(out.size()) >= n) break;
    if (text::normalize(tail).empty()) continue;
    out.push_back({sentence.id, relation, prefix_rule(relation, tail, prefixes),
                   static_cast<int>(out.size())});
  }
  return out;
}

inline std::vector<Expansion> paraphrase_expand(const PersonaSentence& sentence, int n,
                                                const ExpanderBackend& backend,
                                                std::uint64_t seed = 0) {
  std::vector<Expansion> out;
  if (n <= 0) return out;
  auto outputs = detail::call_backend(backend, sentence, ExpansionType::Paraphrase, n, seed);
  for (auto& t : outputs) {
    if (static_cast<int>(out.size()) >= n) break;
    std::string norm = text::normalize(t);
    if (norm.empty()) continue;
    out.push_back({sentence.id, ExpansionType::Paraphrase, norm, static_cast<int>(out.size())});
  }
  return out;
}

struct ExpansionPlan {
  std::vector<ExpansionType> relations{kRelations.begin(), kRelations.end()};
  int n = 5;
  int paraphrases = 0;
  std::uint64_t seed = 0;
  PrefixTable prefixes;
};

inline std::vector<Expansion> expand_persona_set(const PersonaSet& set,
                                                 const ExpanderBackend& backend,
                                                 const ExpansionPlan& plan) {
  std::vector<Expansion> out;
  for (auto& s : set.sentences) {
    for (auto rel : plan.relations) {
      auto e = expand_relation(s, rel, plan.n, backend, plan.seed, plan.prefixes);
      out.insert(out.end(), e.begin(), e.end());
    }
    if (plan.paraphrases > 0) {
      auto p = paraphrase_expand(s, plan.paraphrases, backend, plan.seed);
      out.insert(out.end(), p.begin(), p.end());
    }
  }
  return out;
}

struct Collision {
  std::size_t kept_index;
  Expansion dropped;
};

// Originals in persona order, then expansions grouped by source sentence,
// type and beam rank, then the null entry. A candidate whose case-folded
// normalized text equals an earlier candidate's is dropped (first wins).
inline CandidateSet build_candidate_set(const PersonaSet& persona,
                                        const std::vector<Expansion>& expansions,
                                        std::vector<Collision>* collisions = nullptr) {
  std::unordered_map<std::string, std::size_t> order;
  for (std::size_t i = 0; i < persona.sentences.size(); ++i)
    order.emplace(persona.sentences[i].id, i);
  for (auto& e : expansions) {
    if (e.type == ExpansionType::Null || e.type == ExpansionType::Original)
      throw ContractError("expansions may not carry type " + to_string(e.type));
    if (!e.source_id || !order.count(*e.source_id))
      throw IntegrityError("expansion '" + e.text + "' references unknown sentence " +
                           e.source_id.value_or("<none>"));
  }

  std::vector<const Expansion*> sorted;
  for (auto& e : expansions) sorted.push_back(&e);
  std::stable_sort(sorted.begin(), sorted.end(), [&](const Expansion* a, const Expansion* b) {
    auto ka = std::make_tuple(order.at(*a->source_id), static_cast<int>(a->type), a->beam_rank);
    auto kb = std::make_tuple(order.at(*b->source_id), static_cast<int>(b->type), b->beam_rank);
    return ka < kb;
  });

  CandidateSet c;
  c.persona_set_id = persona.id;
  std::unordered_map<std::string, std::size_t> seen;
  auto push = [&](Expansion e) {
    if (text::normalize(e.text).empty()) return;
    std::string key = text::fold_key(e.text);
    if (auto it = seen.find(key); it != seen.end()) {
      if (collisions) collisions->push_back({it->second, e});
      return;
    }
    seen.emplace(std::move(key), c.candidates.size());
    c.candidates.push_back(std::move(e));
  };
  for (auto& s : persona.sentences) push({s.id, ExpansionType::Original, s.text, 0});
  for (auto* e : sorted) push(*e);
  c.null_index = c.candidates.size();
  c.candidates.push_back({std::nullopt, ExpansionType::Null, "", 0});
  return c;
}

// Original sentence id of a candidate, or nullopt for the null entry.
inline std::optional<std::string> resolve_provenance(std::size_t index, const CandidateSet& c) {
  if (index >= c.size()) throw ContractError("candidate index out of range");
  return c.candidates[index].source_id;
}

}  // namespace groundchat
