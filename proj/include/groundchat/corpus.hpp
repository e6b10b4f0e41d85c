#pragma once

// Persona-Chat style corpus ingestion, history windowing and DNLI entailment
// pairs. All records are line-delimited JSON, UTF-8; see docs/formats.md.

#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "groundchat/errors.hpp"
#include "groundchat/text.hpp"

namespace groundchat {

enum class Speaker { Speaker1, Speaker2 };

inline Speaker other(Speaker s) {
  return s == Speaker::Speaker1 ? Speaker::Speaker2 : Speaker::Speaker1;
}

inline std::string to_string(Speaker s) {
  return s == Speaker::Speaker1 ? "speaker1" : "speaker2";
}

inline Speaker parse_speaker(const std::string& s) {
  if (s == "speaker1") return Speaker::Speaker1;
  if (s == "speaker2") return Speaker::Speaker2;
  throw ParseError("unknown speaker '" + s + "'");
}

struct PersonaSentence {
  std::string id;
  std::string text;
  bool operator==(const PersonaSentence&) const = default;
};

struct PersonaSet {
  std::string id;
  std::vector<PersonaSentence> sentences;

  const PersonaSentence* find(const std::string& sentence_id) const {
    for (auto& s : sentences)
      if (s.id == sentence_id) return &s;
    return nullptr;
  }
  bool operator==(const PersonaSet&) const = default;
};

inline std::string sentence_id(const std::string& set_id, std::size_t index) {
  return set_id + "#" + std::to_string(index);
}

// Builds a persona set from raw texts. Texts are normalized; empty or
// duplicate (after normalization) texts are rejected.
inline PersonaSet make_persona_set(const std::string& id,
                                   const std::vector<std::string>& texts) {
  PersonaSet set{id, {}};
  std::unordered_map<std::string, std::size_t> seen;
  for (auto& raw : texts) {
    std::string t = text::normalize(raw);
    if (t.empty()) throw ValidationError("persona set " + id + ": empty sentence");
    if (seen.count(t))
      throw ValidationError("persona set " + id + ": duplicate sentence '" + t + "'");
    seen.emplace(t, set.sentences.size());
    set.sentences.push_back({sentence_id(id, set.sentences.size()), t});
  }
  return set;
}

struct DialogTurn {
  Speaker speaker = Speaker::Speaker1;
  std::string text;
  bool operator==(const DialogTurn&) const = default;
};

struct DialogHistory {
  std::vector<DialogTurn> turns;
  bool empty() const { return turns.empty(); }
  bool operator==(const DialogHistory&) const = default;
};

// `persona_set_id` is the persona of speaker2; `partner_persona_set_id`, when
// present, is the persona of speaker1.
struct Dialog {
  std::string id;
  std::string persona_set_id;
  std::optional<std::string> partner_persona_set_id;
  std::vector<DialogTurn> turns;
  bool operator==(const Dialog&) const = default;
};

struct TrainingExample {
  std::string id;
  std::string dialog_id;
  std::string persona_set_id;
  DialogHistory history;
  Speaker target_speaker = Speaker::Speaker2;
  std::string target;
};

enum class Split { Train, Valid, Test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "train";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "valid" || s == "validation") return Split::Valid;
  if (s == "test") return Split::Test;
  throw ParseError("unknown split '" + s + "'");
}

struct Corpus {
  Split split = Split::Train;
  std::vector<PersonaSet> persona_sets;
  std::vector<Dialog> dialogs;

  const PersonaSet* find_persona_set(const std::string& id) const {
    for (auto& p : persona_sets)
      if (p.id == id) return &p;
    return nullptr;
  }
};

struct WindowOptions {
  int history_size = 2;
  // Produce targets for speaker1 turns too, when the dialog names a partner
  // persona for speaker1.
  bool both_sides = true;
};

// One example per turn whose speaker owns a persona in this dialog. Each
// history holds at most 2*history_size immediately preceding turns, in order.
inline std::vector<TrainingExample> window_history(
    const Dialog& dialog, int history_size, bool both_sides = true) {
  if (history_size <= 0) throw DomainError("history_size must be positive");
  std::vector<TrainingExample> out;
  const std::size_t window = static_cast<std::size_t>(2 * history_size);
  for (std::size_t i = 0; i < dialog.turns.size(); ++i) {
    const DialogTurn& turn = dialog.turns[i];
    std::string persona;
    if (turn.speaker == Speaker::Speaker2) {
      persona = dialog.persona_set_id;
    } else if (both_sides && dialog.partner_persona_set_id) {
      persona = *dialog.partner_persona_set_id;
    } else {
      continue;
    }
    if (text::normalize(turn.text).empty()) continue;
    TrainingExample ex;
    ex.id = dialog.id + ":" + std::to_string(i);
    ex.dialog_id = dialog.id;
    ex.persona_set_id = persona;
    ex.target_speaker = turn.speaker;
    ex.target = turn.text;
    std::size_t begin = i > window ? i - window : 0;
    ex.history.turns.assign(dialog.turns.begin() + static_cast<std::ptrdiff_t>(begin),
                            dialog.turns.begin() + static_cast<std::ptrdiff_t>(i));
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<TrainingExample> window_corpus(const Corpus& corpus,
                                                  const WindowOptions& opt = {}) {
  std::vector<TrainingExample> out;
  for (auto& d : corpus.dialogs) {
    auto ex = window_history(d, opt.history_size, opt.both_sides);
    out.insert(out.end(), std::make_move_iterator(ex.begin()),
               std::make_move_iterator(ex.end()));
  }
  return out;
}

struct CorpusCounts {
  std::size_t persona_sets = 0;
  std::size_t dialogs = 0;
  std::size_t examples = 0;
};

inline CorpusCounts count(const Corpus& corpus, const WindowOptions& opt = {}) {
  CorpusCounts c{corpus.persona_sets.size(), corpus.dialogs.size(), 0};
  for (auto& d : corpus.dialogs)
    c.examples += window_history(d, opt.history_size, opt.both_sides).size();
  return c;
}

namespace detail {

inline std::string line_ctx(const std::string& path, std::size_t line) {
  return path + ":" + std::to_string(line);
}

inline const nlohmann::json& require(const nlohmann::json& j, const char* key,
                                     const std::string& ctx) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(ctx + ": missing field '" + key + "'");
  return *it;
}

}  // namespace detail

// Reads a corpus file. Each line is either
//   {"kind":"persona_set","id":...,"sentences":[...]}
// or
//   {"kind":"dialog","id":...,"persona_set_id":...,
//    "partner_persona_set_id":...(optional),"turns":[{"speaker","text"}]}
inline Corpus parse_personachat(std::istream& in, Split split,
                                const std::string& source = "<stream>") {
  Corpus corpus;
  corpus.split = split;
  std::string line;
  std::size_t lineno = 0;
  std::unordered_map<std::string, std::size_t> set_index;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::normalize(line).empty()) continue;
    const std::string ctx = detail::line_ctx(source, lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(ctx + ": malformed record: " + e.what());
    }
    try {
      const std::string kind = detail::require(j, "kind", ctx).get<std::string>();
      if (kind == "persona_set") {
        auto id = detail::require(j, "id", ctx).get<std::string>();
        auto texts = detail::require(j, "sentences", ctx).get<std::vector<std::string>>();
        if (set_index.count(id)) throw ParseError(ctx + ": duplicate persona set id " + id);
        try {
          corpus.persona_sets.push_back(make_persona_set(id, texts));
        } catch (const ValidationError& e) {
          throw ParseError(ctx + ": " + e.what());
        }
        set_index.emplace(id, corpus.persona_sets.size() - 1);
      } else if (kind == "dialog") {
        Dialog d;
        d.id = detail::require(j, "id", ctx).get<std::string>();
        d.persona_set_id = detail::require(j, "persona_set_id", ctx).get<std::string>();
        if (j.contains("partner_persona_set_id") && !j["partner_persona_set_id"].is_null())
          d.partner_persona_set_id = j["partner_persona_set_id"].get<std::string>();
        for (auto& t : detail::require(j, "turns", ctx)) {
          DialogTurn turn;
          turn.speaker = parse_speaker(detail::require(t, "speaker", ctx).get<std::string>());
          turn.text = text::normalize(detail::require(t, "text", ctx).get<std::string>());
          if (!d.turns.empty() && d.turns.back().speaker == turn.speaker)
            throw ParseError(ctx + ": speakers must alternate");
          d.turns.push_back(std::move(turn));
        }
        corpus.dialogs.push_back(std::move(d));
      } else {
        throw ParseError(ctx + ": unknown record kind '" + kind + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(ctx + ": malformed record: " + e.what());
    } catch (const ParseError& e) {
      const std::string what = e.what();
      if (what.rfind(source, 0) == 0) throw;
      throw ParseError(ctx + ": " + what);
    }
  }
  for (auto& d : corpus.dialogs) {
    if (!set_index.count(d.persona_set_id))
      throw IntegrityError("dialog " + d.id + " references missing persona set " +
                           d.persona_set_id);
    if (d.partner_persona_set_id && !set_index.count(*d.partner_persona_set_id))
      throw IntegrityError("dialog " + d.id + " references missing persona set " +
                           *d.partner_persona_set_id);
  }
  return corpus;
}

inline Corpus load_personachat(const std::string& path, Split split) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open corpus file " + path);
  return parse_personachat(in, split, path);
}

inline void write_personachat(const Corpus& corpus, std::ostream& out) {
  for (auto& p : corpus.persona_sets) {
    nlohmann::json j{{"kind", "persona_set"}, {"id", p.id}};
    j["sentences"] = nlohmann::json::array();
    for (auto& s : p.sentences) j["sentences"].push_back(s.text);
    out << j.dump() << '\n';
  }
  for (auto& d : corpus.dialogs) {
    nlohmann::json j{{"kind", "dialog"}, {"id", d.id}, {"persona_set_id", d.persona_set_id}};
    if (d.partner_persona_set_id) j["partner_persona_set_id"] = *d.partner_persona_set_id;
    j["turns"] = nlohmann::json::array();
    for (auto& t : d.turns)
      j["turns"].push_back({{"speaker", to_string(t.speaker)}, {"text", t.text}});
    out << j.dump() << '\n';
  }
}

inline void write_personachat(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write corpus file " + path);
  write_personachat(corpus, out);
}

// ---------------------------------------------------------------------------
// DNLI entailment pairs

struct EntailmentPair {
  std::string persona_set_id;
  std::string persona_sentence_id;
  std::string utterance;
  // Utterance is a target in the supplied evaluation split.
  bool matched = false;
  std::string example_id;
};

struct DnliStats {
  std::size_t rows = 0;
  std::size_t entailment_rows = 0;
  std::size_t unresolved = 0;  // persona text not found in any known set
  std::size_t matched = 0;
};

// Keeps only entailment-labeled rows. Persona texts are resolved against
// `personas` by exact normalized text; utterances are matched against the
// targets of `eval_split` (when given) by exact normalized text.
inline std::vector<EntailmentPair> parse_dnli_entailment(
    std::istream& in, const Corpus* personas, const Corpus* eval_split,
    DnliStats* stats = nullptr, const WindowOptions& opt = {},
    const std::string& source = "<stream>") {
  std::unordered_multimap<std::string, std::pair<std::string, std::string>> by_text;
  if (personas)
    for (auto& p : personas->persona_sets)
      for (auto& s : p.sentences) by_text.emplace(s.text, std::make_pair(p.id, s.id));

  std::unordered_map<std::string, std::vector<const TrainingExample*>> targets;
  std::vector<TrainingExample> examples;
  if (eval_split) {
    examples = window_corpus(*eval_split, opt);
    for (auto& ex : examples) targets[text::normalize(ex.target)].push_back(&ex);
  }

  DnliStats st;
  std::vector<EntailmentPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::normalize(line).empty()) continue;
    const std::string ctx = detail::line_ctx(source, lineno);
    nlohmann::json j;
    std::string label, persona_text, utterance;
    try {
      j = nlohmann::json::parse(line);
      label = detail::require(j, "label", ctx).get<std::string>();
      persona_text = text::normalize(detail::require(j, "persona_text", ctx).get<std::string>());
      utterance = text::normalize(detail::require(j, "utterance", ctx).get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(ctx + ": malformed record: " + e.what());
    }
    ++st.rows;
    if (label != "entailment" && label != "neutral" && label != "contradiction")
      throw ParseError(ctx + ": unknown label '" + label + "'");
    if (label != "entailment") continue;
    ++st.entailment_rows;

    EntailmentPair pair;
    pair.utterance = utterance;
    if (personas) {
      auto matches = by_text.equal_range(persona_text);
      if (matches.first == matches.second) {
        ++st.unresolved;
        continue;
      }
      // Prefer the persona set of the dialog the utterance came from.
      pair.persona_set_id = matches.first->second.first;
      pair.persona_sentence_id = matches.first->second.second;
      if (auto it = targets.find(utterance); it != targets.end()) {
        for (auto m = matches.first; m != matches.second; ++m)
          for (auto* ex : it->second)
            if (ex->persona_set_id == m->second.first) {
              pair.persona_set_id = m->second.first;
              pair.persona_sentence_id = m->second.second;
              pair.matched = true;
              pair.example_id = ex->id;
            }
      }
    } else {
      pair.persona_sentence_id = persona_text;
    }
    if (pair.matched) ++st.matched;
    out.push_back(std::move(pair));
  }
  if (stats) *stats = st;
  return out;
}

inline std::vector<EntailmentPair> load_dnli_entailment(
    const std::string& path, const Corpus* personas = nullptr,
    const Corpus* eval_split = nullptr, DnliStats* stats = nullptr,
    const WindowOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open DNLI file " + path);
  return parse_dnli_entailment(in, personas, eval_split, stats, opt, path);
}

}  // namespace groundchat
