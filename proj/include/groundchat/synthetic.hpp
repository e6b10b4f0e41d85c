#pragma once

// Copy-grounding corpus: every persona sentence names a nonce entity, the
// user asks about one category, and the bot reply repeats that sentence's
// entity. The gold grounding sentence of each bot turn is therefore known.

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "groundchat/corpus.hpp"
#include "groundchat/errors.hpp"
#include "groundchat/evaluation.hpp"
#include "groundchat/text.hpp"

namespace groundchat {

struct SyntheticOptions {
  int dialogs = 2000;
  int sentences_per_set = 3;
  int exchanges = 3;      // user/bot pairs per dialog
  int entity_pool = 400;
  std::uint64_t seed = 7;
  std::string id_prefix = "syn";
};

struct SyntheticCorpus {
  Corpus corpus;
  // example id -> gold persona sentence id
  std::unordered_map<std::string, std::string> gold;
  // persona set id -> category -> sentence index
  std::unordered_map<std::string, std::unordered_map<std::string, std::size_t>> category_index;
  std::vector<std::string> entities;
};

inline const std::vector<std::string>& synthetic_categories() {
  static const std::vector<std::string> k = {
      "color", "food",  "animal", "band",   "sport",  "city",
      "book",  "drink", "game",   "flower", "season", "movie"};
  return k;
}

// Deterministic nonce words built from consonant-vowel syllables.
inline std::vector<std::string> synthetic_entities(int n, std::uint64_t seed) {
  static const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n",
                                  "p", "r", "s", "t", "v", "z", "qu", "th"};
  static const char* kVowels[] = {"a", "e", "i", "o", "u"};
  static const char* kCodas[] = {"x", "k", "n", "r", "th", "z"};
  std::set<std::string> seen;
  std::vector<std::string> out;
  std::uint64_t state = seed ^ 0x9e3779b97f4a7c15ULL;
  while (static_cast<int>(out.size()) < n) {
    std::string w;
    for (int s = 0; s < 2; ++s) {
      w += kOnsets[text::splitmix64(state) % 16];
      w += kVowels[text::splitmix64(state) % 5];
    }
    w += kCodas[text::splitmix64(state) % 6];
    if (text::stopwords().count(w) || !seen.insert(w).second) continue;
    out.push_back(w);
  }
  return out;
}

inline std::string synthetic_persona_sentence(const std::string& category,
                                              const std::string& entity) {
  return "my favorite " + category + " is " + entity;
}

inline std::string synthetic_question(const std::string& category, std::size_t variant) {
  switch (variant % 3) {
    case 0: return "what is your favorite " + category + " ?";
    case 1: return "tell me your favorite " + category + " .";
    default: return "do you have a favorite " + category + " ?";
  }
}

inline std::string synthetic_answer(const std::string& entity, std::size_t variant) {
  switch (variant % 4) {
    case 0: return "i love " + entity + " so much";
    case 1: return "it has to be " + entity;
    case 2: return entity + " for sure";
    default: return "my favorite is " + entity + " !";
  }
}

inline SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& opt, Split split) {
  const auto& cats = synthetic_categories();
  if (opt.sentences_per_set < 1 || opt.sentences_per_set > static_cast<int>(cats.size()))
    throw ValidationError("sentences_per_set out of range");
  if (opt.exchanges < 1 || opt.exchanges > opt.sentences_per_set)
    throw ValidationError("exchanges must be between 1 and sentences_per_set");
  if (opt.entity_pool < opt.sentences_per_set)
    throw ValidationError("entity pool smaller than a persona set");

  SyntheticCorpus out;
  out.corpus.split = split;
  out.entities = synthetic_entities(opt.entity_pool, opt.seed);
  std::mt19937_64 rng(opt.seed * 1000003ULL + static_cast<std::uint64_t>(split));
  auto pick = [&](std::size_t n) {
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(rng()) * static_cast<unsigned __int128>(n)) >> 64);
  };
  auto draw_distinct = [&](std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + pick(n - i)]);
    idx.resize(k);
    return idx;
  };

  const std::string tag = opt.id_prefix + "-" + to_string(split);
  const auto spc = static_cast<std::size_t>(opt.sentences_per_set);
  for (int d = 0; d < opt.dialogs; ++d) {
    const std::string set_id = tag + "-p" + std::to_string(d);
    auto cat_idx = draw_distinct(cats.size(), spc);
    auto ent_idx = draw_distinct(out.entities.size(), spc);
    std::vector<std::string> texts;
    for (std::size_t i = 0; i < spc; ++i)
      texts.push_back(synthetic_persona_sentence(cats[cat_idx[i]], out.entities[ent_idx[i]]));
    out.corpus.persona_sets.push_back(make_persona_set(set_id, texts));
    auto& cmap = out.category_index[set_id];
    for (std::size_t i = 0; i < spc; ++i) cmap[cats[cat_idx[i]]] = i;

    Dialog dialog;
    dialog.id = tag + "-d" + std::to_string(d);
    dialog.persona_set_id = set_id;
    auto asked = draw_distinct(spc, static_cast<std::size_t>(opt.exchanges));
    for (std::size_t e = 0; e < asked.size(); ++e) {
      const std::size_t s = asked[e];
      dialog.turns.push_back({Speaker::Speaker1, synthetic_question(cats[cat_idx[s]], pick(3))});
      const std::size_t bot_turn = dialog.turns.size();
      dialog.turns.push_back({Speaker::Speaker2, synthetic_answer(out.entities[ent_idx[s]], pick(4))});
      out.gold[dialog.id + ":" + std::to_string(bot_turn)] = sentence_id(set_id, s);
    }
    out.corpus.dialogs.push_back(std::move(dialog));
  }
  return out;
}

inline void attach_synthetic_gold(std::vector<PreparedExample>& examples,
                                  const SyntheticCorpus& sc) {
  for (auto& p : examples)
    if (auto it = sc.gold.find(p.example.id); it != sc.gold.end())
      p.gold_source_id = it->second;
}

// Entity-swap cases: the gold sentence of each example, with its entity
// replaced by a pool entity that does not occur in that persona set.
inline std::vector<EditedPersonaCase> synthetic_controllability_cases(
    const std::vector<PreparedExample>& examples, const SyntheticCorpus& sc, std::size_t count,
    std::uint64_t seed) {
  std::vector<EditedPersonaCase> out;
  std::mt19937_64 rng(seed);
  for (auto& p : examples) {
    if (out.size() >= count) break;
    if (!p.gold_source_id) continue;
    const PersonaSet* set = sc.corpus.find_persona_set(p.example.persona_set_id);
    if (!set) continue;
    const PersonaSentence* gold = set->find(*p.gold_source_id);
    if (!gold) continue;
    std::set<std::string> used;
    for (auto& s : set->sentences) {
      auto w = text::words(s.text);
      if (!w.empty()) used.insert(w.back());
    }
    std::string fresh;
    do {
      fresh = sc.entities[static_cast<std::size_t>(
          (static_cast<unsigned __int128>(rng()) * sc.entities.size()) >> 64)];
    } while (used.count(fresh));
    auto words = text::words(gold->text);
    const std::string old_entity = words.back();
    words.back() = fresh;
    Expansion original{gold->id, ExpansionType::Original, gold->text, 0};
    Expansion edited{gold->id, ExpansionType::Original, text::join(words), 0};
    EditedPersonaCase c = make_edited_case(p.example.history, original, edited,
                                           EditKind::EntitySwap, fresh);
    c.responder = p.example.target_speaker;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace groundchat
