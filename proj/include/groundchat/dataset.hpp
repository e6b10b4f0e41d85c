#pragma once

// Glue between the corpus, the expansion pipeline and the frozen encoder:
// one candidate set per persona set, and per-example latent inputs computed
// once up front.

#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "groundchat/config.hpp"
#include "groundchat/corpus.hpp"
#include "groundchat/embedder.hpp"
#include "groundchat/expansion.hpp"
#include "groundchat/latent.hpp"

namespace groundchat {

using CandidateIndex = std::unordered_map<std::string, std::shared_ptr<const CandidateSet>>;

struct PreparedExample {
  TrainingExample example;
  std::shared_ptr<const CandidateSet> candidates;
  LatentInputs inputs;
  // Gold grounding sentence, when known (DNLI or synthetic data).
  std::optional<std::string> gold_source_id;
};

inline ExpansionPlan expansion_plan_from(const ExpansionSettings& s) {
  ExpansionPlan plan;
  plan.relations.clear();
  for (auto& part : text::split_list(s.relations)) plan.relations.push_back(parse_expansion_type(part));
  for (auto r : plan.relations)
    if (!is_relation(r)) throw ValidationError("expansion.relations lists non-relation " + to_string(r));
  if (s.n < 0 || s.paraphrases < 0) throw ValidationError("expansion counts must be >= 0");
  plan.n = s.n;
  plan.paraphrases = s.paraphrases;
  plan.seed = s.seed;
  for (auto& [type, prefix] : s.prefixes) plan.prefixes.set(parse_expansion_type(type), prefix);
  return plan;
}

inline CandidateIndex build_candidate_index(const std::vector<PersonaSet>& sets,
                                            const ExpanderBackend* backend,
                                            const ExpansionPlan& plan) {
  CandidateIndex index;
  for (auto& s : sets) {
    std::vector<Expansion> exps;
    if (backend) exps = expand_persona_set(s, *backend, plan);
    index.emplace(s.id, std::make_shared<CandidateSet>(build_candidate_set(s, exps)));
  }
  return index;
}

inline std::vector<PreparedExample> prepare_examples(
    const std::vector<TrainingExample>& examples, const CandidateIndex& index,
    const Encoder& enc, bool last_turn_only = false) {
  std::vector<PreparedExample> out;
  out.reserve(examples.size());
  for (auto& ex : examples) {
    auto it = index.find(ex.persona_set_id);
    if (it == index.end())
      throw IntegrityError("example " + ex.id + " has no candidate set for persona " +
                           ex.persona_set_id);
    PreparedExample p;
    p.example = ex;
    p.candidates = it->second;
    p.inputs = make_latent_inputs(ex.history, *p.candidates, enc, ex.target, last_turn_only);
    out.push_back(std::move(p));
  }
  return out;
}

// All texts the generator vocabulary has to cover.
inline std::vector<std::string> vocabulary_texts(const Corpus& corpus,
                                                 const CandidateIndex& index) {
  std::vector<std::string> texts;
  for (auto& p : corpus.persona_sets)
    for (auto& s : p.sentences) texts.push_back(s.text);
  for (auto& d : corpus.dialogs)
    for (auto& t : d.turns) texts.push_back(t.text);
  for (auto& [id, c] : index)
    for (auto& e : c->candidates) texts.push_back(e.text);
  return texts;
}

}  // namespace groundchat
