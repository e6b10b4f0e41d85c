#pragma once

// End-to-end helpers shared by the command-line tool and the tests: load a
// split, expand its personas, build the vocabulary, prepare examples.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "groundchat/config.hpp"
#include "groundchat/corpus.hpp"
#include "groundchat/dataset.hpp"
#include "groundchat/expansion.hpp"
#include "groundchat/generator.hpp"
#include "groundchat/model.hpp"

namespace groundchat {

struct SplitData {
  Corpus corpus;
  CandidateIndex index;
  std::vector<TrainingExample> examples;
};

inline WindowOptions window_options(const Settings& s) {
  return {s.train.history_size, s.train.both_sides};
}

// Expansion backend named by the settings; nullptr when expansion is off.
inline std::shared_ptr<ExpanderBackend> backend_from(const Settings& s) {
  if (s.expansion.backend.empty() || s.expansion.backend == "none") return nullptr;
  return make_backend(s.expansion.backend);
}

inline SplitData make_split(Corpus corpus, const Settings& s, const ExpanderBackend* backend) {
  SplitData d;
  d.corpus = std::move(corpus);
  d.index = build_candidate_index(d.corpus.persona_sets, backend, expansion_plan_from(s.expansion));
  d.examples = window_corpus(d.corpus, window_options(s));
  return d;
}

inline SplitData load_split(const std::string& path, Split split, const Settings& s,
                            const ExpanderBackend* backend) {
  return make_split(load_personachat(path, split), s, backend);
}

inline Tokenizer build_tokenizer(const std::vector<const SplitData*>& splits, int min_count,
                                 const std::vector<std::string>& extra = {}) {
  std::vector<std::string> texts = extra;
  for (auto* d : splits) {
    auto t = vocabulary_texts(d->corpus, d->index);
    texts.insert(texts.end(), t.begin(), t.end());
  }
  return Tokenizer::build(texts, min_count);
}

inline std::vector<PreparedExample> prepare(const SplitData& d, const Model& m,
                                            std::size_t limit = 0) {
  std::vector<TrainingExample> ex = d.examples;
  if (limit > 0 && ex.size() > limit) ex.resize(limit);
  return prepare_examples(ex, d.index, *m.encoder, m.settings.encoder.last_turn_only);
}

}  // namespace groundchat
