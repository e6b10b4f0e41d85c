#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include <cmath>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "groundchat/groundchat.hpp"

namespace gc_test {

namespace gc = groundchat;

// Fixed log-probability for every next token: ln(1/V).
class UniformLM final : public gc::ConditionalLM {
 public:
  explicit UniformLM(int vocab, int max_len = 64) : v_(vocab), l_(max_len) {}
  int vocab_size() const override { return v_; }
  int max_len() const override { return l_; }
  std::vector<double> token_log_probs(const gc::AssembledInput& in) const override {
    std::vector<double> lp(in.size(), -std::log(static_cast<double>(v_)));
    if (!lp.empty()) lp[0] = 0.0;
    return lp;
  }
  gc::VectorXd next_log_probs(const gc::AssembledInput&) const override {
    return gc::VectorXd::Constant(v_, -std::log(static_cast<double>(v_)));
  }

 private:
  int v_, l_;
};

// Emits `script` token by token, then the end token, with probability one.
class ScriptedLM final : public gc::ConditionalLM {
 public:
  ScriptedLM(int vocab, std::vector<int> script, std::size_t prompt_len, int max_len = 64)
      : v_(vocab), script_(std::move(script)), prompt_(prompt_len), l_(max_len) {}
  int vocab_size() const override { return v_; }
  int max_len() const override { return l_; }
  std::vector<double> token_log_probs(const gc::AssembledInput& in) const override {
    std::vector<double> lp(in.size(), 0.0);
    for (std::size_t t = 1; t < in.size(); ++t) {
      gc::AssembledInput prefix;
      for (std::size_t i = 0; i < t; ++i) prefix.push(in.tokens[i], in.segments[i], false);
      lp[t] = next_log_probs(prefix)[in.tokens[t]];
    }
    return lp;
  }
  gc::VectorXd next_log_probs(const gc::AssembledInput& prefix) const override {
    const std::size_t step = prefix.size() >= prompt_ ? prefix.size() - prompt_ : 0;
    const int next = step < script_.size() ? script_[step] : gc::Tokenizer::kEos;
    gc::VectorXd lp = gc::VectorXd::Constant(v_, -std::numeric_limits<double>::infinity());
    lp[next] = 0.0;
    return lp;
  }

 private:
  int v_;
  std::vector<int> script_;
  std::size_t prompt_;
  int l_;
};

inline gc::Settings tiny_settings() {
  gc::Settings s;
  s.encoder.kind = "fallback";
  s.encoder.dim = 16;
  s.lm.width = 16;
  s.lm.layers = 1;
  s.lm.heads = 2;
  s.lm.ffn = 32;
  s.lm.max_len = 64;
  s.lm.init_std = 0.1;
  s.decode.max_new_tokens = 8;
  return s;
}

inline const std::vector<std::string>& toy_words() {
  static const std::vector<std::string> w = {
      "i", "like", "love", "red", "blue", "green", "cats", "dogs", "tea", "surfing",
      "my", "favorite", "color", "is", "am", "a", "nurse", "hello", "how", "are",
      "you", "?", "!", ".", "want", "to", "go", "the", "beach", "adventurous"};
  return w;
}

inline gc::Model tiny_model(const gc::Settings& s = tiny_settings()) {
  return gc::Model::create(s, gc::Tokenizer(toy_words()));
}

// Every LM tensor zeroed: the final hidden state is zero, so the output
// distribution is uniform over the vocabulary.
inline void make_uniform(gc::Model& m) {
  m.lm.params().for_each([](const std::string&, gc::MatrixXd& t) { t.setZero(); });
}

inline gc::DialogHistory history(std::initializer_list<std::string> turns,
                                 gc::Speaker first = gc::Speaker::Speaker1) {
  gc::DialogHistory h;
  gc::Speaker s = first;
  for (auto& t : turns) {
    h.turns.push_back({s, t});
    s = gc::other(s);
  }
  return h;
}

// A prepared example over the given persona texts with no expansions.
inline gc::PreparedExample prepared(const gc::Model& m, const std::vector<std::string>& persona,
                                    const gc::DialogHistory& h, const std::string& target,
                                    const std::string& id = "toy") {
  gc::PersonaSet set = gc::make_persona_set(id + "-p", persona);
  auto cs = std::make_shared<gc::CandidateSet>(gc::build_candidate_set(set, {}));
  gc::TrainingExample ex;
  ex.id = id + ":0";
  ex.dialog_id = id;
  ex.persona_set_id = set.id;
  ex.history = h;
  ex.target_speaker = gc::responder_for(h);
  ex.target = target;
  gc::CandidateIndex idx{{set.id, cs}};
  return gc::prepare_examples({ex}, idx, *m.encoder)[0];
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("gc-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace gc_test
