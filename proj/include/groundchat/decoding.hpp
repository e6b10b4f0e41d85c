#pragma once

// Response production: draw a candidate from the temperature-scaled prior,
// then nucleus-sample the generator conditioned on it.

#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "groundchat/config.hpp"
#include "groundchat/generator.hpp"
#include "groundchat/latent.hpp"
#include "groundchat/model.hpp"
#include "groundchat/sampling.hpp"

namespace groundchat {

struct DecodeConfig {
  double nucleus_p = 0.95;
  double prior_temperature = 1.0;
  int max_new_tokens = 32;
  std::uint64_t seed = 0;

  static DecodeConfig from(const DecodeSettings& s) {
    return {s.nucleus_p, s.prior_temperature, s.max_new_tokens, s.seed};
  }

  void validate() const {
    if (!(nucleus_p > 0.0) || nucleus_p > 1.0) throw DomainError("nucleus_p must lie in (0, 1]");
    if (!(prior_temperature > 0.0)) throw DomainError("prior_temperature must be positive");
    if (max_new_tokens <= 0) throw DomainError("max_new_tokens must be positive");
  }
};

struct Response {
  std::string text;
  std::vector<int> tokens;
  std::size_t chosen_index = 0;
  Categorical prior_dist;     // temperature-scaled distribution z was drawn from
  bool forced = false;
  bool truncated = false;
};

inline Categorical prior_distribution(const DialogHistory& history, const CandidateSet& c,
                                      const Model& model, double temperature = 1.0) {
  LatentInputs in = make_latent_inputs(history, c, *model.encoder, std::nullopt,
                                       model.settings.encoder.last_turn_only);
  return softmax_temp(prior_logits(in, model.prior), temperature);
}

template <class Rng>
Response respond(const DialogHistory& history, const CandidateSet& c, const Model& model,
                 const DecodeConfig& cfg, Rng& rng,
                 std::optional<std::size_t> forced_index = std::nullopt,
                 std::optional<Speaker> responder = std::nullopt) {
  cfg.validate();
  if (c.size() == 0) throw ContractError("respond: empty candidate set");
  Response r;
  r.prior_dist = prior_distribution(history, c, model, cfg.prior_temperature);
  if (forced_index) {
    if (*forced_index >= c.size()) throw ValidationError("forced candidate index out of range");
    r.chosen_index = *forced_index;
    r.forced = true;
  } else {
    r.chosen_index = sample(r.prior_dist, rng);
  }
  const int budget = model.lm.max_len() - cfg.max_new_tokens;
  if (budget <= 0) throw LengthError("max_new_tokens leaves no room for the context");
  AssembledInput prompt = assemble(c[r.chosen_index], history, std::nullopt, model.tokenizer,
                                   budget, responder);
  GenerateConfig g{cfg.nucleus_p, cfg.max_new_tokens, Tokenizer::kEos, cfg.seed};
  Generation gen = generate(prompt, model.lm, g, rng);
  r.tokens = gen.tokens;
  r.truncated = gen.truncated;
  r.text = model.tokenizer.decode(gen.tokens);
  return r;
}

}  // namespace groundchat
