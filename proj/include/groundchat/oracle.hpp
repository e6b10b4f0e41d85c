#pragma once

// Exact enumeration over small candidate sets, and central-difference
// gradient checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "groundchat/dataset.hpp"
#include "groundchat/errors.hpp"
#include "groundchat/evaluation.hpp"
#include "groundchat/latent.hpp"
#include "groundchat/model.hpp"
#include "groundchat/training.hpp"

namespace groundchat {

struct OracleBudget {
  int max_candidates = 32;
  int max_target_tokens = 64;

  void validate() const {
    if (max_candidates <= 0 || max_target_tokens <= 0)
      throw ValidationError("oracle budget must be positive");
  }
};

// log Σ_k p(k) exp(ll_k), from prior log-probabilities and log-likelihoods.
inline double exact_log_marginal(const VectorXd& log_prior, const VectorXd& ll) {
  if (log_prior.size() != ll.size() || ll.size() == 0)
    throw ContractError("exact_log_marginal: size mismatch");
  return logsumexp(log_prior + ll);
}

inline Categorical exact_posterior(const VectorXd& log_prior, const VectorXd& ll) {
  if (log_prior.size() != ll.size() || ll.size() == 0)
    throw ContractError("exact_posterior: size mismatch");
  return Categorical(log_softmax(log_prior + ll).array().exp().matrix());
}

namespace oracle_detail {

inline void check_budget(const PreparedExample& ex, const Model& model, const OracleBudget& b) {
  b.validate();
  if (static_cast<int>(ex.candidates->size()) > b.max_candidates)
    throw BudgetError("candidate set of " + std::to_string(ex.candidates->size()) +
                      " exceeds oracle budget " + std::to_string(b.max_candidates));
  if (target_token_count(ex.example, model) > b.max_target_tokens)
    throw BudgetError("target exceeds oracle token budget");
}

}  // namespace oracle_detail

inline double exact_log_marginal(const PreparedExample& ex, const Model& model,
                                 const OracleBudget& budget = {}) {
  oracle_detail::check_budget(ex, model, budget);
  return exact_log_marginal(log_softmax(prior_logits(ex.inputs, model.prior)),
                            candidate_log_likelihoods(ex.example, *ex.candidates, model));
}

inline Categorical exact_posterior(const PreparedExample& ex, const Model& model,
                                   const OracleBudget& budget = {}) {
  oracle_detail::check_budget(ex, model, budget);
  return exact_posterior(log_softmax(prior_logits(ex.inputs, model.prior)),
                         candidate_log_likelihoods(ex.example, *ex.candidates, model));
}

// ---------------------------------------------------------------------------
// Finite differences

struct FdEntry {
  std::string tensor;
  Eigen::Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool finite = true;
};

struct FdReport {
  std::vector<FdEntry> entries;
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t non_finite = 0;

  bool passed(double tol) const { return non_finite == 0 && max_rel_error < tol; }
};

// |a − n| / max(|a|, |n|, floor)
inline double fd_relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct FdTarget {
  std::string name;
  MatrixXd* tensor = nullptr;
  const MatrixXd* gradient = nullptr;
  std::vector<Eigen::Index> indices;  // empty: every coordinate
};

// Central differences of `loss` around the current parameter values against
// the supplied analytic gradients. Parameters are restored afterwards.
inline FdReport finite_diff_check(const std::vector<FdTarget>& targets,
                                  const std::function<double()>& loss, double eps = 1e-5,
                                  double floor = 1e-6) {
  if (!(eps > 0.0)) throw DomainError("finite difference eps must be positive");
  FdReport r;
  for (auto& t : targets) {
    std::vector<Eigen::Index> idx = t.indices;
    if (idx.empty())
      for (Eigen::Index i = 0; i < t.tensor->size(); ++i) idx.push_back(i);
    for (Eigen::Index i : idx) {
      double& x = t.tensor->data()[i];
      const double orig = x;
      x = orig + eps;
      const double up = loss();
      x = orig - eps;
      const double down = loss();
      x = orig;
      FdEntry e;
      e.tensor = t.name;
      e.index = i;
      e.analytic = t.gradient->data()[i];
      e.finite = std::isfinite(up) && std::isfinite(down);
      if (!e.finite) {
        ++r.non_finite;
        e.numeric = std::numeric_limits<double>::quiet_NaN();
        e.rel_error = std::numeric_limits<double>::infinity();
      } else {
        e.numeric = (up - down) / (2.0 * eps);
        e.rel_error = fd_relative_error(e.analytic, e.numeric, floor);
        if (e.rel_error > r.max_rel_error) {
          r.max_rel_error = e.rel_error;
          r.worst = t.name + "[" + std::to_string(i) + "]";
        }
      }
      r.entries.push_back(e);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Identity sweep

struct IdentitySweep {
  int cases = 0;
  int max_candidates = 0;
  int max_target_tokens = 0;
  double max_identity_error = 0.0;  // |(log p(x) − ELBO(q)) − KL(q || posterior)|
  bool elbo_below_marginal = true;
};

// Random tiny models, persona sets of 1..7 sentences (so |C| <= 8) and
// targets of 1..10 words; checks the marginal / ELBO / posterior identity.
inline IdentitySweep oracle_identity_sweep(int cases, std::uint64_t seed,
                                           Settings base = {}) {
  std::mt19937_64 rng(seed);
  const std::vector<std::string> words = {"i", "like", "red", "blue", "cats", "dogs", "tea",
                                          "run", "swim", "my", "is", "favorite", "we", "go"};
  auto phrase = [&](int n) {
    std::vector<std::string> w;
    for (int i = 0; i < n; ++i) w.push_back(words[rng() % words.size()]);
    return text::join(w);
  };
  std::vector<std::string> vocab = words;
  for (int k = 0; k < 8; ++k) vocab.push_back(std::to_string(k));
  const Tokenizer tok(vocab);
  base.lm.width = 16;
  base.lm.layers = 1;
  base.lm.heads = 2;
  base.lm.ffn = 32;
  base.lm.max_len = 64;
  base.lm.init_std = 0.3;
  base.latent.init_std = 0.5;
  base.encoder.kind = "fallback";
  base.encoder.dim = 16;

  IdentitySweep r;
  r.cases = cases;
  for (int i = 0; i < cases; ++i) {
    base.latent.seed = rng();
    base.lm.seed = rng();
    Model m = Model::create(base, tok);
    std::vector<std::string> texts;
    const int n = 1 + static_cast<int>(rng() % 7);
    for (int k = 0; k < n; ++k) texts.push_back(phrase(3) + " " + std::to_string(k));
    PersonaSet set = make_persona_set("case" + std::to_string(i), texts);
    auto cs = std::make_shared<CandidateSet>(build_candidate_set(set, {}));
    TrainingExample ex;
    ex.id = "case:" + std::to_string(i);
    ex.persona_set_id = set.id;
    ex.history.turns.push_back({Speaker::Speaker1, phrase(4)});
    ex.target_speaker = Speaker::Speaker2;
    ex.target = phrase(1 + static_cast<int>(rng() % 10));
    CandidateIndex idx{{set.id, cs}};
    const PreparedExample p = prepare_examples({ex}, idx, *m.encoder)[0];

    const VectorXd log_p = log_softmax(prior_logits(p.inputs, m.prior));
    const VectorXd log_q = log_softmax(posterior_logits(p.inputs, m.inference));
    const VectorXd ll = candidate_log_likelihoods(p.example, *cs, m);
    const double marginal = exact_log_marginal(log_p, ll);
    const double elbo = exact_elbo(log_q, log_p, ll);
    const Categorical post = exact_posterior(log_p, ll);
    const double kl = kl_categorical(Categorical(log_q.array().exp().matrix()), post);
    r.max_identity_error = std::max(r.max_identity_error, std::abs((marginal - elbo) - kl));
    r.elbo_below_marginal = r.elbo_below_marginal && elbo <= marginal + 1e-12;
    r.max_candidates = std::max(r.max_candidates, static_cast<int>(cs->size()));
    r.max_target_tokens = std::max(r.max_target_tokens, target_token_count(p.example, m));
  }
  return r;
}

}  // namespace groundchat
