#pragma once

// Variational training of the prior (θ), generator (φ) and inference network
// (α). θ and φ receive exact gradients of the ELBO terms; α receives a
// score-function estimate for the reconstruction term with a moving-average
// baseline, plus the closed-form KL gradient. An exact mode replaces the
// sampled reconstruction term by its expectation over every candidate.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "groundchat/dataset.hpp"
#include "groundchat/errors.hpp"
#include "groundchat/evaluation.hpp"
#include "groundchat/latent.hpp"
#include "groundchat/model.hpp"
#include "groundchat/optim.hpp"

namespace groundchat {

// β(t) = min(1, t / steps); steps <= 0 disables annealing.
inline double kl_anneal(long t, long steps) {
  if (t < 0) throw DomainError("kl_anneal: negative step index");
  if (steps <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(t) / static_cast<double>(steps));
}

struct ElboTerms {
  double recon = 0.0;  // log p(x | z, H) for the given z
  double kl = 0.0;     // KL(q || p) over all candidates
  double elbo() const { return recon - kl; }
};

inline ElboTerms elbo_terms(const PreparedExample& ex, const Model& model, std::size_t z) {
  const CandidateSet& c = *ex.candidates;
  if (z >= c.size()) throw ContractError("elbo_terms: z outside candidate set");
  Categorical p = softmax_temp(prior_logits(ex.inputs, model.prior));
  Categorical q = softmax_temp(posterior_logits(ex.inputs, model.inference));
  AssembledInput in = assemble(c[z], ex.example.history, ex.example.target, model.tokenizer,
                               model.lm.max_len(), ex.example.target_speaker);
  return {-target_nll(in, model.lm).total_nll, kl_categorical(q, p)};
}

// E_q[ll] − KL(q || p) from log-probabilities.
inline double exact_elbo(const VectorXd& log_q, const VectorXd& log_p, const VectorXd& ll) {
  const VectorXd q = log_q.array().exp().matrix();
  return q.dot(ll) - (q.array() * (log_q - log_p).array()).sum();
}

// ---------------------------------------------------------------------------
// Gradient pieces with respect to logits. All are gradients of a loss to be
// minimized.

// d/ds^p of  β·KL(q||p) − c_H·H(p)
inline VectorXd prior_dlogits(const VectorXd& p, const VectorXd& q, double beta,
                              double entropy_coeff) {
  VectorXd g = beta * (p - q);
  if (entropy_coeff != 0.0) {
    double h = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k)
      if (p[k] > 0.0) h -= p[k] * std::log(p[k]);
    for (Eigen::Index k = 0; k < p.size(); ++k)
      if (p[k] > 0.0) g[k] += entropy_coeff * p[k] * (std::log(p[k]) + h);
  }
  return g;
}

// d/ds^q of β·KL(q||p)
inline VectorXd kl_q_dlogits(const VectorXd& log_q, const VectorXd& log_p, double beta) {
  const VectorXd q = log_q.array().exp().matrix();
  const VectorXd diff = log_q - log_p;
  const double kl = q.dot(diff);
  return beta * (q.array() * (diff.array() - kl)).matrix();
}

// One-sample score-function estimate of d/ds^q of −c·E_q[reward].
inline VectorXd reinforce_dlogits(const VectorXd& q, std::size_t z, double reward,
                                  double baseline, double coeff) {
  VectorXd g = -q;
  g[static_cast<Eigen::Index>(z)] += 1.0;
  return -coeff * (reward - baseline) * g;
}

// Exact d/ds^q of −c·E_q[ll].
inline VectorXd expected_reward_dlogits(const VectorXd& q, const VectorXd& ll, double coeff) {
  const double mean = q.dot(ll);
  return -coeff * (q.array() * (ll.array() - mean)).matrix();
}

struct BaselineState {
  double b = 0.0;
  bool initialized = false;

  // The first reward seeds the average.
  void update(double reward, double ratio) {
    if (!initialized) {
      b = reward;
      initialized = true;
    } else {
      b = ratio * b + (1.0 - ratio) * reward;
    }
  }
};

// ---------------------------------------------------------------------------

enum class TrainMode { Sampled, Exact };

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "sampled") return TrainMode::Sampled;
  if (s == "exact") return TrainMode::Exact;
  throw ValidationError("unknown training mode '" + s + "'");
}

inline void validate(const TrainSettings& t) {
  auto nonneg = [](double v, const char* n) {
    if (!(v >= 0.0)) throw ValidationError(std::string("train.") + n + " must be >= 0");
  };
  nonneg(t.lr, "lr");
  nonneg(t.lr_decay_per_epoch, "lr_decay_per_epoch");
  nonneg(t.latent_lr_scale, "latent_lr_scale");
  nonneg(t.reinforce_coeff, "reinforce_coeff");
  nonneg(t.lm_coeff, "lm_coeff");
  nonneg(t.entropy_coeff, "entropy_coeff");
  nonneg(t.weight_decay, "weight_decay");
  if (!(t.baseline_ratio >= 0.0 && t.baseline_ratio < 1.0))
    throw ValidationError("train.baseline_ratio must lie in [0, 1)");
  if (t.samples_per_step < 1) throw ValidationError("train.samples_per_step must be >= 1");
  if (t.batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (t.max_epochs < 0) throw ValidationError("train.max_epochs must be >= 0");
  if (t.lr_schedule != "multiplicative" && t.lr_schedule != "linear_to_zero")
    throw ValidationError("train.lr_schedule must be multiplicative or linear_to_zero");
  parse_train_mode(t.mode);
  parse_ppl_mode(t.val_ppl_mode);
}

// Learning rate at the start of `epoch` (0-based).
inline double epoch_lr(const TrainSettings& t, int epoch) {
  if (t.lr_schedule == "linear_to_zero") {
    if (t.max_epochs <= 0) return t.lr;
    return t.lr * std::max(0.0, 1.0 - static_cast<double>(epoch) / t.max_epochs);
  }
  return t.lr * std::pow(t.lr_decay_per_epoch, epoch);
}

struct StepStats {
  double loss = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double reward = 0.0;
  double prior_entropy = 0.0;
  double null_choice = 0.0;  // fraction with prior argmax on null
  double beta = 0.0;
  double baseline = 0.0;
  double grad_norm = 0.0;
  std::size_t examples = 0;
};

struct Gradients {
  LogLinearParams prior, inference;
  LmParams lm;
};

class Trainer {
 public:
  Trainer(Model& model, TrainSettings settings)
      : model_(model),
        s_(std::move(settings)),
        mode_(parse_train_mode(s_.mode)),
        rng_(s_.seed),
        opt_prior_(adam_options()),
        opt_inf_(adam_options()),
        opt_lm_(adam_options()) {
    validate(s_);
  }

  // Gradient of the per-example loss, accumulated with weight `scale`.
  // Does not touch parameters. Throws DivergenceError on a non-finite loss.
  StepStats accumulate(const PreparedExample& ex, double beta, double scale, Gradients& g) {
    const CandidateSet& c = *ex.candidates;
    const VectorXd log_p = log_softmax(prior_logits(ex.inputs, model_.prior));
    const VectorXd log_q = log_softmax(posterior_logits(ex.inputs, model_.inference));
    const VectorXd p = log_p.array().exp().matrix();
    const VectorXd q = log_q.array().exp().matrix();
    const double kl = q.dot(log_q - log_p);
    double h = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k)
      if (p[k] > 0.0) h -= p[k] * log_p[k];

    StepStats st;
    st.kl = kl;
    st.prior_entropy = h;
    st.beta = beta;
    st.examples = 1;
    st.null_choice = argmax_z(Categorical(p)) == c.null_index ? 1.0 : 0.0;

    auto lm_input = [&](std::size_t z) {
      return assemble(c[z], ex.example.history, ex.example.target, model_.tokenizer,
                      model_.lm.max_len(), ex.example.target_speaker);
    };

    VectorXd dq = kl_q_dlogits(log_q, log_p, beta);
    LmParams lm_grad = model_.lm.params().zeros_like();
    if (mode_ == TrainMode::Exact) {
      if (static_cast<int>(c.size()) > s_.exact_max_candidates)
        throw BudgetError("exact training over " + std::to_string(c.size()) +
                          " candidates exceeds the cap of " +
                          std::to_string(s_.exact_max_candidates));
      VectorXd ll(p.size());
      for (std::size_t k = 0; k < c.size(); ++k) {
        const double w = q[static_cast<Eigen::Index>(k)];
        AssembledInput in = lm_input(k);
        ll[static_cast<Eigen::Index>(k)] =
            -(w > 0.0 ? model_.lm.score_target_backward(in, s_.lm_coeff * w, lm_grad)
                      : target_nll(in, model_.lm))
                 .total_nll;
      }
      st.recon = q.dot(ll);
      st.reward = st.recon;
      dq += expected_reward_dlogits(q, ll, s_.reinforce_coeff);
    } else {
      Categorical qd(q);
      const int n = s_.samples_per_step;
      for (int i = 0; i < n; ++i) {
        const std::size_t z = sample(qd, rng_);
        AssembledInput in = lm_input(z);
        const double reward =
            -model_.lm.score_target_backward(in, s_.lm_coeff / n, lm_grad).total_nll;
        if (!std::isfinite(reward)) break;
        if (!baseline_.initialized) baseline_.update(reward, s_.baseline_ratio);
        dq += reinforce_dlogits(q, z, reward, baseline_.b, s_.reinforce_coeff) / n;
        baseline_.update(reward, s_.baseline_ratio);
        st.recon += reward / n;
      }
      st.reward = st.recon;
    }
    st.loss = -s_.lm_coeff * st.recon + beta * kl - s_.entropy_coeff * h;
    st.baseline = baseline_.b;
    if (!std::isfinite(st.loss) || !std::isfinite(kl))
      throw DivergenceError("non-finite loss on example " + ex.example.id);

    const VectorXd dp = prior_dlogits(p, q, beta, s_.entropy_coeff);
    latent_backward(ex.inputs, model_.prior, scale * dp, g.prior);
    latent_backward(ex.inputs, model_.inference, scale * dq, g.inference);
    add_scaled(g.lm, lm_grad, scale);
    return st;
  }

  // One optimizer update over a batch.
  StepStats step(const std::vector<const PreparedExample*>& batch) {
    if (batch.empty()) throw ContractError("step: empty batch");
    Gradients g = zero_gradients();
    const double beta = kl_anneal(static_cast<long>(t_), anneal_steps_);
    const double scale = 1.0 / static_cast<double>(batch.size());
    StepStats total;
    for (auto* ex : batch) {
      StepStats st = accumulate(*ex, beta, scale, g);
      total.loss += st.loss * scale;
      total.recon += st.recon * scale;
      total.kl += st.kl * scale;
      total.reward += st.reward * scale;
      total.prior_entropy += st.prior_entropy * scale;
      total.null_choice += st.null_choice * scale;
    }
    total.beta = beta;
    total.baseline = baseline_.b;
    total.examples = batch.size();
    apply(g);
    ++t_;
    return total;
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void set_anneal_steps(long steps) { anneal_steps_ = steps; }
  long steps_taken() const { return t_; }
  const BaselineState& baseline() const { return baseline_; }
  std::mt19937_64& rng() { return rng_; }
  Model& model() { return model_; }
  const TrainSettings& settings() const { return s_; }

  Gradients zero_gradients() const {
    return {model_.prior.zeros_like(), model_.inference.zeros_like(),
            model_.lm.params().zeros_like()};
  }

 private:
  AdamWOptions adam_options() const {
    return {s_.adam_beta1, s_.adam_beta2, s_.adam_eps, s_.weight_decay};
  }

  static void add_scaled(LmParams& into, LmParams& from, double scale) {
    std::vector<MatrixXd*> dst, src;
    into.for_each([&](const std::string&, MatrixXd& m) { dst.push_back(&m); });
    from.for_each([&](const std::string&, MatrixXd& m) { src.push_back(&m); });
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] += scale * *src[i];
  }

  void apply(Gradients& g) {
    std::vector<MatrixXd*> pp, pg, ip, ig, lp, lg;
    model_.prior.for_each([&](const std::string&, MatrixXd& m) { pp.push_back(&m); });
    g.prior.for_each([&](const std::string&, MatrixXd& m) { pg.push_back(&m); });
    model_.inference.for_each([&](const std::string&, MatrixXd& m) { ip.push_back(&m); });
    g.inference.for_each([&](const std::string&, MatrixXd& m) { ig.push_back(&m); });
    model_.lm.params().for_each([&](const std::string&, MatrixXd& m) { lp.push_back(&m); });
    g.lm.for_each([&](const std::string&, MatrixXd& m) { lg.push_back(&m); });

    std::vector<MatrixXd*> all;
    all.insert(all.end(), pg.begin(), pg.end());
    all.insert(all.end(), ig.begin(), ig.end());
    all.insert(all.end(), lg.begin(), lg.end());
    for (auto* m : all)
      if (!m->allFinite()) throw DivergenceError("non-finite gradient");
    clip_grad_norm(all, s_.max_grad_norm);

    auto as_const = [](const std::vector<MatrixXd*>& v) {
      return std::vector<const MatrixXd*>(v.begin(), v.end());
    };
    const double latent_lr = lr_ * s_.latent_lr_scale;
    opt_prior_.step(pp, as_const(pg), latent_lr);
    opt_inf_.step(ip, as_const(ig), latent_lr);
    opt_lm_.step(lp, as_const(lg), lr_);
  }

  Model& model_;
  TrainSettings s_;
  TrainMode mode_;
  std::mt19937_64 rng_;
  AdamW opt_prior_, opt_inf_, opt_lm_;
  BaselineState baseline_;
  double lr_ = 0.0;
  long anneal_steps_ = 0;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Epoch loop

// Fisher-Yates with an explicit multiply-shift draw so the permutation does
// not depend on the standard library's distribution implementation.
inline void deterministic_shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(
        (static_cast<unsigned __int128>(rng()) * static_cast<unsigned __int128>(i)) >> 64);
    std::swap(v[i - 1], v[j]);
  }
}

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  long steps = 0;
  double train_loss = 0.0;
  double mean_reward = 0.0;
  double baseline = 0.0;
  double beta = 0.0;
  double prior_entropy = 0.0;
  double null_rate = 0.0;
  double kl = 0.0;
  double val_ppl = 0.0;
  bool val_ppl_upper_bound = false;
  double seconds = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},       {"lr", lr},
            {"steps", steps},       {"train_loss", train_loss},
            {"mean_reward", mean_reward}, {"baseline", baseline},
            {"beta", beta},         {"prior_entropy", prior_entropy},
            {"null_rate", null_rate}, {"kl", kl},
            {"val_ppl", val_ppl},   {"val_ppl_upper_bound", val_ppl_upper_bound},
            {"seconds", seconds}};
  }
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_ppl = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

struct TrainOptions {
  std::string checkpoint_dir;  // empty: no checkpoints
  std::ostream* log = nullptr; // JSONL records
  // Called after each epoch, before checkpointing.
  std::function<void(const EpochRecord&)> on_epoch;
};

inline TrainResult train(Model& model, const std::vector<PreparedExample>& train_set,
                         const std::vector<PreparedExample>& val_set, const TrainOptions& opt) {
  const TrainSettings& s = model.settings.train;
  Trainer trainer(model, s);
  if (train_set.empty()) throw ValidationError("training split is empty");
  const long steps_per_epoch =
      static_cast<long>((train_set.size() + static_cast<std::size_t>(s.batch_size) - 1) /
                        static_cast<std::size_t>(s.batch_size));
  trainer.set_anneal_steps(s.kl_anneal_steps < 0 ? steps_per_epoch : s.kl_anneal_steps);

  std::vector<PreparedExample> val(val_set.begin(), val_set.end());
  if (s.val_max_examples > 0 && val.size() > static_cast<std::size_t>(s.val_max_examples))
    val.resize(static_cast<std::size_t>(s.val_max_examples));
  const PplMode val_mode = parse_ppl_mode(s.val_ppl_mode);

  TrainResult result;
  std::mt19937_64 order_rng(s.seed ^ 0x5eedULL);
  std::vector<std::size_t> order(train_set.size());
  int bad_epochs = 0;
  for (int epoch = 0; epoch < s.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    trainer.set_lr(epoch_lr(s, epoch));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    deterministic_shuffle(order, order_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = trainer.lr();
    std::size_t seen = 0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(s.batch_size)) {
      std::vector<const PreparedExample*> batch;
      for (std::size_t j = i; j < std::min(order.size(), i + static_cast<std::size_t>(s.batch_size)); ++j)
        batch.push_back(&train_set[order[j]]);
      StepStats st = trainer.step(batch);
      const double w = static_cast<double>(batch.size());
      rec.train_loss += st.loss * w;
      rec.mean_reward += st.reward * w;
      rec.prior_entropy += st.prior_entropy * w;
      rec.null_rate += st.null_choice * w;
      rec.kl += st.kl * w;
      rec.beta = st.beta;
      seen += batch.size();
    }
    const double n = static_cast<double>(seen);
    rec.train_loss /= n;
    rec.mean_reward /= n;
    rec.prior_entropy /= n;
    rec.null_rate /= n;
    rec.kl /= n;
    rec.baseline = trainer.baseline().b;
    rec.steps = trainer.steps_taken();

    if (!val.empty()) {
      PplReport r = perplexity(val, model, val_mode, s.exact_max_candidates);
      rec.val_ppl = r.ppl;
      rec.val_ppl_upper_bound = r.upper_bound;
      if (!std::isfinite(r.ppl))
        throw DivergenceError("validation perplexity diverged after epoch " +
                              std::to_string(epoch));
    }
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epochs.push_back(rec);
    if (opt.log) {
      nlohmann::json j = rec.to_json();
      j.erase("seconds");
      (*opt.log) << j.dump() << '\n';
      opt.log->flush();
    }
    if (opt.on_epoch) opt.on_epoch(rec);

    const bool improved = val.empty() || rec.val_ppl < result.best_val_ppl;
    if (!opt.checkpoint_dir.empty()) model.save(opt.checkpoint_dir, "latest");
    if (improved) {
      result.best_val_ppl = val.empty() ? result.best_val_ppl : rec.val_ppl;
      result.best_epoch = epoch;
      bad_epochs = 0;
      if (!opt.checkpoint_dir.empty()) model.save(opt.checkpoint_dir, "best");
    } else if (++bad_epochs >= s.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

}  // namespace groundchat
