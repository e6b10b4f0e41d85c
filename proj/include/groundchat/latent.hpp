#pragma once

// Log-linear distributions over the candidate set.
//
//   prior      p(z=k | H, C)    ∝ exp(λ1 f1 + λ2 f2 + λ3 f3)
//   inference  q(z=k | x, H, C) ∝ exp(λ1 f1 + λ2 f2 + λ3 f3 + λ4 f4)
//
//   f1 = <e(H), e(C_k)>                (or e(H)^T W e(C_k) with bilinear_f1)
//   f2 = head2 . type_emb[t_k]
//   f3 = head3 . [type_emb[t_k]; e(H)] + bias3
//   f4 = <e(x), e(C_k)>
//
// The null candidate has e(∅) = 0 and its own type embedding row. The two
// networks never share parameters.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "groundchat/embedder.hpp"
#include "groundchat/errors.hpp"
#include "groundchat/expansion.hpp"

namespace groundchat {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr int kTypeEmbeddingDim = 5;

// ---------------------------------------------------------------------------
// Categorical utilities

class Categorical {
 public:
  Categorical() = default;
  explicit Categorical(VectorXd probs) : p_(std::move(probs)) {
    if (p_.size() == 0) throw ContractError("categorical over zero outcomes");
    for (Eigen::Index i = 0; i < p_.size(); ++i)
      if (!(p_[i] >= 0.0) || !std::isfinite(p_[i]))
        throw ContractError("categorical with negative or non-finite probability");
    if (std::abs(p_.sum() - 1.0) > 1e-6) throw ContractError("categorical does not sum to 1");
  }
  const VectorXd& probs() const { return p_; }
  double operator[](Eigen::Index i) const { return p_[i]; }
  Eigen::Index size() const { return p_.size(); }

 private:
  VectorXd p_;
};

inline double logsumexp(const VectorXd& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

inline VectorXd log_softmax(const VectorXd& logits) {
  return (logits.array() - logsumexp(logits)).matrix();
}

inline Categorical softmax_temp(const VectorXd& logits, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
  VectorXd scaled = logits / temperature;
  VectorXd e = (scaled.array() - scaled.maxCoeff()).exp().matrix();
  return Categorical(e / e.sum());
}

enum class KlOverflow { Throw, Infinity };

// Σ q_k ln(q_k / p_k) with 0 ln 0 := 0.
inline double kl_categorical(const Categorical& q, const Categorical& p,
                             KlOverflow policy = KlOverflow::Throw) {
  if (q.size() != p.size()) throw ContractError("kl_categorical: size mismatch");
  double kl = 0.0;
  for (Eigen::Index k = 0; k < q.size(); ++k) {
    if (q[k] <= 0.0) continue;
    if (p[k] <= 0.0) {
      if (policy == KlOverflow::Throw)
        throw DomainError("kl_categorical: q > 0 where p = 0");
      return std::numeric_limits<double>::infinity();
    }
    kl += q[k] * (std::log(q[k]) - std::log(p[k]));
  }
  return std::max(kl, 0.0);
}

inline double entropy(const Categorical& d) {
  double h = 0.0;
  for (Eigen::Index k = 0; k < d.size(); ++k)
    if (d[k] > 0.0) h -= d[k] * std::log(d[k]);
  return h;
}

// Uniform double in [0, 1) from the top 53 bits of one engine draw.
template <class Rng>
double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

template <class Rng>
std::size_t sample(const Categorical& d, Rng& rng) {
  const double u = uniform01(rng);
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (Eigen::Index k = 0; k < d.size(); ++k) {
    if (d[k] <= 0.0) continue;
    cum += d[k];
    last_positive = static_cast<std::size_t>(k);
    if (u < cum) return last_positive;
  }
  return last_positive;
}

// Lowest index among exact ties.
inline std::size_t argmax_z(const Categorical& d) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < d.size(); ++k)
    if (d[k] > d[best]) best = k;
  return static_cast<std::size_t>(best);
}

// ---------------------------------------------------------------------------
// Parameters

struct LogLinearParams {
  bool inference = false;  // carries λ4 and the target-alignment feature
  bool bilinear_f1 = false;
  MatrixXd lambda1, lambda2, lambda3, lambda4;  // 1x1
  MatrixXd type_emb;                            // 12 x 5
  MatrixXd f2_head;                             // 5 x 1
  MatrixXd f3_head;                             // (5 + d) x 1
  MatrixXd f3_bias;                             // 1 x 1
  MatrixXd f1_bilinear;                         // d x d, empty unless bilinear_f1

  int embed_dim() const { return static_cast<int>(f3_head.rows()) - kTypeEmbeddingDim; }

  static LogLinearParams zeros(int d, bool inference, bool bilinear = false) {
    LogLinearParams p;
    p.inference = inference;
    p.bilinear_f1 = bilinear;
    p.lambda1 = p.lambda2 = p.lambda3 = MatrixXd::Zero(1, 1);
    p.lambda4 = MatrixXd::Zero(inference ? 1 : 0, inference ? 1 : 0);
    p.type_emb = MatrixXd::Zero(kNumExpansionTypes, kTypeEmbeddingDim);
    p.f2_head = MatrixXd::Zero(kTypeEmbeddingDim, 1);
    p.f3_head = MatrixXd::Zero(kTypeEmbeddingDim + d, 1);
    p.f3_bias = MatrixXd::Zero(1, 1);
    p.f1_bilinear = bilinear ? MatrixXd(MatrixXd::Zero(d, d)) : MatrixXd();
    return p;
  }

  // λ = 1, bilinear map = identity, embeddings and heads ~ N(0, init_std²).
  static LogLinearParams init(int d, bool inference, std::uint64_t seed,
                              double init_std = 0.1, bool bilinear = false) {
    LogLinearParams p = zeros(d, inference, bilinear);
    p.lambda1.setOnes();
    p.lambda2.setOnes();
    p.lambda3.setOnes();
    if (inference) p.lambda4.setOnes();
    if (bilinear) p.f1_bilinear.setIdentity();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, init_std);
    auto fill = [&](MatrixXd& m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    };
    fill(p.type_emb);
    fill(p.f2_head);
    fill(p.f3_head);
    return p;
  }

  LogLinearParams zeros_like() const {
    return zeros(embed_dim(), inference, bilinear_f1);
  }

  template <class F>
  void for_each(F&& f) {
    f("lambda1", lambda1);
    f("lambda2", lambda2);
    f("lambda3", lambda3);
    if (inference) f("lambda4", lambda4);
    f("type_emb", type_emb);
    f("f2_head", f2_head);
    f("f3_head", f3_head);
    f("f3_bias", f3_bias);
    if (bilinear_f1) f("f1_bilinear", f1_bilinear);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<LogLinearParams*>(this)->for_each(
        [&](const std::string& n, MatrixXd& m) { f(n, static_cast<const MatrixXd&>(m)); });
  }
};

// ---------------------------------------------------------------------------
// Inputs

// Frozen encodings of one example: e(H), e(C_k) per candidate (row), types,
// and e(x) when the target is known.
struct LatentInputs {
  Embedding history;
  MatrixXd candidates;
  std::vector<ExpansionType> types;
  std::optional<Embedding> target;

  std::size_t size() const { return types.size(); }
};

inline LatentInputs make_latent_inputs(const DialogHistory& history, const CandidateSet& c,
                                       const Encoder& enc,
                                       const std::optional<std::string>& target = std::nullopt,
                                       bool last_turn_only = false) {
  LatentInputs in;
  in.history = encode_history(history, enc, last_turn_only);
  in.candidates = MatrixXd::Zero(static_cast<Eigen::Index>(c.size()), enc.dim());
  in.types.reserve(c.size());
  for (std::size_t k = 0; k < c.size(); ++k) {
    in.types.push_back(c[k].type);
    if (c[k].type != ExpansionType::Null)
      in.candidates.row(static_cast<Eigen::Index>(k)) = enc.encode_text(c[k].text).transpose();
  }
  if (target) in.target = enc.encode_text(*target);
  return in;
}

// ---------------------------------------------------------------------------
// Features

inline double feature_f1(const Embedding& history, const Embedding& candidate,
                         const LogLinearParams& p) {
  if (p.bilinear_f1) return history.dot(p.f1_bilinear * candidate);
  return history.dot(candidate);
}

inline double feature_f2(ExpansionType t, const LogLinearParams& p) {
  return p.f2_head.col(0).dot(p.type_emb.row(static_cast<int>(t)).transpose());
}

inline double feature_f3(ExpansionType t, const Embedding& history, const LogLinearParams& p) {
  const auto type_part = p.f3_head.col(0).head(kTypeEmbeddingDim);
  const auto hist_part = p.f3_head.col(0).tail(p.f3_head.rows() - kTypeEmbeddingDim);
  return type_part.dot(p.type_emb.row(static_cast<int>(t)).transpose()) +
         hist_part.dot(history) + p.f3_bias(0, 0);
}

inline double feature_f4(const Embedding& target, const Embedding& candidate) {
  return target.dot(candidate);
}

inline VectorXd latent_logits(const LatentInputs& in, const LogLinearParams& p) {
  if (p.inference && !in.target)
    throw ContractError("inference network needs the target encoding");
  const Eigen::Index n = static_cast<Eigen::Index>(in.size());
  VectorXd s(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Embedding cand = in.candidates.row(k).transpose();
    const ExpansionType t = in.types[static_cast<std::size_t>(k)];
    double v = p.lambda1(0, 0) * feature_f1(in.history, cand, p) +
               p.lambda2(0, 0) * feature_f2(t, p) +
               p.lambda3(0, 0) * feature_f3(t, in.history, p);
    if (p.inference) v += p.lambda4(0, 0) * feature_f4(*in.target, cand);
    s[k] = v;
  }
  return s;
}

inline VectorXd prior_logits(const LatentInputs& in, const LogLinearParams& theta) {
  if (theta.inference) throw ContractError("prior_logits given inference parameters");
  return latent_logits(in, theta);
}

inline VectorXd posterior_logits(const LatentInputs& in, const LogLinearParams& alpha) {
  if (!alpha.inference) throw ContractError("posterior_logits given prior parameters");
  return latent_logits(in, alpha);
}

// Accumulates into `grad` the gradient of a loss whose derivative with
// respect to the logits is `dlogits`.
inline void latent_backward(const LatentInputs& in, const LogLinearParams& p,
                            const VectorXd& dlogits, LogLinearParams& grad) {
  const Eigen::Index n = static_cast<Eigen::Index>(in.size());
  const double l1 = p.lambda1(0, 0), l2 = p.lambda2(0, 0), l3 = p.lambda3(0, 0);
  const auto head3_type = p.f3_head.col(0).head(kTypeEmbeddingDim);
  const Eigen::Index d = p.f3_head.rows() - kTypeEmbeddingDim;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double g = dlogits[k];
    if (g == 0.0) continue;
    const Embedding cand = in.candidates.row(k).transpose();
    const int t = static_cast<int>(in.types[static_cast<std::size_t>(k)]);
    const ExpansionType type = in.types[static_cast<std::size_t>(k)];
    grad.lambda1(0, 0) += g * feature_f1(in.history, cand, p);
    grad.lambda2(0, 0) += g * feature_f2(type, p);
    grad.lambda3(0, 0) += g * feature_f3(type, in.history, p);
    if (p.inference) grad.lambda4(0, 0) += g * feature_f4(*in.target, cand);
    if (p.bilinear_f1) grad.f1_bilinear.noalias() += (g * l1) * in.history * cand.transpose();
    grad.f2_head.col(0) += (g * l2) * p.type_emb.row(t).transpose();
    grad.type_emb.row(t) += (g * l2) * p.f2_head.col(0).transpose() +
                            (g * l3) * head3_type.transpose();
    grad.f3_head.col(0).head(kTypeEmbeddingDim) += (g * l3) * p.type_emb.row(t).transpose();
    grad.f3_head.col(0).tail(d) += (g * l3) * in.history;
    grad.f3_bias(0, 0) += g * l3;
  }
}

}  // namespace groundchat
