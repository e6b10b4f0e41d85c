#pragma once

// Small decoder-only transformer implementing ConditionalLM, with exact
// reverse-mode gradients. Pre-norm blocks, GELU MLP, learned positions, a
// three-row segment embedding added at the input, tied output embedding.
// Everything runs in double precision on the CPU.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "groundchat/errors.hpp"
#include "groundchat/generator.hpp"

namespace groundchat {

struct LmConfig {
  int vocab = 0;
  int width = 128;
  int layers = 2;
  int heads = 4;
  int ffn = 512;
  int max_len = 128;
  double init_std = 0.02;
  std::uint64_t seed = 0;
};

struct LmLayer {
  MatrixXd ln1_g, ln1_b;
  MatrixXd wq, bq, wk, bk, wv, bv, wo, bo;
  MatrixXd ln2_g, ln2_b;
  MatrixXd w1, b1, w2, b2;
};

struct LmParams {
  MatrixXd tok_emb;  // V x d, also the output projection
  MatrixXd pos_emb;  // L x d
  MatrixXd seg_emb;  // 3 x d
  std::vector<LmLayer> layers;
  MatrixXd lnf_g, lnf_b;

  template <class F>
  void for_each(F&& f) {
    f("tok_emb", tok_emb);
    f("pos_emb", pos_emb);
    f("seg_emb", seg_emb);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      auto& l = layers[i];
      f(p + "ln1_g", l.ln1_g);
      f(p + "ln1_b", l.ln1_b);
      f(p + "wq", l.wq);
      f(p + "bq", l.bq);
      f(p + "wk", l.wk);
      f(p + "bk", l.bk);
      f(p + "wv", l.wv);
      f(p + "bv", l.bv);
      f(p + "wo", l.wo);
      f(p + "bo", l.bo);
      f(p + "ln2_g", l.ln2_g);
      f(p + "ln2_b", l.ln2_b);
      f(p + "w1", l.w1);
      f(p + "b1", l.b1);
      f(p + "w2", l.w2);
      f(p + "b2", l.b2);
    }
    f("lnf_g", lnf_g);
    f("lnf_b", lnf_b);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<LmParams*>(this)->for_each(
        [&](const std::string& n, MatrixXd& m) { f(n, static_cast<const MatrixXd&>(m)); });
  }

  LmParams zeros_like() const {
    LmParams z = *this;
    z.for_each([](const std::string&, MatrixXd& m) { m.setZero(); });
    return z;
  }
};

namespace lm_detail {

inline constexpr double kLnEps = 1e-5;
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

struct LnCache {
  MatrixXd xhat;
  VectorXd rstd;
};

inline MatrixXd layer_norm(const MatrixXd& x, const MatrixXd& g, const MatrixXd& b, LnCache& c) {
  const Eigen::Index n = x.rows();
  c.xhat.resize(n, x.cols());
  c.rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    c.rstd[i] = 1.0 / std::sqrt(var + kLnEps);
    c.xhat.row(i) = (x.row(i).array() - mu) * c.rstd[i];
  }
  MatrixXd y = c.xhat.array().rowwise() * g.row(0).array();
  y.rowwise() += b.row(0);
  return y;
}

inline MatrixXd layer_norm_backward(const MatrixXd& dy, const MatrixXd& g, const LnCache& c,
                                    MatrixXd& dg, MatrixXd& db) {
  dg.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db.row(0) += dy.colwise().sum();
  MatrixXd dxhat = dy.array().rowwise() * g.row(0).array();
  MatrixXd dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
    dx.row(i) = c.rstd[i] * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

inline double gelu(double u) {
  return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u)));
}

inline double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

struct LayerCache {
  LnCache ln1, ln2;
  MatrixXd a, q, k, v;
  std::vector<MatrixXd> probs;  // per head, T x T
  MatrixXd o;                   // concatenated head outputs
  MatrixXd m, u, g;             // ln2 output, pre-activation, activation
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  LnCache lnf;
  MatrixXd hf;
};

}  // namespace lm_detail

class TransformerLM final : public ConditionalLM {
 public:
  TransformerLM() = default;

  explicit TransformerLM(const LmConfig& cfg) : cfg_(cfg) {
    if (cfg.vocab <= 0 || cfg.width <= 0 || cfg.layers < 0 || cfg.heads <= 0 ||
        cfg.width % cfg.heads != 0 || cfg.max_len <= 0 || cfg.ffn <= 0)
      throw DomainError("invalid transformer configuration");
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, cfg.init_std);
    auto rand = [&](Eigen::Index r, Eigen::Index c, double scale = 1.0) {
      MatrixXd m(r, c);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng) * scale;
      return m;
    };
    const int d = cfg.width, f = cfg.ffn;
    const double resid_scale = 1.0 / std::sqrt(2.0 * std::max(1, cfg.layers));
    p_.tok_emb = rand(cfg.vocab, d);
    p_.pos_emb = rand(cfg.max_len, d);
    p_.seg_emb = rand(kNumSegments, d);
    for (int l = 0; l < cfg.layers; ++l) {
      LmLayer L;
      L.ln1_g = MatrixXd::Ones(1, d);
      L.ln1_b = MatrixXd::Zero(1, d);
      L.wq = rand(d, d);
      L.bq = MatrixXd::Zero(1, d);
      L.wk = rand(d, d);
      L.bk = MatrixXd::Zero(1, d);
      L.wv = rand(d, d);
      L.bv = MatrixXd::Zero(1, d);
      L.wo = rand(d, d, resid_scale);
      L.bo = MatrixXd::Zero(1, d);
      L.ln2_g = MatrixXd::Ones(1, d);
      L.ln2_b = MatrixXd::Zero(1, d);
      L.w1 = rand(d, f);
      L.b1 = MatrixXd::Zero(1, f);
      L.w2 = rand(f, d, resid_scale);
      L.b2 = MatrixXd::Zero(1, d);
      p_.layers.push_back(std::move(L));
    }
    p_.lnf_g = MatrixXd::Ones(1, d);
    p_.lnf_b = MatrixXd::Zero(1, d);
  }

  const LmConfig& config() const { return cfg_; }
  LmParams& params() { return p_; }
  const LmParams& params() const { return p_; }

  int vocab_size() const override { return cfg_.vocab; }
  int max_len() const override { return cfg_.max_len; }

  std::vector<double> token_log_probs(const AssembledInput& in) const override {
    check(in);
    std::vector<Eigen::Index> rows;
    for (std::size_t t = 0; t + 1 < in.size(); ++t) rows.push_back(static_cast<Eigen::Index>(t));
    lm_detail::ForwardCache cache;
    MatrixXd lp = row_log_probs(in, rows, cache);
    std::vector<double> out(in.size(), 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r)
      out[r + 1] = lp(static_cast<Eigen::Index>(r), in.tokens[r + 1]);
    return out;
  }

  VectorXd next_log_probs(const AssembledInput& prefix) const override {
    check(prefix);
    if (prefix.size() == 0) throw ContractError("next_log_probs: empty prefix");
    lm_detail::ForwardCache cache;
    MatrixXd lp = row_log_probs(prefix, {static_cast<Eigen::Index>(prefix.size() - 1)}, cache);
    return lp.row(0).transpose();
  }

  TargetScore score_target(const AssembledInput& in) const override {
    check(in);
    auto rows = target_rows(in);
    lm_detail::ForwardCache cache;
    MatrixXd lp = row_log_probs(in, rows, cache);
    TargetScore s;
    for (std::size_t r = 0; r < rows.size(); ++r)
      s.total_nll -= lp(static_cast<Eigen::Index>(r), in.tokens[static_cast<std::size_t>(rows[r]) + 1]);
    s.n_target_tokens = static_cast<int>(rows.size());
    return s;
  }

  // Adds scale * d(target NLL)/d(params) into `grad`; returns the NLL.
  TargetScore score_target_backward(const AssembledInput& in, double scale,
                                    LmParams& grad) const {
    check(in);
    if (in.target_count() == 0) throw ContractError("backward: empty target mask");
    auto rows = target_rows(in);
    lm_detail::ForwardCache cache;
    MatrixXd lp = row_log_probs(in, rows, cache);
    TargetScore s;
    s.n_target_tokens = static_cast<int>(rows.size());
    // dNLL/dlogits = softmax - onehot
    MatrixXd dlogits = lp.array().exp().matrix();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const int next = in.tokens[static_cast<std::size_t>(rows[r]) + 1];
      s.total_nll -= lp(static_cast<Eigen::Index>(r), next);
      dlogits(static_cast<Eigen::Index>(r), next) -= 1.0;
    }
    dlogits *= scale;
    backward(in, rows, cache, dlogits, grad);
    return s;
  }

 private:
  void check(const AssembledInput& in) const {
    if (static_cast<int>(in.size()) > cfg_.max_len)
      throw LengthError("sequence of " + std::to_string(in.size()) + " exceeds max_len " +
                        std::to_string(cfg_.max_len));
    for (int t : in.tokens)
      if (t < 0 || t >= cfg_.vocab) throw ContractError("token id outside vocabulary");
  }

  static std::vector<Eigen::Index> target_rows(const AssembledInput& in) {
    std::vector<Eigen::Index> rows;
    for (std::size_t t = 1; t < in.size(); ++t)
      if (in.target_mask[t]) rows.push_back(static_cast<Eigen::Index>(t - 1));
    return rows;
  }

  // Log-softmax rows for the requested positions (position t predicts t+1).
  MatrixXd row_log_probs(const AssembledInput& in, const std::vector<Eigen::Index>& rows,
                         lm_detail::ForwardCache& cache) const {
    forward(in, cache);
    MatrixXd h(static_cast<Eigen::Index>(rows.size()), cfg_.width);
    for (std::size_t r = 0; r < rows.size(); ++r)
      h.row(static_cast<Eigen::Index>(r)) = cache.hf.row(rows[r]);
    MatrixXd logits = h * p_.tok_emb.transpose();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const double m = logits.row(r).maxCoeff();
      const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
      logits.row(r).array() -= lse;
    }
    return logits;
  }

  void forward(const AssembledInput& in, lm_detail::ForwardCache& c) const {
    using namespace lm_detail;
    const Eigen::Index T = static_cast<Eigen::Index>(in.size());
    const int H = cfg_.heads;
    const int dh = cfg_.width / H;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    MatrixXd x(T, cfg_.width);
    for (Eigen::Index t = 0; t < T; ++t)
      x.row(t) = p_.tok_emb.row(in.tokens[static_cast<std::size_t>(t)]) + p_.pos_emb.row(t) +
                 p_.seg_emb.row(static_cast<int>(in.segments[static_cast<std::size_t>(t)]));
    c.layers.resize(p_.layers.size());
    for (std::size_t l = 0; l < p_.layers.size(); ++l) {
      const LmLayer& L = p_.layers[l];
      LayerCache& lc = c.layers[l];
      lc.a = layer_norm(x, L.ln1_g, L.ln1_b, lc.ln1);
      lc.q = (lc.a * L.wq).rowwise() + L.bq.row(0);
      lc.k = (lc.a * L.wk).rowwise() + L.bk.row(0);
      lc.v = (lc.a * L.wv).rowwise() + L.bv.row(0);
      lc.o.resize(T, cfg_.width);
      lc.probs.resize(static_cast<std::size_t>(H));
      for (int h = 0; h < H; ++h) {
        MatrixXd s = lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose() * inv;
        for (Eigen::Index i = 0; i < T; ++i) {
          const double m = s.row(i).head(i + 1).maxCoeff();
          double z = 0.0;
          for (Eigen::Index j = 0; j <= i; ++j) {
            s(i, j) = std::exp(s(i, j) - m);
            z += s(i, j);
          }
          for (Eigen::Index j = 0; j <= i; ++j) s(i, j) /= z;
          for (Eigen::Index j = i + 1; j < T; ++j) s(i, j) = 0.0;
        }
        lc.o.middleCols(h * dh, dh) = s * lc.v.middleCols(h * dh, dh);
        lc.probs[static_cast<std::size_t>(h)] = std::move(s);
      }
      x += (lc.o * L.wo).rowwise() + L.bo.row(0);
      lc.m = layer_norm(x, L.ln2_g, L.ln2_b, lc.ln2);
      lc.u = (lc.m * L.w1).rowwise() + L.b1.row(0);
      lc.g = lc.u.unaryExpr([](double u) { return gelu(u); });
      x += (lc.g * L.w2).rowwise() + L.b2.row(0);
    }
    c.hf = layer_norm(x, p_.lnf_g, p_.lnf_b, c.lnf);
  }

  void backward(const AssembledInput& in, const std::vector<Eigen::Index>& rows,
                const lm_detail::ForwardCache& c, const MatrixXd& dlogits,
                LmParams& g) const {
    using namespace lm_detail;
    const Eigen::Index T = static_cast<Eigen::Index>(in.size());
    const int H = cfg_.heads;
    const int dh = cfg_.width / H;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));

    MatrixXd h_rows(static_cast<Eigen::Index>(rows.size()), cfg_.width);
    for (std::size_t r = 0; r < rows.size(); ++r)
      h_rows.row(static_cast<Eigen::Index>(r)) = c.hf.row(rows[r]);
    g.tok_emb.noalias() += dlogits.transpose() * h_rows;
    MatrixXd dh_rows = dlogits * p_.tok_emb;
    MatrixXd dhf = MatrixXd::Zero(T, cfg_.width);
    for (std::size_t r = 0; r < rows.size(); ++r)
      dhf.row(rows[r]) += dh_rows.row(static_cast<Eigen::Index>(r));

    MatrixXd dx = layer_norm_backward(dhf, p_.lnf_g, c.lnf, g.lnf_g, g.lnf_b);

    for (std::size_t li = p_.layers.size(); li-- > 0;) {
      const LmLayer& L = p_.layers[li];
      LmLayer& G = g.layers[li];
      const LayerCache& lc = c.layers[li];

      // MLP
      G.b2.row(0) += dx.colwise().sum();
      G.w2.noalias() += lc.g.transpose() * dx;
      MatrixXd du = (dx * L.w2.transpose()).array() *
                    lc.u.unaryExpr([](double u) { return gelu_grad(u); }).array();
      G.w1.noalias() += lc.m.transpose() * du;
      G.b1.row(0) += du.colwise().sum();
      MatrixXd dm = du * L.w1.transpose();
      dx += layer_norm_backward(dm, L.ln2_g, lc.ln2, G.ln2_g, G.ln2_b);

      // attention
      G.bo.row(0) += dx.colwise().sum();
      G.wo.noalias() += lc.o.transpose() * dx;
      MatrixXd d_o = dx * L.wo.transpose();
      MatrixXd dq(T, cfg_.width), dk(T, cfg_.width), dv(T, cfg_.width);
      for (int h = 0; h < H; ++h) {
        const MatrixXd& P = lc.probs[static_cast<std::size_t>(h)];
        const auto doh = d_o.middleCols(h * dh, dh);
        MatrixXd dp = doh * lc.v.middleCols(h * dh, dh).transpose();
        dv.middleCols(h * dh, dh) = P.transpose() * doh;
        VectorXd rowdot = (dp.array() * P.array()).rowwise().sum();
        MatrixXd ds = P.array() * (dp.colwise() - rowdot).array();
        ds *= inv;
        dq.middleCols(h * dh, dh) = ds * lc.k.middleCols(h * dh, dh);
        dk.middleCols(h * dh, dh) = ds.transpose() * lc.q.middleCols(h * dh, dh);
      }
      G.wq.noalias() += lc.a.transpose() * dq;
      G.wk.noalias() += lc.a.transpose() * dk;
      G.wv.noalias() += lc.a.transpose() * dv;
      G.bq.row(0) += dq.colwise().sum();
      G.bk.row(0) += dk.colwise().sum();
      G.bv.row(0) += dv.colwise().sum();
      MatrixXd da = dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
      dx += layer_norm_backward(da, L.ln1_g, lc.ln1, G.ln1_g, G.ln1_b);
    }

    for (Eigen::Index t = 0; t < T; ++t) {
      g.tok_emb.row(in.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
      g.pos_emb.row(t) += dx.row(t);
      g.seg_emb.row(static_cast<int>(in.segments[static_cast<std::size_t>(t)])) += dx.row(t);
    }
  }

  LmConfig cfg_;
  LmParams p_;
};

}  // namespace groundchat
