#pragma once

// AdamW with decoupled weight decay over a group of dense tensors.

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "groundchat/errors.hpp"

namespace groundchat {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class AdamW {
 public:
  explicit AdamW(AdamWOptions opt = {}) : opt_(opt) {}

  void step(const std::vector<Eigen::MatrixXd*>& params,
            const std::vector<const Eigen::MatrixXd*>& grads, double lr) {
    if (params.size() != grads.size()) throw ContractError("AdamW: params/grads mismatch");
    if (m_.empty()) {
      for (auto* p : params) {
        m_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
        v_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
      }
    }
    if (m_.size() != params.size()) throw ContractError("AdamW: parameter group changed");
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Eigen::MatrixXd& p = *params[i];
      const Eigen::MatrixXd& g = *grads[i];
      m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g;
      v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g.cwiseProduct(g);
      if (opt_.weight_decay > 0.0) p *= (1.0 - lr * opt_.weight_decay);
      p.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + opt_.eps);
    }
  }

  long steps() const { return t_; }

 private:
  AdamWOptions opt_;
  long t_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

// Rescales the group so its global L2 norm is at most max_norm; returns the
// norm before clipping. max_norm <= 0 disables clipping.
inline double clip_grad_norm(const std::vector<Eigen::MatrixXd*>& grads, double max_norm) {
  double sq = 0.0;
  for (auto* g : grads) sq += g->squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (auto* g : grads) *g *= s;
  }
  return norm;
}

}  // namespace groundchat
