#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "groundchat/errors.hpp"
#include "groundchat/latent.hpp"

namespace groundchat {

// Top-p filtering: keep the smallest prefix of the descending sort (stable in
// the original index on ties) whose cumulative mass reaches p, including the
// element that crosses the boundary, then renormalize.
inline Categorical nucleus_filter(const Categorical& dist, double p) {
  if (!(p > 0.0) || p > 1.0) throw DomainError("nucleus p must lie in (0, 1]");
  if (p >= 1.0) return dist;
  const auto n = static_cast<std::size_t>(dist.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dist[static_cast<Eigen::Index>(a)] > dist[static_cast<Eigen::Index>(b)];
  });
  VectorXd kept = VectorXd::Zero(static_cast<Eigen::Index>(n));
  double cum = 0.0;
  for (std::size_t i : order) {
    const double v = dist[static_cast<Eigen::Index>(i)];
    if (v <= 0.0) break;
    kept[static_cast<Eigen::Index>(i)] = v;
    cum += v;
    if (cum >= p) break;
  }
  return Categorical(kept / kept.sum());
}

}  // namespace groundchat
