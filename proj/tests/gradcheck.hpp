#pragma once

// Central finite-difference gradient checking shared by the unit tests and
// the acceptance suite. Builders rebuild the graph from the current leaf
// values on every call so leaves can be perturbed in place.

#include <functional>
#include <vector>

#include "asap/autodiff.hpp"

namespace asap::testing {

using DNode = NodePtr<double>;
using DMat = Mat<double>;

// Relative error with a small floor so that finite-difference noise on
// near-zero gradients does not produce spurious failures.
inline double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-3});
  return std::abs(a - b) / scale;
}

// Collapses any node to one scalar (sum over all slots and entries) so the
// finite difference and the ones-seeded backward measure the same function.
inline DNode scalarize(DNode n) {
  if (n->slots() == 1 && n->val[0].size() == 1) return n;
  Tape<double> t;
  auto s = sum_all(t, n);
  return batch_weighted_sum(t, s, std::vector<double>(s->val.size(), 1.0));
}

// Returns the worst relative error between analytic and central-difference
// gradients of `build()` with respect to every entry of every leaf.
inline double max_grad_err(const std::function<DNode()>& build,
                           const std::vector<DNode>& leaves,
                           double h = 1e-5) {
  for (const auto& leaf : leaves) {
    leaf->ensure_grad();
    leaf->zero_grad();
  }
  DNode root = scalarize(build());
  backward(root);

  double worst = 0.0;
  for (const auto& leaf : leaves) {
    for (size_t s = 0; s < leaf->val.size(); ++s) {
      for (Eigen::Index r = 0; r < leaf->val[s].rows(); ++r) {
        for (Eigen::Index c = 0; c < leaf->val[s].cols(); ++c) {
          const double orig = leaf->val[s](r, c);
          leaf->val[s](r, c) = orig + h;
          const double fp = scalar_value(scalarize(build()));
          leaf->val[s](r, c) = orig - h;
          const double fm = scalar_value(scalarize(build()));
          leaf->val[s](r, c) = orig;
          const double fd = (fp - fm) / (2.0 * h);
          const double an = leaf->has_grad() ? leaf->grad[s](r, c) : 0.0;
          worst = std::max(worst, rel_err(fd, an));
        }
      }
    }
  }
  return worst;
}

}  // namespace asap::testing
