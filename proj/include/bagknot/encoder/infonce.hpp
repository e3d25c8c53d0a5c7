#pragma once

// Contrastive loss with one positive and m negatives per anchor:
//   L = -log( exp(a.p / tau) / (exp(a.p / tau) + sum_j exp(a.n_j / tau)) ).
// The positive term is part of the denominator, so L > 0 always.

#include "bagknot/core/error.hpp"
#include "bagknot/nn/graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <vector>

namespace bagknot::encoder {

template <class T>
struct InfoNceGrad {
  Eigen::Matrix<T, Eigen::Dynamic, 1> anchor;
  Eigen::Matrix<T, Eigen::Dynamic, 1> positive;
  nn::Matrix<T> negatives;  // m x d
};

namespace detail {

/// Loss from the similarity logits; fills softmax weights q (positive first).
template <class T>
T infonce_from_similarities(T pos_sim, const Eigen::Matrix<T, Eigen::Dynamic, 1>& neg_sim, T tau,
                            Eigen::Matrix<T, Eigen::Dynamic, 1>& q) {
  const auto m = neg_sim.size();
  q.resize(m + 1);
  q(0) = pos_sim / tau;
  q.tail(m) = neg_sim / tau;
  const T top = q.maxCoeff();
  q = (q.array() - top).exp();
  const T z = q.sum();
  q /= z;
  // -log softmax_0 = logsumexp - logit_0
  return top + std::log(z) - pos_sim / tau;
}

template <class Vec>
void require_unit(const Vec& v, const char* what) {
  if (!(std::abs(static_cast<double>(v.norm()) - 1.0) <= 1e-3)) {
    throw InputError(std::string("infonce_loss: ") + what + " is not unit-norm");
  }
}

}  // namespace detail

/// Loss for one anchor; optionally writes gradients for all arguments.
template <class T>
T infonce_loss(const Eigen::Matrix<T, Eigen::Dynamic, 1>& anchor,
               const Eigen::Matrix<T, Eigen::Dynamic, 1>& positive, const nn::Matrix<T>& negatives,
               std::type_identity_t<T> tau, InfoNceGrad<T>* grad = nullptr) {
  if (!(tau > T(0))) throw InputError("infonce_loss: tau must be positive");
  if (negatives.rows() < 1) throw InputError("infonce_loss: need at least one negative");
  if (anchor.size() != positive.size() || negatives.cols() != anchor.size()) {
    throw InputError("infonce_loss: feature dimensions disagree");
  }
  detail::require_unit(anchor, "anchor");
  detail::require_unit(positive, "positive");
  for (Eigen::Index j = 0; j < negatives.rows(); ++j) detail::require_unit(negatives.row(j), "negative");

  const Eigen::Matrix<T, Eigen::Dynamic, 1> neg_sim = negatives * anchor;
  Eigen::Matrix<T, Eigen::Dynamic, 1> q;
  const T loss = detail::infonce_from_similarities(anchor.dot(positive), neg_sim, tau, q);
  if (grad != nullptr) {
    const auto m = negatives.rows();
    grad->anchor = ((q(0) - T(1)) * positive + negatives.transpose() * q.tail(m)) / tau;
    grad->positive = (q(0) - T(1)) / tau * anchor;
    grad->negatives = q.tail(m) * anchor.transpose() / tau;
  }
  return loss;
}

/// Graph node: mean loss over anchors. Anchor rows index `fa`; positive and
/// negative rows (m per anchor, flattened) index `fb`.
template <class T>
nn::Var infonce_node(nn::Graph<T>& g, nn::Var fa, nn::Var fb, std::vector<int> anchors,
                     std::vector<int> positives, std::vector<int> negatives, int m, T tau) {
  const std::size_t n = anchors.size();
  if (n == 0 || positives.size() != n || negatives.size() != n * static_cast<std::size_t>(m)) {
    throw InputError("infonce_node: anchor, positive and negative counts disagree");
  }
  const auto& A = g.value(fa);
  const auto& B = g.value(fb);
  nn::Matrix<T> q_all(static_cast<Eigen::Index>(n), m + 1);
  T total = T(0);
  Eigen::Matrix<T, Eigen::Dynamic, 1> neg_sim(m), q;
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = A.row(anchors[i]);
    for (int j = 0; j < m; ++j) neg_sim(j) = B.row(negatives[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)]).dot(a);
    total += detail::infonce_from_similarities(B.row(positives[i]).dot(a), neg_sim, tau, q);
    q_all.row(static_cast<Eigen::Index>(i)) = q.transpose();
  }
  nn::Matrix<T> out(1, 1);
  out(0, 0) = total / static_cast<T>(n);
  return g.op(std::move(out), {fa, fb},
              [&g, fa, fb, anchors = std::move(anchors), positives = std::move(positives),
               negatives = std::move(negatives), m, tau, q_all = std::move(q_all)](nn::Var y) {
                const auto n = anchors.size();
                const T s = g.grad(y)(0, 0) / (tau * static_cast<T>(n));
                const auto& A = g.value(fa);
                const auto& B = g.value(fb);
                const bool ga = g.needs_grad(fa), gb = g.needs_grad(fb);
                for (std::size_t i = 0; i < n; ++i) {
                  const auto qi = q_all.row(static_cast<Eigen::Index>(i));
                  const T cp = s * (qi(0) - T(1));
                  if (ga) g.grad(fa).row(anchors[i]) += cp * B.row(positives[i]);
                  if (gb) g.grad(fb).row(positives[i]) += cp * A.row(anchors[i]);
                  for (int j = 0; j < m; ++j) {
                    const int r = negatives[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)];
                    const T cn = s * qi(j + 1);
                    if (ga) g.grad(fa).row(anchors[i]) += cn * B.row(r);
                    if (gb) g.grad(fb).row(r) += cn * A.row(anchors[i]);
                  }
                }
              });
}

}  // namespace bagknot::encoder
