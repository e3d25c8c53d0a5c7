#pragma once

// Differentiable ops on Graph<T>. Batched sequence data is stored as stacked
// rows with `group` consecutive rows per sample.

#include "bagknot/nn/graph.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <type_traits>
#include <vector>

namespace bagknot::nn {

namespace detail {
inline void require(bool ok, const char* op) {
  if (!ok) throw InputError(std::string(op) + ": shape mismatch");
}
}  // namespace detail

/// x W + b, with W (in x out) and b (1 x out).
template <class T>
Var linear(Graph<T>& g, Var x, Var W, Var b) {
  detail::require(g.cols(x) == g.rows(W) && g.rows(b) == 1 && g.cols(b) == g.cols(W), "linear");
  Matrix<T> out = g.value(x) * g.value(W);
  out.rowwise() += g.value(b).row(0);
  return g.op(std::move(out), {x, W, b}, [&g, x, W, b](Var y) {
    const auto& gy = g.grad(y);
    if (g.needs_grad(x)) g.grad(x).noalias() += gy * g.value(W).transpose();
    if (g.needs_grad(W)) g.grad(W).noalias() += g.value(x).transpose() * gy;
    if (g.needs_grad(b)) g.grad(b) += gy.colwise().sum();
  });
}

template <class T>
Var linear(Graph<T>& g, Var x, const std::string& prefix) {
  return linear(g, x, g.param(prefix + ".w"), g.param(prefix + ".b"));
}

template <class T>
Var matmul(Graph<T>& g, Var a, Var b) {
  detail::require(g.cols(a) == g.rows(b), "matmul");
  return g.op(g.value(a) * g.value(b), {a, b}, [&g, a, b](Var y) {
    const auto& gy = g.grad(y);
    if (g.needs_grad(a)) g.grad(a).noalias() += gy * g.value(b).transpose();
    if (g.needs_grad(b)) g.grad(b).noalias() += g.value(a).transpose() * gy;
  });
}

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  detail::require(g.rows(a) == g.rows(b) && g.cols(a) == g.cols(b), "add");
  return g.op(g.value(a) + g.value(b), {a, b}, [&g, a, b](Var y) {
    if (g.needs_grad(a)) g.grad(a) += g.grad(y);
    if (g.needs_grad(b)) g.grad(b) += g.grad(y);
  });
}

template <class T>
Var scale(Graph<T>& g, Var a, T s) {
  return g.op(g.value(a) * s, {a}, [&g, a, s](Var y) { g.grad(a) += g.grad(y) * s; });
}

/// Row i of x receives row (i % rows(p)) of p.
template <class T>
Var add_tiled(Graph<T>& g, Var x, Var p) {
  const auto P = g.rows(p);
  detail::require(g.cols(x) == g.cols(p) && P > 0 && g.rows(x) % P == 0, "add_tiled");
  Matrix<T> out = g.value(x);
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) += g.value(p).row(i % P);
  return g.op(std::move(out), {x, p}, [&g, x, p, P](Var y) {
    const auto& gy = g.grad(y);
    if (g.needs_grad(x)) g.grad(x) += gy;
    if (g.needs_grad(p)) {
      auto& gp = g.grad(p);
      for (Eigen::Index i = 0; i < gy.rows(); ++i) gp.row(i % P) += gy.row(i);
    }
  });
}

/// Row i of x receives row (i / group) of r.
template <class T>
Var add_grouped(Graph<T>& g, Var x, Var r, Eigen::Index group) {
  detail::require(g.cols(x) == g.cols(r) && g.rows(x) == g.rows(r) * group, "add_grouped");
  Matrix<T> out = g.value(x);
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) += g.value(r).row(i / group);
  return g.op(std::move(out), {x, r}, [&g, x, r, group](Var y) {
    const auto& gy = g.grad(y);
    if (g.needs_grad(x)) g.grad(x) += gy;
    if (g.needs_grad(r)) {
      auto& gr = g.grad(r);
      for (Eigen::Index i = 0; i < gy.rows(); ++i) gr.row(i / group) += gy.row(i);
    }
  });
}

template <class T>
Var relu(Graph<T>& g, Var x) {
  return g.op(g.value(x).cwiseMax(T(0)), {x}, [&g, x](Var y) {
    const auto& v = g.value(x);
    const auto& gy = g.grad(y);
    auto& gx = g.grad(x);
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (v.data()[i] > T(0)) gx.data()[i] += gy.data()[i];
  });
}

template <class T>
Var silu(Graph<T>& g, Var x) {
  const auto& v = g.value(x);
  Matrix<T> out(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const T s = T(1) / (T(1) + std::exp(-v.data()[i]));
    out.data()[i] = v.data()[i] * s;
  }
  return g.op(std::move(out), {x}, [&g, x](Var y) {
    const auto& v = g.value(x);
    const auto& gy = g.grad(y);
    auto& gx = g.grad(x);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-v.data()[i]));
      gx.data()[i] += gy.data()[i] * s * (T(1) + v.data()[i] * (T(1) - s));
    }
  });
}

/// tanh approximation of GELU.
template <class T>
Var gelu(Graph<T>& g, Var x) {
  static const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const auto& v = g.value(x);
  Matrix<T> out(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const T a = v.data()[i];
    out.data()[i] = T(0.5) * a * (T(1) + std::tanh(c * (a + T(0.044715) * a * a * a)));
  }
  return g.op(std::move(out), {x}, [&g, x](Var y) {
    const auto& v = g.value(x);
    const auto& gy = g.grad(y);
    auto& gx = g.grad(x);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const T a = v.data()[i];
      const T th = std::tanh(c * (a + T(0.044715) * a * a * a));
      const T d = T(0.5) * (T(1) + th) +
                  T(0.5) * a * (T(1) - th * th) * c * (T(1) + T(3 * 0.044715) * a * a);
      gx.data()[i] += gy.data()[i] * d;
    }
  });
}

/// Per-row standardization without affine parameters.
template <class T>
Var layernorm(Graph<T>& g, Var x, T eps = T(1e-6)) {
  const auto& v = g.value(x);
  const auto C = v.cols();
  Matrix<T> out(v.rows(), C);
  std::vector<T> inv_std(static_cast<std::size_t>(v.rows()));
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const T mean = v.row(r).mean();
    const T var = (v.row(r).array() - mean).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    out.row(r) = (v.row(r).array() - mean) * is;
  }
  return g.op(std::move(out), {x}, [&g, x, inv_std = std::move(inv_std)](Var y) {
    const auto& yv = g.value(y);
    const auto& gy = g.grad(y);
    auto& gx = g.grad(x);
    for (Eigen::Index r = 0; r < yv.rows(); ++r) {
      const T mg = gy.row(r).mean();
      const T mgy = gy.row(r).cwiseProduct(yv.row(r)).mean();
      gx.row(r).array() +=
          inv_std[static_cast<std::size_t>(r)] * (gy.row(r).array() - mg - yv.row(r).array() * mgy);
    }
  });
}

/// x * (1 + scale) + shift, with per-sample rows of shift and scale.
template <class T>
Var modulate(Graph<T>& g, Var x, Var shift, Var scale_, Eigen::Index group) {
  detail::require(g.rows(shift) * group == g.rows(x) && g.rows(scale_) == g.rows(shift) &&
                      g.cols(shift) == g.cols(x) && g.cols(scale_) == g.cols(x),
                  "modulate");
  Matrix<T> out(g.rows(x), g.cols(x));
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const auto b = i / group;
    out.row(i) = g.value(x).row(i).cwiseProduct(
                     (g.value(scale_).row(b).array() + T(1)).matrix()) +
                 g.value(shift).row(b);
  }
  return g.op(std::move(out), {x, shift, scale_}, [&g, x, shift, scale_, group](Var y) {
    const auto& gy = g.grad(y);
    for (Eigen::Index i = 0; i < gy.rows(); ++i) {
      const auto b = i / group;
      if (g.needs_grad(x))
        g.grad(x).row(i) += gy.row(i).cwiseProduct((g.value(scale_).row(b).array() + T(1)).matrix());
      if (g.needs_grad(shift)) g.grad(shift).row(b) += gy.row(i);
      if (g.needs_grad(scale_)) g.grad(scale_).row(b) += gy.row(i).cwiseProduct(g.value(x).row(i));
    }
  });
}

/// x + gate * h, with per-sample rows of gate.
template <class T>
Var gated_residual(Graph<T>& g, Var x, Var h, Var gate, Eigen::Index group) {
  detail::require(g.rows(x) == g.rows(h) && g.cols(x) == g.cols(h) &&
                      g.rows(gate) * group == g.rows(x) && g.cols(gate) == g.cols(x),
                  "gated_residual");
  Matrix<T> out = g.value(x);
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    out.row(i) += g.value(h).row(i).cwiseProduct(g.value(gate).row(i / group));
  return g.op(std::move(out), {x, h, gate}, [&g, x, h, gate, group](Var y) {
    const auto& gy = g.grad(y);
    if (g.needs_grad(x)) g.grad(x) += gy;
    for (Eigen::Index i = 0; i < gy.rows(); ++i) {
      const auto b = i / group;
      if (g.needs_grad(h)) g.grad(h).row(i) += gy.row(i).cwiseProduct(g.value(gate).row(b));
      if (g.needs_grad(gate)) g.grad(gate).row(b) += gy.row(i).cwiseProduct(g.value(h).row(i));
    }
  });
}

template <class T>
Var slice_cols(Graph<T>& g, Var x, Eigen::Index begin, Eigen::Index width) {
  detail::require(begin >= 0 && begin + width <= g.cols(x), "slice_cols");
  return g.op(g.value(x).middleCols(begin, width), {x}, [&g, x, begin, width](Var y) {
    g.grad(x).middleCols(begin, width) += g.grad(y);
  });
}

template <class T>
Var concat_cols(Graph<T>& g, Var a, Var b) {
  detail::require(g.rows(a) == g.rows(b), "concat_cols");
  Matrix<T> out(g.rows(a), g.cols(a) + g.cols(b));
  out << g.value(a), g.value(b);
  return g.op(std::move(out), {a, b}, [&g, a, b](Var y) {
    const auto& gy = g.grad(y);
    if (g.needs_grad(a)) g.grad(a) += gy.leftCols(g.cols(a));
    if (g.needs_grad(b)) g.grad(b) += gy.rightCols(g.cols(b));
  });
}

template <class T>
Var concat_rows(Graph<T>& g, Var a, Var b) {
  detail::require(g.cols(a) == g.cols(b), "concat_rows");
  Matrix<T> out(g.rows(a) + g.rows(b), g.cols(a));
  out << g.value(a), g.value(b);
  return g.op(std::move(out), {a, b}, [&g, a, b](Var y) {
    const auto& gy = g.grad(y);
    if (g.needs_grad(a)) g.grad(a) += gy.topRows(g.rows(a));
    if (g.needs_grad(b)) g.grad(b) += gy.bottomRows(g.rows(b));
  });
}

template <class T>
Var gather_rows(Graph<T>& g, Var x, std::vector<int> index) {
  const auto& v = g.value(x);
  Matrix<T> out(static_cast<Eigen::Index>(index.size()), v.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= v.rows()) throw InputError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = v.row(index[i]);
  }
  return g.op(std::move(out), {x}, [&g, x, index = std::move(index)](Var y) {
    const auto& gy = g.grad(y);
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < index.size(); ++i) gx.row(index[i]) += gy.row(static_cast<Eigen::Index>(i));
  });
}

/// Column-wise max over consecutive groups of `group` rows; gradient goes to
/// the first maximizing row.
template <class T>
Var maxpool_groups(Graph<T>& g, Var x, Eigen::Index group) {
  const auto& v = g.value(x);
  detail::require(group > 0 && v.rows() % group == 0, "maxpool_groups");
  const auto G = v.rows() / group, C = v.cols();
  Matrix<T> out(G, C);
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(G * C));
  for (Eigen::Index s = 0; s < G; ++s)
    for (Eigen::Index c = 0; c < C; ++c) {
      Eigen::Index best = s * group;
      for (Eigen::Index r = s * group + 1; r < (s + 1) * group; ++r)
        if (v(r, c) > v(best, c)) best = r;
      out(s, c) = v(best, c);
      arg[static_cast<std::size_t>(s * C + c)] = best;
    }
  return g.op(std::move(out), {x}, [&g, x, arg = std::move(arg), C](Var y) {
    const auto& gy = g.grad(y);
    auto& gx = g.grad(x);
    for (Eigen::Index s = 0; s < gy.rows(); ++s)
      for (Eigen::Index c = 0; c < C; ++c) gx(arg[static_cast<std::size_t>(s * C + c)], c) += gy(s, c);
  });
}

/// out_i = sum_j weight(i, j) * x[index(i, j)].
template <class T>
Var weighted_gather(Graph<T>& g, Var x, std::vector<int> index, std::vector<T> weight, int per_row) {
  detail::require(per_row > 0 && index.size() == weight.size() && index.size() % static_cast<std::size_t>(per_row) == 0,
                  "weighted_gather");
  const auto& v = g.value(x);
  const auto N = static_cast<Eigen::Index>(index.size() / static_cast<std::size_t>(per_row));
  Matrix<T> out = Matrix<T>::Zero(N, v.cols());
  for (Eigen::Index i = 0; i < N; ++i)
    for (int j = 0; j < per_row; ++j) {
      const auto k = static_cast<std::size_t>(i * per_row + j);
      out.row(i) += weight[k] * v.row(index[k]);
    }
  return g.op(std::move(out), {x}, [&g, x, index = std::move(index), weight = std::move(weight), per_row](Var y) {
    const auto& gy = g.grad(y);
    auto& gx = g.grad(x);
    for (Eigen::Index i = 0; i < gy.rows(); ++i)
      for (int j = 0; j < per_row; ++j) {
        const auto k = static_cast<std::size_t>(i * per_row + j);
        gx.row(index[k]) += weight[k] * gy.row(i);
      }
  });
}

template <class T>
Var l2_normalize_rows(Graph<T>& g, Var x, T eps = T(1e-12)) {
  const auto& v = g.value(x);
  Matrix<T> out(v.rows(), v.cols());
  std::vector<T> inv(static_cast<std::size_t>(v.rows()));
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const T n = std::max(v.row(r).norm(), eps);
    inv[static_cast<std::size_t>(r)] = T(1) / n;
    out.row(r) = v.row(r) / n;
  }
  return g.op(std::move(out), {x}, [&g, x, inv = std::move(inv)](Var y) {
    const auto& yv = g.value(y);
    const auto& gy = g.grad(y);
    auto& gx = g.grad(x);
    for (Eigen::Index r = 0; r < yv.rows(); ++r) {
      const T d = gy.row(r).dot(yv.row(r));
      gx.row(r) += inv[static_cast<std::size_t>(r)] * (gy.row(r) - d * yv.row(r));
    }
  });
}

/// Multi-head scaled dot-product attention for `batch` samples. q holds
/// batch * lq rows, k and v hold batch * lk rows; heads split the columns.
template <class T>
Var attention(Graph<T>& g, Var q, Var k, Var v, Eigen::Index batch, Eigen::Index lq,
              Eigen::Index lk, int heads) {
  const auto D = g.cols(q);
  detail::require(heads > 0 && D % heads == 0 && g.cols(k) == D && g.cols(v) == D &&
                      g.rows(q) == batch * lq && g.rows(k) == batch * lk && g.rows(v) == batch * lk,
                  "attention");
  const auto dh = D / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<std::vector<Matrix<T>>>(static_cast<std::size_t>(batch * heads));
  Matrix<T> out(batch * lq, D);
  const auto& Q = g.value(q);
  const auto& K = g.value(k);
  const auto& V = g.value(v);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (int h = 0; h < heads; ++h) {
      Matrix<T> s = Q.block(b * lq, h * dh, lq, dh) * K.block(b * lk, h * dh, lk, dh).transpose();
      s *= inv_sqrt;
      for (Eigen::Index r = 0; r < lq; ++r) {
        const T m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp();
        s.row(r) /= s.row(r).sum();
      }
      out.block(b * lq, h * dh, lq, dh).noalias() = s * V.block(b * lk, h * dh, lk, dh);
      (*probs)[static_cast<std::size_t>(b * heads + h)] = std::move(s);
    }
  return g.op(std::move(out), {q, k, v}, [&g, q, k, v, batch, lq, lk, heads, dh, inv_sqrt, probs](Var y) {
    const auto& gy = g.grad(y);
    const auto& Q = g.value(q);
    const auto& K = g.value(k);
    const auto& V = g.value(v);
    for (Eigen::Index b = 0; b < batch; ++b)
      for (int h = 0; h < heads; ++h) {
        const auto& P = (*probs)[static_cast<std::size_t>(b * heads + h)];
        const auto go = gy.block(b * lq, h * dh, lq, dh);
        if (g.needs_grad(v)) g.grad(v).block(b * lk, h * dh, lk, dh).noalias() += P.transpose() * go;
        if (!g.needs_grad(q) && !g.needs_grad(k)) continue;
        Matrix<T> dp = go * V.block(b * lk, h * dh, lk, dh).transpose();
        Matrix<T> ds(lq, lk);
        for (Eigen::Index r = 0; r < lq; ++r) {
          const T dot = dp.row(r).dot(P.row(r));
          ds.row(r) = P.row(r).cwiseProduct((dp.row(r).array() - dot).matrix());
        }
        ds *= inv_sqrt;
        if (g.needs_grad(q)) g.grad(q).block(b * lq, h * dh, lq, dh).noalias() += ds * K.block(b * lk, h * dh, lk, dh);
        if (g.needs_grad(k)) g.grad(k).block(b * lk, h * dh, lk, dh).noalias() += ds.transpose() * Q.block(b * lq, h * dh, lq, dh);
      }
  });
}

/// Mean squared error against a constant target.
template <class T>
Var mse(Graph<T>& g, Var a, std::type_identity_t<Matrix<T>> target) {
  detail::require(g.rows(a) == target.rows() && g.cols(a) == target.cols(), "mse");
  const T n = static_cast<T>(target.size());
  Matrix<T> out(1, 1);
  out(0, 0) = (g.value(a) - target).squaredNorm() / n;
  return g.op(std::move(out), {a}, [&g, a, target = std::move(target), n](Var y) {
    g.grad(a) += (T(2) * g.grad(y)(0, 0) / n) * (g.value(a) - target);
  });
}

}  // namespace bagknot::nn
