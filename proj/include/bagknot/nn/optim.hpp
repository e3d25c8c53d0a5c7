#pragma once

#include "bagknot/nn/params.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace bagknot::nn {

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class T>
double clip_grad_norm(ParamStore<T>& p, double max_norm) {
  double sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sq += static_cast<double>(p.grad(static_cast<int>(i)).squaredNorm());
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (std::size_t i = 0; i < p.size(); ++i) p.grad(static_cast<int>(i)) *= s;
  }
  return norm;
}

template <class T>
class Sgd {
 public:
  Sgd(ParamStore<T>& params, double lr, double momentum = 0.9) : p_(params), lr_(lr), mu_(momentum) {
    for (std::size_t i = 0; i < p_.size(); ++i) {
      const auto& v = p_.value(static_cast<int>(i));
      velocity_.push_back(Matrix<T>::Zero(v.rows(), v.cols()));
    }
  }

  void step() {
    for (std::size_t i = 0; i < p_.size(); ++i) {
      auto& vel = velocity_[i];
      vel = static_cast<T>(mu_) * vel + p_.grad(static_cast<int>(i));
      p_.value(static_cast<int>(i)) -= static_cast<T>(lr_) * vel;
    }
  }

  void set_lr(double lr) { lr_ = lr; }

 private:
  ParamStore<T>& p_;
  double lr_;
  double mu_;
  std::vector<Matrix<T>> velocity_;
};

template <class T>
class Adam {
 public:
  Adam(ParamStore<T>& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
       double weight_decay = 0.0)
      : p_(params), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {
    for (std::size_t i = 0; i < p_.size(); ++i) {
      const auto& v = p_.value(static_cast<int>(i));
      m_.push_back(Matrix<T>::Zero(v.rows(), v.cols()));
      v_.push_back(Matrix<T>::Zero(v.rows(), v.cols()));
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    const T step = static_cast<T>(lr_ * std::sqrt(c2) / c1);
    const T eps = static_cast<T>(eps_ * std::sqrt(c2));
    for (std::size_t i = 0; i < p_.size(); ++i) {
      const auto& g = p_.grad(static_cast<int>(i));
      auto& w = p_.value(static_cast<int>(i));
      m_[i] = static_cast<T>(b1_) * m_[i] + static_cast<T>(1.0 - b1_) * g;
      v_[i] = static_cast<T>(b2_) * v_[i] + static_cast<T>(1.0 - b2_) * g.cwiseAbs2();
      if (wd_ > 0.0) w *= static_cast<T>(1.0 - lr_ * wd_);
      w.array() -= step * m_[i].array() / (v_[i].array().sqrt() + eps);
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  ParamStore<T>& p_;
  double lr_, b1_, b2_, eps_, wd_;
  long t_ = 0;
  std::vector<Matrix<T>> m_, v_;
};

}  // namespace bagknot::nn
