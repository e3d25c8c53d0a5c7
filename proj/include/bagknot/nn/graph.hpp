#pragma once

// Minimal reverse-mode autodiff over row-major matrices.
//
// A Graph records one forward pass. Every op appends a node holding its value
// and, when recording, a closure that pushes the node's gradient to its
// inputs. Parameter nodes accumulate into the owning ParamStore.

#include "bagknot/core/error.hpp"
#include "bagknot/nn/params.hpp"

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace bagknot::nn {

struct Var {
  int id = -1;
};

template <class T>
class Graph {
 public:
  using Mat = Matrix<T>;

  explicit Graph(ParamStore<T>* params = nullptr, bool record = true)
      : values_(params), params_(params), record_(record) {}
  /// Inference-only graph over read-only parameters.
  explicit Graph(const ParamStore<T>& params) : values_(&params), params_(nullptr), record_(false) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }
  ParamStore<T>* params() const { return params_; }

  Var constant(Mat value) { return push(std::move(value), false); }

  Var param(int index) {
    if (values_ == nullptr) throw Error("Graph::param: no parameter store attached");
    Var v = push(values_->value(index), record_);
    if (record_) {
      nodes_[static_cast<std::size_t>(v.id)].backward = [this, index](Var self) {
        params_->grad(index) += grad(self);
      };
    }
    return v;
  }
  Var param(const std::string& name) {
    if (values_ == nullptr) throw Error("Graph::param: no parameter store attached");
    return param(values_->index(name));
  }

  const Mat& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  Mat& mutable_value(Var v) { return nodes_[static_cast<std::size_t>(v.id)].value; }
  Eigen::Index rows(Var v) const { return value(v).rows(); }
  Eigen::Index cols(Var v) const { return value(v).cols(); }
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  /// Gradient buffer of a node, allocated as zeros on first use.
  Mat& grad(Var v) {
    auto& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Appends a node. `backward(self)` runs only if some input needs a
  /// gradient; it reads grad(self) and accumulates into the inputs.
  template <class F>
  Var op(Mat value, std::initializer_list<Var> inputs, F&& backward) {
    bool need = false;
    if (record_)
      for (Var in : inputs) need = need || needs_grad(in);
    Var v = push(std::move(value), need);
    if (need) nodes_[static_cast<std::size_t>(v.id)].backward = std::forward<F>(backward);
    return v;
  }

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 node and runs the tape backwards.
  void backward(Var loss) {
    if (!record_) throw Error("Graph::backward on a non-recording graph");
    if (value(loss).size() != 1) throw Error("Graph::backward: loss must be a scalar");
    grad(loss)(0, 0) += T(1);
    for (int i = loss.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.needs_grad && n.backward && n.grad.size() != 0) n.backward(Var{i});
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Var)> backward;
    bool needs_grad = false;
  };

  Var push(Mat value, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), Mat(), {}, needs_grad});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const ParamStore<T>* values_;
  ParamStore<T>* params_;
  bool record_;
  std::vector<Node> nodes_;
};

/// Throws NumericError naming `where` if any entry of the node is not finite.
template <class T>
void check_finite(const Graph<T>& g, Var v, const std::string& where) {
  if (!g.value(v).allFinite()) throw NumericError("non-finite activations in " + where);
}

}  // namespace bagknot::nn
