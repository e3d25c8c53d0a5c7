#pragma once

#include "bagknot/core/array_io.hpp"
#include "bagknot/core/error.hpp"
#include "bagknot/core/random.hpp"

#include <Eigen/Core>

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace bagknot::nn {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Named trainable matrices with matching gradient buffers.
template <class T>
class ParamStore {
 public:
  using Mat = Matrix<T>;

  int add(const std::string& name, Mat value) {
    if (index_.count(name) != 0) throw Error("duplicate parameter " + name);
    index_[name] = static_cast<int>(names_.size());
    names_.push_back(name);
    grads_.push_back(Mat::Zero(value.rows(), value.cols()));
    values_.push_back(std::move(value));
    return static_cast<int>(names_.size()) - 1;
  }

  /// Uniform(-bound, bound) with bound = gain * sqrt(3 / fan_in).
  int add_uniform(const std::string& name, Eigen::Index rows, Eigen::Index cols, Rng& rng,
                  double gain = 1.0) {
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(rows));
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(uniform(rng, -bound, bound));
    return add(name, std::move(m));
  }
  int add_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    return add(name, Mat::Zero(rows, cols));
  }
  int add_normal(const std::string& name, Eigen::Index rows, Eigen::Index cols, Rng& rng,
                 double stddev) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(stddev * normal(rng));
    return add(name, std::move(m));
  }

  int index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw NotFoundError("parameter " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return names_.size(); }
  const std::string& name(int i) const { return names_[static_cast<std::size_t>(i)]; }
  Mat& value(int i) { return values_[static_cast<std::size_t>(i)]; }
  const Mat& value(int i) const { return values_[static_cast<std::size_t>(i)]; }
  Mat& grad(int i) { return grads_[static_cast<std::size_t>(i)]; }
  const Mat& grad(int i) const { return grads_[static_cast<std::size_t>(i)]; }
  Mat& value(const std::string& n) { return value(index(n)); }
  const Mat& value(const std::string& n) const { return value(index(n)); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  void zero_grad() {
    for (auto& g : grads_) g.setZero();
  }

  bool all_finite() const {
    for (const auto& v : values_)
      if (!v.allFinite()) return false;
    return true;
  }

  void set_zero() {
    for (auto& v : values_) v.setZero();
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

  /// Hash over names, shapes and float32 values.
  std::string content_hash() const {
    Fnv1a h;
    for (std::size_t i = 0; i < names_.size(); ++i) {
      h.update(names_[i]);
      const auto f = io::to_f32(values_[i]);
      h.update_span(std::span<const float>(f));
    }
    return hex64(h.digest());
  }

  /// Writes one float32 array per parameter; returns the manifest entries.
  io::json save(const std::filesystem::path& dir, const std::string& prefix = "param") const {
    std::filesystem::create_directories(dir);
    io::json entries = io::json::array();
    for (std::size_t i = 0; i < names_.size(); ++i) {
      const auto& v = values_[i];
      auto e = io::save_array(dir, prefix + "_" + std::to_string(i) + ".f32",
                              {static_cast<std::size_t>(v.rows()), static_cast<std::size_t>(v.cols())},
                              io::to_f32(v));
      e["name"] = names_[i];
      entries.push_back(e);
    }
    return entries;
  }

  /// Loads values into an already-shaped store; names and shapes must agree.
  void load(const std::filesystem::path& dir, const io::json& entries) {
    if (entries.size() != names_.size()) {
      throw IntegrityError("checkpoint has " + std::to_string(entries.size()) +
                           " parameters, model expects " + std::to_string(names_.size()));
    }
    for (const auto& e : entries) {
      const int i = index(e.at("name").get<std::string>());
      auto& v = values_[static_cast<std::size_t>(i)];
      const auto shape = e.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != static_cast<std::size_t>(v.rows()) ||
          shape[1] != static_cast<std::size_t>(v.cols())) {
        throw IntegrityError("parameter " + names_[static_cast<std::size_t>(i)] + ": shape mismatch");
      }
      const auto data = io::load_array(dir, e);
      for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = static_cast<T>(data[static_cast<std::size_t>(k)]);
    }
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
  std::vector<Mat> grads_;
  std::map<std::string, int> index_;
};

}  // namespace bagknot::nn
