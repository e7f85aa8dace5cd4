#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bridgepolicy/errors.hpp"

namespace bridgepolicy::net {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Trainable array with its accumulated gradient.
struct Parameter {
  Mat value;
  Mat grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Named parameters in insertion order. References stay valid as entries are added.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Mat init) {
    if (index_.count(name)) throw DomainError("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter>();
    p->value = std::move(init);
    p->zero_grad();
    index_[name] = params_.size();
    names_.push_back(name);
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw DomainError("unknown parameter: " + name);
    return *params_[it->second];
  }
  const Parameter& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DomainError("unknown parameter: " + name);
    return *params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return params_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Parameter& at(std::size_t i) { return *params_[i]; }
  const Parameter& at(std::size_t i) const { return *params_[i]; }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode recording of one forward pass. Nodes are appended in
/// topological order; backward() walks them once in reverse and then the
/// tape is consumed.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Var constant(Mat value) { return push(std::move(value), false, nullptr); }

  /// Leaf whose gradient is kept on the tape (for inputs under test).
  Var input(Mat value) { return push(std::move(value), true, nullptr); }

  Var param(Parameter& p) {
    return push(p.value, true, [&p](Tape& tape, std::size_t self) { p.grad += tape.nodes_[self].grad; });
  }

  const Mat& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient of the backward root with respect to v (zeros if v did not contribute).
  Mat grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var root, double upstream = 1.0) {
    if (consumed_) throw std::logic_error("tape already consumed by a previous backward pass");
    consumed_ = true;
    auto& r = nodes_.at(root.id);
    if (r.value.size() != 1) throw DomainError("backward root must be a scalar");
    if (!r.requires_grad) return;
    r.grad = Mat::Constant(1, 1, upstream);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.grad.size() == 0 || !n.back) continue;
      n.back(*this, i);
    }
  }

  bool consumed() const { return consumed_; }

  // --- for op implementations ---

  Var push(Mat value, bool requires_grad, Backward back) {
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad, std::move(back)});
    return Var{nodes_.size() - 1};
  }

  const Mat& node_grad(std::size_t id) const { return nodes_[id].grad; }

  /// Adds g into the gradient of v (allocating it on first use). No-op for constants.
  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Backward back;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace bridgepolicy::net
