#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hegl/common.hpp"

namespace hegl {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// Dense f64 tensor. Copying a Tensor copies a handle: the value buffer and
// the gradient slot are shared. Values are immutable once an op has produced
// them; only the optimizer mutates parameter values, between graphs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<double> values, Shape shape,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->values.size()); }
  std::int64_t dim(std::size_t i) const { return impl_->shape[i]; }
  std::size_t ndim() const { return impl_->shape.size(); }

  const std::vector<double>& values() const { return impl_->values; }
  std::vector<double>& mutable_values() { return impl_->values; }
  double item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool b);

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  // Allocates (zero-filled) on first touch.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  // Accumulate g into the grad slot.
  void accumulate_grad(const std::vector<double>& g);

  bool same_buffer(const Tensor& other) const { return impl_ == other.impl_; }

  // Throws NumericError naming `op` if any value is NaN/Inf.
  void check_finite(const char* op) const;

 private:
  struct Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until touched
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Single-use reverse-mode tape. Ops append records while a graph is active on
// the current thread; execution order is the topological order, so backward
// is a straight reverse sweep. A graph is consumed by backward() and cannot
// be replayed; rebuild per step.
class Graph {
 public:
  Graph() = default;
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  struct Node {
    const char* op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> vjp;  // reads output grad, accumulates into inputs
  };

  void record(const char* op, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> vjp);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. Leaf grads
  // accumulate, so separate graphs on the same leaves add up.
  void backward(const Tensor& root);

  static Graph* active();

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
  bool scoped_ = false;
  friend class GraphScope;
};

// RAII activation of a graph on the current thread.
class GraphScope {
 public:
  explicit GraphScope(Graph& g);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* prev_;
};

}  // namespace hegl
