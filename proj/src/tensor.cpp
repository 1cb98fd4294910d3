#include "hegl/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace hegl {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->values.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
  t.impl_->shape = std::move(shape);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.impl_->values) v = value;
  return t;
}

Tensor Tensor::from_data(std::vector<double> values, Shape shape, bool requires_grad) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("from_data: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->values = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({value}, Shape{1}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor has shape " + shape_str(shape()));
  return impl_->values[0];
}

void Tensor::set_requires_grad(bool b) { impl_->requires_grad = b; }

std::vector<double>& Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) {
    throw Error("grad: no gradient has been accumulated for this tensor");
  }
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
}

void Tensor::accumulate_grad(const std::vector<double>& g) {
  if (g.size() != impl_->values.size()) {
    throw ShapeError("accumulate_grad: size mismatch");
  }
  auto& dst = grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void Tensor::check_finite(const char* op) const {
  for (double v : impl_->values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite output value");
    }
  }
}

namespace {
thread_local Graph* t_active_graph = nullptr;
}

Graph* Graph::active() { return t_active_graph; }

Graph::~Graph() = default;

void Graph::record(const char* op, std::vector<Tensor> inputs, Tensor output,
                   std::function<void()> vjp) {
  if (consumed_) throw Error(std::string(op) + ": recording into a consumed graph");
  nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(vjp)});
}

void Graph::backward(const Tensor& root) {
  if (consumed_) throw Error("backward: graph already consumed");
  if (!root.defined() || root.numel() != 1) {
    throw ShapeError("backward: root must be scalar-shaped");
  }
  consumed_ = true;
  Tensor seed = root;
  seed.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // not on a path to the root
    it->vjp();
  }
  nodes_.clear();
}

GraphScope::GraphScope(Graph& g) : prev_(t_active_graph) {
  if (g.scoped_) throw Error("GraphScope: graph is already active");
  g.scoped_ = true;
  t_active_graph = &g;
}

GraphScope::~GraphScope() {
  if (t_active_graph) t_active_graph->scoped_ = false;
  t_active_graph = prev_;
}

}  // namespace hegl
