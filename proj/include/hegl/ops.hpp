#pragma once

#include <vector>

#include "hegl/tensor.hpp"

namespace hegl::ops {

// Forward ops. Each computes values eagerly, verifies the output is finite,
// and records a reverse-mode node on the active Graph when any input
// requires a gradient. Elementwise binary ops accept b with a shape equal to
// a suffix of a's shape (broadcast across the leading batch dims) or a
// single-element b; no other broadcasting.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor softmax_lastdim(const Tensor& x);
// Normalizes over the last dimension: (x - mu) / sqrt(var + 1e-12) * gain + bias.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias);
// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_axis(const Tensor& x, int axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, int axis_a, int axis_b);
Tensor slice(const Tensor& x, int dim, std::int64_t start, std::int64_t len);
Tensor concat(const std::vector<Tensor>& parts, int dim);
Tensor abs(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);
// Elementwise scale * x + shift with compile-time constants (not tensors).
Tensor affine(const Tensor& x, double scale, double shift);
// Mean binary cross-entropy on sigmoid(logits) against {0,1} targets,
// computed in the numerically stable softplus form.
Tensor bce_logits(const Tensor& logits, const Tensor& targets);
// Stacks `batch` copies of x along a new leading dim; backward sums over it.
Tensor tile_batch(const Tensor& x, std::int64_t batch);

enum class OpKind {
  Matmul,
  Add,
  Mul,
  SoftmaxLastdim,
  Layernorm,
  Gelu,
  Sigmoid,
  Sum,
  Mean,
  Reshape,
  Transpose,
  Slice,
  Concat,
  Abs,
  Sqrt,
  Div,
  Dot,
};

const char* op_kind_name(OpKind kind);

struct OpAttrs {
  Shape shape;               // Reshape
  int axis_a = -2;           // Transpose
  int axis_b = -1;           // Transpose
  int dim = 0;               // Slice / Concat
  std::int64_t start = 0;    // Slice
  std::int64_t len = 0;      // Slice
};

// Uniform dispatch surface over the op set above.
Tensor forward_op(OpKind kind, const std::vector<Tensor>& inputs,
                  const OpAttrs& attrs = {});

}  // namespace hegl::ops
