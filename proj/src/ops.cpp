#include "hegl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace hegl::ops {

namespace {

using i64 = std::int64_t;

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* A, const double* B, double* C, i64 m, i64 k, i64 n) {
  for (i64 i = 0; i < m; ++i) {
    const double* a_row = A + i * k;
    double* c_row = C + i * n;
    for (i64 p = 0; p < k; ++p) {
      const double a = a_row[p];
      const double* b_row = B + p * n;
      for (i64 j = 0; j < n; ++j) c_row[j] += a * b_row[j];
    }
  }
}

// C[m,n] += A[m,k] * B^T, B stored [n,k]
void gemm_nt(const double* A, const double* B, double* C, i64 m, i64 k, i64 n) {
  for (i64 i = 0; i < m; ++i) {
    const double* a_row = A + i * k;
    double* c_row = C + i * n;
    for (i64 j = 0; j < n; ++j) {
      const double* b_row = B + j * k;
      double s = 0.0;
      for (i64 p = 0; p < k; ++p) s += a_row[p] * b_row[p];
      c_row[j] += s;
    }
  }
}

// C[k,n] += A^T * G, A stored [m,k], G stored [m,n]
void gemm_tn(const double* A, const double* G, double* C, i64 m, i64 k, i64 n) {
  for (i64 i = 0; i < m; ++i) {
    const double* a_row = A + i * k;
    const double* g_row = G + i * n;
    for (i64 p = 0; p < k; ++p) {
      const double a = a_row[p];
      double* c_row = C + p * n;
      for (i64 j = 0; j < n; ++j) c_row[j] += a * g_row[j];
    }
  }
}

bool grad_wanted(const std::vector<Tensor>& inputs) {
  if (!Graph::active()) return false;
  for (const auto& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

// Finalizes an op: finiteness check, then tape recording if needed.
void finish(const char* op, std::vector<Tensor> inputs, Tensor& out,
            std::function<void()> vjp) {
  out.check_finite(op);
  if (grad_wanted(inputs)) {
    out.set_requires_grad(true);
    Graph::active()->record(op, std::move(inputs), out, std::move(vjp));
  }
}

enum class Bcast { Same, Tiled, Scalar };

Bcast bcast_kind(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Bcast::Same;
  if (shape_numel(b) == 1) return Bcast::Scalar;
  if (b.size() < a.size() &&
      std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()))) {
    return Bcast::Tiled;
  }
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                   shape_str(b) + " do not match (second operand may only "
                   "broadcast over leading batch dims)");
}

Shape drop_axis(const Shape& s, int axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (static_cast<int>(i) != axis) out.push_back(s[i]);
  }
  return out;
}

int norm_axis(const char* op, int axis, std::size_t ndim) {
  int a = axis < 0 ? axis + static_cast<int>(ndim) : axis;
  if (a < 0 || a >= static_cast<int>(ndim)) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(ndim));
  }
  return a;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  i64 batch = 0, m = 0, k = 0, n = 0;
  bool batched_b = false;
  if (sa.size() == 2 && sb.size() == 2) {
    batch = 1;
    m = sa[0];
    k = sa[1];
    n = sb[1];
    if (sb[0] != k) {
      throw ShapeError("matmul: inner dims disagree for " + shape_str(sa) + " x " + shape_str(sb));
    }
  } else if (sa.size() == 3 && sb.size() == 2) {
    batch = sa[0];
    m = sa[1];
    k = sa[2];
    n = sb[1];
    if (sb[0] != k) {
      throw ShapeError("matmul: inner dims disagree for " + shape_str(sa) + " x " + shape_str(sb));
    }
  } else if (sa.size() == 3 && sb.size() == 3) {
    batched_b = true;
    batch = sa[0];
    m = sa[1];
    k = sa[2];
    n = sb[2];
    if (sb[0] != batch || sb[1] != k) {
      throw ShapeError("matmul: inner dims disagree for " + shape_str(sa) + " x " + shape_str(sb));
    }
  } else {
    throw ShapeError("matmul: unsupported ranks " + shape_str(sa) + " x " + shape_str(sb));
  }

  Shape out_shape = sa.size() == 2 ? Shape{m, n} : Shape{batch, m, n};
  Tensor out = Tensor::zeros(out_shape);
  {
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    double* pc = out.mutable_values().data();
    for (i64 bb = 0; bb < batch; ++bb) {
      gemm_nn(pa + bb * m * k, pb + (batched_b ? bb * k * n : 0), pc + bb * m * n, m, k, n);
    }
  }

  finish("matmul", {a, b}, out, [a, b, out, batch, m, k, n, batched_b]() mutable {
    const double* g = out.grad().data();
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    if (a.requires_grad()) {
      double* da = a.grad().data();
      for (i64 bb = 0; bb < batch; ++bb) {
        gemm_nt(g + bb * m * n, pb + (batched_b ? bb * k * n : 0), da + bb * m * k, m, n, k);
      }
    }
    if (b.requires_grad()) {
      double* db = b.grad().data();
      for (i64 bb = 0; bb < batch; ++bb) {
        gemm_tn(pa + bb * m * k, g + bb * m * n, db + (batched_b ? bb * k * n : 0), m, k, n);
      }
    }
  });
  return out;
}

namespace {

template <typename Fwd, typename VjpA, typename VjpB>
Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b,
                          Fwd fwd, VjpA vjp_a, VjpB vjp_b) {
  bcast_kind(op, a.shape(), b.shape());
  const auto& va = a.values();
  const auto& vb = b.values();
  const std::size_t nb = vb.size();
  if (va.size() % nb != 0) {
    throw ShapeError(std::string(op) + ": broadcast size mismatch for " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  auto& vo = out.mutable_values();
  for (std::size_t i = 0; i < va.size(); ++i) vo[i] = fwd(va[i], vb[i % nb]);

  finish(op, {a, b}, out, [a, b, out, nb, vjp_a, vjp_b]() mutable {
    const auto& g = out.grad();
    const auto& va = a.values();
    const auto& vb = b.values();
    if (a.requires_grad()) {
      auto& da = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += vjp_a(g[i], va[i], vb[i % nb]);
    }
    if (b.requires_grad()) {
      auto& db = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) db[i % nb] += vjp_b(g[i], va[i], vb[i % nb]);
    }
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double g, double, double y) { return g / y; },
      [](double g, double x, double y) { return -g * x / (y * y); });
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.ndim() == 0 || x.shape().empty()) throw ShapeError("softmax-lastdim: rank-0 input");
  const i64 d = x.shape().back();
  const i64 rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape());
  const auto& vx = x.values();
  auto& vy = out.mutable_values();
  for (i64 r = 0; r < rows; ++r) {
    const double* px = vx.data() + r * d;
    double* py = vy.data() + r * d;
    double mx = px[0];
    for (i64 j = 1; j < d; ++j) mx = std::max(mx, px[j]);
    double s = 0.0;
    for (i64 j = 0; j < d; ++j) {
      py[j] = std::exp(px[j] - mx);
      s += py[j];
    }
    for (i64 j = 0; j < d; ++j) py[j] /= s;
  }

  finish("softmax-lastdim", {x}, out, [x, out, rows, d]() mutable {
    if (!x.requires_grad()) return;
    const auto& g = out.grad();
    const auto& vy = out.values();
    auto& dx = x.grad();
    for (i64 r = 0; r < rows; ++r) {
      const double* pg = g.data() + r * d;
      const double* py = vy.data() + r * d;
      double* pd = dx.data() + r * d;
      double dot = 0.0;
      for (i64 j = 0; j < d; ++j) dot += pg[j] * py[j];
      for (i64 j = 0; j < d; ++j) pd[j] += py[j] * (pg[j] - dot);
    }
  });
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  if (x.shape().empty()) throw ShapeError("layernorm: rank-0 input");
  const i64 d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layernorm: gain/bias must have " + std::to_string(d) + " entries");
  }
  const i64 rows = x.numel() / d;
  constexpr double kEps = 1e-12;

  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  std::vector<double> xhat(x.values().size());
  {
    const auto& vx = x.values();
    const auto& vg = gain.values();
    const auto& vb = bias.values();
    auto& vy = out.mutable_values();
    for (i64 r = 0; r < rows; ++r) {
      const double* px = vx.data() + r * d;
      double mu = 0.0;
      for (i64 j = 0; j < d; ++j) mu += px[j];
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (i64 j = 0; j < d; ++j) {
        double c = px[j] - mu;
        var += c * c;
      }
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + kEps);
      inv_std[static_cast<std::size_t>(r)] = inv;
      double* ph = xhat.data() + r * d;
      double* py = vy.data() + r * d;
      for (i64 j = 0; j < d; ++j) {
        ph[j] = (px[j] - mu) * inv;
        py[j] = ph[j] * vg[static_cast<std::size_t>(j)] + vb[static_cast<std::size_t>(j)];
      }
    }
  }

  finish("layernorm", {x, gain, bias}, out,
         [x, gain, bias, out, rows, d, inv_std = std::move(inv_std),
          xhat = std::move(xhat)]() mutable {
           const auto& g = out.grad();
           const auto& vg = gain.values();
           for (i64 r = 0; r < rows; ++r) {
             const double* pg = g.data() + r * d;
             const double* ph = xhat.data() + r * d;
             if (gain.requires_grad()) {
               auto& dgain = gain.grad();
               for (i64 j = 0; j < d; ++j) dgain[static_cast<std::size_t>(j)] += pg[j] * ph[j];
             }
             if (bias.requires_grad()) {
               auto& dbias = bias.grad();
               for (i64 j = 0; j < d; ++j) dbias[static_cast<std::size_t>(j)] += pg[j];
             }
             if (x.requires_grad()) {
               auto& dx = x.grad();
               double* pd = dx.data() + r * d;
               double mean_dh = 0.0, mean_dh_h = 0.0;
               for (i64 j = 0; j < d; ++j) {
                 const double dh = pg[j] * vg[static_cast<std::size_t>(j)];
                 mean_dh += dh;
                 mean_dh_h += dh * ph[j];
               }
               mean_dh /= static_cast<double>(d);
               mean_dh_h /= static_cast<double>(d);
               const double inv = inv_std[static_cast<std::size_t>(r)];
               for (i64 j = 0; j < d; ++j) {
                 const double dh = pg[j] * vg[static_cast<std::size_t>(j)];
                 pd[j] += inv * (dh - mean_dh - ph[j] * mean_dh_h);
               }
             }
           }
         });
  return out;
}

namespace {

template <typename Fwd, typename Deriv>
Tensor unary_elementwise(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& vx = x.values();
  auto& vy = out.mutable_values();
  for (std::size_t i = 0; i < vx.size(); ++i) vy[i] = fwd(vx[i]);
  finish(op, {x}, out, [x, out, deriv]() mutable {
    if (!x.requires_grad()) return;
    const auto& g = out.grad();
    const auto& vx = x.values();
    const auto& vy = out.values();
    auto& dx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * deriv(vx[i], vy[i]);
  });
  return out;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;

}  // namespace

Tensor gelu(const Tensor& x) {
  return unary_elementwise(
      "gelu", x,
      [](double v) {
        const double t = std::tanh(kGeluC * (v + kGeluK * v * v * v));
        return 0.5 * v * (1.0 + t);
      },
      [](double v, double) {
        const double t = std::tanh(kGeluC * (v + kGeluK * v * v * v));
        const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * dt;
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      "sigmoid", x, [](double v) { return stable_sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(const Tensor& x) {
  return unary_elementwise(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.values()) {
    if (v < 0.0) throw NumericError("sqrt: negative input");
  }
  return unary_elementwise(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s);
  finish("sum", {x}, out, [x, out]() mutable {
    if (!x.requires_grad()) return;
    const double g = out.grad()[0];
    auto& dx = x.grad();
    for (auto& v : dx) v += g;
  });
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double n = static_cast<double>(x.numel());
  Tensor out = Tensor::scalar(s / n);
  finish("mean", {x}, out, [x, out, n]() mutable {
    if (!x.requires_grad()) return;
    const double g = out.grad()[0] / n;
    auto& dx = x.grad();
    for (auto& v : dx) v += g;
  });
  return out;
}

Tensor mean_axis(const Tensor& x, int axis) {
  const int ax = norm_axis("mean", axis, x.ndim());
  const Shape& s = x.shape();
  i64 outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(ax) + 1; i < s.size(); ++i) inner *= s[i];
  const i64 len = s[static_cast<std::size_t>(ax)];
  if (len == 0) throw ShapeError("mean: empty axis");

  Tensor out = Tensor::zeros(drop_axis(s, ax));
  {
    const auto& vx = x.values();
    auto& vy = out.mutable_values();
    for (i64 o = 0; o < outer; ++o) {
      for (i64 l = 0; l < len; ++l) {
        const double* px = vx.data() + (o * len + l) * inner;
        double* py = vy.data() + o * inner;
        for (i64 j = 0; j < inner; ++j) py[j] += px[j];
      }
    }
    const double invn = 1.0 / static_cast<double>(len);
    for (auto& v : vy) v *= invn;
  }

  finish("mean", {x}, out, [x, out, outer, len, inner]() mutable {
    if (!x.requires_grad()) return;
    const auto& g = out.grad();
    auto& dx = x.grad();
    const double invn = 1.0 / static_cast<double>(len);
    for (i64 o = 0; o < outer; ++o) {
      const double* pg = g.data() + o * inner;
      for (i64 l = 0; l < len; ++l) {
        double* pd = dx.data() + (o * len + l) * inner;
        for (i64 j = 0; j < inner; ++j) pd[j] += pg[j] * invn;
      }
    }
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out = Tensor::from_data(x.values(), std::move(shape));
  finish("reshape", {x}, out, [x, out]() mutable {
    if (!x.requires_grad()) return;
    x.accumulate_grad(out.grad());
  });
  return out;
}

Tensor transpose(const Tensor& x, int axis_a, int axis_b) {
  const int a = norm_axis("transpose", axis_a, x.ndim());
  const int b = norm_axis("transpose", axis_b, x.ndim());
  if (a == b) throw ShapeError("transpose: identical axes");

  const Shape& s = x.shape();
  Shape out_shape = s;
  std::swap(out_shape[static_cast<std::size_t>(a)], out_shape[static_cast<std::size_t>(b)]);

  // Row-major strides for the input viewed through the swapped axis order.
  const std::size_t nd = s.size();
  std::vector<i64> in_strides(nd, 1);
  for (int i = static_cast<int>(nd) - 2; i >= 0; --i) {
    in_strides[static_cast<std::size_t>(i)] =
        in_strides[static_cast<std::size_t>(i) + 1] * s[static_cast<std::size_t>(i) + 1];
  }
  std::vector<i64> perm_strides(nd);
  for (std::size_t i = 0; i < nd; ++i) perm_strides[i] = in_strides[i];
  std::swap(perm_strides[static_cast<std::size_t>(a)], perm_strides[static_cast<std::size_t>(b)]);

  Tensor out = Tensor::zeros(out_shape);
  {
    const auto& vx = x.values();
    auto& vy = out.mutable_values();
    std::vector<i64> idx(nd, 0);
    const i64 n = x.numel();
    for (i64 o = 0; o < n; ++o) {
      i64 src = 0;
      for (std::size_t i = 0; i < nd; ++i) src += idx[i] * perm_strides[i];
      vy[static_cast<std::size_t>(o)] = vx[static_cast<std::size_t>(src)];
      for (int i = static_cast<int>(nd) - 1; i >= 0; --i) {
        if (++idx[static_cast<std::size_t>(i)] < out_shape[static_cast<std::size_t>(i)]) break;
        idx[static_cast<std::size_t>(i)] = 0;
      }
    }
  }

  finish("transpose", {x}, out,
         [x, out, out_shape, perm_strides, nd]() mutable {
           if (!x.requires_grad()) return;
           const auto& g = out.grad();
           auto& dx = x.grad();
           std::vector<i64> idx(nd, 0);
           const i64 n = static_cast<i64>(g.size());
           for (i64 o = 0; o < n; ++o) {
             i64 src = 0;
             for (std::size_t i = 0; i < nd; ++i) src += idx[i] * perm_strides[i];
             dx[static_cast<std::size_t>(src)] += g[static_cast<std::size_t>(o)];
             for (int i = static_cast<int>(nd) - 1; i >= 0; --i) {
               if (++idx[static_cast<std::size_t>(i)] < out_shape[static_cast<std::size_t>(i)]) break;
               idx[static_cast<std::size_t>(i)] = 0;
             }
           }
         });
  return out;
}

Tensor slice(const Tensor& x, int dim, std::int64_t start, std::int64_t len) {
  const int d = norm_axis("slice", dim, x.ndim());
  const Shape& s = x.shape();
  const i64 extent = s[static_cast<std::size_t>(d)];
  if (start < 0 || len <= 0 || start + len > extent) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") invalid for dim of size " +
                     std::to_string(extent));
  }
  i64 outer = 1, inner = 1;
  for (int i = 0; i < d; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(d) + 1; i < s.size(); ++i) inner *= s[i];

  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(d)] = len;
  Tensor out = Tensor::zeros(out_shape);
  {
    const auto& vx = x.values();
    auto& vy = out.mutable_values();
    for (i64 o = 0; o < outer; ++o) {
      const double* px = vx.data() + (o * extent + start) * inner;
      double* py = vy.data() + o * len * inner;
      std::memcpy(py, px, static_cast<std::size_t>(len * inner) * sizeof(double));
    }
  }

  finish("slice", {x}, out, [x, out, outer, inner, extent, start, len]() mutable {
    if (!x.requires_grad()) return;
    const auto& g = out.grad();
    auto& dx = x.grad();
    for (i64 o = 0; o < outer; ++o) {
      const double* pg = g.data() + o * len * inner;
      double* pd = dx.data() + (o * extent + start) * inner;
      for (i64 j = 0; j < len * inner; ++j) pd[j] += pg[j];
    }
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int dim) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int d = norm_axis("concat", dim, parts[0].ndim());
  Shape out_shape = parts[0].shape();
  i64 total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != parts[0].ndim()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < out_shape.size(); ++i) {
      if (static_cast<int>(i) != d && p.shape()[i] != out_shape[i]) {
        throw ShapeError("concat: shape " + shape_str(p.shape()) +
                         " incompatible with " + shape_str(out_shape));
      }
    }
    total += p.shape()[static_cast<std::size_t>(d)];
  }
  out_shape[static_cast<std::size_t>(d)] = total;

  i64 outer = 1, inner = 1;
  for (int i = 0; i < d; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(d) + 1; i < out_shape.size(); ++i) {
    inner *= out_shape[i];
  }

  Tensor out = Tensor::zeros(out_shape);
  {
    auto& vy = out.mutable_values();
    i64 offset = 0;
    for (const auto& p : parts) {
      const i64 ext = p.shape()[static_cast<std::size_t>(d)];
      const auto& vp = p.values();
      for (i64 o = 0; o < outer; ++o) {
        std::memcpy(vy.data() + (o * total + offset) * inner, vp.data() + o * ext * inner,
                    static_cast<std::size_t>(ext * inner) * sizeof(double));
      }
      offset += ext;
    }
  }

  finish("concat", parts, out, [parts, out, outer, inner, total, d]() mutable {
    const auto& g = out.grad();
    i64 offset = 0;
    for (auto& p : parts) {
      const i64 ext = p.shape()[static_cast<std::size_t>(d)];
      if (p.requires_grad()) {
        auto& dp = p.grad();
        for (i64 o = 0; o < outer; ++o) {
          const double* pg = g.data() + (o * total + offset) * inner;
          double* pd = dp.data() + o * ext * inner;
          for (i64 j = 0; j < ext * inner; ++j) pd[j] += pg[j];
        }
      }
      offset += ext;
    }
  });
  return out;
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("dot: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
  double s = 0.0;
  const auto& va = a.values();
  const auto& vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) s += va[i] * vb[i];
  Tensor out = Tensor::scalar(s);
  finish("dot", {a, b}, out, [a, b, out]() mutable {
    const double g = out.grad()[0];
    const auto& va = a.values();
    const auto& vb = b.values();
    if (a.requires_grad()) {
      auto& da = a.grad();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g * vb[i];
    }
    if (b.requires_grad()) {
      auto& db = b.grad();
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += g * va[i];
    }
  });
  return out;
}

Tensor affine(const Tensor& x, double scale, double shift) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& vx = x.values();
  auto& vy = out.mutable_values();
  for (std::size_t i = 0; i < vx.size(); ++i) vy[i] = scale * vx[i] + shift;
  finish("affine", {x}, out, [x, out, scale]() mutable {
    if (!x.requires_grad()) return;
    const auto& g = out.grad();
    auto& dx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += scale * g[i];
  });
  return out;
}

Tensor bce_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("bce_logits: shapes " + shape_str(logits.shape()) + " and " +
                     shape_str(targets.shape()) + " differ");
  }
  const auto& vz = logits.values();
  const auto& vy = targets.values();
  const double n = static_cast<double>(vz.size());
  double total = 0.0;
  for (std::size_t i = 0; i < vz.size(); ++i) {
    const double z = vz[i];
    const double y = vy[i];
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
  }
  Tensor out = Tensor::scalar(total / n);
  finish("bce_logits", {logits, targets}, out, [logits, targets, out, n]() mutable {
    if (!logits.requires_grad()) return;
    const double g = out.grad()[0] / n;
    const auto& vz = logits.values();
    const auto& vy = targets.values();
    auto& dz = logits.grad();
    for (std::size_t i = 0; i < vz.size(); ++i) {
      dz[i] += g * (stable_sigmoid(vz[i]) - vy[i]);
    }
  });
  return out;
}

Tensor tile_batch(const Tensor& x, std::int64_t batch) {
  if (batch <= 0) throw ShapeError("tile_batch: batch must be positive");
  Shape out_shape;
  out_shape.push_back(batch);
  for (auto d : x.shape()) out_shape.push_back(d);
  Tensor out = Tensor::zeros(out_shape);
  const auto& vx = x.values();
  auto& vy = out.mutable_values();
  for (i64 b = 0; b < batch; ++b) {
    std::memcpy(vy.data() + b * x.numel(), vx.data(), vx.size() * sizeof(double));
  }
  finish("tile_batch", {x}, out, [x, out, batch]() mutable {
    if (!x.requires_grad()) return;
    const auto& g = out.grad();
    auto& dx = x.grad();
    const i64 n = x.numel();
    for (i64 b = 0; b < batch; ++b) {
      const double* pg = g.data() + b * n;
      for (i64 j = 0; j < n; ++j) dx[static_cast<std::size_t>(j)] += pg[j];
    }
  });
  return out;
}

const char* op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::Matmul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::SoftmaxLastdim: return "softmax-lastdim";
    case OpKind::Layernorm: return "layernorm";
    case OpKind::Gelu: return "gelu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Reshape: return "reshape";
    case OpKind::Transpose: return "transpose";
    case OpKind::Slice: return "slice";
    case OpKind::Concat: return "concat";
    case OpKind::Abs: return "abs";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Div: return "div";
    case OpKind::Dot: return "dot";
  }
  return "?";
}

namespace {

void need(const char* op, const std::vector<Tensor>& inputs, std::size_t n) {
  if (inputs.size() != n) {
    throw ShapeError(std::string(op) + ": expected " + std::to_string(n) +
                     " inputs, got " + std::to_string(inputs.size()));
  }
}

}  // namespace

Tensor forward_op(OpKind kind, const std::vector<Tensor>& inputs, const OpAttrs& attrs) {
  const char* name = op_kind_name(kind);
  switch (kind) {
    case OpKind::Matmul:
      need(name, inputs, 2);
      return matmul(inputs[0], inputs[1]);
    case OpKind::Add:
      need(name, inputs, 2);
      return add(inputs[0], inputs[1]);
    case OpKind::Mul:
      need(name, inputs, 2);
      return mul(inputs[0], inputs[1]);
    case OpKind::Div:
      need(name, inputs, 2);
      return div(inputs[0], inputs[1]);
    case OpKind::Dot:
      need(name, inputs, 2);
      return dot(inputs[0], inputs[1]);
    case OpKind::SoftmaxLastdim:
      need(name, inputs, 1);
      return softmax_lastdim(inputs[0]);
    case OpKind::Layernorm:
      need(name, inputs, 3);
      return layernorm(inputs[0], inputs[1], inputs[2]);
    case OpKind::Gelu:
      need(name, inputs, 1);
      return gelu(inputs[0]);
    case OpKind::Sigmoid:
      need(name, inputs, 1);
      return sigmoid(inputs[0]);
    case OpKind::Sum:
      need(name, inputs, 1);
      return sum(inputs[0]);
    case OpKind::Mean:
      need(name, inputs, 1);
      return mean(inputs[0]);
    case OpKind::Reshape:
      need(name, inputs, 1);
      return reshape(inputs[0], attrs.shape);
    case OpKind::Transpose:
      need(name, inputs, 1);
      return transpose(inputs[0], attrs.axis_a, attrs.axis_b);
    case OpKind::Slice:
      need(name, inputs, 1);
      return slice(inputs[0], attrs.dim, attrs.start, attrs.len);
    case OpKind::Concat:
      return concat(inputs, attrs.dim);
    case OpKind::Abs:
      need(name, inputs, 1);
      return abs(inputs[0]);
    case OpKind::Sqrt:
      need(name, inputs, 1);
      return sqrt(inputs[0]);
  }
  throw Error("forward_op: unknown kind");
}

}  // namespace hegl::ops
