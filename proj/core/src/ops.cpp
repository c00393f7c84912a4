#include "cvs/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cvs/error.hpp"

namespace cvs {

namespace {

void require_matrix(const Tensor& t, const char* what) { require_rank(t, 2, what); }

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  if (b.dim(0) != n) mismatch("matmul", a, b);
  Tensor out({m, p});
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* O = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = O + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = A[i * n + k];
      const double* brow = B + k * p;
      for (std::size_t j = 0; j < p; ++j) row[j] += aik * brow[j];
    }
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt lhs");
  require_matrix(b, "matmul_nt rhs");
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(0);
  if (b.dim(1) != n) mismatch("matmul_nt", a, b);
  Tensor out({m, p});
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* O = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = A + i * n;
    for (std::size_t j = 0; j < p; ++j) {
      const double* brow = B + j * n;
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += arow[k] * brow[k];
      O[i * p + j] = s;
    }
  }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn lhs");
  require_matrix(b, "matmul_tn rhs");
  const std::size_t n = a.dim(0), m = a.dim(1), p = b.dim(1);
  if (b.dim(0) != n) mismatch("matmul_tn", a, b);
  Tensor out({m, p});
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* O = out.data().data();
  for (std::size_t k = 0; k < n; ++k) {
    const double* arow = A + k * m;
    const double* brow = B + k * p;
    for (std::size_t i = 0; i < m; ++i) {
      const double aki = arow[i];
      double* orow = O + i * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

void matmul_backward(Tensor& a, Tensor& b, const Tensor& grad_out) {
  require_shape(grad_out, {a.dim(0), b.dim(1)}, "matmul_backward grad");
  const Tensor ga = matmul_nt(grad_out, b);
  const Tensor gb = matmul_tn(a, grad_out);
  auto da = a.grad();
  for (std::size_t i = 0; i < ga.size(); ++i) da[i] += ga[i];
  auto db = b.grad();
  for (std::size_t i = 0; i < gb.size(); ++i) db[i] += gb[i];
}

namespace {

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("softmax axis " + std::to_string(axis) + " invalid for shape " + shape_str(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisView v = axis_view(x.shape(), axis);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.extent * v.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < v.extent; ++e) mx = std::max(mx, x[base + e * v.inner]);
      double sum = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        const double ex = std::exp(x[base + e * v.inner] - mx);
        y[base + e * v.inner] = ex;
        sum += ex;
      }
      const double inv = 1.0 / sum;
      for (std::size_t e = 0; e < v.extent; ++e) y[base + e * v.inner] *= inv;
    }
  }
  return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& grad_y, std::size_t axis) {
  require_shape(grad_y, y.shape(), "softmax_backward grad");
  const AxisView v = axis_view(y.shape(), axis);
  Tensor gx(y.shape());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.extent * v.inner + in;
      double dot = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) dot += y[base + e * v.inner] * grad_y[base + e * v.inner];
      for (std::size_t e = 0; e < v.extent; ++e) {
        const std::size_t i = base + e * v.inner;
        gx[i] = y[i] * (grad_y[i] - dot);
      }
    }
  }
  return gx;
}

CrossEntropy cross_entropy(const Tensor& logits, std::span<const int> labels, std::optional<int> ignore) {
  require_rank(logits, 2, "cross_entropy logits");
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(logits.shape()));
  }
  CrossEntropy out;
  out.grad = Tensor(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (ignore && label == *ignore) continue;
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ParameterError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                           std::to_string(classes) + ")");
    }
    ++out.counted;
  }
  if (out.counted == 0) throw DegenerateError("cross_entropy: every entry is ignored");

  const double scale = 1.0 / static_cast<double>(out.counted);
  double total = 0.0, carry = 0.0;  // Neumaier-compensated sum
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (ignore && label == *ignore) continue;
    const double* row = logits.data().data() + i * classes;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(row[c] - mx);
    const double log_z = mx + std::log(sum);
    const double term = log_z - row[label];
    const double t = total + term;
    carry += std::abs(total) >= std::abs(term) ? (total - t) + term : (term - t) + total;
    total = t;
    double* g = out.grad.data().data() + i * classes;
    for (std::size_t c = 0; c < classes; ++c) g[c] = std::exp(row[c] - log_z) * scale;
    g[label] -= scale;
  }
  out.loss = (total + carry) * scale;
  return out;
}

}  // namespace cvs
