#pragma once

#include <optional>
#include <span>

#include "cvs/tensor.hpp"

namespace cvs {

// Dense products with a fixed (i, k, j) reduction order.
Tensor matmul(const Tensor& a, const Tensor& b);     // a[m,n] * b[n,p]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a[m,n] * b[p,n]^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a[n,m]^T * b[n,p]
Tensor transpose(const Tensor& a);

// Accumulates dL/da and dL/db into a.grad() and b.grad().
void matmul_backward(Tensor& a, Tensor& b, const Tensor& grad_out);

// Numerically stable softmax along `axis` of a tensor of any rank.
Tensor softmax(const Tensor& x, std::size_t axis);
// dL/dx given the softmax output y and dL/dy.
Tensor softmax_backward(const Tensor& y, const Tensor& grad_y, std::size_t axis);

struct CrossEntropy {
  double loss = 0.0;
  Tensor grad;  // dloss/dlogits, same shape as logits
  std::size_t counted = 0;
};

// Mean of -log softmax(logits)[label] over rows whose label differs from
// `ignore`. Throws DegenerateError when every row is ignored.
CrossEntropy cross_entropy(const Tensor& logits, std::span<const int> labels, std::optional<int> ignore = {});

}  // namespace cvs
