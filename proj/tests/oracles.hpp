#pragma once

// Reference implementations written independently of the library: plain
// loops, no shared helpers, no caching.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <vector>

#include "cvs/tensor.hpp"

namespace oracle {

using cvs::Tensor;
using P3 = std::array<double, 3>;
using M3 = std::array<std::array<double, 3>, 3>;

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  Tensor c({m, p});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += a.at({i, k}) * b.at({k, j});
      c.at({i, j}) = s;
    }
  return c;
}

inline std::vector<double> softmax(std::vector<double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double& v : x) z += (v = std::exp(v - mx));
  for (double& v : x) v /= z;
  return x;
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

// Lattice point k of a K^3 kernel: x runs fastest, then y, z counts down.
inline P3 lattice_point(int k, int K) {
  const int h = K / 2;
  const int plane = k % (K * K);
  return {double(plane % K - h), double(plane / K - h), double(h - k / (K * K))};
}

inline M3 mul(const M3& a, const M3& b) {
  M3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// Composite of the three printed factor matrices, angles in degrees.
inline M3 rotation(double tx, double ty, double tz) {
  const double r = std::numbers::pi / 180.0;
  const double cx = std::cos(tx * r), sx = std::sin(tx * r);
  const double cy = std::cos(ty * r), sy = std::sin(ty * r);
  const double cz = std::cos(tz * r), sz = std::sin(tz * r);
  const M3 rx{{{-cx, sx, 0}, {-sx, -cx, 0}, {0, 0, 1}}};
  const M3 ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
  const M3 rz{{{1, 0, 0}, {0, -cz, sz}, {0, -sz, -cz}}};
  return mul(mul(rx, ry), rz);
}

inline P3 row_times(const P3& p, const M3& m) {
  P3 q{};
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) q[j] += p[i] * m[i][j];
  return q;
}

// Zero-padded trilinear sample of a (H, W, D, C) volume.
inline std::vector<double> trilinear(const Tensor& vol, const P3& pos) {
  const long H = long(vol.dim(0)), W = long(vol.dim(1)), D = long(vol.dim(2));
  const std::size_t C = vol.dim(3);
  std::vector<double> out(C, 0.0);
  const double fh = std::floor(pos[0]), fw = std::floor(pos[1]), fd = std::floor(pos[2]);
  const double th = pos[0] - fh, tw = pos[1] - fw, td = pos[2] - fd;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c) {
        const long h = long(fh) + a, w = long(fw) + b, d = long(fd) + c;
        if (h < 0 || h >= H || w < 0 || w >= W || d < 0 || d >= D) continue;
        const double wt = (a ? th : 1 - th) * (b ? tw : 1 - tw) * (c ? td : 1 - td);
        for (std::size_t ch = 0; ch < C; ++ch)
          out[ch] += wt * vol.at({std::size_t(h), std::size_t(w), std::size_t(d), ch});
      }
  return out;
}

// out[v] = sum_k W_k^T interp(V, v + P_k R) computed voxel by voxel.
// weight is (K^3, C_in, C_out).
inline Tensor rotated_conv(const Tensor& vol, const Tensor& weight, int K, double tx, double ty, double tz) {
  const std::size_t H = vol.dim(0), W = vol.dim(1), D = vol.dim(2), Cin = vol.dim(3), Cout = weight.dim(2);
  const M3 R = rotation(tx, ty, tz);
  Tensor out({H, W, D, Cout});
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w)
      for (std::size_t d = 0; d < D; ++d)
        for (int k = 0; k < K * K * K; ++k) {
          const P3 q = row_times(lattice_point(k, K), R);
          const auto f = oracle::trilinear(vol, {double(h) + q[0], double(w) + q[1], double(d) + q[2]});
          for (std::size_t co = 0; co < Cout; ++co) {
            double s = 0.0;
            for (std::size_t ci = 0; ci < Cin; ++ci) s += weight.at({std::size_t(k), ci, co}) * f[ci];
            out.at({h, w, d, co}) += s;
          }
        }
  return out;
}

// Standard zero-padded stride-1 correlation with a (K, K, K, C_in, C_out)
// kernel indexed by offset + K/2.
inline Tensor dense_conv(const Tensor& vol, const Tensor& kernel) {
  const long H = long(vol.dim(0)), W = long(vol.dim(1)), D = long(vol.dim(2));
  const std::size_t Cin = vol.dim(3), Cout = kernel.dim(4);
  const long K = long(kernel.dim(0)), h0 = K / 2;
  Tensor out({std::size_t(H), std::size_t(W), std::size_t(D), Cout});
  for (long h = 0; h < H; ++h)
    for (long w = 0; w < W; ++w)
      for (long d = 0; d < D; ++d)
        for (long a = 0; a < K; ++a)
          for (long b = 0; b < K; ++b)
            for (long c = 0; c < K; ++c) {
              const long ih = h + a - h0, iw = w + b - h0, id = d + c - h0;
              if (ih < 0 || ih >= H || iw < 0 || iw >= W || id < 0 || id >= D) continue;
              for (std::size_t co = 0; co < Cout; ++co) {
                double s = 0.0;
                for (std::size_t ci = 0; ci < Cin; ++ci)
                  s += kernel.at({std::size_t(a), std::size_t(b), std::size_t(c), ci, co}) *
                       vol.at({std::size_t(ih), std::size_t(iw), std::size_t(id), ci});
                out.at({std::size_t(h), std::size_t(w), std::size_t(d), co}) += s;
              }
            }
  return out;
}

// Moves each rotated tap's weights to the dense-kernel slot of its integer
// offset. Only meaningful for rotations by multiples of 90 degrees.
inline Tensor permuted_kernel(const Tensor& weight, int K, double tx, double ty, double tz) {
  const std::size_t Cin = weight.dim(1), Cout = weight.dim(2);
  const std::size_t k = std::size_t(K);
  Tensor dense({k, k, k, Cin, Cout});
  const M3 R = rotation(tx, ty, tz);
  for (int t = 0; t < K * K * K; ++t) {
    const P3 q = row_times(lattice_point(t, K), R);
    std::array<std::size_t, 3> slot{};
    for (int i = 0; i < 3; ++i) slot[i] = std::size_t(std::lround(q[i]) + K / 2);
    for (std::size_t ci = 0; ci < Cin; ++ci)
      for (std::size_t co = 0; co < Cout; ++co)
        dense.at({slot[0], slot[1], slot[2], ci, co}) = weight.at({std::size_t(t), ci, co});
  }
  return dense;
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b) {
  Tensor y = oracle::matmul(x, w);
  if (b && !b->empty())
    for (std::size_t i = 0; i < y.dim(0); ++i)
      for (std::size_t j = 0; j < y.dim(1); ++j) y.at({i, j}) += (*b)[j];
  return y;
}

// softmax(q k^T * scale) v per head, heads splitting the channel axis.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, double scale) {
  const std::size_t nq = q.dim(0), nk = k.dim(0), C = q.dim(1), dh = C / heads;
  Tensor out({nq, C});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < nq; ++i) {
      std::vector<double> logits(nk);
      for (std::size_t j = 0; j < nk; ++j) {
        double s = 0.0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) s += q.at({i, c}) * k.at({j, c});
        logits[j] = s * scale;
      }
      const auto p = oracle::softmax(logits);
      for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < nk; ++j) s += p[j] * v.at({j, c});
        out.at({i, c}) = s;
      }
    }
  return out;
}

struct Confusion {
  std::map<std::pair<int, int>, std::size_t> counts;  // (gt, pred) -> voxels
};

inline Confusion confusion(const std::vector<int>& pred, const std::vector<int>& gt,
                           const std::vector<std::uint8_t>& mask) {
  Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask[i] && gt[i] != 255) ++c.counts[{gt[i], pred[i]}];
  return c;
}

struct ScResult {
  double precision, recall, iou;
};

// Occupancy = label != 0, from the confusion table.
inline ScResult sc_from_confusion(const Confusion& c) {
  double tp = 0, fp = 0, fn = 0;
  for (const auto& [key, n] : c.counts) {
    const bool g = key.first != 0, p = key.second != 0;
    if (g && p) tp += double(n);
    if (!g && p) fp += double(n);
    if (g && !p) fn += double(n);
  }
  auto ratio = [](double a, double b) { return b == 0 ? 0.0 : a / b; };
  return {ratio(tp, tp + fp), ratio(tp, tp + fn), ratio(tp, tp + fp + fn)};
}

// Per-class IoU over classes 1..n-1 present in pred or gt, and their mean.
inline std::pair<std::map<int, double>, double> ssc_from_confusion(const Confusion& c, int num_classes) {
  std::map<int, double> iou;
  for (int k = 1; k < num_classes; ++k) {
    double tp = 0, row = 0, col = 0;
    for (const auto& [key, n] : c.counts) {
      if (key.first == k && key.second == k) tp += double(n);
      if (key.first == k) row += double(n);
      if (key.second == k) col += double(n);
    }
    const double uni = row + col - tp;
    if (uni > 0) iou[k] = tp / uni;
  }
  double sum = 0.0;
  for (const auto& [k, v] : iou) sum += v;
  return {iou, iou.empty() ? 0.0 : sum / double(iou.size())};
}

}  // namespace oracle
