#include "cvs/layers.hpp"

#include <cmath>

#include "cvs/error.hpp"
#include "cvs/ops.hpp"

namespace cvs {

namespace {

void accumulate(std::span<double> dst, const Tensor& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace

// ---------------------------------------------------------------- Linear

Linear::Linear(std::size_t in, std::size_t out, bool with_bias) : weight({in, out}) {
  if (with_bias) bias = Tensor({out});
}

Linear Linear::kaiming(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  Linear l(in, out, with_bias);
  l.weight = Tensor::randn({in, out}, rng, std::sqrt(2.0 / static_cast<double>(in)));
  return l;
}

Tensor Linear::forward(const Tensor& x) const {
  require_rank(x, 2, "Linear input");
  if (x.dim(1) != in_features()) {
    throw DimensionError("Linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  Tensor y = matmul(x, weight);
  if (!has_bias()) return y;
  const std::size_t n = y.dim(0), m = y.dim(1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] += bias[j];
  return y;
}

Tensor Linear::backward(const Tensor& x, const Tensor& grad_y) {
  accumulate(weight.grad(), matmul_tn(x, grad_y));
  if (has_bias()) {
    auto gb = bias.grad();
    const std::size_t n = grad_y.dim(0), m = grad_y.dim(1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gb[j] += grad_y[i * m + j];
  }
  return matmul_nt(grad_y, weight);
}

void Linear::collect(ParamList& params, const std::string& prefix) {
  params.push_back({prefix + ".weight", &weight});
  if (has_bias()) params.push_back({prefix + ".bias", &bias});
}

// ---------------------------------------------------------------- Conv3d

std::size_t ConvGeometry::out_extent(std::size_t in) const {
  const std::size_t padded = in + 2 * pad;
  if (padded < kernel) throw DimensionError("convolution kernel larger than padded input");
  return (padded - kernel) / stride + 1;
}

std::size_t ConvGeometry::transposed_extent(std::size_t in) const {
  const std::size_t full = (in - 1) * stride + kernel;
  if (full <= 2 * pad) throw DimensionError("transposed convolution output would be empty");
  return full - 2 * pad;
}

namespace {

struct Extents {
  std::size_t h, w, d, c;
};

Extents extents_of(const Shape& s) { return {s[0], s[1], s[2], s[3]}; }

void check_conv_weight(const Tensor& weight, const ConvGeometry& g, std::size_t cin) {
  require_rank(weight, 5, "conv weight");
  if (weight.dim(0) != g.kernel || weight.dim(1) != g.kernel || weight.dim(2) != g.kernel || weight.dim(3) != cin) {
    throw DimensionError("conv weight " + shape_str(weight.shape()) + " incompatible with kernel " +
                         std::to_string(g.kernel) + " and " + std::to_string(cin) + " input channels");
  }
}

// Visits every (output voxel, kernel tap, input voxel) triple with the input
// voxel inside the volume. Order is fixed: output voxel, then kernel taps.
template <typename Fn>
void for_each_tap(const Extents& in, const Extents& out, const ConvGeometry& g, Fn&& fn) {
  const auto K = static_cast<long>(g.kernel);
  const auto S = static_cast<long>(g.stride);
  const auto P = static_cast<long>(g.pad);
  for (long oh = 0; oh < static_cast<long>(out.h); ++oh)
    for (long ow = 0; ow < static_cast<long>(out.w); ++ow)
      for (long od = 0; od < static_cast<long>(out.d); ++od) {
        const std::size_t o = (static_cast<std::size_t>(oh) * out.w + ow) * out.d + od;
        for (long kh = 0; kh < K; ++kh) {
          const long ih = oh * S - P + kh;
          if (ih < 0 || ih >= static_cast<long>(in.h)) continue;
          for (long kw = 0; kw < K; ++kw) {
            const long iw = ow * S - P + kw;
            if (iw < 0 || iw >= static_cast<long>(in.w)) continue;
            for (long kd = 0; kd < K; ++kd) {
              const long id = od * S - P + kd;
              if (id < 0 || id >= static_cast<long>(in.d)) continue;
              const std::size_t i = (static_cast<std::size_t>(ih) * in.w + iw) * in.d + id;
              const std::size_t tap = (static_cast<std::size_t>(kh) * K + kw) * K + kd;
              fn(o, tap, i);
            }
          }
        }
      }
}

}  // namespace

Tensor conv3d_forward(const Tensor& x, const Tensor& weight, const ConvGeometry& g) {
  require_rank(x, 4, "conv input");
  const Extents in = extents_of(x.shape());
  check_conv_weight(weight, g, in.c);
  const std::size_t cout = weight.dim(4);
  const Extents out{g.out_extent(in.h), g.out_extent(in.w), g.out_extent(in.d), cout};
  Tensor y({out.h, out.w, out.d, cout});
  const double* X = x.data().data();
  const double* W = weight.data().data();
  double* Y = y.data().data();
  const std::size_t cin = in.c;
  for_each_tap(in, out, g, [&](std::size_t o, std::size_t tap, std::size_t i) {
    const double* xi = X + i * cin;
    const double* wt = W + tap * cin * cout;
    double* yo = Y + o * cout;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double xv = xi[ci];
      const double* wrow = wt + ci * cout;
      for (std::size_t co = 0; co < cout; ++co) yo[co] += xv * wrow[co];
    }
  });
  return y;
}

Tensor conv3d_backward_input(const Tensor& weight, const Tensor& grad_y, const Shape& x_shape, const ConvGeometry& g) {
  require_rank(grad_y, 4, "conv grad");
  const Extents in = extents_of(x_shape);
  check_conv_weight(weight, g, in.c);
  const std::size_t cout = weight.dim(4);
  const Extents out{g.out_extent(in.h), g.out_extent(in.w), g.out_extent(in.d), cout};
  require_shape(grad_y, {out.h, out.w, out.d, cout}, "conv grad");
  Tensor gx(x_shape);
  const double* G = grad_y.data().data();
  const double* W = weight.data().data();
  double* GX = gx.data().data();
  const std::size_t cin = in.c;
  for_each_tap(in, out, g, [&](std::size_t o, std::size_t tap, std::size_t i) {
    const double* go = G + o * cout;
    const double* wt = W + tap * cin * cout;
    double* gxi = GX + i * cin;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* wrow = wt + ci * cout;
      double s = 0.0;
      for (std::size_t co = 0; co < cout; ++co) s += wrow[co] * go[co];
      gxi[ci] += s;
    }
  });
  return gx;
}

void conv3d_accumulate_weight_grad(const Tensor& x, const Tensor& grad_y, std::span<double> grad_weight,
                                   const ConvGeometry& g) {
  const Extents in = extents_of(x.shape());
  const std::size_t cout = grad_y.dim(3);
  const Extents out{g.out_extent(in.h), g.out_extent(in.w), g.out_extent(in.d), cout};
  require_shape(grad_y, {out.h, out.w, out.d, cout}, "conv grad");
  if (grad_weight.size() != g.kernel * g.kernel * g.kernel * in.c * cout) {
    throw DimensionError("conv weight gradient buffer has the wrong size");
  }
  const double* X = x.data().data();
  const double* G = grad_y.data().data();
  double* GW = grad_weight.data();
  const std::size_t cin = in.c;
  for_each_tap(in, out, g, [&](std::size_t o, std::size_t tap, std::size_t i) {
    const double* xi = X + i * cin;
    const double* go = G + o * cout;
    double* gw = GW + tap * cin * cout;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double xv = xi[ci];
      double* row = gw + ci * cout;
      for (std::size_t co = 0; co < cout; ++co) row[co] += xv * go[co];
    }
  });
}

namespace {

void add_bias(Tensor& y, const Tensor& bias) {
  const std::size_t c = bias.size();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bias[i % c];
}

void accumulate_bias_grad(std::span<double> gb, const Tensor& grad_y) {
  const std::size_t c = gb.size();
  for (std::size_t i = 0; i < grad_y.size(); ++i) gb[i % c] += grad_y[i];
}

}  // namespace

Conv3d::Conv3d(std::size_t in, std::size_t out, ConvGeometry g)
    : weight({g.kernel, g.kernel, g.kernel, in, out}), bias({out}), geometry(g) {}

Conv3d Conv3d::kaiming(std::size_t in, std::size_t out, ConvGeometry g, Rng& rng) {
  Conv3d c(in, out, g);
  const double fan_in = static_cast<double>(g.kernel * g.kernel * g.kernel * in);
  c.weight = Tensor::randn(c.weight.shape(), rng, std::sqrt(2.0 / fan_in));
  return c;
}

Tensor Conv3d::forward(const Tensor& x) const {
  Tensor y = conv3d_forward(x, weight, geometry);
  add_bias(y, bias);
  return y;
}

Tensor Conv3d::backward(const Tensor& x, const Tensor& grad_y) {
  conv3d_accumulate_weight_grad(x, grad_y, weight.grad(), geometry);
  accumulate_bias_grad(bias.grad(), grad_y);
  return conv3d_backward_input(weight, grad_y, x.shape(), geometry);
}

void Conv3d::collect(ParamList& params, const std::string& prefix) {
  params.push_back({prefix + ".weight", &weight});
  params.push_back({prefix + ".bias", &bias});
}

ConvTranspose3d::ConvTranspose3d(std::size_t in, std::size_t out, ConvGeometry g)
    : weight({g.kernel, g.kernel, g.kernel, out, in}), bias({out}), geometry(g) {}

ConvTranspose3d ConvTranspose3d::kaiming(std::size_t in, std::size_t out, ConvGeometry g, Rng& rng) {
  ConvTranspose3d c(in, out, g);
  // Each output voxel receives about (k / stride)^3 taps per input channel.
  const double taps = static_cast<double>(g.kernel) / static_cast<double>(g.stride);
  const double fan_in = taps * taps * taps * static_cast<double>(in);
  c.weight = Tensor::randn(c.weight.shape(), rng, std::sqrt(2.0 / fan_in));
  return c;
}

Tensor ConvTranspose3d::forward(const Tensor& x) const {
  require_rank(x, 4, "transposed conv input");
  const std::size_t cout = weight.dim(3);
  if (x.dim(3) != weight.dim(4)) {
    throw DimensionError("transposed conv: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(weight.shape()));
  }
  const Shape out_shape{geometry.transposed_extent(x.dim(0)), geometry.transposed_extent(x.dim(1)),
                        geometry.transposed_extent(x.dim(2)), cout};
  // The adjoint must map back onto exactly x's extents.
  for (int a = 0; a < 3; ++a) {
    if (geometry.out_extent(out_shape[a]) != x.dim(a)) {
      throw DimensionError("transposed conv geometry is not invertible for input " + shape_str(x.shape()));
    }
  }
  Tensor y = conv3d_backward_input(weight, x, out_shape, geometry);
  add_bias(y, bias);
  return y;
}

Tensor ConvTranspose3d::backward(const Tensor& x, const Tensor& grad_y) {
  // y = J^T x, so dL/dW is the conv weight gradient with the roles of input
  // and output gradient swapped, and dL/dx = J grad_y.
  conv3d_accumulate_weight_grad(grad_y, x, weight.grad(), geometry);
  accumulate_bias_grad(bias.grad(), grad_y);
  return conv3d_forward(grad_y, weight, geometry);
}

void ConvTranspose3d::collect(ParamList& params, const std::string& prefix) {
  params.push_back({prefix + ".weight", &weight});
  params.push_back({prefix + ".bias", &bias});
}

// ---------------------------------------------------------------- elementwise

Tensor silu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x[i]));
    y[i] = x[i] * s;
  }
  return y;
}

Tensor silu_backward(const Tensor& x, const Tensor& grad_y) {
  Tensor gx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x[i]));
    gx[i] = grad_y[i] * s * (1.0 + x[i] * (1.0 - s));
  }
  return gx;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  add_into(out, b);
  return out;
}

void add_into(Tensor& acc, const Tensor& b) {
  if (acc.size() != b.size()) {
    throw DimensionError("add: shapes " + shape_str(acc.shape()) + " and " + shape_str(b.shape()));
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += b[i];
}

// ---------------------------------------------------------------- attention

namespace {

Tensor head_slice(const Tensor& t, std::size_t head, std::size_t width) {
  const std::size_t n = t.dim(0), c = t.dim(1);
  Tensor out({n, width});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < width; ++j) out[i * width + j] = t[i * c + head * width + j];
  return out;
}

void head_store(Tensor& t, const Tensor& part, std::size_t head, std::size_t width) {
  const std::size_t n = t.dim(0), c = t.dim(1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < width; ++j) t[i * c + head * width + j] = part[i * width + j];
}

std::size_t head_width(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  require_rank(q, 2, "attention query");
  require_rank(k, 2, "attention key");
  require_rank(v, 2, "attention value");
  const std::size_t c = q.dim(1);
  if (k.dim(1) != c || v.dim(1) != c || k.dim(0) != v.dim(0)) {
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()));
  }
  if (heads == 0 || c % heads != 0) {
    throw ConfigError("attention: " + std::to_string(c) + " channels not divisible into " + std::to_string(heads) +
                      " heads");
  }
  return c / heads;
}

}  // namespace

Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, double scale,
                         AttentionCache* cache) {
  const std::size_t width = head_width(q, k, v, heads);
  Tensor out({q.dim(0), q.dim(1)});
  if (cache) cache->probs.clear();
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = heads == 1 ? q : head_slice(q, h, width);
    const Tensor kh = heads == 1 ? k : head_slice(k, h, width);
    const Tensor vh = heads == 1 ? v : head_slice(v, h, width);
    Tensor logits = matmul_nt(qh, kh);
    for (auto& x : logits.data()) x *= scale;
    Tensor probs = softmax(logits, 1);
    const Tensor oh = matmul(probs, vh);
    if (heads == 1) {
      out = oh;
    } else {
      head_store(out, oh, h, width);
    }
    if (cache) cache->probs.push_back(std::move(probs));
  }
  return out;
}

AttentionGrads attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionCache& cache,
                                  std::size_t heads, double scale, const Tensor& grad_out) {
  const std::size_t width = head_width(q, k, v, heads);
  AttentionGrads g{Tensor(q.shape()), Tensor(k.shape()), Tensor(v.shape())};
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = heads == 1 ? q : head_slice(q, h, width);
    const Tensor kh = heads == 1 ? k : head_slice(k, h, width);
    const Tensor vh = heads == 1 ? v : head_slice(v, h, width);
    const Tensor go = heads == 1 ? grad_out : head_slice(grad_out, h, width);
    const Tensor& probs = cache.probs.at(h);
    const Tensor gprobs = matmul_nt(go, vh);
    const Tensor gv = matmul_tn(probs, go);
    Tensor glogits = softmax_backward(probs, gprobs, 1);
    for (auto& x : glogits.data()) x *= scale;
    const Tensor gq = matmul(glogits, kh);
    const Tensor gk = matmul_tn(glogits, qh);
    if (heads == 1) {
      g.q = gq;
      g.k = gk;
      g.v = gv;
    } else {
      head_store(g.q, gq, h, width);
      head_store(g.k, gk, h, width);
      head_store(g.v, gv, h, width);
    }
  }
  return g;
}

}  // namespace cvs
