// Layer primitives on NCHW tensors plus their gradient kernels.
// All reductions accumulate in double regardless of the tensor scalar type.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "movnect/parallel.hpp"
#include "movnect/tensor.hpp"

namespace movnect {

enum class Padding { same, valid };
enum class Act { relu, relu6, linear };

namespace detail {

struct ConvGeom {
  int64_t oh, ow;    // output extents
  int64_t py, px;    // top/left zero padding
};

inline int64_t floor_div(int64_t a, int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Output index range where ox*stride + k - pad stays inside [0, in_n).
inline std::pair<int64_t, int64_t> tap_range(int64_t out_n, int64_t in_n, int64_t stride,
                                             int64_t k, int64_t pad) {
  int64_t lo = std::max<int64_t>(0, floor_div(pad - k + stride - 1, stride));
  int64_t hi = std::min(out_n, floor_div(in_n - 1 - k + pad, stride) + 1);
  return {lo, std::max(lo, hi)};
}

inline ConvGeom conv_geom(int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t stride,
                          Padding pad) {
  ConvGeom g{};
  if (pad == Padding::same) {
    g.oh = (h + stride - 1) / stride;
    g.ow = (w + stride - 1) / stride;
    g.py = std::max<int64_t>(0, (g.oh - 1) * stride + kh - h) / 2;
    g.px = std::max<int64_t>(0, (g.ow - 1) * stride + kw - w) / 2;
  } else {
    if (h < kh || w < kw)
      throw std::invalid_argument("valid conv: kernel " + std::to_string(kh) + "x" +
                                  std::to_string(kw) + " larger than input " + std::to_string(h) +
                                  "x" + std::to_string(w));
    g.oh = (h - kh) / stride + 1;
    g.ow = (w - kw) / stride + 1;
    g.py = g.px = 0;
  }
  return g;
}

// out[co][p] += sum_ci k[co][ci] * in[ci][p], four output rows per pass so the
// input planes are streamed once per block instead of once per channel.
template <typename T>
void mix_planes(double* out, const T* in, const T* k, int64_t co_n, int64_t ci_n, int64_t p_n,
                bool transpose_k) {
  auto weight = [&](int64_t co, int64_t ci) -> double {
    return static_cast<double>(transpose_k ? k[ci * co_n + co] : k[co * ci_n + ci]);
  };
  parallel_for(co_n, ci_n * p_n, [&](int64_t b, int64_t e) {
    int64_t co = b;
    for (; co + 4 <= e; co += 4) {
      double* o0 = out + (co + 0) * p_n;
      double* o1 = out + (co + 1) * p_n;
      double* o2 = out + (co + 2) * p_n;
      double* o3 = out + (co + 3) * p_n;
      for (int64_t ci = 0; ci < ci_n; ++ci) {
        const double w0 = weight(co + 0, ci), w1 = weight(co + 1, ci);
        const double w2 = weight(co + 2, ci), w3 = weight(co + 3, ci);
        const T* ip = in + ci * p_n;
        for (int64_t p = 0; p < p_n; ++p) {
          const double v = static_cast<double>(ip[p]);
          o0[p] += w0 * v;
          o1[p] += w1 * v;
          o2[p] += w2 * v;
          o3[p] += w3 * v;
        }
      }
    }
    for (; co < e; ++co) {
      double* op = out + co * p_n;
      for (int64_t ci = 0; ci < ci_n; ++ci) {
        const double w = weight(co, ci);
        const T* ip = in + ci * p_n;
        for (int64_t p = 0; p < p_n; ++p) op[p] += w * static_cast<double>(ip[p]);
      }
    }
  });
}

// Dot product with eight fixed partial sums: vectorizable without changing
// the summation order between runs.
template <typename T>
double dot8(const T* a, const T* b, int64_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 += static_cast<double>(a[i + 0]) * static_cast<double>(b[i + 0]);
    s1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
    s2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
    s3 += static_cast<double>(a[i + 3]) * static_cast<double>(b[i + 3]);
    s4 += static_cast<double>(a[i + 4]) * static_cast<double>(b[i + 4]);
    s5 += static_cast<double>(a[i + 5]) * static_cast<double>(b[i + 5]);
    s6 += static_cast<double>(a[i + 6]) * static_cast<double>(b[i + 6]);
    s7 += static_cast<double>(a[i + 7]) * static_cast<double>(b[i + 7]);
  }
  double tail = 0;
  for (; i < n; ++i) tail += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return (((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + tail;
}

template <typename T>
Tensor<T> from_accum(const Shape& shape, const std::vector<double>& acc) {
  std::vector<T> out(acc.size());
  for (size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<T>(acc[i]);
  return Tensor<T>(shape, std::move(out));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: x N x Ci x H x W, k Co x Ci x kh x kw, bias Co (or empty).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias, int stride,
                 Padding pad) {
  if (x.rank() != 4 || k.rank() != 4)
    throw std::invalid_argument("conv2d expects rank-4 input/kernel, got " + x.shape().str() +
                                " and " + k.shape().str());
  if (stride < 1) throw std::invalid_argument("conv2d stride must be >= 1");
  const int64_t n = x.dim(0), ci_n = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t co_n = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  if (k.dim(1) != ci_n)
    throw std::invalid_argument("conv2d channel mismatch: input " + x.shape().str() +
                                " vs kernel " + k.shape().str());
  if (!bias.empty() && bias.numel() != co_n)
    throw std::invalid_argument("conv2d bias length " + bias.shape().str() + " != out channels " +
                                std::to_string(co_n));
  const auto g = detail::conv_geom(h, w, kh, kw, stride, pad);
  Shape oshape{n, co_n, g.oh, g.ow};

  std::vector<double> acc(oshape.numel(), 0.0);
  const T* xp = x.data();
  const T* kp = k.data();
  for (int64_t b = 0; b < n; ++b) {
    double* obase = acc.data() + b * co_n * g.oh * g.ow;
    const T* ibase = xp + b * ci_n * h * w;
    if (!bias.empty()) {
      const T* bp = bias.data();
      for (int64_t co = 0; co < co_n; ++co)
        std::fill_n(obase + co * g.oh * g.ow, g.oh * g.ow, static_cast<double>(bp[co]));
    }
    if (kh == 1 && kw == 1 && stride == 1) {
      detail::mix_planes(obase, ibase, kp, co_n, ci_n, h * w, false);
      continue;
    }
    parallel_for(co_n, ci_n * kh * kw * g.oh * g.ow, [&](int64_t cb, int64_t ce) {
      for (int64_t co = cb; co < ce; ++co) {
        double* oplane = obase + co * g.oh * g.ow;
        for (int64_t ci = 0; ci < ci_n; ++ci) {
          const T* iplane = ibase + ci * h * w;
          const T* kbase = kp + (co * ci_n + ci) * kh * kw;
          for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx) {
              const double kv = static_cast<double>(kbase[ky * kw + kx]);
              if (kv == 0.0) continue;
              const auto [x_lo, x_hi] = detail::tap_range(g.ow, w, stride, kx, g.px);
              if (x_lo >= x_hi) continue;
              for (int64_t y = 0; y < g.oh; ++y) {
                const int64_t iy = y * stride + ky - g.py;
                if (iy < 0 || iy >= h) continue;
                const T* irow = iplane + iy * w - g.px + kx;
                double* orow = oplane + y * g.ow;
                for (int64_t ox = x_lo; ox < x_hi; ++ox)
                  orow[ox] += kv * static_cast<double>(irow[ox * stride]);
              }
            }
          }
        }
      }
    });
  }
  return detail::from_accum<T>(oshape, acc);
}

// depthwise 3x3-style conv: k C x 1 x kh x kw, one filter per input channel.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias,
                           int stride, Padding pad) {
  if (x.rank() != 4 || k.rank() != 4)
    throw std::invalid_argument("depthwise_conv2d expects rank-4 tensors");
  const int64_t n = x.dim(0), c_n = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t kh = k.dim(2), kw = k.dim(3);
  if (k.dim(0) != c_n || k.dim(1) != 1)
    throw std::invalid_argument("depthwise kernel " + k.shape().str() +
                                " must have one filter per input channel of " + x.shape().str());
  if (!bias.empty() && bias.numel() != c_n)
    throw std::invalid_argument("depthwise bias length mismatch");
  const auto g = detail::conv_geom(h, w, kh, kw, stride, pad);
  Shape oshape{n, c_n, g.oh, g.ow};
  std::vector<double> acc(oshape.numel(), 0.0);
  const T* xp = x.data();
  const T* kp = k.data();
  for (int64_t b = 0; b < n; ++b) {
    double* obase = acc.data() + b * c_n * g.oh * g.ow;
    const T* ibase = xp + b * c_n * h * w;
    parallel_for(c_n, kh * kw * g.oh * g.ow, [&](int64_t cb, int64_t ce) {
      for (int64_t c = cb; c < ce; ++c) {
        double* oplane = obase + c * g.oh * g.ow;
        const T* iplane = ibase + c * h * w;
        const double bv = bias.empty() ? 0.0 : static_cast<double>(bias.data()[c]);
        if (bv != 0.0) std::fill_n(oplane, g.oh * g.ow, bv);
        const T* kbase = kp + c * kh * kw;
        for (int64_t ky = 0; ky < kh; ++ky) {
          for (int64_t kx = 0; kx < kw; ++kx) {
            const double kv = static_cast<double>(kbase[ky * kw + kx]);
            const auto [x_lo, x_hi] = detail::tap_range(g.ow, w, stride, kx, g.px);
            if (x_lo >= x_hi) continue;
            for (int64_t y = 0; y < g.oh; ++y) {
              const int64_t iy = y * stride + ky - g.py;
              if (iy < 0 || iy >= h) continue;
              const T* irow = iplane + iy * w - g.px + kx;
              double* orow = oplane + y * g.ow;
              for (int64_t ox = x_lo; ox < x_hi; ++ox)
                orow[ox] += kv * static_cast<double>(irow[ox * stride]);
            }
          }
        }
      }
    });
  }
  return detail::from_accum<T>(oshape, acc);
}

// pointwise (1x1) conv: per-pixel linear map across channels.
template <typename T>
Tensor<T> pointwise_conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias) {
  if (k.rank() != 4 || k.dim(2) != 1 || k.dim(3) != 1)
    throw std::invalid_argument("pointwise_conv2d kernel must be Co x Ci x 1 x 1, got " +
                                k.shape().str());
  return conv2d(x, k, bias, 1, Padding::valid);
}

// Transposed conv (stride-s upsampling): input N x Co x h x w with kernel
// Co x Ci x kh x kw produces N x Ci x h*s x w*s; adjoint of
// conv2d(-, k, s, same) on the upsampled extents.
template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& x, const Tensor<T>& k, int stride) {
  if (x.rank() != 4 || k.rank() != 4)
    throw std::invalid_argument("transposed_conv2d expects rank-4 tensors");
  if (stride < 1) throw std::invalid_argument("transposed_conv2d stride must be >= 1");
  const int64_t n = x.dim(0), co_n = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (k.dim(0) != co_n)
    throw std::invalid_argument("transposed_conv2d channel mismatch: input " + x.shape().str() +
                                " vs kernel " + k.shape().str());
  const int64_t ci_n = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const int64_t oh = h * stride, ow = w * stride;
  const auto g = detail::conv_geom(oh, ow, kh, kw, stride, Padding::same);
  Shape oshape{n, ci_n, oh, ow};
  std::vector<double> acc(oshape.numel(), 0.0);
  const T* xp = x.data();
  const T* kp = k.data();
  for (int64_t b = 0; b < n; ++b) {
    double* obase = acc.data() + b * ci_n * oh * ow;
    const T* ibase = xp + b * co_n * h * w;
    parallel_for(ci_n, co_n * kh * kw * h * w, [&](int64_t cb, int64_t ce) {
      for (int64_t ci = cb; ci < ce; ++ci) {
        double* oplane = obase + ci * oh * ow;
        for (int64_t co = 0; co < co_n; ++co) {
          const T* iplane = ibase + co * h * w;
          const T* kbase = kp + (co * ci_n + ci) * kh * kw;
          for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx) {
              const double kv = static_cast<double>(kbase[ky * kw + kx]);
              if (kv == 0.0) continue;
              const auto [x_lo, x_hi] = detail::tap_range(w, ow, stride, kx, g.px);
              if (x_lo >= x_hi) continue;
              for (int64_t y = 0; y < h; ++y) {
                const int64_t ty = y * stride + ky - g.py;
                if (ty < 0 || ty >= oh) continue;
                double* orow = oplane + ty * ow + kx - g.px;
                const T* irow = iplane + y * w;
                for (int64_t x2 = x_lo; x2 < x_hi; ++x2)
                  orow[x2 * stride] += kv * static_cast<double>(irow[x2]);
              }
            }
          }
        }
      }
    });
  }
  return detail::from_accum<T>(oshape, acc);
}

// ---------------------------------------------------------------------------
// bilinear resize, half-pixel centers with edge clamp.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int64_t out_h, int64_t out_w) {
  if (x.rank() != 4) throw std::invalid_argument("bilinear_resize expects rank-4 input");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("bilinear_resize output extents >= 1");
  const int64_t n = x.dim(0), c_n = x.dim(1), h = x.dim(2), w = x.dim(3);
  Shape oshape{n, c_n, out_h, out_w};
  Tensor<T> out(oshape);
  T* op = out.mut();
  const T* ip = x.data();

  // precompute per-axis sample positions
  std::vector<int64_t> y0(out_h), y1(out_h), x0(out_w), x1(out_w);
  std::vector<double> fy(out_h), fx(out_w);
  auto fill_axis = [](int64_t out_n, int64_t in_n, std::vector<int64_t>& lo,
                      std::vector<int64_t>& hi, std::vector<double>& fr) {
    for (int64_t d = 0; d < out_n; ++d) {
      double s = (static_cast<double>(d) + 0.5) * static_cast<double>(in_n) /
                     static_cast<double>(out_n) -
                 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in_n - 1));
      lo[d] = static_cast<int64_t>(std::floor(s));
      hi[d] = std::min(lo[d] + 1, in_n - 1);
      fr[d] = s - static_cast<double>(lo[d]);
    }
  };
  fill_axis(out_h, h, y0, y1, fy);
  fill_axis(out_w, w, x0, x1, fx);

  for (int64_t bc = 0; bc < n * c_n; ++bc) {
    const T* iplane = ip + bc * h * w;
    T* oplane = op + bc * out_h * out_w;
    for (int64_t y = 0; y < out_h; ++y) {
      const T* r0 = iplane + y0[y] * w;
      const T* r1 = iplane + y1[y] * w;
      const double wy = fy[y];
      for (int64_t xo = 0; xo < out_w; ++xo) {
        const double a = static_cast<double>(r0[x0[xo]]);
        const double b = static_cast<double>(r0[x1[xo]]);
        const double c = static_cast<double>(r1[x0[xo]]);
        const double d = static_cast<double>(r1[x1[xo]]);
        const double top = a + (b - a) * fx[xo];
        const double bot = c + (d - c) * fx[xo];
        oplane[y * out_w + xo] = static_cast<T>(top + (bot - top) * wy);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// batchnorm with externally supplied statistics (per-channel vectors).
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& mean, const Tensor<T>& var,
                    const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  if (x.rank() != 4) throw std::invalid_argument("batchnorm expects rank-4 input");
  const int64_t c_n = x.dim(1);
  for (const Tensor<T>* v : {&mean, &var, &gamma, &beta})
    if (v->numel() != c_n)
      throw std::invalid_argument("batchnorm vector length " + v->shape().str() +
                                  " != channels " + std::to_string(c_n));
  const T* vp = var.data();
  for (int64_t c = 0; c < c_n; ++c)
    if (static_cast<double>(vp[c]) + eps <= 0.0)
      throw std::invalid_argument("batchnorm: var + epsilon must be positive (channel " +
                                  std::to_string(c) + ")");
  const int64_t n = x.dim(0), plane = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  T* op = out.mut();
  const T* ip = x.data();
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t c = 0; c < c_n; ++c) {
      const double inv = 1.0 / std::sqrt(static_cast<double>(vp[c]) + eps);
      const double g = static_cast<double>(gamma.data()[c]) * inv;
      const double sh =
          static_cast<double>(beta.data()[c]) - g * static_cast<double>(mean.data()[c]);
      const T* iplane = ip + (b * c_n + c) * plane;
      T* oplane = op + (b * c_n + c) * plane;
      for (int64_t p = 0; p < plane; ++p)
        oplane[p] = static_cast<T>(g * static_cast<double>(iplane[p]) + sh);
    }
  }
  return out;
}

// Merges batchnorm into the preceding conv's kernel/bias for inference.
template <typename T>
void fold_batchnorm(Tensor<T>& kernel, Tensor<T>& bias, const Tensor<T>& mean,
                    const Tensor<T>& var, const Tensor<T>& gamma, const Tensor<T>& beta,
                    double eps) {
  const int64_t co_n = kernel.dim(0);
  const int64_t per = kernel.numel() / co_n;
  if (bias.empty()) bias = Tensor<T>(Shape{co_n});
  T* kp = kernel.mut();
  T* bp = bias.mut();
  for (int64_t co = 0; co < co_n; ++co) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(var.data()[co]) + eps);
    const double g = static_cast<double>(gamma.data()[co]) * inv;
    for (int64_t i = 0; i < per; ++i) kp[co * per + i] = static_cast<T>(g * kp[co * per + i]);
    bp[co] = static_cast<T>(g * (static_cast<double>(bp[co]) -
                                 static_cast<double>(mean.data()[co])) +
                            static_cast<double>(beta.data()[co]));
  }
}

// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> activation(const Tensor<T>& x, Act kind) {
  if (kind == Act::linear) return x;
  Tensor<T> out(x.shape());
  T* op = out.mut();
  const T* ip = x.data();
  const int64_t n = x.numel();
  if (kind == Act::relu) {
    for (int64_t i = 0; i < n; ++i) op[i] = ip[i] > T(0) ? ip[i] : T(0);
  } else {
    for (int64_t i = 0; i < n; ++i) op[i] = std::clamp(ip[i], T(0), T(6));
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> xs) {
  if (xs.empty()) throw std::invalid_argument("concat of zero tensors");
  const int64_t n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  int64_t c_total = 0;
  for (const auto& t : xs) {
    if (t.rank() != 4 || t.dim(0) != n || t.dim(2) != h || t.dim(3) != w)
      throw std::invalid_argument("concat extent mismatch: " + xs[0].shape().str() + " vs " +
                                  t.shape().str());
    c_total += t.dim(1);
  }
  Tensor<T> out(Shape{n, c_total, h, w});
  T* op = out.mut();
  const int64_t plane = h * w;
  for (int64_t b = 0; b < n; ++b) {
    int64_t c_off = 0;
    for (const auto& t : xs) {
      const int64_t c_n = t.dim(1);
      std::copy_n(t.data() + b * c_n * plane, c_n * plane, op + (b * c_total + c_off) * plane);
      c_off += c_n;
    }
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int64_t c0, int64_t c1) {
  if (x.rank() != 4 || c0 < 0 || c1 <= c0 || c1 > x.dim(1))
    throw std::invalid_argument("slice_channels range [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") invalid for " + x.shape().str());
  const int64_t n = x.dim(0), c_n = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{n, c1 - c0, x.dim(2), x.dim(3)});
  T* op = out.mut();
  for (int64_t b = 0; b < n; ++b)
    std::copy_n(x.data() + (b * c_n + c0) * plane, (c1 - c0) * plane,
                op + b * (c1 - c0) * plane);
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("add shape mismatch: " + a.shape().str() + " vs " +
                                b.shape().str());
  Tensor<T> out(a.shape());
  T* op = out.mut();
  const T* ap = a.data();
  const T* bp = b.data();
  for (int64_t i = 0; i < a.numel(); ++i) op[i] = ap[i] + bp[i];
  return out;
}

template <typename T>
Tensor<T> abs_elem(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  T* op = out.mut();
  const T* ip = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) op[i] = std::abs(ip[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Gradient kernels (used by the tape; double precision in practice).

template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& gout, const Tensor<T>& k, int stride, Padding pad,
                            int64_t in_h, int64_t in_w) {
  const int64_t n = gout.dim(0), co_n = gout.dim(1), oh = gout.dim(2), ow = gout.dim(3);
  const int64_t ci_n = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const auto g = detail::conv_geom(in_h, in_w, kh, kw, stride, pad);
  Shape ishape{n, ci_n, in_h, in_w};
  std::vector<double> acc(ishape.numel(), 0.0);
  const T* gp = gout.data();
  const T* kp = k.data();
  for (int64_t b = 0; b < n; ++b) {
    double* ibase = acc.data() + b * ci_n * in_h * in_w;
    const T* gbase = gp + b * co_n * oh * ow;
    if (kh == 1 && kw == 1 && stride == 1) {
      detail::mix_planes(ibase, gbase, kp, ci_n, co_n, oh * ow, /*transpose_k=*/true);
      continue;
    }
    parallel_for(ci_n, co_n * kh * kw * oh * ow, [&](int64_t cb, int64_t ce) {
      for (int64_t ci = cb; ci < ce; ++ci) {
        double* iplane = ibase + ci * in_h * in_w;
        for (int64_t co = 0; co < co_n; ++co) {
          const T* gplane = gbase + co * oh * ow;
          const T* kbase = kp + (co * ci_n + ci) * kh * kw;
          for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx) {
              const double kv = static_cast<double>(kbase[ky * kw + kx]);
              if (kv == 0.0) continue;
              const auto [x_lo, x_hi] = detail::tap_range(ow, in_w, stride, kx, g.px);
              if (x_lo >= x_hi) continue;
              for (int64_t y = 0; y < oh; ++y) {
                const int64_t iy = y * stride + ky - g.py;
                if (iy < 0 || iy >= in_h) continue;
                double* irow = iplane + iy * in_w + kx - g.px;
                const T* grow = gplane + y * ow;
                for (int64_t x2 = x_lo; x2 < x_hi; ++x2)
                  irow[x2 * stride] += kv * static_cast<double>(grow[x2]);
              }
            }
          }
        }
      }
    });
  }
  return detail::from_accum<T>(ishape, acc);
}

template <typename T>
Tensor<T> conv2d_grad_kernel(const Tensor<T>& gout, const Tensor<T>& x, int stride, Padding pad,
                             const Shape& kshape) {
  const int64_t n = gout.dim(0), co_n = gout.dim(1), oh = gout.dim(2), ow = gout.dim(3);
  const int64_t ci_n = kshape[1], kh = kshape[2], kw = kshape[3];
  const int64_t h = x.dim(2), w = x.dim(3);
  const auto g = detail::conv_geom(h, w, kh, kw, stride, pad);
  std::vector<double> acc(kshape.numel(), 0.0);
  const T* gp = gout.data();
  const T* xp = x.data();
  for (int64_t b = 0; b < n; ++b) {
    const T* gbase = gp + b * co_n * oh * ow;
    const T* ibase = xp + b * ci_n * h * w;
    if (kh == 1 && kw == 1 && stride == 1) {
      parallel_for(co_n, ci_n * oh * ow, [&](int64_t cb, int64_t ce) {
        for (int64_t co = cb; co < ce; ++co)
          for (int64_t ci = 0; ci < ci_n; ++ci)
            acc[co * ci_n + ci] += detail::dot8(gbase + co * oh * ow, ibase + ci * h * w, oh * ow);
      });
      continue;
    }
    parallel_for(co_n, ci_n * kh * kw * oh * ow, [&](int64_t cb, int64_t ce) {
      for (int64_t co = cb; co < ce; ++co) {
        const T* gplane = gbase + co * oh * ow;
        for (int64_t ci = 0; ci < ci_n; ++ci) {
          const T* iplane = ibase + ci * h * w;
          double* kbase = acc.data() + (co * ci_n + ci) * kh * kw;
          for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx) {
              const auto [x_lo, x_hi] = detail::tap_range(ow, w, stride, kx, g.px);
              if (x_lo >= x_hi) continue;
              double s = 0.0;
              for (int64_t y = 0; y < oh; ++y) {
                const int64_t iy = y * stride + ky - g.py;
                if (iy < 0 || iy >= h) continue;
                const T* irow = iplane + iy * w - g.px + kx;
                const T* grow = gplane + y * ow;
                if (stride == 1) {
                  s += detail::dot8(grow + x_lo, irow + x_lo, x_hi - x_lo);
                } else {
                  for (int64_t x2 = x_lo; x2 < x_hi; ++x2)
                    s += static_cast<double>(grow[x2]) * static_cast<double>(irow[x2 * stride]);
                }
              }
              kbase[ky * kw + kx] += s;
            }
          }
        }
      }
    });
  }
  return detail::from_accum<T>(kshape, acc);
}

template <typename T>
Tensor<T> grad_bias(const Tensor<T>& gout) {
  const int64_t n = gout.dim(0), c_n = gout.dim(1), plane = gout.dim(2) * gout.dim(3);
  Tensor<T> gb(Shape{c_n});
  T* bp = gb.mut();
  const T* gp = gout.data();
  for (int64_t c = 0; c < c_n; ++c) {
    double s = 0.0;
    for (int64_t b = 0; b < n; ++b) {
      const T* gplane = gp + (b * c_n + c) * plane;
      for (int64_t p = 0; p < plane; ++p) s += static_cast<double>(gplane[p]);
    }
    bp[c] = static_cast<T>(s);
  }
  return gb;
}

template <typename T>
Tensor<T> depthwise_grad_input(const Tensor<T>& gout, const Tensor<T>& k, int stride, Padding pad,
                               int64_t in_h, int64_t in_w) {
  const int64_t n = gout.dim(0), c_n = gout.dim(1), oh = gout.dim(2), ow = gout.dim(3);
  const int64_t kh = k.dim(2), kw = k.dim(3);
  const auto g = detail::conv_geom(in_h, in_w, kh, kw, stride, pad);
  Shape ishape{n, c_n, in_h, in_w};
  std::vector<double> acc(ishape.numel(), 0.0);
  for (int64_t b = 0; b < n; ++b) {
    parallel_for(c_n, kh * kw * oh * ow, [&](int64_t cb, int64_t ce) {
      for (int64_t c = cb; c < ce; ++c) {
        double* iplane = acc.data() + (b * c_n + c) * in_h * in_w;
        const T* gplane = gout.data() + (b * c_n + c) * oh * ow;
        const T* kbase = k.data() + c * kh * kw;
        for (int64_t ky = 0; ky < kh; ++ky)
          for (int64_t kx = 0; kx < kw; ++kx) {
            const double kv = static_cast<double>(kbase[ky * kw + kx]);
            if (kv == 0.0) continue;
            const auto [x_lo, x_hi] = detail::tap_range(ow, in_w, stride, kx, g.px);
            if (x_lo >= x_hi) continue;
            for (int64_t y = 0; y < oh; ++y) {
              const int64_t iy = y * stride + ky - g.py;
              if (iy < 0 || iy >= in_h) continue;
              double* irow = iplane + iy * in_w + kx - g.px;
              const T* grow = gplane + y * ow;
              for (int64_t x2 = x_lo; x2 < x_hi; ++x2)
                irow[x2 * stride] += kv * static_cast<double>(grow[x2]);
            }
          }
      }
    });
  }
  return detail::from_accum<T>(ishape, acc);
}

template <typename T>
Tensor<T> depthwise_grad_kernel(const Tensor<T>& gout, const Tensor<T>& x, int stride,
                                Padding pad, const Shape& kshape) {
  const int64_t n = gout.dim(0), c_n = gout.dim(1), oh = gout.dim(2), ow = gout.dim(3);
  const int64_t kh = kshape[2], kw = kshape[3];
  const int64_t h = x.dim(2), w = x.dim(3);
  const auto g = detail::conv_geom(h, w, kh, kw, stride, pad);
  std::vector<double> acc(kshape.numel(), 0.0);
  for (int64_t b = 0; b < n; ++b) {
    parallel_for(c_n, kh * kw * oh * ow, [&](int64_t cb, int64_t ce) {
      for (int64_t c = cb; c < ce; ++c) {
        const T* gplane = gout.data() + (b * c_n + c) * oh * ow;
        const T* iplane = x.data() + (b * c_n + c) * h * w;
        double* kbase = acc.data() + c * kh * kw;
        for (int64_t ky = 0; ky < kh; ++ky)
          for (int64_t kx = 0; kx < kw; ++kx) {
            const auto [x_lo, x_hi] = detail::tap_range(ow, w, stride, kx, g.px);
            if (x_lo >= x_hi) continue;
            double s = 0.0;
            for (int64_t y = 0; y < oh; ++y) {
              const int64_t iy = y * stride + ky - g.py;
              if (iy < 0 || iy >= h) continue;
              const T* irow = iplane + iy * w - g.px + kx;
              const T* grow = gplane + y * ow;
              for (int64_t x2 = x_lo; x2 < x_hi; ++x2)
                s += static_cast<double>(grow[x2]) * static_cast<double>(irow[x2 * stride]);
            }
            kbase[ky * kw + kx] += s;
          }
      }
    });
  }
  return detail::from_accum<T>(kshape, acc);
}

// Adjoint pair for bilinear_resize: scatters output gradient back with the
// same interpolation weights.
template <typename T>
Tensor<T> bilinear_grad_input(const Tensor<T>& gout, int64_t in_h, int64_t in_w) {
  const int64_t n = gout.dim(0), c_n = gout.dim(1), oh = gout.dim(2), ow = gout.dim(3);
  Shape ishape{n, c_n, in_h, in_w};
  std::vector<double> acc(ishape.numel(), 0.0);
  std::vector<int64_t> y0(oh), y1(oh), x0(ow), x1(ow);
  std::vector<double> fy(oh), fx(ow);
  auto fill_axis = [](int64_t out_n, int64_t in_n, std::vector<int64_t>& lo,
                      std::vector<int64_t>& hi, std::vector<double>& fr) {
    for (int64_t d = 0; d < out_n; ++d) {
      double s = (static_cast<double>(d) + 0.5) * static_cast<double>(in_n) /
                     static_cast<double>(out_n) -
                 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in_n - 1));
      lo[d] = static_cast<int64_t>(std::floor(s));
      hi[d] = std::min(lo[d] + 1, in_n - 1);
      fr[d] = s - static_cast<double>(lo[d]);
    }
  };
  fill_axis(oh, in_h, y0, y1, fy);
  fill_axis(ow, in_w, x0, x1, fx);
  for (int64_t bc = 0; bc < n * c_n; ++bc) {
    double* iplane = acc.data() + bc * in_h * in_w;
    const T* gplane = gout.data() + bc * oh * ow;
    for (int64_t y = 0; y < oh; ++y) {
      for (int64_t xo = 0; xo < ow; ++xo) {
        const double gv = static_cast<double>(gplane[y * ow + xo]);
        const double wy = fy[y], wx = fx[xo];
        iplane[y0[y] * in_w + x0[xo]] += gv * (1 - wy) * (1 - wx);
        iplane[y0[y] * in_w + x1[xo]] += gv * (1 - wy) * wx;
        iplane[y1[y] * in_w + x0[xo]] += gv * wy * (1 - wx);
        iplane[y1[y] * in_w + x1[xo]] += gv * wy * wx;
      }
    }
  }
  return detail::from_accum<T>(ishape, acc);
}

}  // namespace movnect
