// Reverse-mode gradient tape over the layer primitives. Training runs in
// double precision; a tape is owned by one step and replays exactly once.
#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "movnect/ops.hpp"
#include "movnect/tensor.hpp"

namespace movnect {

class Tape;

// Value plus tape handle. id < 0 marks a constant that gradients skip.
struct Var {
  Tensor<double> value;
  int id = -1;
};

class Tape {
 public:
  Var param(Tensor<double> v) {
    int id = new_node(v.shape());
    return Var{std::move(v), id};
  }
  static Var constant(Tensor<double> v) { return Var{std::move(v), -1}; }

  Var conv2d(const Var& x, const Var& k, const Var& b, int stride, Padding pad) {
    Tensor<double> out = movnect::conv2d(x.value, k.value, b.value, stride, pad);
    Var r{out, new_node(out.shape())};
    record([this, x, k, b, stride, pad, id = r.id] {
      const Tensor<double>& g = nodes_[id].grad;
      if (g.empty()) return;
      if (x.id >= 0)
        accumulate(x.id, conv2d_grad_input(g, k.value, stride, pad, x.value.dim(2), x.value.dim(3)));
      if (k.id >= 0)
        accumulate(k.id, conv2d_grad_kernel(g, x.value, stride, pad, k.value.shape()));
      if (b.id >= 0) accumulate(b.id, grad_bias(g));
    });
    return r;
  }

  Var depthwise_conv2d(const Var& x, const Var& k, const Var& b, int stride, Padding pad) {
    Tensor<double> out = movnect::depthwise_conv2d(x.value, k.value, b.value, stride, pad);
    Var r{out, new_node(out.shape())};
    record([this, x, k, b, stride, pad, id = r.id] {
      const Tensor<double>& g = nodes_[id].grad;
      if (g.empty()) return;
      if (x.id >= 0)
        accumulate(x.id,
                   depthwise_grad_input(g, k.value, stride, pad, x.value.dim(2), x.value.dim(3)));
      if (k.id >= 0)
        accumulate(k.id, depthwise_grad_kernel(g, x.value, stride, pad, k.value.shape()));
      if (b.id >= 0) accumulate(b.id, grad_bias(g));
    });
    return r;
  }

  Var pointwise_conv2d(const Var& x, const Var& k, const Var& b) {
    return conv2d(x, k, b, 1, Padding::valid);
  }

  Var transposed_conv2d(const Var& x, const Var& k, int stride) {
    Tensor<double> out = movnect::transposed_conv2d(x.value, k.value, stride);
    Var r{out, new_node(out.shape())};
    record([this, x, k, stride, id = r.id] {
      const Tensor<double>& g = nodes_[id].grad;
      if (g.empty()) return;
      if (x.id >= 0) accumulate(x.id, movnect::conv2d(g, k.value, Tensor<double>(), stride, Padding::same));
      if (k.id >= 0)
        accumulate(k.id, conv2d_grad_kernel(x.value, g, stride, Padding::same, k.value.shape()));
    });
    return r;
  }

  Var bilinear_resize(const Var& x, int64_t oh, int64_t ow) {
    Tensor<double> out = movnect::bilinear_resize(x.value, oh, ow);
    Var r{out, new_node(out.shape())};
    record([this, x, id = r.id] {
      const Tensor<double>& g = nodes_[id].grad;
      if (g.empty() || x.id < 0) return;
      accumulate(x.id, bilinear_grad_input(g, x.value.dim(2), x.value.dim(3)));
    });
    return r;
  }

  Var batchnorm(const Var& x, const Var& mean, const Var& var, const Var& gamma, const Var& beta,
                double eps) {
    Tensor<double> out = movnect::batchnorm(x.value, mean.value, var.value, gamma.value,
                                            beta.value, eps);
    Var r{out, new_node(out.shape())};
    record([this, x, mean, var, gamma, beta, eps, id = r.id] {
      const Tensor<double>& g = nodes_[id].grad;
      if (g.empty()) return;
      const int64_t n = g.dim(0), c_n = g.dim(1), plane = g.dim(2) * g.dim(3);
      if (x.id >= 0) {
        Tensor<double> gx(g.shape());
        double* gxp = gx.mut();
        for (int64_t b = 0; b < n; ++b)
          for (int64_t c = 0; c < c_n; ++c) {
            const double s = gamma.value.data()[c] / std::sqrt(var.value.data()[c] + eps);
            const double* gp = g.data() + (b * c_n + c) * plane;
            double* o = gxp + (b * c_n + c) * plane;
            for (int64_t p = 0; p < plane; ++p) o[p] = s * gp[p];
          }
        accumulate(x.id, gx);
      }
      if (gamma.id >= 0) {
        Tensor<double> gg(Shape{c_n});
        double* ggp = gg.mut();
        for (int64_t c = 0; c < c_n; ++c) {
          const double inv = 1.0 / std::sqrt(var.value.data()[c] + eps);
          const double mu = mean.value.data()[c];
          double s = 0.0;
          for (int64_t b = 0; b < n; ++b) {
            const double* gp = g.data() + (b * c_n + c) * plane;
            const double* xp = x.value.data() + (b * c_n + c) * plane;
            for (int64_t p = 0; p < plane; ++p) s += gp[p] * (xp[p] - mu) * inv;
          }
          ggp[c] = s;
        }
        accumulate(gamma.id, gg);
      }
      if (beta.id >= 0) accumulate(beta.id, grad_bias(g));
    });
    return r;
  }

  Var activation(const Var& x, Act kind) {
    if (kind == Act::linear) return x;
    Tensor<double> out = movnect::activation(x.value, kind);
    Var r{out, new_node(out.shape())};
    record([this, x, kind, id = r.id] {
      const Tensor<double>& g = nodes_[id].grad;
      if (g.empty() || x.id < 0) return;
      Tensor<double> gx(g.shape());
      double* gxp = gx.mut();
      const double* gp = g.data();
      const double* xp = x.value.data();
      const int64_t count = g.numel();
      if (kind == Act::relu) {
        for (int64_t i = 0; i < count; ++i) gxp[i] = xp[i] > 0 ? gp[i] : 0.0;
      } else {
        for (int64_t i = 0; i < count; ++i) gxp[i] = (xp[i] > 0 && xp[i] < 6) ? gp[i] : 0.0;
      }
      accumulate(x.id, gx);
    });
    return r;
  }

  Var concat_channels(const std::vector<Var>& xs) {
    std::vector<Tensor<double>> vals;
    vals.reserve(xs.size());
    for (const auto& v : xs) vals.push_back(v.value);
    Tensor<double> out = movnect::concat_channels(std::span<const Tensor<double>>(vals));
    Var r{out, new_node(out.shape())};
    record([this, xs, id = r.id] {
      const Tensor<double>& g = nodes_[id].grad;
      if (g.empty()) return;
      int64_t c0 = 0;
      for (const auto& v : xs) {
        const int64_t c1 = c0 + v.value.dim(1);
        if (v.id >= 0) accumulate(v.id, movnect::slice_channels(g, c0, c1));
        c0 = c1;
      }
    });
    return r;
  }

  Var slice_channels(const Var& x, int64_t c0, int64_t c1) {
    Tensor<double> out = movnect::slice_channels(x.value, c0, c1);
    Var r{out, new_node(out.shape())};
    record([this, x, c0, id = r.id] {
      const Tensor<double>& g = nodes_[id].grad;
      if (g.empty() || x.id < 0) return;
      Tensor<double> gx(x.value.shape());
      double* gxp = gx.mut();
      const int64_t n = x.value.dim(0), c_n = x.value.dim(1);
      const int64_t plane = x.value.dim(2) * x.value.dim(3);
      const int64_t gc = g.dim(1);
      for (int64_t b = 0; b < n; ++b)
        std::copy_n(g.data() + b * gc * plane, gc * plane, gxp + (b * c_n + c0) * plane);
      accumulate(x.id, gx);
    });
    return r;
  }

  Var add(const Var& a, const Var& b) {
    Tensor<double> out = movnect::add(a.value, b.value);
    Var r{out, new_node(out.shape())};
    record([this, a, b, id = r.id] {
      const Tensor<double>& g = nodes_[id].grad;
      if (g.empty()) return;
      if (a.id >= 0) accumulate(a.id, g);
      if (b.id >= 0) accumulate(b.id, g);
    });
    return r;
  }

  Var abs_elem(const Var& x) {
    Tensor<double> out = movnect::abs_elem(x.value);
    Var r{out, new_node(out.shape())};
    record([this, x, id = r.id] {
      const Tensor<double>& g = nodes_[id].grad;
      if (g.empty() || x.id < 0) return;
      Tensor<double> gx(g.shape());
      double* gxp = gx.mut();
      const double* xp = x.value.data();
      const double* gp = g.data();
      for (int64_t i = 0; i < g.numel(); ++i)
        gxp[i] = xp[i] > 0 ? gp[i] : (xp[i] < 0 ? -gp[i] : 0.0);  // subgradient 0 at 0
      accumulate(x.id, gx);
    });
    return r;
  }

  // Generic hook for fused nodes (the loss functions use this).
  int new_node(const Shape& s) {
    nodes_.push_back(Node{Tensor<double>(), s, {}});
    return static_cast<int>(nodes_.size()) - 1;
  }
  void record(std::function<void()> back) { nodes_.back().back = std::move(back); }
  void record_for(int id, std::function<void()> back) { nodes_[id].back = std::move(back); }
  const Tensor<double>& node_grad(int id) const { return nodes_[id].grad; }

  void accumulate(int id, const Tensor<double>& g) {
    Node& n = nodes_[id];
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    double* dst = n.grad.mut();
    const double* src = g.data();
    for (int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
  }

  // Backpropagates seed (d loss / d out) through everything recorded so far.
  void backward(const Var& out, const Tensor<double>& seed) {
    if (replayed_) throw std::logic_error("tape already replayed; one backward pass per tape");
    if (out.id < 0) throw std::invalid_argument("backward target is a constant");
    if (seed.shape() != out.value.shape())
      throw std::invalid_argument("seed shape " + seed.shape().str() + " != output shape " +
                                  out.value.shape().str());
    replayed_ = true;
    accumulate(out.id, seed);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
      if (nodes_[i].back && !nodes_[i].grad.empty()) nodes_[i].back();
  }

  void backward_scalar(const Var& loss) { backward(loss, Tensor<double>::full(Shape{1}, 1.0)); }

  // Gradient of a recorded parameter; zero tensor if nothing flowed into it.
  Tensor<double> grad(const Var& v) const {
    if (v.id < 0) throw std::invalid_argument("constant has no gradient");
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? Tensor<double>(n.shape) : n.grad;
  }

 private:
  struct Node {
    Tensor<double> grad;
    Shape shape;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
  bool replayed_ = false;
};

}  // namespace movnect
