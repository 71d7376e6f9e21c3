// MoVNect network family: inverted-residual base truncated at stride 16,
// Block13_a/b separable stacks, bone-length features, one upsampling stage
// and the 4J-channel output head (heatmaps + X/Y/Z location maps).
#pragma once

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "movnect/ops.hpp"
#include "movnect/rng.hpp"
#include "movnect/tape.hpp"
#include "movnect/weights_io.hpp"

namespace movnect {

enum class Variant { type_a, type_b, type_c };
enum class Upsampling { bilinear_conv, transposed_conv };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::type_a: return "type-a";
    case Variant::type_b: return "type-b";
    default: return "type-c";
  }
}
inline const char* upsampling_name(Upsampling u) {
  return u == Upsampling::bilinear_conv ? "bilinear_conv" : "transposed_conv";
}

constexpr double kBnEps = 1e-5;

struct NetworkSpec {
  Variant variant = Variant::type_a;
  int input_size = 256;
  int joint_count = 15;
  std::array<int64_t, 3> block13a_widths{368, 368, 256};
  std::array<int64_t, 3> block13b_widths{192, 192, 128};
  Upsampling upsampling = Upsampling::bilinear_conv;
  int output_stride = 8;

  static NetworkSpec profile(const std::string& name, int input_size = 256) {
    NetworkSpec s;
    s.input_size = input_size;
    if (name == "type-a") {
      s.variant = Variant::type_a;
    } else if (name == "type-b") {
      s.variant = Variant::type_b;
      s.upsampling = Upsampling::transposed_conv;
    } else if (name == "type-c") {
      s.variant = Variant::type_c;
      s.block13a_widths = {512, 512, 512};
      s.block13b_widths = {256, 256, 128};
    } else {
      throw std::invalid_argument("unknown profile '" + name +
                                  "' (expected type-a, type-b or type-c)");
    }
    s.validate();
    return s;
  }

  int map_size() const { return input_size / output_stride; }

  void validate() const {
    // widths/upsampling are pinned per variant
    const std::array<int64_t, 3> a_aw{368, 368, 256}, a_bw{192, 192, 128};
    const std::array<int64_t, 3> c_aw{512, 512, 512}, c_bw{256, 256, 128};
    auto fail = [&](const std::string& why) {
      throw std::invalid_argument("invalid network spec (" + why + ")");
    };
    switch (variant) {
      case Variant::type_a:
        if (block13a_widths != a_aw || block13b_widths != a_bw) fail("type-a widths");
        if (upsampling != Upsampling::bilinear_conv) fail("type-a uses bilinear_conv");
        break;
      case Variant::type_b:
        if (block13a_widths != a_aw || block13b_widths != a_bw) fail("type-b widths");
        if (upsampling != Upsampling::transposed_conv) fail("type-b uses transposed_conv");
        break;
      case Variant::type_c:
        if (block13a_widths != c_aw || block13b_widths != c_bw) fail("type-c widths");
        if (upsampling != Upsampling::bilinear_conv) fail("type-c uses bilinear_conv");
        break;
    }
    if (joint_count < 1) fail("joint_count < 1");
    if (output_stride != 8) fail("output stride fixed at 8");
    if (input_size < 32 || input_size % 16 != 0) fail("input_size must be a multiple of 16");
  }

  std::string to_config() const {
    std::ostringstream os;
    os << "variant = " << variant_name(variant) << "\n";
    os << "input_size = " << input_size << "\n";
    os << "joint_count = " << joint_count << "\n";
    os << "block13a_widths = " << block13a_widths[0] << ", " << block13a_widths[1] << ", "
       << block13a_widths[2] << "\n";
    os << "block13b_widths = " << block13b_widths[0] << ", " << block13b_widths[1] << ", "
       << block13b_widths[2] << "\n";
    os << "upsampling = " << upsampling_name(upsampling) << "\n";
    os << "output_stride = " << output_stride << "\n";
    return os.str();
  }

  static NetworkSpec parse_config(std::istream& is) {
    NetworkSpec s;
    std::string line;
    auto widths = [](const std::string& v) {
      std::array<int64_t, 3> w{};
      std::istringstream ss(v);
      std::string tok;
      for (int i = 0; i < 3; ++i) {
        if (!std::getline(ss, tok, ',')) throw std::invalid_argument("expected three widths");
        w[i] = std::stoll(tok);
      }
      return w;
    };
    while (std::getline(is, line)) {
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string t) {
        const char* ws = " \t\r";
        t.erase(0, t.find_first_not_of(ws));
        auto e = t.find_last_not_of(ws);
        t.erase(e == std::string::npos ? 0 : e + 1);
        return t;
      };
      std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
      if (key == "variant" || key == "profile") {
        NetworkSpec p = profile(val, s.input_size);
        s.variant = p.variant;
        s.block13a_widths = p.block13a_widths;
        s.block13b_widths = p.block13b_widths;
        s.upsampling = p.upsampling;
      } else if (key == "input_size") {
        s.input_size = std::stoi(val);
      } else if (key == "joint_count") {
        s.joint_count = std::stoi(val);
      } else if (key == "block13a_widths") {
        s.block13a_widths = widths(val);
      } else if (key == "block13b_widths") {
        s.block13b_widths = widths(val);
      } else if (key == "upsampling") {
        if (val == "bilinear_conv")
          s.upsampling = Upsampling::bilinear_conv;
        else if (val == "transposed_conv")
          s.upsampling = Upsampling::transposed_conv;
        else
          throw std::invalid_argument("unknown upsampling '" + val + "'");
      } else if (key == "output_stride") {
        s.output_stride = std::stoi(val);
      } else {
        throw std::invalid_argument("unknown network config key '" + key + "'");
      }
    }
    s.validate();
    return s;
  }
};

// Maps produced by one forward pass; each is 1 x J x h x w.
template <typename V>
struct OutputsOf {
  V heat;              // H: per-joint confidence
  V locx, locy, locz;  // X/Y/Z location maps, mm root-relative
  V dx, dy, dz;        // intermediate delta features
  V bone;              // BL = |dx| + |dy| + |dz|
};

namespace plan {

struct ConvUnit {
  enum class Op { conv, depthwise, pointwise, transposed };
  Op op;
  std::string name;
  int64_t cin = 0, cout = 0, k = 1;
  int stride = 1;
  bool bn = true;
  Act act = Act::relu6;
  bool bias = false;

  Shape kernel_shape() const {
    switch (op) {
      case Op::depthwise: return Shape{cin, 1, k, k};
      case Op::transposed: return Shape{cin, cout, k, k};
      default: return Shape{cout, cin, k, k};
    }
  }
  int64_t fan_in() const {
    switch (op) {
      case Op::depthwise: return k * k;
      case Op::transposed: return std::max<int64_t>(1, cin * k * k / (stride * stride));
      default: return cin * k * k;
    }
  }
  int64_t macs(int64_t h, int64_t w, int64_t& oh, int64_t& ow) const {
    switch (op) {
      case Op::depthwise: {
        auto g = detail::conv_geom(h, w, k, k, stride, Padding::same);
        oh = g.oh, ow = g.ow;
        return cin * k * k * oh * ow;
      }
      case Op::transposed:
        oh = h * stride, ow = w * stride;
        return cin * cout * k * k * h * w;
      default: {
        auto g = detail::conv_geom(h, w, k, k, stride, Padding::same);
        oh = g.oh, ow = g.ow;
        return cout * cin * k * k * oh * ow;
      }
    }
  }
};

struct Bottleneck {
  std::optional<ConvUnit> expand;
  ConvUnit dw, project;
  bool residual = false;
};

struct Separable {
  ConvUnit dw, pw;
};

struct Plan {
  ConvUnit stem;
  std::vector<Bottleneck> base;
  std::array<Separable, 3> block13a;
  ConvUnit delta_head;
  std::array<Separable, 3> block13b;
  bool bilinear_up = true;
  ConvUnit up;
  ConvUnit out_head;
};

// Inverted-residual schedule through the twelfth bottleneck: stride 16,
// 96 output channels.
struct BottleneckSpec {
  int64_t expand_t, cout;
  int stride;
};
inline const std::vector<BottleneckSpec>& base_schedule() {
  static const std::vector<BottleneckSpec> s = {
      {1, 16, 1}, {6, 24, 2}, {6, 24, 1}, {6, 32, 2}, {6, 32, 1}, {6, 32, 1},
      {6, 64, 2}, {6, 64, 1}, {6, 64, 1}, {6, 64, 1}, {6, 96, 1}, {6, 96, 1},
  };
  return s;
}

inline Plan make_plan(const NetworkSpec& spec) {
  Plan p;
  const int64_t J = spec.joint_count;
  p.stem = {ConvUnit::Op::conv, "base.stem", 3, 32, 3, 2, true, Act::relu6, false};
  int64_t ch = 32;
  int idx = 1;
  for (const auto& bs : base_schedule()) {
    Bottleneck b;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "base.b%02d", idx++);
    const std::string base_name = buf;
    const int64_t mid = ch * bs.expand_t;
    if (bs.expand_t != 1)
      b.expand = ConvUnit{ConvUnit::Op::pointwise, base_name + ".expand", ch,  mid, 1, 1,
                          true,                    Act::relu6,            false};
    b.dw = {ConvUnit::Op::depthwise, base_name + ".dw", mid,  mid, 3, bs.stride,
            true,                    Act::relu6,        false};
    b.project = {ConvUnit::Op::pointwise, base_name + ".project", mid,  bs.cout, 1, 1,
                 true,                    Act::linear,            false};
    b.residual = bs.stride == 1 && ch == bs.cout;
    p.base.push_back(std::move(b));
    ch = bs.cout;
  }
  for (int i = 0; i < 3; ++i) {
    const std::string n = "head.a" + std::to_string(i + 1);
    const int64_t w = spec.block13a_widths[i];
    p.block13a[i].dw = {ConvUnit::Op::depthwise, n + ".dw", ch, ch, 3, 1, true, Act::relu6, false};
    p.block13a[i].pw = {ConvUnit::Op::pointwise, n + ".pw", ch, w, 1, 1, true, Act::relu6, false};
    ch = w;
  }
  p.delta_head = {ConvUnit::Op::pointwise, "head.delta", ch,   3 * J, 1, 1,
                  false,                   Act::linear,  true};
  int64_t cat = ch + 3 * J + J;  // features + deltas + bone lengths
  int64_t bch = cat;
  for (int i = 0; i < 3; ++i) {
    const std::string n = "head.b" + std::to_string(i + 1);
    const int64_t w = spec.block13b_widths[i];
    p.block13b[i].dw = {ConvUnit::Op::depthwise, n + ".dw", bch, bch, 3, 1, true, Act::relu6,
                        false};
    p.block13b[i].pw = {ConvUnit::Op::pointwise, n + ".pw", bch, w, 1, 1, true, Act::relu6, false};
    bch = w;
  }
  p.bilinear_up = spec.upsampling == Upsampling::bilinear_conv;
  if (p.bilinear_up)
    p.up = {ConvUnit::Op::conv, "head.up", bch, bch, 3, 1, true, Act::relu6, false};
  else
    p.up = {ConvUnit::Op::transposed, "head.up", bch, bch, 4, 2, true, Act::relu6, false};
  p.out_head = {ConvUnit::Op::pointwise, "head.out", bch,  4 * J, 1, 1,
                false,                   Act::linear, true};
  return p;
}

template <typename F>
void for_each_unit(const Plan& p, F&& f) {
  f(p.stem);
  for (const auto& b : p.base) {
    if (b.expand) f(*b.expand);
    f(b.dw);
    f(b.project);
  }
  for (const auto& s : p.block13a) {
    f(s.dw);
    f(s.pw);
  }
  f(p.delta_head);
  for (const auto& s : p.block13b) {
    f(s.dw);
    f(s.pw);
  }
  f(p.up);
  f(p.out_head);
}

}  // namespace plan

// Weight-lookup contexts: one eager (plain tensors), one recording (tape).
template <typename T>
struct EagerCtx {
  using V = Tensor<T>;
  const std::map<std::string, Tensor<T>>& weights;

  V weight(const std::string& n) const {
    auto it = weights.find(n);
    if (it == weights.end()) throw std::runtime_error("missing weight tensor '" + n + "'");
    return it->second;
  }
  V none() const { return V{}; }
  V conv2d(const V& x, const V& k, const V& b, int s, Padding p) const {
    return movnect::conv2d(x, k, b, s, p);
  }
  V depthwise(const V& x, const V& k, const V& b, int s, Padding p) const {
    return movnect::depthwise_conv2d(x, k, b, s, p);
  }
  V transposed(const V& x, const V& k, int s) const { return movnect::transposed_conv2d(x, k, s); }
  V batchnorm(const V& x, const V& m, const V& v, const V& g, const V& b) const {
    return movnect::batchnorm(x, m, v, g, b, kBnEps);
  }
  V activation(const V& x, Act a) const { return movnect::activation(x, a); }
  V bilinear_x2(const V& x) const { return movnect::bilinear_resize(x, x.dim(2) * 2, x.dim(3) * 2); }
  V concat(const std::vector<V>& xs) const {
    return movnect::concat_channels(std::span<const V>(xs));
  }
  V slice(const V& x, int64_t c0, int64_t c1) const { return movnect::slice_channels(x, c0, c1); }
  V add(const V& a, const V& b) const { return movnect::add(a, b); }
  V abs(const V& x) const { return movnect::abs_elem(x); }
};

struct TapedCtx {
  using V = Var;
  Tape& tape;
  const std::map<std::string, Var>& weights;

  V weight(const std::string& n) const {
    auto it = weights.find(n);
    if (it == weights.end()) throw std::runtime_error("missing weight var '" + n + "'");
    return it->second;
  }
  V none() const { return V{}; }
  V conv2d(const V& x, const V& k, const V& b, int s, Padding p) const {
    return tape.conv2d(x, k, b, s, p);
  }
  V depthwise(const V& x, const V& k, const V& b, int s, Padding p) const {
    return tape.depthwise_conv2d(x, k, b, s, p);
  }
  V transposed(const V& x, const V& k, int s) const { return tape.transposed_conv2d(x, k, s); }
  V batchnorm(const V& x, const V& m, const V& v, const V& g, const V& b) const {
    return tape.batchnorm(x, m, v, g, b, kBnEps);
  }
  V activation(const V& x, Act a) const { return tape.activation(x, a); }
  V bilinear_x2(const V& x) const {
    return tape.bilinear_resize(x, x.value.dim(2) * 2, x.value.dim(3) * 2);
  }
  V concat(const std::vector<V>& xs) const { return tape.concat_channels(xs); }
  V slice(const V& x, int64_t c0, int64_t c1) const { return tape.slice_channels(x, c0, c1); }
  V add(const V& a, const V& b) const { return tape.add(a, b); }
  V abs(const V& x) const { return tape.abs_elem(x); }
};

template <typename T>
class Network {
 public:
  using Outputs = OutputsOf<Tensor<T>>;

  static Network build(const NetworkSpec& spec, uint64_t seed) {
    spec.validate();
    Network n(spec);
    plan::for_each_unit(n.plan_, [&](const plan::ConvUnit& u) {
      const Shape ks = u.kernel_shape();
      Rng rng = Rng::named(seed, u.name + ".kernel");
      const double limit = std::sqrt(6.0 / static_cast<double>(u.fan_in()));
      Tensor<T> kt(ks);
      T* kp = kt.mut();
      for (int64_t i = 0; i < kt.numel(); ++i)
        kp[i] = static_cast<T>(rng.uniform(-limit, limit));
      n.put(u.name + ".kernel", std::move(kt));
      if (u.bias) n.put(u.name + ".bias", Tensor<T>(Shape{u.cout}));
      if (u.bn) {
        n.put(u.name + ".bn.gamma", Tensor<T>::full(Shape{u.cout}, T(1)));
        n.put(u.name + ".bn.beta", Tensor<T>(Shape{u.cout}));
        n.put(u.name + ".bn.mean", Tensor<T>(Shape{u.cout}));
        n.put(u.name + ".bn.var", Tensor<T>::full(Shape{u.cout}, T(1)));
      }
    });
    return n;
  }

  static Network load(const NetworkSpec& spec, const std::string& path) {
    spec.validate();
    Network n(spec);
    TensorContainer c = TensorContainer::load(path);
    Network expected(spec);
    std::vector<std::pair<std::string, Shape>> want;
    plan::for_each_unit(n.plan_, [&](const plan::ConvUnit& u) {
      want.emplace_back(u.name + ".kernel", u.kernel_shape());
      if (u.bias) want.emplace_back(u.name + ".bias", Shape{u.cout});
      if (u.bn)
        for (const char* s : {".bn.gamma", ".bn.beta", ".bn.mean", ".bn.var"})
          want.emplace_back(u.name + s, Shape{u.cout});
    });
    for (const auto& [name, shape] : want) {
      if (!c.contains(name))
        throw std::runtime_error(path + ": missing weight tensor '" + name + "'");
      Tensor<T> t = c.at(name).template as<T>();
      if (t.shape() != shape)
        throw std::runtime_error(path + ": weight tensor '" + name + "' has extents " +
                                 t.shape().str() + ", expected " + shape.str());
      n.put(name, std::move(t));
    }
    for (const auto& e : c.entries())
      if (!n.weights_.count(e.name))
        throw std::runtime_error(path + ": unexpected weight tensor '" + e.name + "'");
    return n;
  }

  void save(const std::string& path) const {
    TensorContainer c;
    for (const auto& name : order_) c.add(name, weights_.at(name));
    c.save(path);
  }

  Outputs forward(const Tensor<T>& image) const {
    check_input(image);
    EagerCtx<T> cx{weights_};
    return run(cx, image);
  }

  // Records the forward pass on a tape; `weight_vars` must come from
  // register_weights on the same tape.
  OutputsOf<Var> forward_taped(Tape& tape, const std::map<std::string, Var>& weight_vars,
                               const Tensor<double>& image) const {
    static_assert(std::is_same_v<T, double>, "taped forward requires a double-precision network");
    check_input(image);
    TapedCtx cx{tape, weight_vars};
    return run(cx, Tape::constant(image));
  }

  // Registers every weight on the tape: kernels/biases/bn scale+shift as
  // trainable parameters, bn statistics as constants.
  std::map<std::string, Var> register_weights(Tape& tape) const {
    static_assert(std::is_same_v<T, double>);
    std::map<std::string, Var> vars;
    for (const auto& name : order_)
      vars.emplace(name, is_trainable(name) ? tape.param(weights_.at(name))
                                            : Tape::constant(weights_.at(name)));
    return vars;
  }

  static bool is_trainable(const std::string& name) {
    auto ends_with = [&](const char* s) {
      const size_t l = std::strlen(s);
      return name.size() >= l && name.compare(name.size() - l, l, s) == 0;
    };
    return !ends_with(".bn.mean") && !ends_with(".bn.var");
  }

  int64_t count_params() const {
    int64_t n = 0;
    for (const auto& name : order_) n += weights_.at(name).numel();
    return n;
  }

  struct MacReport {
    int64_t total = 0;
    std::vector<std::pair<std::string, int64_t>> per_layer;
    double paper_style_m = 0;  // MACs per output map pixel, in millions
  };

  MacReport count_flops(int input_size) const {
    MacReport r;
    int64_t h = input_size, w = input_size, oh = 0, ow = 0;
    auto step = [&](const plan::ConvUnit& u) {
      int64_t m = u.macs(h, w, oh, ow);
      r.per_layer.emplace_back(u.name, m);
      r.total += m;
      h = oh, w = ow;
    };
    step(plan_.stem);
    for (const auto& b : plan_.base) {
      if (b.expand) step(*b.expand);
      step(b.dw);
      step(b.project);
    }
    for (const auto& s : plan_.block13a) {
      step(s.dw);
      step(s.pw);
    }
    const int64_t a_h = h, a_w = w;
    step(plan_.delta_head);
    h = a_h, w = a_w;  // delta head is a side branch
    for (const auto& s : plan_.block13b) {
      step(s.dw);
      step(s.pw);
    }
    if (plan_.bilinear_up) {
      h *= 2, w *= 2;  // bilinear itself contributes no MACs
      step(plan_.up);
    } else {
      step(plan_.up);
    }
    step(plan_.out_head);
    r.paper_style_m = static_cast<double>(r.total) / static_cast<double>(h * w) / 1e6;
    return r;
  }

  // Returns an inference network with batchnorm folded into conv kernels.
  Network folded() const {
    Network n(spec_);
    n.folded_ = true;
    plan::for_each_unit(plan_, [&](const plan::ConvUnit& u) {
      Tensor<T> k = weights_.at(u.name + ".kernel");
      Tensor<T> b = u.bias ? weights_.at(u.name + ".bias") : Tensor<T>{};
      if (u.bn) {
        // transposed kernels store output channels on axis 1; fold per plane
        if (u.op == plan::ConvUnit::Op::transposed) {
          Tensor<T> folded_k(k.shape());
          T* kp = folded_k.mut();
          const T* src = k.data();
          if (b.empty()) b = Tensor<T>(Shape{u.cout});
          T* bp = b.mut();
          const auto& g = weights_.at(u.name + ".bn.gamma");
          const auto& bt = weights_.at(u.name + ".bn.beta");
          const auto& mu = weights_.at(u.name + ".bn.mean");
          const auto& vr = weights_.at(u.name + ".bn.var");
          const int64_t ci = k.dim(0), co = k.dim(1), kk = k.dim(2) * k.dim(3);
          for (int64_t o = 0; o < co; ++o) {
            const double s = static_cast<double>(g.data()[o]) /
                             std::sqrt(static_cast<double>(vr.data()[o]) + kBnEps);
            for (int64_t i = 0; i < ci; ++i)
              for (int64_t t = 0; t < kk; ++t)
                kp[(i * co + o) * kk + t] = static_cast<T>(s * src[(i * co + o) * kk + t]);
            bp[o] = static_cast<T>(s * (static_cast<double>(bp[o]) -
                                        static_cast<double>(mu.data()[o])) +
                                   static_cast<double>(bt.data()[o]));
          }
          k = std::move(folded_k);
        } else {
          fold_batchnorm(k, b, weights_.at(u.name + ".bn.mean"), weights_.at(u.name + ".bn.var"),
                         weights_.at(u.name + ".bn.gamma"), weights_.at(u.name + ".bn.beta"),
                         kBnEps);
        }
      }
      n.put(u.name + ".kernel", std::move(k));
      if (!b.empty()) n.put(u.name + ".bias", std::move(b));
    });
    return n;
  }

  const NetworkSpec& spec() const { return spec_; }
  bool folded_form() const { return folded_; }
  const std::vector<std::string>& weight_names() const { return order_; }
  const Tensor<T>& weight(const std::string& name) const { return weights_.at(name); }
  void set_weight(const std::string& name, Tensor<T> t) {
    auto it = weights_.find(name);
    if (it == weights_.end()) throw std::runtime_error("unknown weight '" + name + "'");
    if (it->second.shape() != t.shape())
      throw std::runtime_error("weight '" + name + "' extents " + t.shape().str() +
                               " != " + it->second.shape().str());
    it->second = std::move(t);
  }

 private:
  explicit Network(const NetworkSpec& spec) : spec_(spec), plan_(plan::make_plan(spec)) {}

  void put(const std::string& name, Tensor<T> t) {
    if (!weights_.count(name)) order_.push_back(name);
    weights_[name] = std::move(t);
  }

  void check_input(const Tensor<T>& image) const {
    const Shape want{1, 3, spec_.input_size, spec_.input_size};
    if (image.shape() != want)
      throw std::invalid_argument("network input extents " + image.shape().str() +
                                  ", expected " + want.str());
  }
  template <typename Ctx>
  typename Ctx::V unit(Ctx& cx, const plan::ConvUnit& u, const typename Ctx::V& x) const {
    using V = typename Ctx::V;
    const V k = cx.weight(u.name + ".kernel");
    const bool with_bias = u.bias || (folded_ && u.bn);
    const V b = with_bias ? cx.weight(u.name + ".bias") : cx.none();
    V y;
    switch (u.op) {
      case plan::ConvUnit::Op::depthwise:
        y = cx.depthwise(x, k, b, u.stride, Padding::same);
        break;
      case plan::ConvUnit::Op::transposed:
        y = cx.transposed(x, k, u.stride);
        break;
      default:
        y = cx.conv2d(x, k, b, u.stride, Padding::same);
        break;
    }
    if (u.bn && !folded_)
      y = cx.batchnorm(y, cx.weight(u.name + ".bn.mean"), cx.weight(u.name + ".bn.var"),
                       cx.weight(u.name + ".bn.gamma"), cx.weight(u.name + ".bn.beta"));
    return cx.activation(y, u.act);
  }

  template <typename Ctx>
  OutputsOf<typename Ctx::V> run(Ctx& cx, const typename Ctx::V& image) const {
    using V = typename Ctx::V;
    const int64_t J = spec_.joint_count;
    V x = unit(cx, plan_.stem, image);
    for (const auto& b : plan_.base) {
      V in = x;
      if (b.expand) x = unit(cx, *b.expand, x);
      x = unit(cx, b.dw, x);
      x = unit(cx, b.project, x);
      if (b.residual) x = cx.add(x, in);
    }
    for (const auto& s : plan_.block13a) {
      x = unit(cx, s.dw, x);
      x = unit(cx, s.pw, x);
    }
    OutputsOf<V> out;
    V deltas = unit(cx, plan_.delta_head, x);
    V dx = cx.slice(deltas, 0, J);
    V dy = cx.slice(deltas, J, 2 * J);
    V dz = cx.slice(deltas, 2 * J, 3 * J);
    V bone = cx.add(cx.add(cx.abs(dx), cx.abs(dy)), cx.abs(dz));
    x = cx.concat({x, deltas, bone});
    // exposed intermediates are upsampled to the shared output extents
    out.dx = cx.bilinear_x2(dx);
    out.dy = cx.bilinear_x2(dy);
    out.dz = cx.bilinear_x2(dz);
    out.bone = cx.add(cx.add(cx.abs(out.dx), cx.abs(out.dy)), cx.abs(out.dz));
    for (const auto& s : plan_.block13b) {
      x = unit(cx, s.dw, x);
      x = unit(cx, s.pw, x);
    }
    if (plan_.bilinear_up) x = cx.bilinear_x2(x);
    x = unit(cx, plan_.up, x);
    V head = unit(cx, plan_.out_head, x);
    out.heat = cx.slice(head, 0, J);
    out.locx = cx.slice(head, J, 2 * J);
    out.locy = cx.slice(head, 2 * J, 3 * J);
    out.locz = cx.slice(head, 3 * J, 4 * J);
    return out;
  }

  NetworkSpec spec_;
  plan::Plan plan_;
  std::map<std::string, Tensor<T>> weights_;
  std::vector<std::string> order_;
  bool folded_ = false;
};

}  // namespace movnect
