// Raw map decoding (argmax + quadratic sub-cell refinement), keypoint-driven
// bounding boxes, the momentum tracker and the crop/resize front end.
#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "movnect/targets.hpp"
#include "movnect/tensor.hpp"

namespace movnect {

struct Keypoint2D {
  double u = 0, v = 0;     // pixels (crop or frame, per context)
  double confidence = 0;   // heatmap peak value
  bool visible = true;
};

using Keypoints2D = std::vector<Keypoint2D>;

namespace detail {

inline void map_view(const Tensor<double>& t, int64_t& joints, int64_t& h, int64_t& w) {
  if (t.rank() == 3) {
    joints = t.dim(0), h = t.dim(1), w = t.dim(2);
  } else if (t.rank() == 4 && t.dim(0) == 1) {
    joints = t.dim(1), h = t.dim(2), w = t.dim(3);
  } else {
    throw std::invalid_argument("expected JxHxW maps, got " + t.shape().str());
  }
}

// Parabolic vertex offset from three samples; 0 when the fit degenerates.
inline double quad_offset(double l, double c, double r) {
  const double denom = l - 2 * c + r;
  if (denom >= 0) return 0;  // not concave around the peak
  return std::clamp(0.5 * (l - r) / denom, -0.5, 0.5);
}

}  // namespace detail

// Per-joint argmax with sub-cell refinement, scaled to crop pixels.
// All-zero (or non-positive) maps decode to the crop centre, flagged invisible.
inline Keypoints2D decode_keypoints(const Tensor<double>& heat, int stride) {
  int64_t joints = 0, h = 0, w = 0;
  detail::map_view(heat, joints, h, w);
  const double* hp = heat.data();
  Keypoints2D out(joints);
  for (int64_t j = 0; j < joints; ++j) {
    const double* plane = hp + j * h * w;
    int64_t best = 0;
    for (int64_t i = 1; i < h * w; ++i)
      if (plane[i] > plane[best]) best = i;  // ties keep the first in scan order
    const double peak = plane[best];
    Keypoint2D& kp = out[j];
    if (peak <= 0) {
      kp.u = 0.5 * static_cast<double>(w * stride);
      kp.v = 0.5 * static_cast<double>(h * stride);
      kp.confidence = 0;
      kp.visible = false;
      continue;
    }
    const int64_t r = best / w, c = best % w;
    double off_x = 0, off_y = 0;
    if (c > 0 && c + 1 < w)
      off_x = detail::quad_offset(plane[r * w + c - 1], peak, plane[r * w + c + 1]);
    if (r > 0 && r + 1 < h)
      off_y = detail::quad_offset(plane[(r - 1) * w + c], peak, plane[(r + 1) * w + c]);
    kp.u = cell_to_crop(static_cast<double>(c) + off_x, stride);
    kp.v = cell_to_crop(static_cast<double>(r) + off_y, stride);
    kp.confidence = peak;
    kp.visible = true;
  }
  return out;
}

// Reads each joint's (X, Y, Z) at the keypoint's map cell; root-relative.
inline Tensor<double> decode_pose(const Tensor<double>& locx, const Tensor<double>& locy,
                                  const Tensor<double>& locz, const Keypoints2D& kps, int stride,
                                  std::vector<bool>* flagged = nullptr) {
  int64_t joints = 0, h = 0, w = 0;
  detail::map_view(locx, joints, h, w);
  if (static_cast<int64_t>(kps.size()) != joints)
    throw std::invalid_argument("decode_pose keypoint count " + std::to_string(kps.size()) +
                                " != joints " + std::to_string(joints));
  const Tensor<double>* maps[3] = {&locx, &locy, &locz};
  if (flagged) flagged->assign(joints, false);
  auto cell = [&](double px, int64_t n) {
    const int64_t c = static_cast<int64_t>(std::llround(crop_to_cell(px, stride)));
    return std::clamp<int64_t>(c, 0, n - 1);
  };
  Tensor<double> pose(Shape{joints, 3});
  double* pp = pose.mut();
  double root[3] = {0, 0, 0};
  {
    const int64_t rc = cell(kps[0].u, w), rr = cell(kps[0].v, h);
    for (int a = 0; a < 3; ++a) root[a] = maps[a]->data()[rr * w + rc];
  }
  for (int64_t j = 0; j < joints; ++j) {
    if (!kps[j].visible) {
      pp[j * 3 + 0] = pp[j * 3 + 1] = pp[j * 3 + 2] = 0;  // inherits the root
      if (flagged) (*flagged)[j] = true;
      continue;
    }
    const int64_t c = cell(kps[j].u, w), r = cell(kps[j].v, h);
    for (int a = 0; a < 3; ++a)
      pp[j * 3 + a] = maps[a]->data()[(j * h + r) * w + c] - root[a];
  }
  return pose;
}

// ---------------------------------------------------------------------------
struct BBox {
  double cx = 0, cy = 0;  // centre, frame px
  double width = 0, height = 0;
};

constexpr double kBBoxBufferX = 0.4;  // per side, of the tight width
constexpr double kBBoxBufferY = 0.2;  // per side, of the tight height

// Tight bounds of visible keypoints expanded by the buffer fractions.
// Fewer than two visible joints or a degenerate extent signals tracking lost.
inline std::optional<BBox> bbox_from_keypoints(const Keypoints2D& kps) {
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  int n = 0;
  for (const auto& k : kps) {
    if (!k.visible) continue;
    if (n == 0) {
      x0 = x1 = k.u;
      y0 = y1 = k.v;
    } else {
      x0 = std::min(x0, k.u), x1 = std::max(x1, k.u);
      y0 = std::min(y0, k.v), y1 = std::max(y1, k.v);
    }
    ++n;
  }
  if (n < 2) return std::nullopt;
  const double w = x1 - x0, h = y1 - y0;
  if (w <= 0 || h <= 0) return std::nullopt;
  BBox b;
  b.width = w * (1 + 2 * kBBoxBufferX);
  b.height = h * (1 + 2 * kBBoxBufferY);
  b.cx = 0.5 * (x0 + x1);
  b.cy = 0.5 * (y0 + y1);
  return b;
}

struct TrackerState {
  BBox box;
  double momentum = 0.75;
  bool initialized = false;
};

// new = momentum * previous + (1 - momentum) * observed, per component;
// the first observation is adopted directly.
inline BBox track(TrackerState& state, const BBox& observed) {
  if (!state.initialized) {
    state.box = observed;
    state.initialized = true;
    return state.box;
  }
  const double m = state.momentum;
  state.box.cx = m * state.box.cx + (1 - m) * observed.cx;
  state.box.cy = m * state.box.cy + (1 - m) * observed.cy;
  state.box.width = m * state.box.width + (1 - m) * observed.width;
  state.box.height = m * state.box.height + (1 - m) * observed.height;
  return state.box;
}

// ---------------------------------------------------------------------------
// Affine crop->frame mapping: xf = a*xc + c, yf = e*yc + f (no shear here,
// but six coefficients are carried for the stream format).
struct CropTransform {
  double a = 1, b = 0, c = 0, d = 0, e = 1, f = 0;

  std::pair<double, double> to_frame(double u, double v) const {
    return {a * u + b * v + c, d * u + e * v + f};
  }
  std::pair<double, double> to_crop(double x, double y) const {
    const double det = a * e - b * d;
    const double ia = e / det, ib = -b / det, id = -d / det, ie = a / det;
    const double rx = x - c, ry = y - f;
    return {ia * rx + ib * ry, id * rx + ie * ry};
  }
};

struct Crop {
  Tensor<double> image;  // 1 x 3 x S x S
  CropTransform transform;
};

// Square crop containing the box (edge padding outside the frame),
// bilinearly resampled to S x S.
inline Crop crop_resize(const Tensor<double>& frame, const BBox& box, int out_size) {
  if (frame.rank() != 4 || frame.dim(0) != 1 || frame.dim(1) != 3)
    throw std::invalid_argument("crop_resize expects 1x3xHxW frame, got " + frame.shape().str());
  if (!(box.width > 0) || !(box.height > 0))
    throw std::invalid_argument("crop_resize: degenerate box");
  const int64_t fh = frame.dim(2), fw = frame.dim(3);
  const double side = std::max(box.width, box.height);
  const double x0 = box.cx - side / 2, y0 = box.cy - side / 2;
  if (x0 >= static_cast<double>(fw) || y0 >= static_cast<double>(fh) || x0 + side <= 0 ||
      y0 + side <= 0)
    throw std::invalid_argument("crop_resize: box entirely outside the frame");

  Crop out;
  const double scale = side / static_cast<double>(out_size);
  out.transform = {scale, 0, x0 + 0.5 * scale - 0.5, 0, scale, y0 + 0.5 * scale - 0.5};
  out.image = Tensor<double>(Shape{1, 3, out_size, out_size});
  double* op = out.image.mut();
  const double* ip = frame.data();
  for (int ch = 0; ch < 3; ++ch) {
    const double* plane = ip + ch * fh * fw;
    double* oplane = op + ch * out_size * out_size;
    for (int v = 0; v < out_size; ++v) {
      const double sy = std::clamp(out.transform.e * v + out.transform.f, 0.0,
                                   static_cast<double>(fh - 1));
      const int64_t iy0 = static_cast<int64_t>(std::floor(sy));
      const int64_t iy1 = std::min(iy0 + 1, fh - 1);
      const double fy = sy - static_cast<double>(iy0);
      for (int u = 0; u < out_size; ++u) {
        const double sx = std::clamp(out.transform.a * u + out.transform.c, 0.0,
                                     static_cast<double>(fw - 1));
        const int64_t ix0 = static_cast<int64_t>(std::floor(sx));
        const int64_t ix1 = std::min(ix0 + 1, fw - 1);
        const double fx = sx - static_cast<double>(ix0);
        const double tl = plane[iy0 * fw + ix0], tr = plane[iy0 * fw + ix1];
        const double bl = plane[iy1 * fw + ix0], br = plane[iy1 * fw + ix1];
        const double top = tl + (tr - tl) * fx, bot = bl + (br - bl) * fx;
        oplane[v * out_size + u] = top + (bot - top) * fy;
      }
    }
  }
  return out;
}

// Full-frame square box used while the tracker bootstraps.
inline BBox full_frame_box(int64_t fw, int64_t fh) {
  BBox b;
  b.cx = static_cast<double>(fw) / 2;
  b.cy = static_cast<double>(fh) / 2;
  b.width = static_cast<double>(std::max(fw, fh));
  b.height = b.width;
  return b;
}

}  // namespace movnect
