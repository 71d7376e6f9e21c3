// Ground-truth map synthesis: Gaussian heatmap bumps and constant-valued
// location maps (the Hadamard mask in the location loss confines supervision
// to the peak neighbourhood).
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "movnect/tensor.hpp"

namespace movnect {

constexpr double kDefaultHeatmapSigma = 2.0;  // in map cells

// Map cell (r, c) <-> crop pixel ((c + 0.5) * stride, (r + 0.5) * stride).
inline double cell_to_crop(double cell, int stride) { return (cell + 0.5) * stride; }
inline double crop_to_cell(double px, int stride) { return px / stride - 0.5; }

struct GtHeatmap {
  Tensor<double> map;  // h x w, peak cell renormalised to exactly 1
  bool visible = true;
};

inline GtHeatmap make_gt_heatmap(double u, double v, int64_t map_h, int64_t map_w, double sigma,
                                 int stride) {
  GtHeatmap out;
  out.map = Tensor<double>(Shape{map_h, map_w});
  const double crop_w = static_cast<double>(map_w * stride);
  const double crop_h = static_cast<double>(map_h * stride);
  if (u < 0 || v < 0 || u >= crop_w || v >= crop_h) {
    out.visible = false;  // keypoint outside the crop: zero map, flagged
    return out;
  }
  const double cu = crop_to_cell(u, stride);
  const double cv = crop_to_cell(v, stride);
  double* p = out.map.mut();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  double peak = 0;
  for (int64_t r = 0; r < map_h; ++r)
    for (int64_t c = 0; c < map_w; ++c) {
      const double dr = static_cast<double>(r) - cv;
      const double dc = static_cast<double>(c) - cu;
      const double g = std::exp(-(dr * dr + dc * dc) * inv);
      p[r * map_w + c] = g;
      peak = std::max(peak, g);
    }
  const double s = 1.0 / peak;
  for (int64_t i = 0; i < map_h * map_w; ++i) p[i] *= s;
  return out;
}

// Stacks per-joint heatmaps into J x h x w; invisible joints stay zero.
inline Tensor<double> make_gt_heatmaps(const Tensor<double>& keypoints /* J x 2 crop px */,
                                       int64_t map_h, int64_t map_w, double sigma, int stride,
                                       std::vector<bool>* visible = nullptr) {
  const int64_t joints = keypoints.dim(0);
  Tensor<double> maps(Shape{joints, map_h, map_w});
  double* mp = maps.mut();
  if (visible) visible->assign(joints, true);
  for (int64_t j = 0; j < joints; ++j) {
    GtHeatmap h = make_gt_heatmap(keypoints.at({j, 0}), keypoints.at({j, 1}), map_h, map_w, sigma,
                                  stride);
    if (visible) (*visible)[j] = h.visible;
    std::copy_n(h.map.data(), map_h * map_w, mp + j * map_h * map_w);
  }
  return maps;
}

// Constant per-joint location maps from a root-relative pose (J x 3, mm).
// The root row must be (0,0,0), so the root maps are all-zero.
inline std::array<Tensor<double>, 3> make_gt_locmaps(const Tensor<double>& pose, int64_t map_h,
                                                     int64_t map_w) {
  if (pose.rank() != 2 || pose.dim(1) != 3)
    throw std::invalid_argument("make_gt_locmaps expects J x 3 pose, got " + pose.shape().str());
  const int64_t joints = pose.dim(0);
  std::array<Tensor<double>, 3> maps{Tensor<double>(Shape{joints, map_h, map_w}),
                                     Tensor<double>(Shape{joints, map_h, map_w}),
                                     Tensor<double>(Shape{joints, map_h, map_w})};
  for (int axis = 0; axis < 3; ++axis) {
    double* p = maps[axis].mut();
    for (int64_t j = 0; j < joints; ++j)
      std::fill_n(p + j * map_h * map_w, map_h * map_w, pose.at({j, axis}));
  }
  return maps;
}

}  // namespace movnect
