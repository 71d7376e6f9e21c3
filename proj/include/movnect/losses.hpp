// Mimicry losses blending ground-truth and teacher supervision.
//
//   L_HM = (1/J) sum_j { a*|H_j - H_j_gt|_2 + (1-a)*|H_j - H_j_teacher|_2 }
//   L_LM =       sum_j { a*|Hgt_j . (L_j - L_j_gt)|_2
//                      + (1-a)*|Hgt_j . (L_j - L_j_teacher)|_2 }   (per x/y/z)
//
// Norms are Euclidean over each joint map, not squared (a squared variant is
// available behind a flag). The zero-residual subgradient is 0; gradient
// denominators carry a 1e-12 guard inside the square root.
#pragma once

#include <cmath>

#include "movnect/ops.hpp"
#include "movnect/tape.hpp"
#include "movnect/tensor.hpp"

namespace movnect {

namespace detail {

// Accepts J x h x w or 1 x J x h x w maps.
inline void joint_maps(const Shape& s, int64_t& joints, int64_t& plane) {
  if (s.rank() == 3) {
    joints = s[0];
    plane = s[1] * s[2];
  } else if (s.rank() == 4 && s[0] == 1) {
    joints = s[1];
    plane = s[2] * s[3];
  } else {
    throw std::invalid_argument("expected JxHxW or 1xJxHxW maps, got " + s.str());
  }
}

inline void require_same_extents(const Shape& a, const Shape& b, const char* what) {
  if (a.numel() != b.numel())
    throw std::invalid_argument(std::string(what) + " extent mismatch: " + a.str() + " vs " +
                                b.str());
}

}  // namespace detail

struct LocMaps {
  Tensor<double> x, y, z;  // each J x h x w (or 1 x J x h x w)
};

// ---------------------------------------------------------------------------
// L_HM. `teacher` may be empty when alpha == 1.
inline double heatmap_loss(const Tensor<double>& pred, const Tensor<double>& gt,
                           const Tensor<double>& teacher, double alpha, bool squared = false) {
  int64_t joints = 0, plane = 0;
  detail::joint_maps(pred.shape(), joints, plane);
  detail::require_same_extents(pred.shape(), gt.shape(), "heatmap_loss gt");
  const bool use_teacher = alpha < 1.0;
  if (use_teacher) detail::require_same_extents(pred.shape(), teacher.shape(), "heatmap_loss teacher");
  const double* pp = pred.data();
  const double* gp = gt.data();
  const double* tp = use_teacher ? teacher.data() : nullptr;
  double total = 0;
  for (int64_t j = 0; j < joints; ++j) {
    double sg = 0, st = 0;
    const int64_t off = j * plane;
    for (int64_t p = 0; p < plane; ++p) {
      const double rg = pp[off + p] - gp[off + p];
      sg += rg * rg;
      if (use_teacher) {
        const double rt = pp[off + p] - tp[off + p];
        st += rt * rt;
      }
    }
    if (squared)
      total += alpha * sg + (1 - alpha) * st;
    else
      total += alpha * std::sqrt(sg) + (1 - alpha) * std::sqrt(st);
  }
  return total / static_cast<double>(joints);
}

// Gradient of L_HM with respect to the prediction.
inline Tensor<double> heatmap_loss_grad(const Tensor<double>& pred, const Tensor<double>& gt,
                                        const Tensor<double>& teacher, double alpha,
                                        bool squared = false) {
  int64_t joints = 0, plane = 0;
  detail::joint_maps(pred.shape(), joints, plane);
  const bool use_teacher = alpha < 1.0;
  Tensor<double> grad(pred.shape());
  double* out = grad.mut();
  const double* pp = pred.data();
  const double* gp = gt.data();
  const double* tp = use_teacher ? teacher.data() : nullptr;
  const double inv_j = 1.0 / static_cast<double>(joints);
  for (int64_t j = 0; j < joints; ++j) {
    const int64_t off = j * plane;
    double sg = 0, st = 0;
    for (int64_t p = 0; p < plane; ++p) {
      const double rg = pp[off + p] - gp[off + p];
      sg += rg * rg;
      if (use_teacher) {
        const double rt = pp[off + p] - tp[off + p];
        st += rt * rt;
      }
    }
    const double wg = squared ? alpha : alpha / std::sqrt(sg + 1e-12);
    const double wt = use_teacher ? (squared ? 1 - alpha : (1 - alpha) / std::sqrt(st + 1e-12)) : 0;
    const double k = squared ? 2.0 : 1.0;
    for (int64_t p = 0; p < plane; ++p) {
      double g = wg * (pp[off + p] - gp[off + p]);
      if (use_teacher) g += wt * (pp[off + p] - tp[off + p]);
      out[off + p] = k * inv_j * g;
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// L_LM over the three coordinate families; `gt_heat` is the Hadamard mask.
inline double locmap_loss(const LocMaps& pred, const LocMaps& gt, const LocMaps* teacher,
                          const Tensor<double>& gt_heat, double alpha, bool squared = false) {
  int64_t joints = 0, plane = 0;
  detail::joint_maps(gt_heat.shape(), joints, plane);
  const bool use_teacher = alpha < 1.0;
  if (use_teacher && teacher == nullptr)
    throw std::invalid_argument("locmap_loss: alpha < 1 requires teacher maps");
  const double* mp = gt_heat.data();
  double total = 0;
  const Tensor<double>* preds[3] = {&pred.x, &pred.y, &pred.z};
  const Tensor<double>* gts[3] = {&gt.x, &gt.y, &gt.z};
  const Tensor<double>* ts[3] = {use_teacher ? &teacher->x : nullptr,
                                 use_teacher ? &teacher->y : nullptr,
                                 use_teacher ? &teacher->z : nullptr};
  for (int f = 0; f < 3; ++f) {
    detail::require_same_extents(preds[f]->shape(), gt_heat.shape(), "locmap_loss maps");
    detail::require_same_extents(preds[f]->shape(), gts[f]->shape(), "locmap_loss gt");
    if (use_teacher)
      detail::require_same_extents(preds[f]->shape(), ts[f]->shape(), "locmap_loss teacher");
    const double* pp = preds[f]->data();
    const double* gp = gts[f]->data();
    const double* tp = use_teacher ? ts[f]->data() : nullptr;
    for (int64_t j = 0; j < joints; ++j) {
      const int64_t off = j * plane;
      double sg = 0, st = 0;
      for (int64_t p = 0; p < plane; ++p) {
        const double m = mp[off + p];
        const double rg = m * (pp[off + p] - gp[off + p]);
        sg += rg * rg;
        if (use_teacher) {
          const double rt = m * (pp[off + p] - tp[off + p]);
          st += rt * rt;
        }
      }
      if (squared)
        total += alpha * sg + (1 - alpha) * st;
      else
        total += alpha * std::sqrt(sg) + (1 - alpha) * std::sqrt(st);
    }
  }
  return total;
}

// Gradient of L_LM with respect to one predicted family.
inline Tensor<double> locmap_loss_grad_family(const Tensor<double>& pred, const Tensor<double>& gt,
                                              const Tensor<double>* teacher,
                                              const Tensor<double>& gt_heat, double alpha,
                                              bool squared = false) {
  int64_t joints = 0, plane = 0;
  detail::joint_maps(gt_heat.shape(), joints, plane);
  const bool use_teacher = alpha < 1.0;
  Tensor<double> grad(pred.shape());
  double* out = grad.mut();
  const double* pp = pred.data();
  const double* gp = gt.data();
  const double* tp = use_teacher ? teacher->data() : nullptr;
  const double* mp = gt_heat.data();
  for (int64_t j = 0; j < joints; ++j) {
    const int64_t off = j * plane;
    double sg = 0, st = 0;
    for (int64_t p = 0; p < plane; ++p) {
      const double m = mp[off + p];
      const double rg = m * (pp[off + p] - gp[off + p]);
      sg += rg * rg;
      if (use_teacher) {
        const double rt = m * (pp[off + p] - tp[off + p]);
        st += rt * rt;
      }
    }
    const double wg = squared ? alpha : alpha / std::sqrt(sg + 1e-12);
    const double wt = use_teacher ? (squared ? 1 - alpha : (1 - alpha) / std::sqrt(st + 1e-12)) : 0;
    const double k = squared ? 2.0 : 1.0;
    for (int64_t p = 0; p < plane; ++p) {
      const double m2 = mp[off + p] * mp[off + p];
      double g = wg * m2 * (pp[off + p] - gp[off + p]);
      if (use_teacher) g += wt * m2 * (pp[off + p] - tp[off + p]);
      out[off + p] = k * g;
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Taped (fused) loss nodes; gradients flow into the prediction vars only.

inline Var heatmap_loss(Tape& tape, const Var& pred, const Tensor<double>& gt,
                        const Tensor<double>& teacher, double alpha, bool squared = false) {
  const double v = heatmap_loss(pred.value, gt, teacher, alpha, squared);
  Var r{Tensor<double>::full(Shape{1}, v), tape.new_node(Shape{1})};
  tape.record([&tape, pred, gt, teacher, alpha, squared, id = r.id] {
    const Tensor<double>& g = tape.node_grad(id);
    if (g.empty() || pred.id < 0) return;
    Tensor<double> gx = heatmap_loss_grad(pred.value, gt, teacher, alpha, squared);
    const double scale = g.data()[0];
    if (scale != 1.0) {
      double* p = gx.mut();
      for (int64_t i = 0; i < gx.numel(); ++i) p[i] *= scale;
    }
    tape.accumulate(pred.id, gx);
  });
  return r;
}

inline Var locmap_loss(Tape& tape, const Var& px, const Var& py, const Var& pz, const LocMaps& gt,
                       const LocMaps* teacher, const Tensor<double>& gt_heat, double alpha,
                       bool squared = false) {
  LocMaps pred{px.value, py.value, pz.value};
  const double v = locmap_loss(pred, gt, teacher, gt_heat, alpha, squared);
  Var r{Tensor<double>::full(Shape{1}, v), tape.new_node(Shape{1})};
  tape.record([&tape, px, py, pz, gt, teacher, gt_heat, alpha, squared, id = r.id] {
    const Tensor<double>& g = tape.node_grad(id);
    if (g.empty()) return;
    const double scale = g.data()[0];
    const Var* preds[3] = {&px, &py, &pz};
    const Tensor<double>* gts[3] = {&gt.x, &gt.y, &gt.z};
    const Tensor<double>* ts[3] = {teacher ? &teacher->x : nullptr,
                                   teacher ? &teacher->y : nullptr,
                                   teacher ? &teacher->z : nullptr};
    for (int f = 0; f < 3; ++f) {
      if (preds[f]->id < 0) continue;
      Tensor<double> gx =
          locmap_loss_grad_family(preds[f]->value, *gts[f], ts[f], gt_heat, alpha, squared);
      if (scale != 1.0) {
        double* p = gx.mut();
        for (int64_t i = 0; i < gx.numel(); ++i) p[i] *= scale;
      }
      tape.accumulate(preds[f]->id, gx);
    }
  });
  return r;
}

// ---------------------------------------------------------------------------
// Mean per-joint position error over root-relative poses (mm), J x 3 inputs.
inline double mpjpe(const Tensor<double>& pred, const Tensor<double>& gt) {
  if (pred.rank() != 2 || pred.dim(1) != 3)
    throw std::invalid_argument("mpjpe expects J x 3 poses, got " + pred.shape().str());
  if (pred.shape() != gt.shape())
    throw std::invalid_argument("mpjpe joint count mismatch: " + pred.shape().str() + " vs " +
                                gt.shape().str());
  const int64_t joints = pred.dim(0);
  const double* pp = pred.data();
  const double* gp = gt.data();
  double total = 0;
  for (int64_t j = 0; j < joints; ++j) {
    const double dx = pp[j * 3 + 0] - gp[j * 3 + 0];
    const double dy = pp[j * 3 + 1] - gp[j * 3 + 1];
    const double dz = pp[j * 3 + 2] - gp[j * 3 + 2];
    total += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return total / static_cast<double>(joints);
}

}  // namespace movnect
