// Per-frame raw poses -> temporally stable skeletal output: 1 Euro filtering
// of 2D keypoints, 3D joints and rotations, global root recovery and IK with
// anatomical limits.
#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <tuple>
#include <vector>

#include "movnect/decode.hpp"
#include "movnect/one_euro.hpp"
#include "movnect/skeleton.hpp"

namespace movnect {

// Global root position from the weak-perspective spread ratio:
//   scale = sqrt(sum_j |P_xy - mean|^2) / sqrt(sum_j |K - mean|^2)
//   P_G   = scale * (Kx_mean, Ky_mean, f)^T - (Px_mean, Py_mean, 0)^T
// Keypoints are frame pixels relative to the principal point.
inline Vec3 global_position(const Tensor<double>& pose3d, const Keypoints2D& kps, double focal) {
  const int64_t joints = pose3d.dim(0);
  if (pose3d.rank() != 2 || pose3d.dim(1) != 3)
    throw std::invalid_argument("global_position expects J x 3 pose");
  if (static_cast<int64_t>(kps.size()) != joints)
    throw std::invalid_argument("global_position keypoint/pose joint mismatch");
  double px = 0, py = 0, kx = 0, ky = 0;
  int n = 0;
  for (int64_t j = 0; j < joints; ++j) {
    if (!kps[j].visible) continue;
    px += pose3d.at({j, 0});
    py += pose3d.at({j, 1});
    kx += kps[j].u;
    ky += kps[j].v;
    ++n;
  }
  if (n < 2) throw std::invalid_argument("global_position needs at least two visible joints");
  px /= n, py /= n, kx /= n, ky /= n;
  double sp = 0, sk = 0;
  for (int64_t j = 0; j < joints; ++j) {
    if (!kps[j].visible) continue;
    const double dx = pose3d.at({j, 0}) - px, dy = pose3d.at({j, 1}) - py;
    sp += dx * dx + dy * dy;
    const double du = kps[j].u - kx, dv = kps[j].v - ky;
    sk += du * du + dv * dv;
  }
  if (sk <= 0) throw std::invalid_argument("global_position: zero 2D spread");
  const double scale = std::sqrt(sp) / std::sqrt(sk);
  return Vec3{scale * kx - px, scale * ky - py, scale * focal};
}

// One frame of raw network output, decoded far enough to re-read maps.
struct PoseFrame {
  double timestamp = 0;          // seconds
  Keypoints2D keypoints;         // crop px
  Tensor<double> locx, locy, locz;  // J x h x w location maps (mm)
  CropTransform crop;            // crop -> frame
  double focal = 0;              // px, frame coordinates relative to principal point
  bool lost = false;
};

struct StabilizerConfig {
  OneEuroParams filter_2d{1.0, 0.007, 1.0};
  OneEuroParams filter_3d{1.0, 0.007, 1.0};
  OneEuroParams filter_rot{1.0, 0.007, 1.0};
  int output_stride = 8;
  bool clamp = true;
};

// Streaming form of the post-processing chain; owns all filter state.
class PoseStabilizer {
 public:
  PoseStabilizer(const Skeleton& sk, const JointLimits& limits, StabilizerConfig cfg = {})
      : sk_(sk),
        limits_(limits),
        cfg_(cfg),
        f2d_(sk.joints.size() * 2, cfg.filter_2d),
        f3d_(sk.joints.size() * 3, cfg.filter_3d),
        frot_(sk.joints.size() * 4, cfg.filter_rot),
        prev_rot_(sk.joints.size(), Quat::identity()) {}

  SkeletonPose step(const PoseFrame& frame) {
    const size_t joints = sk_.joints.size();
    const double t = frame.timestamp;

    // 1 Euro on 2D keypoints (crop coordinates)
    Keypoints2D kps = frame.keypoints;
    for (size_t j = 0; j < joints; ++j) {
      kps[j].u = f2d_.step(j * 2 + 0, kps[j].u, t);
      kps[j].v = f2d_.step(j * 2 + 1, kps[j].v, t);
    }

    // re-read the location maps at the filtered keypoints
    Tensor<double> raw =
        decode_pose(frame.locx, frame.locy, frame.locz, kps, cfg_.output_stride);

    // 1 Euro on the root-relative 3D joints
    Tensor<double> filtered(raw.shape());
    double* fp = filtered.mut();
    for (size_t j = 0; j < joints; ++j)
      for (int a = 0; a < 3; ++a)
        fp[j * 3 + a] = f3d_.step(j * 3 + a, raw.at({static_cast<int64_t>(j), a}), t);

    // global position from frame-space keypoints
    Keypoints2D frame_kps = kps;
    for (auto& k : frame_kps) std::tie(k.u, k.v) = frame.crop.to_frame(k.u, k.v);
    const Vec3 root = global_position(filtered, frame_kps, frame.focal);

    SkeletonPose pose = ik_solve(sk_, filtered);
    if (cfg_.clamp) pose = clamp_limits(pose, sk_, limits_);

    // 1 Euro on quaternion components, hemisphere-aligned, then renormalised
    for (size_t j = 0; j < joints; ++j) {
      Quat q = pose.rotations[j];
      if (q.dot(prev_rot_[j]) < 0) q = {-q.w, -q.x, -q.y, -q.z};
      Quat f{frot_.step(j * 4 + 0, q.w, t), frot_.step(j * 4 + 1, q.x, t),
             frot_.step(j * 4 + 2, q.y, t), frot_.step(j * 4 + 3, q.z, t)};
      pose.rotations[j] = f.normalized();
      prev_rot_[j] = pose.rotations[j];
    }
    pose.root_position = root;
    pose.timestamp = t;
    return pose;
  }

 private:
  Skeleton sk_;
  JointLimits limits_;
  StabilizerConfig cfg_;
  OneEuroBank f2d_, f3d_, frot_;
  std::vector<Quat> prev_rot_;
};

struct StabilizeResult {
  std::vector<SkeletonPose> poses;
  double mean_frame_ms = 0;  // per-frame latency of the chain
};

inline StabilizeResult stabilize_stream(const std::vector<PoseFrame>& frames, const Skeleton& sk,
                                        const JointLimits& limits, StabilizerConfig cfg = {}) {
  double prev_t = -std::numeric_limits<double>::infinity();
  for (const auto& f : frames) {
    if (!(f.timestamp > prev_t))
      throw std::invalid_argument("stabilize_stream: timestamps must strictly increase");
    prev_t = f.timestamp;
  }
  PoseStabilizer stab(sk, limits, cfg);
  StabilizeResult out;
  out.poses.reserve(frames.size());
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& f : frames) out.poses.push_back(stab.step(f));
  const auto t1 = std::chrono::steady_clock::now();
  if (!frames.empty())
    out.mean_frame_ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count() / frames.size();
  return out;
}

}  // namespace movnect
