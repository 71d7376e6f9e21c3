// Procedural training data: articulated stick figures with randomized
// in-limit joint angles, perspective-projected into the crop with exact
// ground truth for every supervised quantity. Stands in for real motion
// capture footage, which is out of scope here.
#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "movnect/losses.hpp"
#include "movnect/rng.hpp"
#include "movnect/skeleton.hpp"
#include "movnect/targets.hpp"
#include "movnect/weights_io.hpp"

namespace movnect {

struct SupervisionSample {
  Tensor<double> image;         // 1 x 3 x S x S, normalized to [-1, 1]
  Tensor<double> gt_heatmaps;   // J x h x w, peak 1 per joint
  LocMaps gt_locmaps;           // constant maps, mm
  Tensor<double> gt_pose;       // J x 3 root-relative mm, root row (0,0,0)
  Tensor<double> gt_keypoints;  // J x 2 crop px
  std::vector<bool> visible;
  Vec3 global_translation;      // root position in camera space, mm
  double focal = 0;             // effective focal length (after scale aug), px
  double gamma = 1.0;
};

namespace synth_detail {

// fixed per-bone palette, well separated hues so the net can tell limbs apart
inline void bone_color(int bone, double& r, double& g, double& b) {
  const double hue = std::fmod(bone * 0.6180339887498949, 1.0) * 6.0;
  const int i = static_cast<int>(hue);
  const double f = hue - i;
  switch (i % 6) {
    case 0: r = 1, g = f, b = 0.15; break;
    case 1: r = 1 - f, g = 1, b = 0.15; break;
    case 2: r = 0.15, g = 1, b = f; break;
    case 3: r = 0.15, g = 1 - f, b = 1; break;
    case 4: r = f, g = 0.15, b = 1; break;
    default: r = 1, g = 0.15, b = 1 - f; break;
  }
}

inline double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

// random swing within a fraction of the joint's cone, uniform azimuth
inline Quat random_swing(Rng& rng, const Vec3& bone_dir, double max_angle) {
  Vec3 e1 = bone_dir.cross(Vec3{0, 0, 1});
  if (e1.norm() < 1e-9) e1 = bone_dir.cross(Vec3{1, 0, 0});
  e1 = e1.normalized();
  const Vec3 e2 = bone_dir.cross(e1).normalized();
  const double az = rng.uniform(0, 2 * 3.14159265358979323846);
  const Vec3 axis = e1 * std::cos(az) + e2 * std::sin(az);
  return Quat::from_axis_angle(axis, rng.uniform(0, max_angle));
}

}  // namespace synth_detail

struct SynthConfig {
  int input_size = 256;
  int output_stride = 8;
  double base_focal = 450.0;  // px at 256-crop scale, before scale augmentation
  double sigma = kDefaultHeatmapSigma;
  double depth_min = 2800, depth_max = 4200;  // mm
  double pose_range = 0.5;  // fraction of each joint's swing cone to sample
};

inline SupervisionSample synth_sample(uint64_t seed, int64_t index, const SynthConfig& cfg = {}) {
  const Skeleton& sk = Skeleton::canonical();
  const JointLimits limits = JointLimits::defaults(sk);
  const int64_t joints = static_cast<int64_t>(sk.joints.size());
  const int S = cfg.input_size;
  const int64_t map = S / cfg.output_stride;
  Rng rng = Rng::named(seed, "sample" + std::to_string(index));
  constexpr double kPi = 3.14159265358979323846;

  // pose: random in-limit swings; the root turns about the vertical axis
  SkeletonPose pose;
  pose.rotations.assign(joints, Quat::identity());
  pose.rotations[0] = Quat::from_axis_angle(Vec3{0, 1, 0}, rng.uniform(-0.7, 0.7)) *
                      Quat::from_axis_angle(Vec3{1, 0, 0}, rng.uniform(-0.15, 0.15));
  for (int64_t j = 1; j < joints; ++j) {
    const double cone = limits.per_joint[j].cone_deg * kPi / 180.0;
    pose.rotations[j] = synth_detail::random_swing(
        rng, sk.joints[j].rest_offset.normalized(), cfg.pose_range * cone);
  }
  const std::vector<Vec3> pos = fk_positions(sk, pose);  // root at origin

  SupervisionSample s;
  s.gt_pose = Tensor<double>(Shape{joints, 3});
  double* gp = s.gt_pose.mut();
  for (int64_t j = 0; j < joints; ++j) {
    gp[j * 3 + 0] = pos[j].x;
    gp[j * 3 + 1] = pos[j].y;
    gp[j * 3 + 2] = pos[j].z;
  }

  // camera: scale augmentation folded into the effective focal length
  const double scale_aug = rng.uniform(0.7, 1.0);
  s.focal = cfg.base_focal * (static_cast<double>(S) / 256.0) * scale_aug;
  s.global_translation = {rng.uniform(-180, 180), rng.uniform(-120, 120),
                          rng.uniform(cfg.depth_min, cfg.depth_max)};
  s.gamma = rng.uniform(0.7, 1.4);

  s.gt_keypoints = Tensor<double>(Shape{joints, 2});
  double* kp = s.gt_keypoints.mut();
  const double half = static_cast<double>(S) / 2;
  for (int64_t j = 0; j < joints; ++j) {
    const double zc = pos[j].z + s.global_translation.z;
    kp[j * 2 + 0] = s.focal * (pos[j].x + s.global_translation.x) / zc + half;
    kp[j * 2 + 1] = s.focal * (pos[j].y + s.global_translation.y) / zc + half;
  }

  s.gt_heatmaps = make_gt_heatmaps(s.gt_keypoints, map, map, cfg.sigma, cfg.output_stride,
                                   &s.visible);
  auto lm = make_gt_locmaps(s.gt_pose, map, map);
  s.gt_locmaps = {lm[0], lm[1], lm[2]};

  // image: low-frequency random background, anti-aliased colored bone strokes
  s.image = Tensor<double>(Shape{1, 3, S, S});
  double* img = s.image.mut();
  constexpr int kBg = 8;
  double bg[kBg * kBg * 3];
  for (double& v : bg) v = rng.uniform(0.05, 0.55);
  auto bg_at = [&](int ch, double y, double x) {
    const double gy = std::clamp(y / S * (kBg - 1), 0.0, double(kBg - 1));
    const double gx = std::clamp(x / S * (kBg - 1), 0.0, double(kBg - 1));
    const int y0 = static_cast<int>(gy), x0 = static_cast<int>(gx);
    const int y1 = std::min(y0 + 1, kBg - 1), x1 = std::min(x0 + 1, kBg - 1);
    const double fy = gy - y0, fx = gx - x0;
    auto at = [&](int yy, int xx) { return bg[(yy * kBg + xx) * 3 + ch]; };
    const double top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
    const double bot = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
    return top + (bot - top) * fy;
  };

  const double px_per_mm = s.focal / (s.global_translation.z);
  const double stroke = std::max(2.0, 42.0 * px_per_mm);
  const double head_r = std::max(3.0, 70.0 * px_per_mm);

  std::vector<double> cov(static_cast<size_t>(S) * S, 0.0);
  std::vector<double> col(static_cast<size_t>(S) * S * 3, 0.0);
  auto splat = [&](double d, double radius, double r, double g, double b, int y, int x) {
    const double a = std::clamp(radius - d + 0.5, 0.0, 1.0);
    if (a <= cov[y * S + x]) return;
    cov[y * S + x] = a;
    col[(y * S + x) * 3 + 0] = r;
    col[(y * S + x) * 3 + 1] = g;
    col[(y * S + x) * 3 + 2] = b;
  };
  for (int64_t j = 1; j < joints; ++j) {
    const int p = sk.joints[j].parent;
    const double ax = kp[p * 2], ay = kp[p * 2 + 1], bx = kp[j * 2], by = kp[j * 2 + 1];
    double r, g, b;
    synth_detail::bone_color(static_cast<int>(j - 1), r, g, b);
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - stroke - 1)));
    const int x1 = std::min(S - 1, static_cast<int>(std::ceil(std::max(ax, bx) + stroke + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - stroke - 1)));
    const int y1 = std::min(S - 1, static_cast<int>(std::ceil(std::max(ay, by) + stroke + 1)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        splat(synth_detail::segment_distance(x + 0.5, y + 0.5, ax, ay, bx, by), stroke / 2, r, g,
              b, y, x);
  }
  {  // head disk
    const int hj = 2;
    const double hx = kp[hj * 2], hy = kp[hj * 2 + 1];
    const int x0 = std::max(0, static_cast<int>(hx - head_r - 1));
    const int x1 = std::min(S - 1, static_cast<int>(hx + head_r + 1));
    const int y0 = std::max(0, static_cast<int>(hy - head_r - 1));
    const int y1 = std::min(S - 1, static_cast<int>(hy + head_r + 1));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d = std::hypot(x + 0.5 - hx, y + 0.5 - hy);
        splat(d, head_r, 0.95, 0.85, 0.55, y, x);
      }
  }
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double a = cov[y * S + x];
      for (int ch = 0; ch < 3; ++ch) {
        double v = (1 - a) * bg_at(ch, y + 0.5, x + 0.5) + a * col[(y * S + x) * 3 + ch];
        v = std::pow(std::clamp(v, 0.0, 1.0), s.gamma);
        const double byte = std::round(v * 255.0);  // quantize like a decoded image file
        img[(ch * S + y) * S + x] = byte / 127.5 - 1.0;
      }
    }
  return s;
}

inline std::vector<SupervisionSample> synth_dataset(int64_t n, uint64_t seed,
                                                    const SynthConfig& cfg = {}) {
  if (n < 1) throw std::invalid_argument("synth_dataset: n must be >= 1");
  std::vector<SupervisionSample> out;
  out.reserve(n);
  for (int64_t i = 0; i < n; ++i) out.push_back(synth_sample(seed, i, cfg));
  return out;
}

// ---------------------------------------------------------------------------
// Per-sample records in the weight-container format.

inline void save_sample(const SupervisionSample& s, const std::string& path) {
  TensorContainer c;
  c.add("image", s.image);
  c.add("gt_heatmaps", s.gt_heatmaps);
  c.add("gt_locmaps.x", s.gt_locmaps.x);
  c.add("gt_locmaps.y", s.gt_locmaps.y);
  c.add("gt_locmaps.z", s.gt_locmaps.z);
  c.add("gt_pose", s.gt_pose);
  c.add("gt_keypoints", s.gt_keypoints);
  Tensor<double> meta(Shape{6 + static_cast<int64_t>(s.visible.size())});
  double* m = meta.mut();
  m[0] = s.global_translation.x;
  m[1] = s.global_translation.y;
  m[2] = s.global_translation.z;
  m[3] = s.focal;
  m[4] = s.gamma;
  m[5] = static_cast<double>(s.visible.size());
  for (size_t j = 0; j < s.visible.size(); ++j) m[6 + j] = s.visible[j] ? 1.0 : 0.0;
  c.add("meta", meta);
  c.save(path);
}

inline SupervisionSample load_sample(const std::string& path) {
  TensorContainer c = TensorContainer::load(path);
  SupervisionSample s;
  s.image = c.at("image").as<double>();
  s.gt_heatmaps = c.at("gt_heatmaps").as<double>();
  s.gt_locmaps = {c.at("gt_locmaps.x").as<double>(), c.at("gt_locmaps.y").as<double>(),
                  c.at("gt_locmaps.z").as<double>()};
  s.gt_pose = c.at("gt_pose").as<double>();
  s.gt_keypoints = c.at("gt_keypoints").as<double>();
  Tensor<double> meta = c.at("meta").as<double>();
  s.global_translation = {meta.data()[0], meta.data()[1], meta.data()[2]};
  s.focal = meta.data()[3];
  s.gamma = meta.data()[4];
  const int jn = static_cast<int>(meta.data()[5]);
  s.visible.assign(jn, true);
  for (int j = 0; j < jn; ++j) s.visible[j] = meta.data()[6 + j] != 0.0;
  return s;
}

inline void save_dataset(const std::vector<SupervisionSample>& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  char name[32];
  for (size_t i = 0; i < data.size(); ++i) {
    std::snprintf(name, sizeof(name), "sample_%06zu.mvt", i);
    save_sample(data[i], (std::filesystem::path(dir) / name).string());
  }
}

inline std::vector<SupervisionSample> load_dataset(const std::string& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".mvt") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<SupervisionSample> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_sample(f.string()));
  return out;
}

}  // namespace movnect
