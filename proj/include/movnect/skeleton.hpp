// 15-joint skeleton, forward/inverse kinematics and anatomical joint limits.
// FK convention: a joint's own rotation swings the bone arriving from its
// parent, so every bone can be aligned independently and positions-only IK
// is exact on bone directions (twist is unobservable and set to zero).
#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "movnect/tensor.hpp"

namespace movnect {

constexpr int kJointCount = 15;

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    const double n = norm();
    return n > 0 ? Vec3{x / n, y / n, z / n} : Vec3{};
  }
};

struct Quat {
  double w = 1, x = 0, y = 0, z = 0;

  static Quat identity() { return {}; }
  static Quat from_axis_angle(const Vec3& axis, double angle) {
    const Vec3 a = axis.normalized();
    const double h = angle * 0.5;
    const double s = std::sin(h);
    return {std::cos(h), a.x * s, a.y * s, a.z * s};
  }
  // Minimal rotation taking `from` to `to` (both need not be unit length).
  static Quat shortest_arc(const Vec3& from, const Vec3& to) {
    const Vec3 f = from.normalized(), t = to.normalized();
    const double d = f.dot(t);
    if (d > 1.0 - 1e-14) return identity();
    if (d < -1.0 + 1e-14) {
      // antiparallel: pick a deterministic perpendicular axis
      Vec3 axis = f.cross(Vec3{1, 0, 0});
      if (axis.norm() < 1e-9) axis = f.cross(Vec3{0, 1, 0});
      return from_axis_angle(axis, 3.14159265358979323846);
    }
    const Vec3 c = f.cross(t);
    Quat q{1.0 + d, c.x, c.y, c.z};
    return q.normalized();
  }

  Quat operator*(const Quat& o) const {
    return {w * o.w - x * o.x - y * o.y - z * o.z, w * o.x + x * o.w + y * o.z - z * o.y,
            w * o.y - x * o.z + y * o.w + z * o.x, w * o.z + x * o.y - y * o.x + z * o.w};
  }
  Quat conj() const { return {w, -x, -y, -z}; }
  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quat normalized() const {
    const double n = norm();
    if (n <= 0) return identity();
    return {w / n, x / n, y / n, z / n};
  }
  double dot(const Quat& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }

  Vec3 rotate(const Vec3& v) const {
    // q v q* via the expanded form
    const Vec3 u{x, y, z};
    const Vec3 t = u.cross(v) * 2.0;
    return v + t * w + u.cross(t);
  }

  static Quat from_matrix_cols(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
    const double tr = c0.x + c1.y + c2.z;
    Quat q;
    if (tr > 0) {
      double s = std::sqrt(tr + 1.0) * 2;
      q = {0.25 * s, (c1.z - c2.y) / s, (c2.x - c0.z) / s, (c0.y - c1.x) / s};
    } else if (c0.x > c1.y && c0.x > c2.z) {
      double s = std::sqrt(1.0 + c0.x - c1.y - c2.z) * 2;
      q = {(c1.z - c2.y) / s, 0.25 * s, (c1.x + c0.y) / s, (c2.x + c0.z) / s};
    } else if (c1.y > c2.z) {
      double s = std::sqrt(1.0 + c1.y - c0.x - c2.z) * 2;
      q = {(c2.x - c0.z) / s, (c1.x + c0.y) / s, 0.25 * s, (c2.y + c1.z) / s};
    } else {
      double s = std::sqrt(1.0 + c2.z - c0.x - c1.y) * 2;
      q = {(c0.y - c1.x) / s, (c2.x + c0.z) / s, (c2.y + c1.z) / s, 0.25 * s};
    }
    return q.normalized();
  }
};

// ---------------------------------------------------------------------------
struct Skeleton {
  struct Joint {
    std::string name;
    int parent;        // -1 for the root; always lower index otherwise
    Vec3 rest_offset;  // bone from parent to this joint in the rest pose, mm
  };
  std::vector<Joint> joints;

  int joint_index(const std::string& name) const {
    for (size_t i = 0; i < joints.size(); ++i)
      if (joints[i].name == name) return static_cast<int>(i);
    throw std::invalid_argument("unknown joint '" + name + "'");
  }

  // pelvis root; spinal chain pelvis -> neck -> head; limbs off neck/pelvis.
  // Coordinates follow the image convention: x right, y down, z forward.
  static const Skeleton& canonical() {
    static const Skeleton s = [] {
      Skeleton k;
      k.joints = {
          {"pelvis", -1, {0, 0, 0}},          {"neck", 0, {0, -500, 0}},
          {"head", 1, {0, -160, 0}},          {"l_shoulder", 1, {-190, 30, 0}},
          {"l_elbow", 3, {-280, 0, 0}},       {"l_wrist", 4, {-250, 0, 0}},
          {"r_shoulder", 1, {190, 30, 0}},    {"r_elbow", 6, {280, 0, 0}},
          {"r_wrist", 7, {250, 0, 0}},        {"l_hip", 0, {-100, 0, 0}},
          {"l_knee", 9, {0, 440, 0}},         {"l_ankle", 10, {0, 420, 0}},
          {"r_hip", 0, {100, 0, 0}},          {"r_knee", 12, {0, 440, 0}},
          {"r_ankle", 13, {0, 420, 0}},
      };
      return k;
    }();
    return s;
  }

  std::vector<Vec3> rest_positions() const {
    std::vector<Vec3> pos(joints.size());
    for (size_t j = 0; j < joints.size(); ++j)
      pos[j] = joints[j].parent < 0 ? joints[j].rest_offset
                                    : pos[joints[j].parent] + joints[j].rest_offset;
    return pos;
  }
};

struct SkeletonPose {
  std::vector<Quat> rotations;  // parent-relative, unit
  Vec3 root_position;           // mm, camera frame
  double timestamp = 0;         // seconds
  std::vector<bool> flagged;    // joints whose bone could not be observed
};

// ---------------------------------------------------------------------------
inline std::vector<Vec3> fk_positions(const Skeleton& sk, const SkeletonPose& pose) {
  const size_t n = sk.joints.size();
  std::vector<Vec3> pos(n);
  std::vector<Quat> global(n);
  for (size_t j = 0; j < n; ++j) {
    const int p = sk.joints[j].parent;
    if (p < 0) {
      global[j] = pose.rotations[j];
      pos[j] = pose.root_position;
    } else {
      global[j] = global[p] * pose.rotations[j];
      pos[j] = pos[p] + global[j].rotate(sk.joints[j].rest_offset);
    }
  }
  return pos;
}

// Positions-only IK: root orientation from a torso frame fit, then per bone
// the swing aligning the rest direction with the observed direction.
inline SkeletonPose ik_solve(const Skeleton& sk, const Tensor<double>& pose3d /* J x 3 mm */) {
  const size_t n = sk.joints.size();
  if (pose3d.rank() != 2 || static_cast<size_t>(pose3d.dim(0)) != n || pose3d.dim(1) != 3)
    throw std::invalid_argument("ik_solve expects " + std::to_string(n) + " x 3 pose, got " +
                                pose3d.shape().str());
  auto P = [&](int j) {
    return Vec3{pose3d.at({j, 0}), pose3d.at({j, 1}), pose3d.at({j, 2})};
  };
  for (int64_t i = 0; i < pose3d.numel(); ++i)
    if (!std::isfinite(pose3d.data()[i]))
      throw std::invalid_argument("ik_solve: non-finite joint position");

  SkeletonPose out;
  out.rotations.assign(n, Quat::identity());
  out.flagged.assign(n, false);

  const auto rest = sk.rest_positions();
  auto frame = [](Vec3 up, Vec3 lateral) {
    const Vec3 u1 = up.normalized();
    Vec3 u2 = (lateral - u1 * lateral.dot(u1));
    u2 = u2.normalized();
    const Vec3 u3 = u1.cross(u2);
    return std::array<Vec3, 3>{u1, u2, u3};
  };
  const int neck = 1, l_hip = 9, r_hip = 12;
  const Vec3 obs_up = P(neck) - P(0);
  const Vec3 obs_lat = P(r_hip) - P(l_hip);
  if (obs_up.norm() > 1e-9 && obs_up.cross(obs_lat).norm() > 1e-9) {
    const auto fo = frame(obs_up, obs_lat);
    const auto fr = frame(rest[neck] - rest[0], rest[r_hip] - rest[l_hip]);
    // R = Fo * Fr^T, assembled column by column
    auto col = [&](int i) {
      return Vec3{fo[0].x * (i == 0 ? fr[0].x : i == 1 ? fr[0].y : fr[0].z) +
                      fo[1].x * (i == 0 ? fr[1].x : i == 1 ? fr[1].y : fr[1].z) +
                      fo[2].x * (i == 0 ? fr[2].x : i == 1 ? fr[2].y : fr[2].z),
                  fo[0].y * (i == 0 ? fr[0].x : i == 1 ? fr[0].y : fr[0].z) +
                      fo[1].y * (i == 0 ? fr[1].x : i == 1 ? fr[1].y : fr[1].z) +
                      fo[2].y * (i == 0 ? fr[2].x : i == 1 ? fr[2].y : fr[2].z),
                  fo[0].z * (i == 0 ? fr[0].x : i == 1 ? fr[0].y : fr[0].z) +
                      fo[1].z * (i == 0 ? fr[1].x : i == 1 ? fr[1].y : fr[1].z) +
                      fo[2].z * (i == 0 ? fr[2].x : i == 1 ? fr[2].y : fr[2].z)};
    };
    out.rotations[0] = Quat::from_matrix_cols(col(0), col(1), col(2));
  } else {
    out.flagged[0] = true;
  }

  std::vector<Quat> global(n);
  global[0] = out.rotations[0];
  for (size_t j = 1; j < n; ++j) {
    const int p = sk.joints[j].parent;
    const Vec3 target = P(static_cast<int>(j)) - P(p);
    if (target.norm() < 1e-9) {
      out.rotations[j] = Quat::identity();  // zero-length bone: keep rest
      out.flagged[j] = true;
    } else {
      const Vec3 local_target = global[p].conj().rotate(target);
      out.rotations[j] = Quat::shortest_arc(sk.joints[j].rest_offset, local_target);
    }
    global[j] = global[p] * out.rotations[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
struct JointLimit {
  double cone_deg = 180;        // swing cone half-angle about the rest bone
  double twist_min_deg = -180;  // twist range about the bone axis
  double twist_max_deg = 180;
};

struct JointLimits {
  std::vector<JointLimit> per_joint;

  static JointLimits defaults(const Skeleton& sk) {
    JointLimits l;
    l.per_joint.assign(sk.joints.size(), JointLimit{});
    auto set = [&](const std::string& name, double cone, double tmin, double tmax) {
      l.per_joint[sk.joint_index(name)] = {cone, tmin, tmax};
    };
    set("pelvis", 180, -180, 180);
    set("neck", 30, -45, 45);
    set("head", 60, -60, 60);
    for (const char* s : {"l_shoulder", "r_shoulder"}) set(s, 150, -45, 45);
    for (const char* s : {"l_elbow", "r_elbow"}) set(s, 150, -45, 45);
    for (const char* s : {"l_wrist", "r_wrist"}) set(s, 60, -45, 45);
    for (const char* s : {"l_hip", "r_hip"}) set(s, 120, -45, 45);
    for (const char* s : {"l_knee", "r_knee"}) set(s, 150, -45, 45);
    for (const char* s : {"l_ankle", "r_ankle"}) set(s, 60, -45, 45);
    return l;
  }

  // "joint name, cone deg, twist min deg, twist max deg" per line.
  static JointLimits load(const Skeleton& sk, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open joint-limit table: " + path);
    JointLimits l = defaults(sk);
    std::string line;
    while (std::getline(is, line)) {
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      std::istringstream ss(line);
      std::string name, tok;
      if (!std::getline(ss, name, ',')) continue;
      name.erase(0, name.find_first_not_of(" \t"));
      auto e = name.find_last_not_of(" \t");
      if (e == std::string::npos) continue;
      name.erase(e + 1);
      if (name.empty()) continue;
      JointLimit jl;
      if (!std::getline(ss, tok, ',')) throw std::runtime_error(path + ": bad line: " + line);
      jl.cone_deg = std::stod(tok);
      if (!std::getline(ss, tok, ',')) throw std::runtime_error(path + ": bad line: " + line);
      jl.twist_min_deg = std::stod(tok);
      if (!std::getline(ss, tok)) throw std::runtime_error(path + ": bad line: " + line);
      jl.twist_max_deg = std::stod(tok);
      if (jl.cone_deg <= 0 || jl.cone_deg > 180)
        throw std::runtime_error(path + ": cone out of (0,180] for " + name);
      l.per_joint[sk.joint_index(name)] = jl;
    }
    return l;
  }

  void save(const Skeleton& sk, const std::string& path) const {
    std::ofstream os(path);
    os << "# joint name, swing cone half-angle (deg), twist min (deg), twist max (deg)\n";
    for (size_t j = 0; j < sk.joints.size(); ++j)
      os << sk.joints[j].name << ", " << per_joint[j].cone_deg << ", "
         << per_joint[j].twist_min_deg << ", " << per_joint[j].twist_max_deg << "\n";
  }
};

// Swing-twist decomposition about `axis` (unit): q = swing * twist.
inline void swing_twist(const Quat& q, const Vec3& axis, Quat& swing, Quat& twist) {
  const Vec3 v{q.x, q.y, q.z};
  const double proj = v.dot(axis);
  twist = Quat{q.w, axis.x * proj, axis.y * proj, axis.z * proj};
  const double n = twist.norm();
  twist = n < 1e-15 ? Quat::identity() : twist.normalized();
  swing = q * twist.conj();
}

inline SkeletonPose clamp_limits(const SkeletonPose& pose, const Skeleton& sk,
                                 const JointLimits& limits) {
  constexpr double kPi = 3.14159265358979323846;
  SkeletonPose out = pose;
  for (size_t j = 0; j < sk.joints.size(); ++j) {
    const Quat q = pose.rotations[j].normalized();
    // twist axis: the joint's rest bone (spine bone direction for the root)
    const Vec3 bone = j == 0 ? sk.joints[1].rest_offset : sk.joints[j].rest_offset;
    const Vec3 axis = bone.normalized();
    Quat swing, twist;
    swing_twist(q, axis, swing, twist);
    if (swing.w < 0) swing = {-swing.w, -swing.x, -swing.y, -swing.z};  // same rotation
    const Vec3 tv{twist.x, twist.y, twist.z};
    double twist_angle = 2.0 * std::atan2(tv.dot(axis), twist.w);
    if (twist_angle > kPi) twist_angle -= 2 * kPi;
    if (twist_angle < -kPi) twist_angle += 2 * kPi;
    const double swing_angle = 2.0 * std::acos(std::clamp(swing.w, -1.0, 1.0));

    const JointLimit& lim = limits.per_joint[j];
    const double cone = lim.cone_deg * kPi / 180.0;
    const double tmin = lim.twist_min_deg * kPi / 180.0;
    const double tmax = lim.twist_max_deg * kPi / 180.0;
    if (swing_angle <= cone && twist_angle >= tmin && twist_angle <= tmax) {
      out.rotations[j] = pose.rotations[j];  // inside limits: untouched
      continue;
    }
    Quat new_swing = swing;
    if (swing_angle > cone) {
      Vec3 saxis{swing.x, swing.y, swing.z};
      const double sn = saxis.norm();
      new_swing = sn < 1e-15 ? Quat::identity()
                             : Quat::from_axis_angle(saxis * (1.0 / sn), cone);
    }
    const double tcl = std::clamp(twist_angle, tmin, tmax);
    const Quat new_twist = Quat::from_axis_angle(axis, tcl);
    out.rotations[j] = (new_swing * new_twist).normalized();
  }
  return out;
}

}  // namespace movnect
