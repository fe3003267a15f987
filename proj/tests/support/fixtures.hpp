#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "layoutforge/layoutforge.hpp"

namespace lf_test {

using namespace layoutforge;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("layoutforge_test_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline Pose5DoF pose_at(const Vec3& t, double scale = 1.0, double yaw = 0.0) {
  Pose5DoF p;
  p.scale = scale;
  p.yaw = normalize_yaw(yaw);
  p.translation = t;
  return p;
}

inline SceneNode make_node(std::string id, std::string mesh_ref, const Pose5DoF& pose,
                           std::string parent = std::string(kGroundId), Role role = Role::kParent) {
  SceneNode n;
  n.id = std::move(id);
  n.mesh_ref = std::move(mesh_ref);
  n.pose = pose;
  n.parent_id = std::move(parent);
  n.role = role;
  return n;
}

/// Camera at `eye` looking at `target`, vision axes (x right, y down, z forward).
inline Camera look_at_camera(const Vec3& eye, const Vec3& target, double width, double height, double focal) {
  Camera c;
  c.fx = c.fy = focal;
  c.cx = 0.5 * width;
  c.cy = 0.5 * height;
  c.width = width;
  c.height = height;
  const Vec3 f = (target - eye).normalized();
  const Vec3 x = f.cross(Vec3::UnitZ()).normalized();
  const Vec3 y = f.cross(x);
  c.rotation.col(0) = x;
  c.rotation.col(1) = y;
  c.rotation.col(2) = f;
  c.translation = eye;
  return c;
}

/// Ground plus one anchor unit cube resting at the origin.
inline SceneBundle cube_on_ground(const Pose5DoF& pose = {}) {
  SceneBundle b;
  b.meshes["cube.obj"] = primitives::unit_cube();
  b.graph.nodes.push_back(make_node("cube", "cube.obj", pose, std::string(kGroundId), Role::kAnchor));
  return b;
}

/// Noiseless correspondences generated from `truth`.
inline std::vector<CorrespondencePair> exact_pairs(const TriangleMesh& mesh, const Pose5DoF& truth,
                                                   const Camera* cam, std::size_t n, std::uint64_t seed,
                                                   double conf_lo = 1.0, double conf_hi = 1.0) {
  const auto s = sample_surface(mesh, n, seed);
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  std::uniform_real_distribution<double> conf(conf_lo, conf_hi);
  std::vector<CorrespondencePair> out;
  for (const auto& p : s.points) {
    CorrespondencePair c;
    c.p_local = p;
    c.q_world = truth.apply(p);
    c.q_pixel = cam != nullptr ? cam->project(c.q_world) : Vec2::Zero();
    c.confidence = conf_lo == conf_hi ? conf_lo : conf(rng);
    out.push_back(c);
  }
  return out;
}

/// One randomized room: ground-truth layout, the pose a perfect alignment
/// would produce ("guidance", slightly off physically) and the raw start.
struct SyntheticScene {
  SceneBundle bundle;  // raw poses + correspondences toward the guidance poses
  std::map<std::string, Pose5DoF> truth;
  std::map<std::string, Pose5DoF> guidance;
};

inline SyntheticScene make_synthetic_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed * 7919 + 17);
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  auto coin = [&](double p) { return uni(0.0, 1.0) < p; };

  SyntheticScene sc;
  SceneBundle& b = sc.bundle;
  b.floor = Floor{{-4.0, -4.0}, {4.0, 4.0}, {}};
  b.camera = look_at_camera({4.0, -4.0, 5.0}, {0.0, 0.0, 0.0}, 1024, 768, 600);

  const int total = 5 + static_cast<int>(rng() % 6);
  const int children = std::min(total - 3, 1 + static_cast<int>(rng() % 3));
  const int floor_count = total - children;

  struct Placed {
    std::string id;
    Vec2 center;
    double radius;
    bool is_box;
    Vec3 size;  // box size or (2r, 2r, h) for cylinders
    double yaw;
  };
  std::vector<Placed> placed;
  for (int i = 0; i < floor_count; ++i) {
    const bool is_box = i == 0 || coin(0.6);
    Vec3 size;
    TriangleMesh mesh;
    if (i == 0) {
      size = Vec3(uni(0.8, 1.2), uni(0.6, 1.0), uni(0.4, 0.9));
      mesh = primitives::box(size);
    } else if (is_box) {
      size = Vec3(uni(0.5, 1.2), uni(0.4, 1.0), uni(0.4, 0.9));
      mesh = primitives::box(size);
    } else {
      const double r = uni(0.2, 0.45);
      size = Vec3(2 * r, 2 * r, uni(0.3, 1.0));
      mesh = primitives::cylinder(r, size.z());
    }
    const double radius = 0.5 * std::hypot(size.x(), size.y());
    Vec2 c;
    for (int attempt = 0;; ++attempt) {
      c = Vec2(uni(-3.2, 3.2), uni(-3.2, 3.2));
      bool ok = std::abs(c.x()) + radius < 3.6 && std::abs(c.y()) + radius < 3.6;
      for (const auto& p : placed) ok = ok && (c - p.center).norm() > radius + p.radius + 0.05;
      if (ok || attempt > 2000) break;
    }
    const std::string id = "obj" + std::to_string(i);
    const std::string ref = "meshes/" + id + ".obj";
    b.meshes[ref] = mesh;
    const double yaw = uni(0.0, kTwoPi);
    b.graph.nodes.push_back(make_node(id, ref, pose_at({c.x(), c.y(), 0.0}, 1.0, yaw), std::string(kGroundId),
                                      i == 0 ? Role::kAnchor : Role::kParent));
    placed.push_back({id, c, radius, is_box, size, yaw});
  }
  // Children sit well inside the top of a box parent.
  for (int k = 0; k < children; ++k) {
    std::vector<const Placed*> hosts;
    for (const auto& p : placed) {
      if (p.is_box && p.size.x() > 0.5 && p.size.y() > 0.45) hosts.push_back(&p);
    }
    const Placed& host = *hosts[rng() % hosts.size()];
    const Vec3 size(uni(0.1, 0.2), uni(0.1, 0.2), uni(0.1, 0.3));
    const double r = 0.5 * std::hypot(size.x(), size.y());
    // Stay at least one child radius (plus slack for pose errors) from the edge.
    const double mx = std::max(0.0, 0.5 * host.size.x() - r - 0.08);
    const double my = std::max(0.0, 0.5 * host.size.y() - r - 0.08);
    const Vec3 local(uni(-mx, mx), uni(-my, my), host.size.z());
    const Vec3 world = yaw_rotation(host.yaw) * local + Vec3(host.center.x(), host.center.y(), 0.0);
    const std::string id = "child" + std::to_string(k);
    const std::string ref = "meshes/" + id + ".obj";
    b.meshes[ref] = primitives::box(size);
    b.graph.nodes.push_back(make_node(id, ref, pose_at(world, 1.0, uni(0.0, kTwoPi)), host.id, Role::kChild));
  }

  for (auto& n : b.graph.nodes) {
    const Pose5DoF truth = n.pose;
    const double extent = b.meshes.at(n.mesh_ref).bounds().extent().maxCoeff();
    const bool child = !n.on_ground();
    sc.truth[n.id] = truth;

    // Guidance: what a perfect alignment lands on. Slightly off in height,
    // scale and yaw; some floor objects are pushed sideways a little.
    Pose5DoF g = truth;
    g.scale = truth.scale * uni(0.95, 1.05);
    g.yaw = normalize_yaw(truth.yaw + uni(-3.0, 3.0) * kPi / 180.0);
    g.translation.z() += uni(-0.03, 0.08);
    if (!child && coin(0.4)) {
      const double a = uni(0.0, kTwoPi);
      g.translation += uni(0.05, 0.15) * extent * Vec3(std::cos(a), std::sin(a), 0.0);
    }
    if (child) {
      const double a = uni(0.0, kTwoPi);
      g.translation += uni(0.0, 0.02) * Vec3(std::cos(a), std::sin(a), 0.0);
    }
    sc.guidance[n.id] = g;

    // Raw start: large errors in every parameter.
    Pose5DoF raw = truth;
    raw.scale = truth.scale * uni(0.85, 1.15);
    raw.yaw = normalize_yaw(truth.yaw + uni(-20.0, 20.0) * kPi / 180.0);
    const double lim = (child ? 0.15 : 0.3) * extent;
    const double a = uni(0.0, kTwoPi);
    raw.translation += uni(0.0, lim) * Vec3(std::cos(a), std::sin(a), 0.0);
    raw.translation.z() += child ? uni(-0.05, 0.1) : uni(-0.15, 0.15);
    n.pose = raw;

    b.correspondences[n.id] =
        exact_pairs(b.meshes.at(n.mesh_ref), g, &*b.camera, 150, seed * 1000 + fnv1a(n.id), 0.3, 1.0);
  }
  return sc;
}

}  // namespace lf_test
