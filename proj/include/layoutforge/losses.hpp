#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "layoutforge/common.hpp"
#include "layoutforge/meshkit.hpp"
#include "layoutforge/pose.hpp"
#include "layoutforge/scene_model.hpp"
#include "layoutforge/sdfgrid.hpp"

namespace layoutforge {

struct LossWeights {
  double pose = 1.0;
  /// Pixel-residual weight; unset means 1 / (image diagonal)^2.
  std::optional<double> two_d;
  double three_d = 1.0;
  double trans = 1.0;
  double scale = 1.0;
  double stab = 1.0;

  double resolved_two_d(const Camera* camera) const {
    if (two_d) return *two_d;
    if (camera == nullptr || !(camera->diagonal() > 0.0)) return 0.0;
    return 1.0 / (camera->diagonal() * camera->diagonal());
  }

  /// All weights nonnegative and at least one positive.
  bool valid() const {
    const double w2 = two_d.value_or(0.0);
    const double all[] = {pose, w2, three_d, trans, scale, stab};
    bool any = false;
    for (double w : all) {
      if (!(w >= 0.0) || !std::isfinite(w)) return false;
      any = any || w > 0.0;
    }
    return any || !two_d;
  }
};

struct LossValue {
  double value = 0.0;
  PoseGradient gradient = PoseGradient::Zero();

  LossValue& operator+=(const LossValue& o) {
    value += o.value;
    gradient += o.gradient;
    return *this;
  }
  friend LossValue operator*(double w, LossValue v) {
    v.value *= w;
    v.gradient *= w;
    return v;
  }
};

/// Indices of the top-m pairs by confidence among those with confidence >= tau.
/// Equal confidences keep input order.
inline std::vector<std::size_t> select_pairs(std::span<const CorrespondencePair> pairs, std::size_t m, double tau) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].confidence >= tau) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return pairs[a].confidence > pairs[b].confidence; });
  if (idx.size() > m) idx.resize(m);
  return idx;
}

/// Correspondence alignment loss: weighted mean squared 3D and pixel residuals.
inline LossValue pose_loss(std::span<const CorrespondencePair> pairs, const Pose5DoF& pose, const Camera* camera,
                           std::size_t m, double tau, const LossWeights& weights) {
  const auto idx = select_pairs(pairs, m, tau);
  if (idx.empty()) throw PreconditionError("pose_loss: no correspondence with confidence >= tau");
  const double w2 = weights.resolved_two_d(camera);
  const double w3 = weights.three_d;
  if (w2 > 0.0 && camera == nullptr) throw PreconditionError("pose_loss: pixel term needs a camera");
  const double inv_n = 1.0 / static_cast<double>(idx.size());
  LossValue out;
  for (std::size_t i : idx) {
    const auto& c = pairs[i];
    const Vec3 x = pose.apply(c.p_local);
    const PointJacobian j = pose.jacobian(c.p_local);
    if (w3 > 0.0) {
      const Vec3 r = x - c.q_world;
      out.value += w3 * inv_n * r.squaredNorm();
      out.gradient += w3 * inv_n * 2.0 * (j.transpose() * r);
    }
    if (w2 > 0.0) {
      const Vec3 xc = camera->to_camera(x);
      if (!(xc.z() > 0.0)) throw PreconditionError("pose_loss: correspondence behind camera");
      const Vec2 e(camera->fx * xc.x() / xc.z() + camera->cx - c.q_pixel.x(),
                   camera->fy * xc.y() / xc.z() + camera->cy - c.q_pixel.y());
      Eigen::Matrix<double, 2, 3> dpi;
      dpi << camera->fx / xc.z(), 0.0, -camera->fx * xc.x() / (xc.z() * xc.z()), 0.0, camera->fy / xc.z(),
          -camera->fy * xc.y() / (xc.z() * xc.z());
      const Eigen::Matrix<double, 2, 5> jp = dpi * camera->rotation.transpose() * j;
      out.value += w2 * inv_n * e.squaredNorm();
      out.gradient += w2 * inv_n * 2.0 * (jp.transpose() * e);
    }
  }
  return out;
}

/// One surface point found at or inside the scene.
struct CollidedPoint {
  Vec3 world = Vec3::Zero();
  double d = 0.0;                     // SDF value, <= 0
  Vec3 to_centroid = Vec3::Zero();    // unnormalized, point -> posed centroid
  Vec3 direction = Vec3::Zero();      // unit push direction
};

struct CollisionState {
  std::vector<CollidedPoint> points;
  int n_cluster = 0;
  /// Points whose centroid direction was degenerate and fell back to the SDF gradient.
  int degenerate_directions = 0;
};

/// Cluster link radius as a multiple of the mean nearest-neighbor spacing of
/// the surface samples. Random samples link up into one component per contact
/// patch only well above the 2D percolation threshold (mean degree ~4.5); at
/// 2x the mean degree is ~3 and a single patch splits into many pieces.
inline constexpr double kClusterLinkFactor = 5.0;

/// Single-linkage components of points under the "within radius" relation.
inline int count_clusters(std::span<const Vec3> pts, double radius) {
  std::vector<std::size_t> parent(pts.size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  const double r2 = radius * radius;
  int components = static_cast<int>(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      if ((pts[i] - pts[j]).squaredNorm() > r2) continue;
      const std::size_t a = find(i), b = find(j);
      if (a != b) {
        parent[std::max(a, b)] = std::min(a, b);
        --components;
      }
    }
  }
  return components;
}

namespace detail {

inline std::optional<CollidedPoint> collided_point(const Vec3& world, double d, const Vec3& centroid_world,
                                                   const SceneSdf* scene, int& degenerate) {
  if (!(d <= 0.0)) return std::nullopt;
  CollidedPoint cp;
  cp.world = world;
  cp.d = d;
  cp.to_centroid = centroid_world - world;
  const double len = cp.to_centroid.norm();
  if (len >= 1e-9) {
    cp.direction = cp.to_centroid / len;
  } else {
    ++degenerate;
    const Vec3 g = scene != nullptr ? scene->query_gradient(world) : Vec3::UnitZ();
    cp.direction = g.norm() > 0.0 ? Vec3(g.normalized()) : Vec3::UnitZ();
  }
  return cp;
}

}  // namespace detail

/// Posed points with scene SDF <= 0, without cluster analysis.
inline CollisionState collect_collisions(std::span<const Vec3> points_local, const Pose5DoF& pose,
                                         const SceneSdf& scene, const Vec3& centroid_local) {
  CollisionState state;
  const Vec3 c = pose.apply(centroid_local);
  for (const auto& p : points_local) {
    const Vec3 w = pose.apply(p);
    if (auto cp = detail::collided_point(w, scene.query(w), c, &scene, state.degenerate_directions)) {
      state.points.push_back(*cp);
    }
  }
  return state;
}

/// Posed samples with scene SDF <= 0, plus their cluster count.
inline CollisionState detect_collisions(std::span<const Vec3> samples_local, const Pose5DoF& pose,
                                        const SceneSdf& scene, const Vec3& centroid_local, double link_radius) {
  CollisionState state = collect_collisions(samples_local, pose, scene, centroid_local);
  std::vector<Vec3> hits;
  hits.reserve(state.points.size());
  for (const auto& p : state.points) hits.push_back(p.world);
  state.n_cluster = count_clusters(hits, link_radius);
  return state;
}

inline CollisionState detect_collisions(const SurfaceSamples& samples, const Pose5DoF& pose, const SceneSdf& scene,
                                        const Vec3& centroid_local, double link_radius) {
  return detect_collisions(std::span<const Vec3>(samples.points), pose, scene, centroid_local, link_radius);
}

/// Points of already placed objects that sit inside the moving object,
/// measured with the moving object's own SDF built in its local frame.
/// The push direction is the same as for the object's own points: toward
/// its posed centroid.
inline CollisionState detect_intrusions(std::span<const Vec3> foreign_world, const Pose5DoF& pose,
                                        const GridSdf& self_local, const Vec3& centroid_local) {
  CollisionState state;
  const Vec3 c = pose.apply(centroid_local);
  const Aabb local_box = self_local.bounds();
  std::vector<Vec3> hits;
  for (const auto& q : foreign_world) {
    const Vec3 xl = pose.inverse_apply(q);
    if (!local_box.contains(xl)) continue;
    const double d = pose.scale * query(self_local, xl);
    if (auto cp = detail::collided_point(q, d, c, nullptr, state.degenerate_directions)) {
      state.points.push_back(*cp);
      hits.push_back(q);
    }
  }
  state.n_cluster = hits.empty() ? 0 : 1;
  return state;
}

/// Pull toward the detached targets T + u|d|; value is the sum of d^2.
inline LossValue translation_collision_loss(const CollisionState& state, const Pose5DoF& /*pose*/) {
  LossValue out;
  for (const auto& p : state.points) {
    out.value += p.d * p.d;
    out.gradient.segment<3>(kTx) += -2.0 * std::abs(p.d) * p.direction;
  }
  return out;
}

struct ScaleLossDiagnostics {
  int skipped_short_u = 0;
};

/// Shrink toward per-point target scales; only active with more than one
/// collision cluster.
inline LossValue scale_collision_loss(const CollisionState& state, const Pose5DoF& pose,
                                      ScaleLossDiagnostics* diag = nullptr) {
  LossValue out;
  if (state.n_cluster <= 1) return out;
  const double s = pose.scale;
  for (const auto& p : state.points) {
    const double len = p.to_centroid.norm();
    if (len < 1e-9) {
      if (diag != nullptr) ++diag->skipped_short_u;
      continue;
    }
    const double g = (len - std::abs(p.d)) / len;
    const double target = g * s;
    out.value += (target - s) * (target - s);
    out.gradient[kScale] += 2.0 * (s - target);
  }
  return out;
}

/// Contact loss over bottom-face points against the parent's SDF, with the
/// gradient chained through each point's pose Jacobian.
inline LossValue stability_loss(const BottomPoints& bottom, const SdfField& parent) {
  if (bottom.points.empty()) throw PreconditionError("stability_loss: no bottom points");
  LossValue out;
  for (std::size_t i = 0; i < bottom.points.size(); ++i) {
    const SdfSample s = field_sample(parent, bottom.points[i]);
    const double e = std::exp(-s.value * s.value);
    out.value += 1.0 - e;
    out.gradient += 2.0 * s.value * e * (bottom.jacobians[i].transpose() * s.gradient);
  }
  return out;
}

/// Same loss for bare world points; only the translation part of the
/// gradient is available without Jacobians.
inline LossValue stability_loss(std::span<const Vec3> bottom, const SdfField& parent) {
  BottomPoints b;
  b.points.assign(bottom.begin(), bottom.end());
  PointJacobian j = PointJacobian::Zero();
  j.block<3, 3>(0, kTx).setIdentity();
  b.jacobians.assign(bottom.size(), j);
  return stability_loss(b, parent);
}

enum class Stage { kAlignment, kPhysics };

inline std::string_view to_string(Stage s) { return s == Stage::kAlignment ? "alignment" : "physics"; }

/// Everything about one node that stays fixed while its pose is optimized.
struct NodeGeometry {
  const TriangleMesh* mesh = nullptr;
  Vec3 centroid_local = Vec3::Zero();
  std::vector<Vec3> samples_local;
  /// Extra collision probes on vertices and sharp edges (translation term only).
  std::vector<Vec3> probes_local;
  /// Cluster link radius in local units (scaled by the pose at use).
  double link_radius_local = 0.0;
  BottomLayout bottom;
  std::span<const CorrespondencePair> pairs;
  const Camera* camera = nullptr;
  /// Probe points of placed objects, tested against `self_sdf`.
  std::vector<Vec3> foreign_probes;
  std::shared_ptr<const GridSdf> self_sdf;
};

struct PoseLossOptions {
  std::size_t m_pairs = 100;
  double tau = 0.6;
};

struct LossBreakdown {
  LossValue total;
  double pose = 0.0;
  double trans = 0.0;
  double scale = 0.0;
  double stab = 0.0;
  int n_cluster = 0;
  int collided = 0;
};

/// Stage-gated weighted sum: alignment uses the pose term only; physics uses
/// translation, scale and stability terms.
inline LossBreakdown total_loss(const NodeGeometry& node, const Pose5DoF& pose, const SceneSdf& scene,
                                const SdfField& parent, const LossWeights& weights, Stage stage,
                                const PoseLossOptions& opts = {}) {
  LossBreakdown out;
  if (stage == Stage::kAlignment) {
    if (weights.pose > 0.0) {
      const LossValue lp = pose_loss(node.pairs, pose, node.camera, opts.m_pairs, opts.tau, weights);
      out.pose = lp.value;
      out.total += weights.pose * lp;
    }
    return out;
  }
  if (weights.trans > 0.0 || weights.scale > 0.0) {
    const double radius = node.link_radius_local * pose.scale;
    const CollisionState samples = detect_collisions(node.samples_local, pose, scene, node.centroid_local, radius);
    out.n_cluster = samples.n_cluster;
    out.collided = static_cast<int>(samples.points.size());
    if (weights.scale > 0.0) {
      const LossValue ls = scale_collision_loss(samples, pose);
      out.scale = ls.value;
      out.total += weights.scale * ls;
    }
    if (weights.trans > 0.0) {
      LossValue lt = translation_collision_loss(samples, pose);
      if (!node.probes_local.empty()) {
        lt += translation_collision_loss(collect_collisions(node.probes_local, pose, scene, node.centroid_local), pose);
      }
      if (node.self_sdf && !node.foreign_probes.empty()) {
        lt += translation_collision_loss(
            detect_intrusions(node.foreign_probes, pose, *node.self_sdf, node.centroid_local), pose);
      }
      out.trans = lt.value;
      out.total += weights.trans * lt;
    }
  }
  if (weights.stab > 0.0) {
    const LossValue lb = stability_loss(posed_bottom_points(*node.mesh, pose, node.bottom), parent);
    out.stab = lb.value;
    out.total += weights.stab * lb;
  }
  return out;
}

}  // namespace layoutforge
