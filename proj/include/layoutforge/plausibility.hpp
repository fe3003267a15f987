#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "layoutforge/common.hpp"
#include "layoutforge/geometry.hpp"
#include "layoutforge/meshkit.hpp"
#include "layoutforge/scene_model.hpp"
#include "layoutforge/sdfgrid.hpp"

namespace layoutforge {

struct PlausibilityOptions {
  double agent_radius = 0.25;
  double cell = 0.05;
  /// Stability contact tolerance; unset means each object's grid spacing.
  /// Collision tolerance is half of it.
  std::optional<double> contact_tol;
  /// Grid resolution that defines an object's spacing (longest extent / resolution).
  int resolution = 64;
  std::size_t bottom_k = kDefaultBottomSamples;
};

/// Grid spacing an object of this posed mesh would get.
inline double object_spacing(const TriangleMesh& posed, int resolution) {
  return posed.bounds().extent().maxCoeff() / resolution;
}

struct PairCollision {
  bool collided = false;
  double penetration = 0.0;  // meters, >= 0
  bool triangles_intersect = false;
};

namespace detail {

/// Deepest point of `tri` inside the field, by pattern search over
/// barycentric coordinates started from the best of a few seeds.
inline double deepest_in_triangle(const std::array<Vec3, 3>& tri, const MeshDistanceField& field,
                                  std::span<const Vec2> seeds) {
  auto at = [&](const Vec2& bc) { return (1.0 - bc.x() - bc.y()) * tri[0] + bc.x() * tri[1] + bc.y() * tri[2]; };
  auto depth = [&](const Vec2& bc) { return -field.signed_distance(at(bc)); };
  Vec2 best = seeds.front();
  double best_d = depth(best);
  for (const auto& s : seeds.subspan(1)) {
    const double d = depth(s);
    if (d > best_d) {
      best_d = d;
      best = s;
    }
  }
  const Vec2 dirs[6] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, -1}, {-1, 1}};
  for (double step = 0.125; step > 1e-7;) {
    bool moved = false;
    for (const auto& d : dirs) {
      Vec2 c = best + step * d;
      if (c.x() < 0.0 || c.y() < 0.0 || c.x() + c.y() > 1.0) {
        c = c.cwiseMax(0.0);
        if (c.sum() > 1.0) c /= c.sum();
      }
      const double v = depth(c);
      if (v > best_d + 1e-15) {
        best_d = v;
        best = c;
        moved = true;
      }
    }
    if (!moved) step *= 0.5;
  }
  return best_d;
}

/// Largest depth of `a`'s surface inside `b_field`, considering only
/// triangles close enough to `b` to possibly reach inside it.
inline double max_depth(const TriangleMesh& a, const MeshDistanceField& b_field, const Aabb& b_box) {
  static const Vec2 seeds[] = {{0, 0},       {1, 0},       {0, 1},       {1.0 / 3, 1.0 / 3}, {0.5, 0},
                               {0.5, 0.5},   {0, 0.5},     {2.0 / 3, 1.0 / 6}, {1.0 / 6, 2.0 / 3}, {1.0 / 6, 1.0 / 6}};
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < a.faces.size(); ++f) {
    const auto tri = a.triangle(f);
    Aabb tb;
    for (const auto& v : tri) tb.expand(v);
    if (!tb.overlaps(b_box)) continue;
    const double diam = std::max({(tri[1] - tri[0]).norm(), (tri[2] - tri[1]).norm(), (tri[0] - tri[2]).norm()});
    double seed_best = -std::numeric_limits<double>::infinity();
    for (const auto& s : seeds) {
      const Vec3 p = (1.0 - s.x() - s.y()) * tri[0] + s.x() * tri[1] + s.y() * tri[2];
      seed_best = std::max(seed_best, -b_field.signed_distance(p));
    }
    // A triangle whose every seed is farther outside than its own size
    // cannot reach inside.
    if (seed_best < -diam) {
      best = std::max(best, seed_best);
      continue;
    }
    best = std::max(best, deepest_in_triangle(tri, b_field, seeds));
  }
  return best;
}

}  // namespace detail

/// Exact collision test on posed meshes. Two meshes collide when their
/// surfaces intersect (or one contains the other) and the deepest surface
/// point of either mesh inside the other exceeds `tol`.
inline PairCollision exact_pair_collision_posed(const TriangleMesh& a, const TriangleMesh& b, double tol,
                                                const MeshDistanceField* fa = nullptr,
                                                const MeshDistanceField* fb = nullptr) {
  PairCollision out;
  const Aabb ba = a.bounds();
  const Aabb bb = b.bounds();
  if (!ba.overlaps(bb)) return out;
  std::optional<MeshDistanceField> own_a, own_b;
  if (fa == nullptr) fa = &own_a.emplace(a);
  if (fb == nullptr) fb = &own_b.emplace(b);
  out.triangles_intersect = fa->bvh().intersects(fb->bvh()) || fb->bvh().intersects(fa->bvh());
  const bool contained = fb->signed_distance(a.vertices.front()) < 0.0 || fa->signed_distance(b.vertices.front()) < 0.0;
  if (!out.triangles_intersect && !contained) return out;
  const double depth = std::max(detail::max_depth(a, *fb, bb), detail::max_depth(b, *fa, ba));
  out.penetration = std::max(0.0, depth);
  out.collided = out.penetration > tol;
  return out;
}

/// Pair test with the default tolerance: half the coarser grid spacing of the two objects.
inline PairCollision exact_pair_collision(const TriangleMesh& mesh_a, const Pose5DoF& pose_a,
                                          const TriangleMesh& mesh_b, const Pose5DoF& pose_b,
                                          std::optional<double> tol = std::nullopt, int resolution = 64) {
  const TriangleMesh a = apply_pose(mesh_a, pose_a);
  const TriangleMesh b = apply_pose(mesh_b, pose_b);
  const double t = tol.value_or(0.5 * std::max(object_spacing(a, resolution), object_spacing(b, resolution)));
  return exact_pair_collision_posed(a, b, t);
}

/// Analytic ground or an exact posed-mesh distance.
using SupportField = std::variant<GroundPlane, const MeshDistanceField*>;

inline double support_distance(const SupportField& f, const Vec3& p) {
  if (const auto* g = std::get_if<GroundPlane>(&f)) return p.z() - g->height;
  return std::get<const MeshDistanceField*>(f)->signed_distance(p);
}

struct StabilityResult {
  bool stable = false;
  int contacts = 0;
  bool support_ok = false;       // enough non-collinear contacts
  bool centroid_inside = false;  // centroid over the contact hull
  bool sunk = false;             // some bottom point below -tol
  double bottom_gap = 0.0;       // max |d| over the bottom points
};

/// Static support test: bottom-face contacts against the parent surface must
/// span an area that contains the centroid's floor projection, and nothing
/// may be sunk into the parent.
inline StabilityResult static_stability(const TriangleMesh& mesh, const Pose5DoF& pose, const SupportField& parent,
                                        double contact_tol, std::size_t k = kDefaultBottomSamples,
                                        std::uint64_t seed = 0) {
  if (k < 16) throw PreconditionError("static_stability: needs at least 16 bottom samples");
  StabilityResult r;
  const auto bottom = bottom_samples(mesh, pose, k, seed);
  std::vector<Vec2> contacts;
  for (const auto& p : bottom) {
    const double d = support_distance(parent, p);
    r.bottom_gap = std::max(r.bottom_gap, std::abs(d));
    if (d < -contact_tol) r.sunk = true;
    if (std::abs(d) <= contact_tol) contacts.emplace_back(p.x(), p.y());
  }
  r.contacts = static_cast<int>(contacts.size());
  const auto hull = geometry::convex_hull(contacts);
  double area = 0.0;
  for (std::size_t i = 1; i + 1 < hull.size(); ++i) area += 0.5 * geometry::cross2(hull[0], hull[i], hull[i + 1]);
  Vec2 lo = Vec2::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& c : contacts) {
    lo = lo.cwiseMin(c);
    hi = hi.cwiseMax(c);
  }
  const Vec2 face_lo(bottom[0].x(), bottom[0].y());
  const Vec2 face_hi(bottom[3].x(), bottom[3].y());
  const Vec2 face = face_hi - face_lo;
  const bool spans = contacts.size() >= 2 && (hi - lo).x() >= 0.5 * face.x() && (hi - lo).y() >= 0.5 * face.y();
  const double area_eps = 1e-9 * std::max(1e-12, face.x() * face.y());
  r.support_ok = (hull.size() >= 3 && area > area_eps) || spans;
  const Vec3 c = pose.apply(centroid(mesh));
  r.centroid_inside = hull.size() >= 3 && geometry::convex_polygon_contains(hull, Vec2(c.x(), c.y()), 1e-9);
  r.stable = r.support_ok && r.centroid_inside && !r.sunk;
  return r;
}

struct OccupancyGrid {
  Vec2 origin = Vec2::Zero();
  double cell = 0.0;
  std::array<int, 2> dims{0, 0};
  std::vector<std::uint8_t> occupied;

  std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * dims[0] + i; }
  Vec2 center(int i, int j) const { return origin + cell * Vec2(i + 0.5, j + 0.5); }
};

struct WalkResult {
  double walk = 0.0;
  OccupancyGrid grid;
  /// Label of the largest free component per cell (1), other free (0), occupied (-1).
  std::vector<std::int8_t> main_component;
  std::vector<std::string> diagnostics;
};

namespace detail {

/// Floor-projected convex hull of each posed node, in graph order.
inline std::vector<std::vector<Vec2>> footprints(const SceneBundle& b) {
  std::vector<std::vector<Vec2>> out;
  for (const auto& n : b.graph.nodes) {
    std::vector<Vec2> pts;
    for (const auto& v : b.mesh_of(n).vertices) {
      const Vec3 w = n.pose.apply(v);
      pts.emplace_back(w.x(), w.y());
    }
    out.push_back(geometry::convex_hull(std::move(pts)));
  }
  return out;
}

inline bool covers(const std::vector<Vec2>& hull, const Vec2& p, double r) {
  if (hull.empty()) return false;
  if (hull.size() >= 3 && geometry::convex_polygon_contains(hull, p)) return true;
  return geometry::distance_to_convex_polygon(p, hull) <= r;
}

}  // namespace detail

/// Occupancy-grid walkability: the largest 4-connected free region as a
/// fraction of all free cells.
inline WalkResult walkability(const SceneBundle& b, double agent_radius, double cell) {
  if (!(agent_radius > 0.0)) throw PreconditionError("walkability: agent_radius must be > 0");
  if (!(cell > 0.0) || cell > agent_radius) throw PreconditionError("walkability: need 0 < cell <= agent_radius");
  const auto prints = detail::footprints(b);
  Vec2 lo, hi;
  if (b.floor) {
    lo = b.floor->min;
    hi = b.floor->max;
  } else {
    lo = Vec2::Constant(std::numeric_limits<double>::infinity());
    hi = -lo;
    for (const auto& h : prints) {
      for (const auto& p : h) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
    }
  }
  if (!lo.allFinite() || !hi.allFinite() || !((hi - lo).minCoeff() > 0.0)) {
    throw PreconditionError("walkability: floor extent has zero area");
  }
  lo.array() -= agent_radius;
  hi.array() += agent_radius;
  WalkResult r;
  auto& g = r.grid;
  g.origin = lo;
  g.cell = cell;
  g.dims = {static_cast<int>(std::ceil((hi.x() - lo.x()) / cell - 1e-9)),
            static_cast<int>(std::ceil((hi.y() - lo.y()) / cell - 1e-9))};
  g.occupied.assign(static_cast<std::size_t>(g.dims[0]) * g.dims[1], 0);
  std::vector<std::vector<Vec2>> blocks = prints;
  if (b.floor) {
    for (const auto& poly : b.floor->obstacles) blocks.push_back(geometry::convex_hull(poly));
  }
  for (int j = 0; j < g.dims[1]; ++j) {
    for (int i = 0; i < g.dims[0]; ++i) {
      const Vec2 c = g.center(i, j);
      for (const auto& h : blocks) {
        if (detail::covers(h, c, agent_radius)) {
          g.occupied[g.index(i, j)] = 1;
          break;
        }
      }
    }
  }
  // Flood-fill 4-connected free components; ties keep the first found.
  std::vector<int> label(g.occupied.size(), -1);
  std::vector<std::size_t> sizes;
  std::size_t free_total = 0;
  for (int j = 0; j < g.dims[1]; ++j) {
    for (int i = 0; i < g.dims[0]; ++i) {
      const std::size_t start = g.index(i, j);
      if (g.occupied[start] || label[start] >= 0) continue;
      const int id = static_cast<int>(sizes.size());
      std::size_t count = 0;
      std::deque<std::pair<int, int>> q{{i, j}};
      label[start] = id;
      while (!q.empty()) {
        const auto [x, y] = q.front();
        q.pop_front();
        ++count;
        const int nb[4][2] = {{x + 1, y}, {x - 1, y}, {x, y + 1}, {x, y - 1}};
        for (const auto& n : nb) {
          if (n[0] < 0 || n[1] < 0 || n[0] >= g.dims[0] || n[1] >= g.dims[1]) continue;
          const std::size_t k = g.index(n[0], n[1]);
          if (g.occupied[k] || label[k] >= 0) continue;
          label[k] = id;
          q.emplace_back(n[0], n[1]);
        }
      }
      sizes.push_back(count);
      free_total += count;
    }
  }
  r.main_component.assign(g.occupied.size(), -1);
  if (free_total == 0) {
    r.walk = 0.0;
    r.diagnostics.push_back("no free space");
    return r;
  }
  const int main = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t k = 0; k < label.size(); ++k) {
    if (label[k] >= 0) r.main_component[k] = label[k] == main ? 1 : 0;
  }
  r.walk = static_cast<double>(sizes[main]) / static_cast<double>(free_total);
  return r;
}

struct ReachResult {
  double reach = 1.0;
  std::map<std::string, bool> reachable;
  std::vector<std::string> diagnostics;
};

/// An object standing on the floor is reachable when a cell of the main
/// walkable region touches (8-neighborhood) its inflated footprint. Objects
/// resting on other objects take the answer of their floor-standing ancestor.
inline ReachResult reachability(const SceneBundle& b, double agent_radius, double cell,
                                const WalkResult* precomputed = nullptr) {
  ReachResult r;
  if (b.graph.nodes.empty()) {
    r.reach = 1.0;
    r.diagnostics.push_back("no objects: reach is vacuously 1");
    return r;
  }
  std::optional<WalkResult> own;
  const WalkResult& w = precomputed != nullptr ? *precomputed : own.emplace(walkability(b, agent_radius, cell));
  const auto& g = w.grid;
  const auto prints = detail::footprints(b);
  std::map<std::string, bool> floor_reach;
  for (std::size_t n = 0; n < b.graph.nodes.size(); ++n) {
    const auto& node = b.graph.nodes[n];
    if (!node.on_ground()) continue;
    bool ok = false;
    for (int j = 0; j < g.dims[1] && !ok; ++j) {
      for (int i = 0; i < g.dims[0] && !ok; ++i) {
        if (!detail::covers(prints[n], g.center(i, j), agent_radius)) continue;
        for (int dy = -1; dy <= 1 && !ok; ++dy) {
          for (int dx = -1; dx <= 1 && !ok; ++dx) {
            const int x = i + dx, y = j + dy;
            if (x < 0 || y < 0 || x >= g.dims[0] || y >= g.dims[1]) continue;
            ok = w.main_component[g.index(x, y)] == 1;
          }
        }
      }
    }
    floor_reach[node.id] = ok;
  }
  int count = 0;
  for (const auto& node : b.graph.nodes) {
    const SceneNode* root = &node;
    for (std::size_t hops = 0; !root->on_ground() && hops <= b.graph.nodes.size(); ++hops) {
      root = b.graph.find(root->parent_id);
    }
    const bool ok = floor_reach[root->id];
    r.reachable[node.id] = ok;
    count += ok ? 1 : 0;
  }
  r.reach = static_cast<double>(count) / static_cast<double>(b.graph.nodes.size());
  return r;
}

struct ObjectReport {
  std::string id;
  bool collided = false;
  bool stable = false;
  bool reachable = false;
  double max_penetration = 0.0;
  double bottom_gap = 0.0;
  int contacts = 0;
};

struct PlausibilityReport {
  double col_o = 0.0, col_s = 0.0, inst_o = 0.0, inst_s = 0.0, reach = 1.0, walk = 1.0;
  std::vector<ObjectReport> per_object;
  std::vector<std::string> diagnostics;
};

struct CollisionMetrics {
  double col_o = 0.0;
  double col_s = 0.0;
  std::vector<ObjectReport> per_object;  // id, collided, max_penetration
};

/// Pairwise exact collisions plus ground penetration.
inline CollisionMetrics collision_metrics(const SceneBundle& b, const PlausibilityOptions& opt = {}) {
  CollisionMetrics m;
  const auto& nodes = b.graph.nodes;
  std::vector<TriangleMesh> posed;
  std::vector<double> spacing;
  std::vector<std::unique_ptr<MeshDistanceField>> fields;
  for (const auto& n : nodes) {
    posed.push_back(apply_pose(b.mesh_of(n), n.pose));
    spacing.push_back(object_spacing(posed.back(), opt.resolution));
    fields.push_back(std::make_unique<MeshDistanceField>(posed.back()));
    m.per_object.push_back({n.id});
  }
  auto tol_of = [&](std::size_t i) { return opt.contact_tol ? 0.5 * *opt.contact_tol : 0.5 * spacing[i]; };
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double sink = b.graph.ground_height - posed[i].bounds().min.z();
    if (sink > tol_of(i)) {
      m.per_object[i].collided = true;
      m.per_object[i].max_penetration = std::max(m.per_object[i].max_penetration, sink);
    }
    for (std::size_t j = i + 1; j < nodes.size(); ++j) {
      const double tol = std::max(tol_of(i), tol_of(j));
      const PairCollision pc = exact_pair_collision_posed(posed[i], posed[j], tol, fields[i].get(), fields[j].get());
      for (std::size_t k : {i, j}) {
        m.per_object[k].max_penetration = std::max(m.per_object[k].max_penetration, pc.penetration);
        m.per_object[k].collided = m.per_object[k].collided || pc.collided;
      }
    }
  }
  int flagged = 0;
  for (const auto& o : m.per_object) flagged += o.collided ? 1 : 0;
  m.col_o = nodes.empty() ? 0.0 : static_cast<double>(flagged) / static_cast<double>(nodes.size());
  m.col_s = flagged > 0 ? 1.0 : 0.0;
  return m;
}

struct InstabilityMetrics {
  double inst_o = 0.0;
  double inst_s = 0.0;
  std::vector<ObjectReport> per_object;  // id, stable, bottom_gap, contacts
};

inline InstabilityMetrics instability_metrics(const SceneBundle& b, const PlausibilityOptions& opt = {}) {
  InstabilityMetrics m;
  std::map<std::string, std::unique_ptr<MeshDistanceField>> fields;
  int unstable = 0;
  for (const auto& n : b.graph.nodes) {
    const TriangleMesh& mesh = b.mesh_of(n);
    SupportField parent = GroundPlane{b.graph.ground_height};
    if (!n.on_ground()) {
      auto& f = fields[n.parent_id];
      if (!f) {
        const SceneNode* p = b.graph.find(n.parent_id);
        f = std::make_unique<MeshDistanceField>(apply_pose(b.mesh_of(*p), p->pose));
      }
      parent = f.get();
    }
    const double tol = opt.contact_tol.value_or(object_spacing(apply_pose(mesh, n.pose), opt.resolution));
    const StabilityResult s = static_stability(mesh, n.pose, parent, tol, opt.bottom_k, fnv1a(n.id));
    ObjectReport o{n.id};
    o.stable = s.stable;
    o.bottom_gap = s.bottom_gap;
    o.contacts = s.contacts;
    m.per_object.push_back(o);
    unstable += s.stable ? 0 : 1;
  }
  const auto n = b.graph.nodes.size();
  m.inst_o = n == 0 ? 0.0 : static_cast<double>(unstable) / static_cast<double>(n);
  m.inst_s = unstable > 0 ? 1.0 : 0.0;
  return m;
}

/// Every metric for one scene.
inline PlausibilityReport plausibility_report(const SceneBundle& b, const PlausibilityOptions& opt = {}) {
  PlausibilityReport r;
  const CollisionMetrics col = collision_metrics(b, opt);
  const InstabilityMetrics inst = instability_metrics(b, opt);
  r.col_o = col.col_o;
  r.col_s = col.col_s;
  r.inst_o = inst.inst_o;
  r.inst_s = inst.inst_s;
  for (std::size_t i = 0; i < b.graph.nodes.size(); ++i) {
    ObjectReport o = col.per_object[i];
    o.stable = inst.per_object[i].stable;
    o.bottom_gap = inst.per_object[i].bottom_gap;
    o.contacts = inst.per_object[i].contacts;
    r.per_object.push_back(o);
  }
  if (b.graph.nodes.empty() && !b.floor) {
    r.walk = 1.0;
    r.reach = 1.0;
    r.diagnostics.push_back("no objects and no floor: walk and reach are vacuously 1");
    return r;
  }
  const WalkResult w = walkability(b, opt.agent_radius, opt.cell);
  const ReachResult reach = reachability(b, opt.agent_radius, opt.cell, &w);
  r.walk = w.walk;
  r.reach = reach.reach;
  for (auto& o : r.per_object) o.reachable = reach.reachable.at(o.id);
  r.diagnostics.insert(r.diagnostics.end(), w.diagnostics.begin(), w.diagnostics.end());
  r.diagnostics.insert(r.diagnostics.end(), reach.diagnostics.begin(), reach.diagnostics.end());
  return r;
}

inline nlohmann::ordered_json report_to_json(const PlausibilityReport& r) {
  nlohmann::ordered_json j;
  j["col_o"] = r.col_o;
  j["col_s"] = r.col_s;
  j["inst_o"] = r.inst_o;
  j["inst_s"] = r.inst_s;
  j["reach"] = r.reach;
  j["walk"] = r.walk;
  j["per_object"] = nlohmann::ordered_json::array();
  for (const auto& o : r.per_object) {
    j["per_object"].push_back({{"id", o.id},
                               {"collided", o.collided},
                               {"stable", o.stable},
                               {"reachable", o.reachable},
                               {"max_penetration", o.max_penetration},
                               {"bottom_gap", o.bottom_gap},
                               {"contacts", o.contacts}});
  }
  j["diagnostics"] = r.diagnostics;
  return j;
}

}  // namespace layoutforge
