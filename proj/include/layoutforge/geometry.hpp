#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "layoutforge/common.hpp"

namespace layoutforge::geometry {

/// Which part of a triangle holds the closest point.
enum class Feature : std::uint8_t { kVertex, kEdge, kFace };

struct ClosestPoint {
  Vec3 point;
  Feature feature = Feature::kFace;
  // Local corner index for kVertex; for kEdge the edge runs from corner
  // `index` to corner (index + 1) % 3.
  int index = 0;
};

/// Closest point on triangle (a, b, c) to p, with the Voronoi region it came
/// from. Region tests follow the standard barycentric case split.
inline ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return {a, Feature::kVertex, 0};

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return {b, Feature::kVertex, 1};

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return {a + v * ab, Feature::kEdge, 0};
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return {c, Feature::kVertex, 2};

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return {a + w * ac, Feature::kEdge, 2};
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return {b + w * (c - b), Feature::kEdge, 1};
  }

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom;
  const double w = vc * denom;
  return {a + ab * v + ac * w, Feature::kFace, 0};
}

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

namespace detail {

inline void project(const std::array<Vec3, 3>& t, const Vec3& axis, double& lo, double& hi) {
  lo = hi = axis.dot(t[0]);
  for (int i = 1; i < 3; ++i) {
    const double d = axis.dot(t[i]);
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
}

inline bool separated_on(const std::array<Vec3, 3>& t, const std::array<Vec3, 3>& u, const Vec3& axis) {
  double a0, a1, b0, b1;
  project(t, axis, a0, a1);
  project(u, axis, b0, b1);
  return a1 < b0 || b1 < a0;
}

}  // namespace detail

/// Separating-axis test for two triangles. Touching (shared point, edge or
/// coplanar overlap) counts as intersecting.
inline bool triangles_intersect(const std::array<Vec3, 3>& t, const std::array<Vec3, 3>& u) {
  const Vec3 nt = (t[1] - t[0]).cross(t[2] - t[0]);
  const Vec3 nu = (u[1] - u[0]).cross(u[2] - u[0]);
  if (detail::separated_on(t, u, nt) || detail::separated_on(t, u, nu)) return false;

  const double scale = std::max(nt.squaredNorm(), nu.squaredNorm());
  bool any_cross = false;
  for (int i = 0; i < 3; ++i) {
    const Vec3 et = t[(i + 1) % 3] - t[i];
    for (int j = 0; j < 3; ++j) {
      const Vec3 eu = u[(j + 1) % 3] - u[j];
      const Vec3 axis = et.cross(eu);
      if (axis.squaredNorm() <= 1e-24 * scale) continue;
      any_cross = true;
      if (detail::separated_on(t, u, axis)) return false;
    }
  }
  // Coplanar (or parallel-edged) configurations need the in-plane edge normals.
  const bool coplanar = nt.cross(nu).squaredNorm() <= 1e-20 * scale * scale || !any_cross;
  if (coplanar) {
    for (const auto* tri : {&t, &u}) {
      const Vec3 n = (tri == &t) ? nt : nu;
      for (int i = 0; i < 3; ++i) {
        const Vec3 axis = n.cross((*tri)[(i + 1) % 3] - (*tri)[i]);
        if (axis.squaredNorm() == 0.0) continue;
        if (detail::separated_on(t, u, axis)) return false;
      }
    }
  }
  return true;
}

/// Bounding volume hierarchy over a triangle soup.
class TriangleBvh {
 public:
  struct Node {
    Aabb box;
    std::uint32_t first = 0;  // leaf: first triangle in order_; inner: left child
    std::uint32_t count = 0;  // 0 for inner nodes
    std::uint32_t right = 0;
  };

  TriangleBvh() = default;

  explicit TriangleBvh(std::vector<std::array<Vec3, 3>> triangles) : tris_(std::move(triangles)) {
    order_.resize(tris_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    centroids_.reserve(tris_.size());
    for (const auto& t : tris_) centroids_.push_back((t[0] + t[1] + t[2]) / 3.0);
    if (!tris_.empty()) {
      nodes_.reserve(2 * tris_.size());
      build(0, static_cast<std::uint32_t>(tris_.size()));
    }
    centroids_.clear();
    centroids_.shrink_to_fit();
  }

  bool empty() const { return tris_.empty(); }
  std::size_t size() const { return tris_.size(); }
  const std::array<Vec3, 3>& triangle(std::size_t i) const { return tris_[i]; }
  const Aabb& bounds() const { return nodes_.front().box; }

  struct Hit {
    std::uint32_t triangle = 0;
    ClosestPoint closest;
    double distance_sq = std::numeric_limits<double>::infinity();
  };

  /// Nearest triangle to p. Ties keep the lowest triangle index so the result
  /// does not depend on traversal order.
  Hit closest(const Vec3& p) const {
    Hit best;
    if (tris_.empty()) return best;
    std::uint32_t stack[64];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& node = nodes_[stack[--top]];
      if (box_distance_sq(node.box, p) > best.distance_sq) continue;
      if (node.count > 0) {
        for (std::uint32_t k = node.first; k < node.first + node.count; ++k) {
          const std::uint32_t ti = order_[k];
          const auto& t = tris_[ti];
          const ClosestPoint cp = closest_point_on_triangle(p, t[0], t[1], t[2]);
          const double d2 = (cp.point - p).squaredNorm();
          if (d2 < best.distance_sq || (d2 == best.distance_sq && ti < best.triangle)) {
            best = {ti, cp, d2};
          }
        }
        continue;
      }
      const std::uint32_t l = node.first;
      const std::uint32_t r = node.right;
      const double dl = box_distance_sq(nodes_[l].box, p);
      const double dr = box_distance_sq(nodes_[r].box, p);
      // Push the farther child first so the nearer one is expanded next.
      if (dl <= dr) {
        stack[top++] = r;
        stack[top++] = l;
      } else {
        stack[top++] = l;
        stack[top++] = r;
      }
    }
    return best;
  }

  /// True iff any triangle of this hierarchy intersects any triangle of other.
  bool intersects(const TriangleBvh& other) const {
    if (tris_.empty() || other.tris_.empty()) return false;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> stack{{0u, 0u}};
    while (!stack.empty()) {
      const auto [ia, ib] = stack.back();
      stack.pop_back();
      const Node& a = nodes_[ia];
      const Node& b = other.nodes_[ib];
      if (!a.box.overlaps(b.box)) continue;
      if (a.count > 0 && b.count > 0) {
        for (std::uint32_t i = a.first; i < a.first + a.count; ++i) {
          for (std::uint32_t j = b.first; j < b.first + b.count; ++j) {
            if (triangles_intersect(tris_[order_[i]], other.tris_[other.order_[j]])) return true;
          }
        }
      } else if (b.count > 0 || (a.count == 0 && a.box.extent().squaredNorm() >= b.box.extent().squaredNorm())) {
        stack.emplace_back(a.first, ib);
        stack.emplace_back(a.right, ib);
      } else {
        stack.emplace_back(ia, b.first);
        stack.emplace_back(ia, b.right);
      }
    }
    return false;
  }

 private:
  static double box_distance_sq(const Aabb& b, const Vec3& p) {
    const Vec3 c = p.cwiseMax(b.min).cwiseMin(b.max);
    return (p - c).squaredNorm();
  }

  std::uint32_t build(std::uint32_t first, std::uint32_t count) {
    const auto index = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    Aabb box;
    Aabb centroid_box;
    for (std::uint32_t k = first; k < first + count; ++k) {
      for (const auto& v : tris_[order_[k]]) box.expand(v);
      centroid_box.expand(centroids_[order_[k]]);
    }
    nodes_[index].box = box;
    if (count <= 4) {
      nodes_[index].first = first;
      nodes_[index].count = count;
      return index;
    }
    int axis = 0;
    centroid_box.extent().maxCoeff(&axis);
    const std::uint32_t mid = first + count / 2;
    std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count,
                     [&](std::uint32_t x, std::uint32_t y) {
                       const double cx = centroids_[x][axis];
                       const double cy = centroids_[y][axis];
                       return cx < cy || (cx == cy && x < y);
                     });
    const std::uint32_t left = build(first, mid - first);
    const std::uint32_t right = build(mid, first + count - mid);
    nodes_[index].first = left;
    nodes_[index].right = right;
    nodes_[index].count = 0;
    return index;
  }

  std::vector<std::array<Vec3, 3>> tris_;
  std::vector<std::uint32_t> order_;
  std::vector<Vec3> centroids_;
  std::vector<Node> nodes_;
};

inline double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

/// Convex hull (Andrew's monotone chain), counter-clockwise, no repeated or
/// collinear points. Degenerate inputs return the 1 or 2 extreme points.
inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

/// Distance from p to a convex CCW polygon; 0 when inside or on it.
inline double distance_to_convex_polygon(const Vec2& p, std::span<const Vec2> poly) {
  if (poly.empty()) return std::numeric_limits<double>::infinity();
  if (poly.size() == 1) return (p - poly[0]).norm();
  bool inside = poly.size() >= 3;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % poly.size()];
    if (poly.size() >= 3 && cross2(a, b, p) < 0.0) inside = false;
    const Vec2 ab = b - a;
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    best = std::min(best, (a + t * ab - p).norm());
  }
  return inside ? 0.0 : best;
}

/// Inside-or-on test for a convex CCW polygon with absolute tolerance `eps`.
inline bool convex_polygon_contains(std::span<const Vec2> poly, const Vec2& p, double eps = 1e-12) {
  if (poly.size() < 3) return false;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % poly.size()];
    const double len = (b - a).norm();
    if (cross2(a, b, p) < -eps * len) return false;
  }
  return true;
}

}  // namespace layoutforge::geometry
