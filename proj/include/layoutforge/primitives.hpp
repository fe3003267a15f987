#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <utility>

#include "layoutforge/meshkit.hpp"

// Closed, outward-oriented primitive meshes, already in the normalized local
// frame (bottom-center of the AABB at the origin).
namespace layoutforge::primitives {

inline TriangleMesh box(const Vec3& size) {
  TriangleMesh m;
  const Vec3 h = 0.5 * size;
  for (int i = 0; i < 8; ++i) {
    m.vertices.emplace_back((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(), (i & 4) ? size.z() : 0.0);
  }
  m.faces = {{0, 2, 1}, {1, 2, 3},   // bottom (-z)
             {4, 5, 6}, {5, 7, 6},   // top (+z)
             {0, 1, 4}, {1, 5, 4},   // -y
             {2, 6, 3}, {3, 6, 7},   // +y
             {0, 4, 2}, {2, 4, 6},   // -x
             {1, 3, 5}, {3, 7, 5}};  // +x
  return m;
}

inline TriangleMesh unit_cube() { return box(Vec3::Ones()); }

/// Closed prism approximating a vertical cylinder.
inline TriangleMesh cylinder(double radius, double height, int segments = 24) {
  TriangleMesh m;
  const auto n = static_cast<std::uint32_t>(segments);
  for (std::uint32_t i = 0; i < n; ++i) {
    const double a = kTwoPi * i / n;
    m.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), 0.0);
  }
  for (std::uint32_t i = 0; i < n; ++i) {
    const double a = kTwoPi * i / n;
    m.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), height);
  }
  const std::uint32_t bottom_center = 2 * n;
  const std::uint32_t top_center = 2 * n + 1;
  m.vertices.emplace_back(0.0, 0.0, 0.0);
  m.vertices.emplace_back(0.0, 0.0, height);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t j = (i + 1) % n;
    m.faces.push_back({i, j, n + j});
    m.faces.push_back({i, n + j, n + i});
    m.faces.push_back({bottom_center, j, i});
    m.faces.push_back({top_center, n + i, n + j});
  }
  // Polygon AABB is not centered on the axis for odd segment counts.
  normalize_local_frame(m);
  return m;
}

/// Geodesic sphere from a subdivided icosahedron. The vertex set is centrally
/// symmetric, so the sphere center is the AABB center.
inline TriangleMesh icosphere(double radius, int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Face> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                         {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                         {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const auto idx = static_cast<std::uint32_t>(v.size() - 1);
      mid.emplace(key, idx);
      return idx;
    };
    std::vector<Face> next;
    next.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const std::uint32_t a = midpoint(tri[0], tri[1]);
      const std::uint32_t b = midpoint(tri[1], tri[2]);
      const std::uint32_t c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  TriangleMesh m;
  for (const auto& p : v) m.vertices.push_back(radius * p);
  m.faces = std::move(f);
  normalize_local_frame(m);
  return m;
}

}  // namespace layoutforge::primitives
