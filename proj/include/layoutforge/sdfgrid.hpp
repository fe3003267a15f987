#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "layoutforge/common.hpp"
#include "layoutforge/geometry.hpp"
#include "layoutforge/meshkit.hpp"
#include "layoutforge/pose.hpp"

namespace layoutforge {

/// Exact signed distance to a triangle mesh. Sign comes from the
/// angle-weighted pseudonormal of the nearest feature, which is correct for
/// closed, consistently oriented meshes.
class MeshDistanceField {
 public:
  explicit MeshDistanceField(const TriangleMesh& mesh) : bvh_(mesh.triangles()) {
    // Weld coincident vertices so adjacency survives split-vertex OBJ files.
    std::map<std::array<double, 3>, std::uint32_t> weld;
    std::vector<std::uint32_t> welded(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      const auto& v = mesh.vertices[i];
      welded[i] = weld.try_emplace({v.x(), v.y(), v.z()}, static_cast<std::uint32_t>(weld.size())).first->second;
    }
    const std::size_t nf = mesh.faces.size();
    face_normals_.resize(nf);
    std::map<std::pair<std::uint32_t, std::uint32_t>, Vec3> edge_sum;
    std::vector<Vec3> vertex_sum(weld.size(), Vec3::Zero());
    for (std::size_t f = 0; f < nf; ++f) {
      const auto t = mesh.triangle(f);
      const Vec3 n = (t[1] - t[0]).cross(t[2] - t[0]).normalized();
      face_normals_[f] = n;
      for (int c = 0; c < 3; ++c) {
        const std::uint32_t a = welded[mesh.faces[f][c]];
        const std::uint32_t b = welded[mesh.faces[f][(c + 1) % 3]];
        auto [it, fresh] = edge_sum.try_emplace(std::minmax(a, b), Vec3::Zero());
        it->second += n;
        const Vec3 e1 = (t[(c + 1) % 3] - t[c]).normalized();
        const Vec3 e2 = (t[(c + 2) % 3] - t[c]).normalized();
        const double angle = std::acos(std::clamp(e1.dot(e2), -1.0, 1.0));
        vertex_sum[a] += angle * n;
      }
    }
    edge_normals_.resize(nf);
    vertex_normals_.resize(nf);
    for (std::size_t f = 0; f < nf; ++f) {
      for (int c = 0; c < 3; ++c) {
        const std::uint32_t a = welded[mesh.faces[f][c]];
        const std::uint32_t b = welded[mesh.faces[f][(c + 1) % 3]];
        edge_normals_[f][c] = edge_sum.at(std::minmax(a, b));
        vertex_normals_[f][c] = vertex_sum[a];
      }
    }
  }

  const Aabb& bounds() const { return bvh_.bounds(); }
  const geometry::TriangleBvh& bvh() const { return bvh_; }

  double unsigned_distance(const Vec3& p) const { return std::sqrt(bvh_.closest(p).distance_sq); }

  double signed_distance(const Vec3& p) const {
    const auto hit = bvh_.closest(p);
    const double d = std::sqrt(hit.distance_sq);
    if (d == 0.0) return 0.0;
    const Vec3 dir = p - hit.closest.point;
    const Vec3* normal = &face_normals_[hit.triangle];
    if (hit.closest.feature == geometry::Feature::kEdge) {
      normal = &edge_normals_[hit.triangle][hit.closest.index];
    } else if (hit.closest.feature == geometry::Feature::kVertex) {
      normal = &vertex_normals_[hit.triangle][hit.closest.index];
    }
    return dir.dot(*normal) < 0.0 ? -d : d;
  }

 private:
  geometry::TriangleBvh bvh_;
  std::vector<Vec3> face_normals_;
  std::vector<std::array<Vec3, 3>> edge_normals_;
  std::vector<std::array<Vec3, 3>> vertex_normals_;
};

/// Signed distance sampled on a regular grid of nodes (x fastest).
struct GridSdf {
  Vec3 origin = Vec3::Zero();
  double spacing = 0.0;
  std::array<int, 3> dims{0, 0, 0};
  std::vector<float> values;

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
  }
  float at(int i, int j, int k) const { return values[index(i, j, k)]; }
  Vec3 node(int i, int j, int k) const { return origin + spacing * Vec3(i, j, k); }
  Aabb bounds() const {
    return {origin, origin + spacing * Vec3(dims[0] - 1, dims[1] - 1, dims[2] - 1)};
  }
};

/// Value and gradient of a distance field at one point.
struct SdfSample {
  double value = 0.0;
  Vec3 gradient = Vec3::Zero();
};

namespace detail {

/// Trilinear interpolation at a point already inside the grid bounds.
inline SdfSample trilinear(const GridSdf& g, const Vec3& p) {
  const Vec3 rel = (p - g.origin) / g.spacing;
  std::array<int, 3> c{};
  std::array<double, 3> t{};
  for (int a = 0; a < 3; ++a) {
    const int cell = std::clamp(static_cast<int>(std::floor(rel[a])), 0, g.dims[a] - 2);
    c[a] = cell;
    t[a] = std::clamp(rel[a] - cell, 0.0, 1.0);
  }
  const double v000 = g.at(c[0], c[1], c[2]);
  const double v100 = g.at(c[0] + 1, c[1], c[2]);
  const double v010 = g.at(c[0], c[1] + 1, c[2]);
  const double v110 = g.at(c[0] + 1, c[1] + 1, c[2]);
  const double v001 = g.at(c[0], c[1], c[2] + 1);
  const double v101 = g.at(c[0] + 1, c[1], c[2] + 1);
  const double v011 = g.at(c[0], c[1] + 1, c[2] + 1);
  const double v111 = g.at(c[0] + 1, c[1] + 1, c[2] + 1);
  const double tx = t[0], ty = t[1], tz = t[2];
  const double x00 = v000 + tx * (v100 - v000);
  const double x10 = v010 + tx * (v110 - v010);
  const double x01 = v001 + tx * (v101 - v001);
  const double x11 = v011 + tx * (v111 - v011);
  const double y0 = x00 + ty * (x10 - x00);
  const double y1 = x01 + ty * (x11 - x01);
  SdfSample s;
  s.value = y0 + tz * (y1 - y0);
  const double dx0 = (v100 - v000) + ty * ((v110 - v010) - (v100 - v000));
  const double dx1 = (v101 - v001) + ty * ((v111 - v011) - (v101 - v001));
  s.gradient.x() = (dx0 + tz * (dx1 - dx0)) / g.spacing;
  s.gradient.y() = ((x10 - x00) + tz * ((x11 - x01) - (x10 - x00))) / g.spacing;
  s.gradient.z() = (y1 - y0) / g.spacing;
  return s;
}

}  // namespace detail

/// Trilinear value with its exact (piecewise) gradient. Outside the grid the
/// value is the boundary value plus the distance to the grid box, so distant
/// points always read positive.
inline SdfSample query_with_gradient(const GridSdf& g, const Vec3& p) {
  const Aabb b = g.bounds();
  const Vec3 c = p.cwiseMax(b.min).cwiseMin(b.max);
  SdfSample s = detail::trilinear(g, c);
  const Vec3 off = p - c;
  const double dist = off.norm();
  if (dist > 0.0) {
    for (int a = 0; a < 3; ++a) {
      if (off[a] != 0.0) s.gradient[a] = 0.0;
    }
    s.value += dist;
    s.gradient += off / dist;
  }
  return s;
}

inline double query(const GridSdf& g, const Vec3& p) { return query_with_gradient(g, p).value; }

/// Central differences with step spacing / 2.
inline Vec3 query_gradient(const GridSdf& g, const Vec3& p) {
  const double h = 0.5 * g.spacing;
  Vec3 grad;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = h;
    grad[a] = (query(g, p + e) - query(g, p - e)) / (2.0 * h);
  }
  return grad;
}

struct SdfBuildOptions {
  /// Cells along the longest axis of the posed mesh's AABB.
  int resolution = 64;
  /// Margin around the AABB in meters; defaults to 4 cells.
  std::optional<double> padding;
};

inline GridSdf build_sdf(const TriangleMesh& mesh, const Pose5DoF& pose, const SdfBuildOptions& options = {}) {
  if (mesh.empty()) throw PreconditionError("build_sdf: empty mesh");
  if (options.resolution < 8) throw PreconditionError("build_sdf: resolution must be >= 8");
  const TriangleMesh posed = apply_pose(mesh, pose);
  const Aabb box = posed.bounds();
  const double longest = box.extent().maxCoeff();
  if (!(longest > 0.0)) throw PreconditionError("build_sdf: mesh has zero extent");
  GridSdf g;
  g.spacing = longest / options.resolution;
  const double padding = options.padding.value_or(4.0 * g.spacing);
  if (padding < 2.0 * g.spacing * (1.0 - 1e-12)) throw PreconditionError("build_sdf: padding must be >= 2 * spacing");
  g.origin = box.min.array() - padding;
  for (int a = 0; a < 3; ++a) {
    const double cells = (box.extent()[a] + 2.0 * padding) / g.spacing;
    g.dims[a] = static_cast<int>(std::ceil(cells - 1e-9)) + 1;
  }
  g.values.assign(static_cast<std::size_t>(g.dims[0]) * g.dims[1] * g.dims[2], 0.0f);
  const MeshDistanceField field(posed);
  parallel_for(static_cast<std::size_t>(g.dims[2]), [&](std::size_t k0, std::size_t k1) {
    for (auto k = static_cast<int>(k0); k < static_cast<int>(k1); ++k) {
      for (int j = 0; j < g.dims[1]; ++j) {
        for (int i = 0; i < g.dims[0]; ++i) {
          g.values[g.index(i, j, k)] = static_cast<float>(field.signed_distance(g.node(i, j, k)));
        }
      }
    }
  });
  return g;
}

/// Half-space z >= height.
struct GroundPlane {
  double height = 0.0;
};

/// One member of a scene SDF: the analytic ground or a shared grid.
using SdfField = std::variant<GroundPlane, std::shared_ptr<const GridSdf>>;

inline SdfSample field_sample(const SdfField& f, const Vec3& p) {
  if (const auto* ground = std::get_if<GroundPlane>(&f)) return {p.z() - ground->height, Vec3::UnitZ()};
  return query_with_gradient(*std::get<std::shared_ptr<const GridSdf>>(f), p);
}

inline double field_value(const SdfField& f, const Vec3& p) {
  if (const auto* ground = std::get_if<GroundPlane>(&f)) return p.z() - ground->height;
  return query(*std::get<std::shared_ptr<const GridSdf>>(f), p);
}

/// Central-difference gradient (exact for the ground).
inline Vec3 field_gradient(const SdfField& f, const Vec3& p) {
  if (std::holds_alternative<GroundPlane>(f)) return Vec3::UnitZ();
  return query_gradient(*std::get<std::shared_ptr<const GridSdf>>(f), p);
}

/// Bounds outside which a field is strictly positive (empty for the ground).
inline std::optional<Aabb> field_bounds(const SdfField& f) {
  if (std::holds_alternative<GroundPlane>(f)) return std::nullopt;
  return std::get<std::shared_ptr<const GridSdf>>(f)->bounds();
}

/// Pointwise minimum over the ground and every finalized object's SDF.
class SceneSdf {
 public:
  struct Part {
    std::string id;
    SdfField field;
  };

  SceneSdf() = default;

  static SceneSdf with_ground(double height) {
    SceneSdf s;
    s.parts_.push_back({std::string(kGroundId), GroundPlane{height}});
    return s;
  }

  const std::vector<Part>& parts() const { return parts_; }
  bool contains(std::string_view id) const {
    return std::any_of(parts_.begin(), parts_.end(), [&](const Part& p) { return p.id == id; });
  }

  void add(std::string id, SdfField field) {
    if (contains(id)) throw PreconditionError("update_scene_sdf: duplicate node '" + id + "'");
    parts_.push_back({std::move(id), std::move(field)});
  }

  /// Index of the part with the smallest value at p (lowest index on ties);
  /// -1 for an empty scene. The value is stored in `value` when given.
  int argmin(const Vec3& p, double* value = nullptr) const {
    int best = -1;
    double best_v = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < parts_.size(); ++i) {
      // Outside its box a built grid reads at least the distance to the box,
      // so a part that cannot beat the current minimum is skipped.
      if (const auto b = field_bounds(parts_[i].field)) {
        const double d = b->distance(p);
        if (d > 0.0 && d >= best_v) continue;
      }
      const double v = field_value(parts_[i].field, p);
      if (v < best_v) {
        best_v = v;
        best = static_cast<int>(i);
      }
    }
    if (value != nullptr) *value = best_v;
    return best;
  }

  double query(const Vec3& p) const {
    double v = 0.0;
    argmin(p, &v);
    return v;
  }

  /// Gradient of the minimizing part (central differences for grids).
  Vec3 query_gradient(const Vec3& p) const {
    const int i = argmin(p);
    return i < 0 ? Vec3::Zero() : field_gradient(parts_[i].field, p);
  }

  /// Value and exact trilinear gradient of the minimizing part.
  SdfSample query_with_gradient(const Vec3& p) const {
    const int i = argmin(p);
    if (i < 0) return {std::numeric_limits<double>::infinity(), Vec3::Zero()};
    return field_sample(parts_[i].field, p);
  }

 private:
  std::vector<Part> parts_;
};

inline SceneSdf update_scene_sdf(SceneSdf scene, std::string id, GridSdf sdf) {
  scene.add(std::move(id), std::make_shared<const GridSdf>(std::move(sdf)));
  return scene;
}

inline double query(const SceneSdf& scene, const Vec3& p) { return scene.query(p); }
inline Vec3 query_gradient(const SceneSdf& scene, const Vec3& p) { return scene.query_gradient(p); }

namespace detail {

template <typename T>
void put_le(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw ParseError("sdf cache: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace detail

/// Cache layout: dims (3 x u32), origin (3 x f64), spacing (f64), then the
/// f32 values, all little-endian, x fastest.
inline void write_sdf_cache(const std::filesystem::path& path, const GridSdf& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write sdf cache '" + path.string() + "'");
  for (int d : g.dims) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (int a = 0; a < 3; ++a) detail::put_le<double>(out, g.origin[a]);
  detail::put_le<double>(out, g.spacing);
  for (float v : g.values) detail::put_le<float>(out, v);
  if (!out) throw IoError("short write to sdf cache '" + path.string() + "'");
}

inline GridSdf read_sdf_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open sdf cache '" + path.string() + "'");
  GridSdf g;
  for (int& d : g.dims) {
    const auto v = detail::get_le<std::uint32_t>(in);
    if (v < 2 || v > (1u << 12)) throw ParseError("sdf cache: implausible dims");
    d = static_cast<int>(v);
  }
  for (int a = 0; a < 3; ++a) g.origin[a] = detail::get_le<double>(in);
  g.spacing = detail::get_le<double>(in);
  if (!(g.spacing > 0.0) || !g.origin.allFinite()) throw ParseError("sdf cache: bad header");
  g.values.resize(static_cast<std::size_t>(g.dims[0]) * g.dims[1] * g.dims[2]);
  for (float& v : g.values) v = detail::get_le<float>(in);
  return g;
}

/// File stem for a cached grid of (mesh, pose, resolution).
inline std::string sdf_cache_key(std::string_view mesh_ref, const Pose5DoF& pose, int resolution) {
  std::uint64_t h = fnv1a(mesh_ref);
  const double fields[5] = {pose.scale, pose.yaw, pose.translation.x(), pose.translation.y(), pose.translation.z()};
  h = fnv1a_bytes(fields, sizeof(fields), h);
  h = fnv1a_bytes(&resolution, sizeof(resolution), h);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace layoutforge
