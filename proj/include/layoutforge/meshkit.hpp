#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "layoutforge/common.hpp"
#include "layoutforge/geometry.hpp"
#include "layoutforge/pose.hpp"

namespace layoutforge {

using Face = std::array<std::uint32_t, 3>;

/// Faces with area at or below this (m^2) are dropped at load.
inline constexpr double kDegenerateArea = 1e-12;

/// Indexed triangle surface in an object's local frame.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  /// Number of zero-area faces removed while loading.
  std::size_t dropped_degenerate = 0;

  bool empty() const { return faces.empty(); }

  std::array<Vec3, 3> triangle(std::size_t f) const {
    return {vertices[faces[f][0]], vertices[faces[f][1]], vertices[faces[f][2]]};
  }

  double face_area(std::size_t f) const {
    const auto t = triangle(f);
    return geometry::triangle_area(t[0], t[1], t[2]);
  }

  Aabb bounds() const {
    Aabb b;
    for (const auto& v : vertices) b.expand(v);
    return b;
  }

  std::vector<std::array<Vec3, 3>> triangles() const {
    std::vector<std::array<Vec3, 3>> out;
    out.reserve(faces.size());
    for (std::size_t f = 0; f < faces.size(); ++f) out.push_back(triangle(f));
    return out;
  }
};

/// One `g` block of an OBJ file. Vertices are compacted per group.
struct ObjGroup {
  std::string name;
  TriangleMesh mesh;
};

namespace detail {

inline double parse_double(std::string_view tok, std::size_t line) {
  double v = 0.0;
  const auto* end = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ParseError("obj line " + std::to_string(line) + ": bad number '" + std::string(tok) + "'");
  }
  return v;
}

inline long parse_index(std::string_view tok, std::size_t line) {
  // "f" entries look like v, v/vt, v//vn or v/vt/vn; only v matters here.
  const auto slash = tok.find('/');
  const std::string_view head = tok.substr(0, slash);
  long v = 0;
  const auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), v);
  if (ec != std::errc() || ptr != head.data() + head.size() || v == 0) {
    throw ParseError("obj line " + std::to_string(line) + ": bad face index '" + std::string(tok) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

struct ObjRecords {
  std::vector<Vec3> vertices;
  std::vector<std::string> group_names{""};
  std::vector<std::vector<Face>> group_faces{{}};
};

inline ObjRecords read_obj_records(std::istream& in) {
  ObjRecords rec;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) { return ParseError("obj line " + std::to_string(line_no) + ": " + msg); };
  while (std::getline(in, line)) {
    ++line_no;
    const auto toks = split_ws(line);
    if (toks.empty() || toks[0].front() == '#') continue;
    if (toks[0] == "v") {
      if (toks.size() < 4) throw fail("vertex needs 3 coordinates");
      rec.vertices.emplace_back(parse_double(toks[1], line_no), parse_double(toks[2], line_no),
                                parse_double(toks[3], line_no));
    } else if (toks[0] == "f") {
      if (toks.size() < 4) throw fail("face needs 3 indices");
      std::vector<std::uint32_t> idx;
      for (std::size_t k = 1; k < toks.size(); ++k) {
        long v = parse_index(toks[k], line_no);
        v = v > 0 ? v - 1 : static_cast<long>(rec.vertices.size()) + v;
        if (v < 0 || v >= static_cast<long>(rec.vertices.size())) throw fail("face index out of range");
        idx.push_back(static_cast<std::uint32_t>(v));
      }
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) rec.group_faces.back().push_back({idx[0], idx[k], idx[k + 1]});
    } else if (toks[0] == "g") {
      std::string name;
      for (std::size_t k = 1; k < toks.size(); ++k) name += (k > 1 ? " " : "") + std::string(toks[k]);
      rec.group_names.push_back(std::move(name));
      rec.group_faces.emplace_back();
    }
  }
  return rec;
}

}  // namespace detail

/// Parses the `v`/`f`/`g` subset of Wavefront OBJ into one mesh per group.
/// Polygons with more than three corners are fan-triangulated; other records
/// are ignored; vertices are compacted per group. Faces are kept as read.
inline std::vector<ObjGroup> parse_obj_groups(std::istream& in) {
  const detail::ObjRecords rec = detail::read_obj_records(in);
  std::vector<ObjGroup> out;
  for (std::size_t g = 0; g < rec.group_faces.size(); ++g) {
    // The implicit leading group only matters when it holds faces.
    if (g == 0 && rec.group_faces[g].empty()) continue;
    ObjGroup og{rec.group_names[g], {}};
    std::map<std::uint32_t, std::uint32_t> remap;
    for (const auto& f : rec.group_faces[g]) {
      Face nf{};
      for (int c = 0; c < 3; ++c) {
        auto [it, fresh] = remap.try_emplace(f[c], static_cast<std::uint32_t>(og.mesh.vertices.size()));
        if (fresh) og.mesh.vertices.push_back(rec.vertices[f[c]]);
        nf[c] = it->second;
      }
      og.mesh.faces.push_back(nf);
    }
    out.push_back(std::move(og));
  }
  return out;
}

/// All faces of an OBJ stream as one mesh; vertex indices are kept.
inline TriangleMesh parse_obj(std::istream& in) {
  detail::ObjRecords rec = detail::read_obj_records(in);
  TriangleMesh mesh;
  mesh.vertices = std::move(rec.vertices);
  for (auto& faces : rec.group_faces) mesh.faces.insert(mesh.faces.end(), faces.begin(), faces.end());
  return mesh;
}

/// Removes faces with area <= kDegenerateArea and counts them.
inline void drop_degenerate_faces(TriangleMesh& mesh) {
  std::vector<Face> kept;
  kept.reserve(mesh.faces.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    if (mesh.face_area(f) > kDegenerateArea) {
      kept.push_back(mesh.faces[f]);
    } else {
      ++mesh.dropped_degenerate;
    }
  }
  mesh.faces = std::move(kept);
}

/// Moves the mesh so its AABB has min z = 0 and is centered in x and y.
/// Returns the offset that was subtracted (the old bottom-center).
inline Vec3 normalize_local_frame(TriangleMesh& mesh) {
  const Aabb b = mesh.bounds();
  const Vec3 pivot(0.5 * (b.min.x() + b.max.x()), 0.5 * (b.min.y() + b.max.y()), b.min.z());
  for (auto& v : mesh.vertices) v -= pivot;
  return pivot;
}

/// Drops vertices no face references, keeping the survivors' order.
inline void compact_vertices(TriangleMesh& mesh) {
  std::vector<std::int64_t> remap(mesh.vertices.size(), -1);
  for (const auto& f : mesh.faces) {
    for (auto v : f) remap[v] = 0;
  }
  std::vector<Vec3> kept;
  for (std::size_t i = 0; i < remap.size(); ++i) {
    if (remap[i] == 0) {
      remap[i] = static_cast<std::int64_t>(kept.size());
      kept.push_back(mesh.vertices[i]);
    }
  }
  for (auto& f : mesh.faces) {
    for (auto& v : f) v = static_cast<std::uint32_t>(remap[v]);
  }
  mesh.vertices = std::move(kept);
}

/// Degenerate filtering plus local-frame normalization; throws on an empty result.
inline TriangleMesh prepare_mesh(TriangleMesh mesh, const std::string& what = "mesh") {
  drop_degenerate_faces(mesh);
  if (mesh.empty()) throw ParseError(what + ": empty mesh (no valid faces)");
  compact_vertices(mesh);
  normalize_local_frame(mesh);
  return mesh;
}

inline TriangleMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh '" + path.string() + "'");
  return prepare_mesh(parse_obj(in), path.string());
}

inline void write_obj(std::ostream& out, const TriangleMesh& mesh) {
  out.precision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

inline Vec3 apply_pose(const Vec3& p, const Pose5DoF& pose) { return pose.apply(p); }

inline TriangleMesh apply_pose(const TriangleMesh& mesh, const Pose5DoF& pose) {
  TriangleMesh out = mesh;
  const Mat3 r = pose.rotation();
  for (auto& v : out.vertices) v = pose.scale * (r * v) + pose.translation;
  return out;
}

inline std::vector<Vec3> apply_pose(std::span<const Vec3> pts, const Pose5DoF& pose) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  const Mat3 r = pose.rotation();
  for (const auto& p : pts) out.push_back(pose.scale * (r * p) + pose.translation);
  return out;
}

/// Area-weighted surface centroid.
inline Vec3 centroid(const TriangleMesh& mesh) {
  Vec3 acc = Vec3::Zero();
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto t = mesh.triangle(f);
    const double a = geometry::triangle_area(t[0], t[1], t[2]);
    acc += a * (t[0] + t[1] + t[2]) / 3.0;
    total += a;
  }
  if (total <= 0.0) throw PreconditionError("centroid: mesh has no area");
  return acc / total;
}

/// Points drawn uniformly over a mesh surface. face/barycentric record the
/// draw so the same sample can be re-evaluated on a transformed mesh.
struct SurfaceSamples {
  std::vector<Vec3> points;
  std::vector<std::uint32_t> face;
  std::vector<Vec2> barycentric;  // weights of corners 1 and 2
  std::uint64_t seed = 0;
};

inline Vec3 barycentric_point(const TriangleMesh& mesh, std::uint32_t f, const Vec2& bc) {
  const auto t = mesh.triangle(f);
  return (1.0 - bc.x() - bc.y()) * t[0] + bc.x() * t[1] + bc.y() * t[2];
}

inline SurfaceSamples sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw PreconditionError("sample_surface: n must be >= 1");
  if (mesh.empty()) throw PreconditionError("sample_surface: empty mesh");
  std::vector<double> cumulative(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    total += mesh.face_area(f);
    cumulative[f] = total;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SurfaceSamples out;
  out.seed = seed;
  out.points.reserve(n);
  out.face.reserve(n);
  out.barycentric.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pick = unit(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    if (it == cumulative.end()) --it;
    const auto f = static_cast<std::uint32_t>(it - cumulative.begin());
    // Square-root warp gives uniform density over the triangle.
    const double r1 = std::sqrt(unit(rng));
    const double r2 = unit(rng);
    const Vec2 bc(r1 * (1.0 - r2), r1 * r2);
    out.face.push_back(f);
    out.barycentric.push_back(bc);
    out.points.push_back(barycentric_point(mesh, f, bc));
  }
  return out;
}

/// Mean distance from each point to its nearest other point (O(n^2)).
inline double mean_nearest_neighbor_spacing(std::span<const Vec3> pts) {
  if (pts.size() < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i != j) best = std::min(best, (pts[i] - pts[j]).squaredNorm());
    }
    sum += std::sqrt(best);
  }
  return sum / static_cast<double>(pts.size());
}

/// Where V^B points sit on the bottom face, as fractions of the face's x/y
/// extent. The first four entries are the corners.
struct BottomLayout {
  std::vector<Vec2> fractions;
};

/// Default number of bottom-face points per object.
inline constexpr std::size_t kDefaultBottomSamples = 16;

/// 4 corners plus (k - 4) stratified-random interior points.
inline BottomLayout make_bottom_layout(std::size_t k, std::uint64_t seed) {
  if (k < 4) throw PreconditionError("bottom_samples: k must be >= 4");
  BottomLayout layout;
  layout.fractions = {{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}};
  const std::size_t interior = k - 4;
  if (interior == 0) return layout;
  const auto g = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(interior))));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t j = 0; j < interior; ++j) {
    const double cx = static_cast<double>(j % g);
    const double cy = static_cast<double>(j / g);
    const double gy = static_cast<double>((interior + g - 1) / g);
    const double u = unit(rng);
    const double v = unit(rng);
    layout.fractions.emplace_back((cx + u) / static_cast<double>(g), (cy + v) / gy);
  }
  return layout;
}

/// Posed bottom-face points with their Jacobians w.r.t. the pose.
struct BottomPoints {
  std::vector<Vec3> points;
  std::vector<PointJacobian> jacobians;
};

/// Evaluates a bottom layout on the world-space AABB of the posed mesh. The
/// AABB faces follow their extreme vertices, which gives the Jacobian almost
/// everywhere (it jumps where the extreme vertex changes).
inline BottomPoints posed_bottom_points(const TriangleMesh& mesh, const Pose5DoF& pose, const BottomLayout& layout) {
  const Mat3 r = pose.rotation();
  const Mat3 dr = yaw_rotation_derivative(pose.yaw);
  std::size_t ix_min = 0, ix_max = 0, iy_min = 0, iy_max = 0, iz_min = 0;
  std::vector<Vec3> rotated(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    rotated[i] = r * mesh.vertices[i];
    if (rotated[i].x() < rotated[ix_min].x()) ix_min = i;
    if (rotated[i].x() > rotated[ix_max].x()) ix_max = i;
    if (rotated[i].y() < rotated[iy_min].y()) iy_min = i;
    if (rotated[i].y() > rotated[iy_max].y()) iy_max = i;
    if (rotated[i].z() < rotated[iz_min].z()) iz_min = i;
  }
  const double s = pose.scale;
  const Vec3& t = pose.translation;
  // Extreme coordinate and its gradient row (d/ds, d/dyaw) for one axis.
  auto extreme = [&](std::size_t vi, int axis, double& value, double& d_scale, double& d_yaw) {
    value = t[axis] + s * rotated[vi][axis];
    d_scale = rotated[vi][axis];
    d_yaw = s * (dr * mesh.vertices[vi])[axis];
  };
  double x0, x0s, x0y, x1, x1s, x1y, y0, y0s, y0y, y1, y1s, y1y, z0, z0s, z0y;
  extreme(ix_min, 0, x0, x0s, x0y);
  extreme(ix_max, 0, x1, x1s, x1y);
  extreme(iy_min, 1, y0, y0s, y0y);
  extreme(iy_max, 1, y1, y1s, y1y);
  extreme(iz_min, 2, z0, z0s, z0y);

  BottomPoints out;
  out.points.reserve(layout.fractions.size());
  out.jacobians.reserve(layout.fractions.size());
  for (const auto& f : layout.fractions) {
    const double a = f.x();
    const double b = f.y();
    out.points.emplace_back((1 - a) * x0 + a * x1, (1 - b) * y0 + b * y1, z0);
    PointJacobian j = PointJacobian::Zero();
    j(0, kScale) = (1 - a) * x0s + a * x1s;
    j(0, kYaw) = (1 - a) * x0y + a * x1y;
    j(1, kScale) = (1 - b) * y0s + b * y1s;
    j(1, kYaw) = (1 - b) * y0y + b * y1y;
    j(2, kScale) = z0s;
    j(2, kYaw) = z0y;
    j(0, kTx) = 1.0;
    j(1, kTy) = 1.0;
    j(2, kTz) = 1.0;
    out.jacobians.push_back(j);
  }
  return out;
}

/// k points on the bottom face of the posed mesh's world AABB (V^B).
inline std::vector<Vec3> bottom_samples(const TriangleMesh& mesh, const Pose5DoF& pose, std::size_t k,
                                        std::uint64_t seed) {
  return posed_bottom_points(mesh, pose, make_bottom_layout(k, seed)).points;
}

/// Mesh vertices plus points spaced at most `max_spacing` along every sharp
/// or boundary edge (endpoints excluded). Edges between coplanar faces are
/// skipped. Used as extra collision probes on features that uniform surface
/// samples rarely hit.
inline std::vector<Vec3> feature_probes(const TriangleMesh& mesh, double max_spacing) {
  if (!(max_spacing > 0.0)) throw PreconditionError("feature_probes: spacing must be positive");
  std::vector<Vec3> out(mesh.vertices.begin(), mesh.vertices.end());
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<Vec3>> edge_normals;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto t = mesh.triangle(f);
    const Vec3 n = (t[1] - t[0]).cross(t[2] - t[0]).normalized();
    for (int c = 0; c < 3; ++c) {
      const auto e = std::minmax(mesh.faces[f][c], mesh.faces[f][(c + 1) % 3]);
      edge_normals[{e.first, e.second}].push_back(n);
    }
  }
  for (const auto& [e, normals] : edge_normals) {
    if (normals.size() == 2 && normals[0].dot(normals[1]) > 1.0 - 1e-9) continue;
    const Vec3& pa = mesh.vertices[e.first];
    const Vec3& pb = mesh.vertices[e.second];
    const auto pieces = static_cast<int>(std::ceil((pb - pa).norm() / max_spacing));
    for (int k = 1; k < pieces; ++k) out.push_back(pa + (pb - pa) * (static_cast<double>(k) / pieces));
  }
  return out;
}

}  // namespace layoutforge
