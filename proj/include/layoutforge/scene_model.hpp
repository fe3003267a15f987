#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "layoutforge/common.hpp"
#include "layoutforge/meshkit.hpp"
#include "layoutforge/pose.hpp"

namespace layoutforge {

enum class Role { kAnchor, kParent, kChild };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::kAnchor: return "anchor";
    case Role::kParent: return "parent";
    case Role::kChild: return "child";
  }
  return "child";
}

struct SceneNode {
  std::string id;
  std::string mesh_ref;
  Pose5DoF pose;
  std::string parent_id{kGroundId};
  Role role = Role::kChild;

  bool on_ground() const { return parent_id == kGroundId; }
};

struct SceneGraph {
  std::vector<SceneNode> nodes;
  double ground_height = 0.0;

  const SceneNode* find(std::string_view id) const {
    for (const auto& n : nodes) {
      if (n.id == id) return &n;
    }
    return nullptr;
  }
  SceneNode* find(std::string_view id) {
    return const_cast<SceneNode*>(static_cast<const SceneGraph*>(this)->find(id));
  }
};

/// Pinhole camera. Camera axes follow the usual vision convention: x right,
/// y down, z forward. `rotation`/`translation` map camera to world.
struct Camera {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  double width = 0.0, height = 0.0;  // pixels
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 to_camera(const Vec3& world) const { return rotation.transpose() * (world - translation); }
  Vec2 project(const Vec3& world) const {
    const Vec3 c = to_camera(world);
    return {fx * c.x() / c.z() + cx, fy * c.y() / c.z() + cy};
  }
  double diagonal() const { return std::hypot(width, height); }
};

struct CorrespondencePair {
  Vec3 p_local = Vec3::Zero();
  Vec3 q_world = Vec3::Zero();
  Vec2 q_pixel = Vec2::Zero();
  double confidence = 1.0;
};

/// Optional walkable-floor description used by the interactivity metrics:
/// the floor rectangle plus fixed obstacles (walls) as convex polygons.
struct Floor {
  Vec2 min = Vec2::Zero();
  Vec2 max = Vec2::Zero();
  std::vector<std::vector<Vec2>> obstacles;
};

struct SceneBundle {
  SceneGraph graph;
  std::map<std::string, TriangleMesh> meshes;
  std::map<std::string, std::vector<CorrespondencePair>> correspondences;
  std::optional<Camera> camera;
  std::optional<Floor> floor;
  /// Where each mesh was read from, so saving elsewhere can point back at it.
  std::map<std::string, std::filesystem::path> mesh_files;

  const TriangleMesh& mesh_of(const SceneNode& n) const { return meshes.at(n.mesh_ref); }
};

struct Violation {
  std::string subject;
  std::string rule;

  std::string to_string() const { return rule + ": " + subject; }
  friend bool operator==(const Violation&, const Violation&) = default;
};

namespace detail {

inline bool orthonormal(const Mat3& r) {
  return ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-6) && r.determinant() > 0.0;
}

/// Nodes on a parent cycle, reported once per cycle under its smallest id.
inline std::vector<std::string> cycle_representatives(const SceneGraph& g) {
  std::map<std::string, std::string> parent;
  for (const auto& n : g.nodes) parent.emplace(n.id, n.parent_id);
  std::set<std::string> reported;
  std::vector<std::string> out;
  for (const auto& n : g.nodes) {
    // Walk at most |nodes| steps; if we come back to a visited node, the
    // cycle is the tail of the path starting at that node.
    std::vector<std::string> path;
    std::set<std::string> on_path;
    std::string cur = n.id;
    while (parent.count(cur) && !on_path.count(cur)) {
      on_path.insert(cur);
      path.push_back(cur);
      cur = parent.at(cur);
    }
    if (!on_path.count(cur)) continue;
    const auto start = std::find(path.begin(), path.end(), cur);
    const std::string rep = *std::min_element(start, path.end());
    if (reported.insert(rep).second) out.push_back(rep);
  }
  return out;
}

}  // namespace detail

/// Checks every data-model invariant. Violations come out in a fixed order
/// (rule groups, then file order), so the report is deterministic.
inline std::vector<Violation> validate_bundle(const SceneBundle& b) {
  std::vector<Violation> out;
  const auto& nodes = b.graph.nodes;
  std::set<std::string> ids;
  for (const auto& n : nodes) {
    if (n.id == kGroundId || !ids.insert(n.id).second) out.push_back({n.id, "duplicate id"});
  }
  for (const auto& n : nodes) {
    const auto it = b.meshes.find(n.mesh_ref);
    if (it == b.meshes.end()) {
      out.push_back({n.id, "dangling mesh_ref"});
    } else if (it->second.empty()) {
      out.push_back({n.id, "invalid mesh"});
    }
  }
  for (const auto& n : nodes) {
    if (n.parent_id != kGroundId && !ids.count(n.parent_id)) out.push_back({n.id, "dangling parent"});
  }
  for (const auto& id : detail::cycle_representatives(b.graph)) out.push_back({id, "cycle"});

  std::vector<const SceneNode*> anchors;
  for (const auto& n : nodes) {
    if (n.role == Role::kAnchor) anchors.push_back(&n);
  }
  if (anchors.size() > 1) {
    std::vector<std::string> names;
    for (const auto* a : anchors) names.push_back(a->id);
    std::sort(names.begin(), names.end());
    out.push_back({names[1], "multiple anchors"});
  }
  if (anchors.empty() && !nodes.empty()) out.push_back({"scene", "missing anchor"});
  for (const auto* a : anchors) {
    if (!a->on_ground()) out.push_back({a->id, "anchor parent not ground"});
  }

  for (const auto& n : nodes) {
    const auto& p = n.pose;
    if (!std::isfinite(p.scale) || !std::isfinite(p.yaw) || !p.translation.allFinite()) {
      out.push_back({n.id, "non-finite pose"});
      continue;
    }
    if (p.scale <= 0.0) out.push_back({n.id, "nonpositive scale"});
    if (p.yaw < 0.0 || p.yaw >= kTwoPi) out.push_back({n.id, "yaw out of range"});
  }

  for (const auto& [id, pairs] : b.correspondences) {
    if (!ids.count(id)) out.push_back({id, "unknown correspondence node"});
    for (const auto& c : pairs) {
      if (!c.p_local.allFinite() || !c.q_world.allFinite() || !c.q_pixel.allFinite() || !std::isfinite(c.confidence)) {
        out.push_back({id, "non-finite correspondence"});
        break;
      }
    }
    for (const auto& c : pairs) {
      if (std::isfinite(c.confidence) && (c.confidence < 0.0 || c.confidence > 1.0)) {
        out.push_back({id, "confidence out of range"});
        break;
      }
    }
  }
  if (!b.correspondences.empty() && !b.camera) {
    out.push_back({b.correspondences.begin()->first, "missing camera"});
  }
  if (b.camera) {
    const auto& c = *b.camera;
    if (!(c.fx > 0.0) || !(c.fy > 0.0)) out.push_back({"camera", "nonpositive focal length"});
    if (!c.rotation.allFinite() || !detail::orthonormal(c.rotation)) {
      out.push_back({"camera", "non-orthonormal camera rotation"});
    }
  }
  if (!std::isfinite(b.graph.ground_height)) out.push_back({"scene", "non-finite ground height"});
  if (b.floor) {
    const auto& f = *b.floor;
    bool ok = f.min.allFinite() && f.max.allFinite() && (f.max.array() > f.min.array()).all();
    for (const auto& poly : f.obstacles) {
      ok = ok && poly.size() >= 3 && std::all_of(poly.begin(), poly.end(), [](const Vec2& v) { return v.allFinite(); });
    }
    if (!ok) out.push_back({"floor", "invalid floor"});
  }
  return out;
}

/// Level order from the ground: the anchor first, then the remaining
/// floor-standing nodes by id, then each deeper level sorted by id.
inline std::vector<std::string> bfs_order(const SceneGraph& g) {
  std::map<std::string, std::vector<std::string>> children;
  std::vector<std::string> level;
  std::string anchor;
  for (const auto& n : g.nodes) {
    if (n.on_ground()) {
      if (n.role == Role::kAnchor) {
        anchor = n.id;
      } else {
        level.push_back(n.id);
      }
    } else {
      children[n.parent_id].push_back(n.id);
    }
  }
  std::sort(level.begin(), level.end());
  if (!anchor.empty()) level.insert(level.begin(), anchor);
  std::vector<std::string> order;
  while (!level.empty()) {
    order.insert(order.end(), level.begin(), level.end());
    std::vector<std::string> next;
    for (const auto& id : level) {
      const auto it = children.find(id);
      if (it != children.end()) next.insert(next.end(), it->second.begin(), it->second.end());
    }
    std::sort(next.begin(), next.end());
    level = std::move(next);
  }
  return order;
}

namespace detail {

using nlohmann::json;

inline double num(const json& j, const char* what) {
  if (!j.is_number()) throw ParseError(std::string("bundle: '") + what + "' must be a number");
  return j.get<double>();
}

template <int N>
Eigen::Matrix<double, N, 1> vec(const json& j, const char* what) {
  if (!j.is_array() || j.size() != N) {
    throw ParseError(std::string("bundle: '") + what + "' must be an array of " + std::to_string(N) + " numbers");
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = num(j[i], what);
  return v;
}

inline const json& field(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(std::string("bundle: missing field '") + key + "'");
  return *it;
}

inline std::string str(const json& j, const char* what) {
  if (!j.is_string()) throw ParseError(std::string("bundle: '") + what + "' must be a string");
  return j.get<std::string>();
}

inline Role parse_role(const std::string& s) {
  if (s == "anchor") return Role::kAnchor;
  if (s == "parent") return Role::kParent;
  if (s == "child") return Role::kChild;
  throw ParseError("bundle: unknown role '" + s + "'");
}

template <typename V>
nlohmann::ordered_json arr(const V& v) {
  nlohmann::ordered_json a = nlohmann::ordered_json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

}  // namespace detail

/// Parses the bundle document. Mesh paths are resolved against `base_dir`.
/// Unreadable or malformed meshes are left out of `meshes` (reported later
/// as dangling/invalid) rather than thrown, so validation can name the node.
inline SceneBundle parse_bundle(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  using detail::field;
  using detail::num;
  using nlohmann::json;
  if (!doc.is_object()) throw ParseError("bundle: top level must be an object");
  SceneBundle b;
  if (auto it = doc.find("ground_height"); it != doc.end()) b.graph.ground_height = num(*it, "ground_height");

  const json& nodes = field(doc, "nodes");
  if (!nodes.is_array()) throw ParseError("bundle: 'nodes' must be an array");
  for (const auto& jn : nodes) {
    if (!jn.is_object()) throw ParseError("bundle: node entries must be objects");
    SceneNode n;
    n.id = detail::str(field(jn, "id"), "id");
    n.mesh_ref = detail::str(field(jn, "mesh"), "mesh");
    if (auto it = jn.find("parent"); it != jn.end() && !it->is_null()) n.parent_id = detail::str(*it, "parent");
    n.role = detail::parse_role(detail::str(field(jn, "role"), "role"));
    const json& jp = field(jn, "pose");
    n.pose.scale = num(field(jp, "scale"), "scale");
    n.pose.yaw = normalize_yaw(num(field(jp, "yaw"), "yaw"));
    n.pose.translation = detail::vec<3>(field(jp, "translation"), "translation");
    b.graph.nodes.push_back(std::move(n));
  }

  for (const auto& n : b.graph.nodes) {
    if (b.meshes.count(n.mesh_ref) || b.mesh_files.count(n.mesh_ref)) continue;
    const std::filesystem::path file = (base_dir / n.mesh_ref).lexically_normal();
    b.mesh_files.emplace(n.mesh_ref, file);
    std::ifstream in(file);
    if (!in) continue;
    try {
      b.meshes.emplace(n.mesh_ref, prepare_mesh(parse_obj(in), file.string()));
    } catch (const ParseError&) {
      b.meshes.emplace(n.mesh_ref, TriangleMesh{});
    }
  }

  if (auto it = doc.find("camera"); it != doc.end() && !it->is_null()) {
    const json& jc = *it;
    Camera c;
    c.fx = num(field(jc, "fx"), "fx");
    c.fy = num(field(jc, "fy"), "fy");
    c.cx = num(field(jc, "cx"), "cx");
    c.cy = num(field(jc, "cy"), "cy");
    c.width = jc.contains("width") ? num(jc["width"], "width") : 2.0 * c.cx;
    c.height = jc.contains("height") ? num(jc["height"], "height") : 2.0 * c.cy;
    const json& jr = field(jc, "rotation");
    if (!jr.is_array() || jr.size() != 3) throw ParseError("bundle: camera 'rotation' must be 3 rows");
    for (int r = 0; r < 3; ++r) c.rotation.row(r) = detail::vec<3>(jr[r], "rotation").transpose();
    c.translation = detail::vec<3>(field(jc, "translation"), "translation");
    b.camera = c;
  }

  if (auto it = doc.find("correspondences"); it != doc.end() && !it->is_null()) {
    if (!it->is_object()) throw ParseError("bundle: 'correspondences' must be an object");
    for (const auto& [id, list] : it->items()) {
      if (!list.is_array()) throw ParseError("bundle: correspondence set '" + id + "' must be an array");
      auto& pairs = b.correspondences[id];
      for (const auto& jc : list) {
        CorrespondencePair c;
        c.p_local = detail::vec<3>(field(jc, "p_local"), "p_local");
        c.q_world = detail::vec<3>(field(jc, "q_world"), "q_world");
        c.q_pixel = detail::vec<2>(field(jc, "q_pixel"), "q_pixel");
        c.confidence = num(field(jc, "confidence"), "confidence");
        pairs.push_back(c);
      }
    }
  }

  if (auto it = doc.find("floor"); it != doc.end() && !it->is_null()) {
    Floor f;
    f.min = detail::vec<2>(field(*it, "min"), "floor.min");
    f.max = detail::vec<2>(field(*it, "max"), "floor.max");
    if (auto ob = it->find("obstacles"); ob != it->end() && !ob->is_null()) {
      if (!ob->is_array()) throw ParseError("bundle: 'floor.obstacles' must be an array");
      for (const auto& poly : *ob) {
        if (!poly.is_array()) throw ParseError("bundle: obstacle must be an array of points");
        std::vector<Vec2> pts;
        for (const auto& p : poly) pts.push_back(detail::vec<2>(p, "obstacle point"));
        f.obstacles.push_back(std::move(pts));
      }
    }
    b.floor = std::move(f);
  }
  return b;
}

/// Reads, parses and validates a bundle; throws ValidationError on the first
/// violated invariant.
inline SceneBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open bundle '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("bundle '" + path.string() + "': " + e.what());
  }
  SceneBundle b = parse_bundle(doc, path.parent_path());
  const auto violations = validate_bundle(b);
  if (!violations.empty()) throw ValidationError(violations.front().rule, violations.front().subject);
  return b;
}

/// Serializes the bundle document. `mesh_path` maps each mesh_ref to the
/// string written in the "mesh" field.
inline nlohmann::ordered_json bundle_to_json(const SceneBundle& b,
                                             const std::map<std::string, std::string>& mesh_path = {}) {
  using nlohmann::ordered_json;
  ordered_json doc;
  doc["ground_height"] = b.graph.ground_height;
  if (b.camera) {
    const auto& c = *b.camera;
    ordered_json jc;
    jc["fx"] = c.fx;
    jc["fy"] = c.fy;
    jc["cx"] = c.cx;
    jc["cy"] = c.cy;
    jc["width"] = c.width;
    jc["height"] = c.height;
    jc["rotation"] = ordered_json::array();
    for (int r = 0; r < 3; ++r) jc["rotation"].push_back(detail::arr(Vec3(c.rotation.row(r).transpose())));
    jc["translation"] = detail::arr(c.translation);
    doc["camera"] = jc;
  } else {
    doc["camera"] = nullptr;
  }
  doc["nodes"] = ordered_json::array();
  for (const auto& n : b.graph.nodes) {
    ordered_json jn;
    jn["id"] = n.id;
    const auto mp = mesh_path.find(n.mesh_ref);
    jn["mesh"] = mp == mesh_path.end() ? n.mesh_ref : mp->second;
    jn["parent"] = n.parent_id;
    jn["role"] = std::string(to_string(n.role));
    jn["pose"] = {{"scale", n.pose.scale}, {"yaw", n.pose.yaw}, {"translation", detail::arr(n.pose.translation)}};
    doc["nodes"].push_back(jn);
  }
  ordered_json corr = ordered_json::object();
  for (const auto& [id, pairs] : b.correspondences) {
    ordered_json list = ordered_json::array();
    for (const auto& c : pairs) {
      list.push_back({{"p_local", detail::arr(c.p_local)},
                      {"q_world", detail::arr(c.q_world)},
                      {"q_pixel", detail::arr(c.q_pixel)},
                      {"confidence", c.confidence}});
    }
    corr[id] = list;
  }
  doc["correspondences"] = corr;
  if (b.floor) {
    ordered_json jf;
    jf["min"] = detail::arr(b.floor->min);
    jf["max"] = detail::arr(b.floor->max);
    jf["obstacles"] = ordered_json::array();
    for (const auto& poly : b.floor->obstacles) {
      ordered_json jp = ordered_json::array();
      for (const auto& p : poly) jp.push_back(detail::arr(p));
      jf["obstacles"].push_back(jp);
    }
    doc["floor"] = jf;
  }
  return doc;
}

/// Writes the bundle document to `path`. Meshes that were loaded from disk
/// are referenced by a path relative to the output directory; meshes that
/// only exist in memory are written as OBJ files at `<dir>/<mesh_ref>`.
inline void save_bundle(const SceneBundle& b, const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::map<std::string, std::string> mesh_path;
  for (const auto& [ref, mesh] : b.meshes) {
    const auto src = b.mesh_files.find(ref);
    if (src != b.mesh_files.end() && fs::exists(src->second)) {
      const fs::path rel = fs::weakly_canonical(src->second).lexically_relative(fs::weakly_canonical(dir));
      mesh_path[ref] = rel.empty() ? src->second.generic_string() : rel.generic_string();
      continue;
    }
    const fs::path target = dir / ref;
    fs::create_directories(target.parent_path(), ec);
    std::ofstream out(target);
    if (!out) throw IoError("cannot write mesh '" + target.string() + "'");
    write_obj(out, mesh);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write bundle '" + path.string() + "'");
  out << bundle_to_json(b, mesh_path).dump(2) << '\n';
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

}  // namespace layoutforge
