#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "layoutforge/common.hpp"
#include "layoutforge/losses.hpp"
#include "layoutforge/meshkit.hpp"
#include "layoutforge/scene_model.hpp"
#include "layoutforge/sdfgrid.hpp"

namespace layoutforge {

struct OptimConfig {
  int max_iters_alignment = 300;
  int max_iters_physics = 300;
  // Step = rate * gradient, with scale and yaw steps divided by the mean
  // squared sample radius (and s^2 for yaw) so one rate fits every object size.
  double eta_s = 0.3;
  double eta_yaw = 0.3;
  double eta_t = 0.02;
  // Per-step caps: meters, fraction of current scale, radians.
  double max_step_t = 0.02;
  double max_step_s = 0.01;
  double max_step_yaw = 0.05;
  double convergence_tol = 1e-9;
  std::size_t n_surface = 400;
  std::size_t m_pairs = 100;
  double tau = 0.6;
  std::uint64_t seed = 0;
  LossWeights weights;
  int sdf_resolution = 64;
  std::size_t bottom_k = kDefaultBottomSamples;
  /// Vertex/edge probes in the translation term (both directions).
  bool feature_probes = true;
  /// Directory for cached per-object grids; empty disables caching.
  std::filesystem::path sdf_cache_dir;

  /// Empty string when valid, otherwise the first problem.
  std::string check() const {
    if (max_iters_alignment < 0 || max_iters_physics < 0) return "iteration budgets must be >= 0";
    if (!(eta_s > 0.0) || !(eta_yaw > 0.0) || !(eta_t > 0.0)) return "learning rates must be > 0";
    if (!(max_step_t > 0.0) || !(max_step_s > 0.0) || !(max_step_yaw > 0.0)) return "step caps must be > 0";
    if (!(convergence_tol > 0.0)) return "convergence_tol must be > 0";
    if (n_surface < 1) return "n_surface must be >= 1";
    if (m_pairs < 1) return "m_pairs must be >= 1";
    if (!(tau >= 0.0 && tau <= 1.0)) return "tau must lie in [0, 1]";
    if (!weights.valid()) return "loss weights must be >= 0 with at least one > 0";
    if (sdf_resolution < 8) return "sdf_resolution must be >= 8";
    if (bottom_k < 4) return "bottom_k must be >= 4";
    return {};
  }
};

/// Cumulative ablation steps: input as-is, + alignment, + collision terms,
/// + stability (the full method).
enum class AblationMode { kRaw, kPose, kCollision, kFull };

inline std::string_view to_string(AblationMode m) {
  switch (m) {
    case AblationMode::kRaw: return "raw";
    case AblationMode::kPose: return "pose";
    case AblationMode::kCollision: return "collision";
    case AblationMode::kFull: return "full";
  }
  return "full";
}

inline AblationMode parse_mode(std::string_view s) {
  if (s == "raw") return AblationMode::kRaw;
  if (s == "pose") return AblationMode::kPose;
  if (s == "collision") return AblationMode::kCollision;
  if (s == "full") return AblationMode::kFull;
  throw PreconditionError("unknown mode '" + std::string(s) + "' (expected raw|pose|collision|full)");
}

struct TraceRecord {
  std::string node;
  Stage stage = Stage::kAlignment;
  int iter = 0;
  double l_pose = 0.0;
  double l_trans = 0.0;
  double l_scale = 0.0;
  double l_stab = 0.0;
  Pose5DoF pose;
};

struct NodeDiagnostics {
  std::string node;
  int iters_alignment = 0;
  int iters_physics = 0;
  bool aborted = false;
  std::string message;
};

struct OptimTrace {
  std::vector<TraceRecord> records;
  std::vector<NodeDiagnostics> nodes;
  /// Node ids in the order their SDFs entered the scene.
  std::vector<std::string> finalized;
};

inline void write_trace_ndjson(std::ostream& out, const OptimTrace& trace) {
  for (const auto& r : trace.records) {
    nlohmann::ordered_json j;
    j["node"] = r.node;
    j["stage"] = std::string(to_string(r.stage));
    j["iter"] = r.iter;
    j["L_pose"] = r.l_pose;
    j["L_trans"] = r.l_trans;
    j["L_scale"] = r.l_scale;
    j["L_stab"] = r.l_stab;
    j["pose"] = {{"scale", r.pose.scale},
                 {"yaw", r.pose.yaw},
                 {"translation", {r.pose.translation.x(), r.pose.translation.y(), r.pose.translation.z()}}};
    out << j.dump() << '\n';
  }
}

/// Deterministic per-(node, stage) seed.
inline std::uint64_t node_seed(std::uint64_t seed, std::string_view node, Stage stage) {
  std::uint64_t h = fnv1a_bytes(&seed, sizeof(seed));
  h = fnv1a(node, h);
  const auto st = static_cast<std::uint8_t>(stage);
  return fnv1a_bytes(&st, 1, h);
}

/// Grid build with an optional on-disk cache keyed by mesh content and pose.
inline GridSdf cached_build_sdf(const TriangleMesh& mesh, std::string_view mesh_ref, const Pose5DoF& pose,
                                int resolution, const std::filesystem::path& cache_dir) {
  if (cache_dir.empty()) return build_sdf(mesh, pose, {resolution, std::nullopt});
  std::string ref(mesh_ref);
  std::uint64_t content = fnv1a_bytes(mesh.vertices.data(), mesh.vertices.size() * sizeof(Vec3));
  content = fnv1a_bytes(mesh.faces.data(), mesh.faces.size() * sizeof(Face), content);
  ref += '#' + std::to_string(content);
  const auto file = cache_dir / (sdf_cache_key(ref, pose, resolution) + ".sdf");
  if (std::filesystem::exists(file)) {
    try {
      return read_sdf_cache(file);
    } catch (const ParseError&) {
      // Corrupt entry: rebuild and overwrite below.
    }
  }
  GridSdf g = build_sdf(mesh, pose, {resolution, std::nullopt});
  std::error_code ec;
  std::filesystem::create_directories(cache_dir, ec);
  write_sdf_cache(file, g);
  return g;
}

/// Per-node setup shared by both stages.
inline NodeGeometry prepare_node_geometry(const SceneBundle& bundle, const SceneNode& node, const OptimConfig& cfg) {
  NodeGeometry g;
  g.mesh = &bundle.mesh_of(node);
  g.centroid_local = centroid(*g.mesh);
  g.samples_local = sample_surface(*g.mesh, cfg.n_surface, node_seed(cfg.seed, node.id, Stage::kPhysics)).points;
  g.link_radius_local = kClusterLinkFactor * mean_nearest_neighbor_spacing(g.samples_local);
  g.bottom = make_bottom_layout(cfg.bottom_k, node_seed(cfg.seed, node.id, Stage::kPhysics) ^ 0x9e3779b97f4a7c15ULL);
  if (auto it = bundle.correspondences.find(node.id); it != bundle.correspondences.end()) g.pairs = it->second;
  g.camera = bundle.camera ? &*bundle.camera : nullptr;
  if (cfg.feature_probes) {
    const double spacing = g.mesh->bounds().extent().maxCoeff() / cfg.sdf_resolution;
    g.probes_local = feature_probes(*g.mesh, 0.5 * spacing);
  }
  return g;
}

struct NodeResult {
  Pose5DoF pose;
  NodeDiagnostics diagnostics;
};

namespace detail {

inline double mean_squared_radius(std::span<const Vec3> pts) {
  double acc = 0.0;
  for (const auto& p : pts) acc += p.squaredNorm();
  return pts.empty() ? 1.0 : std::max(acc / static_cast<double>(pts.size()), 1e-12);
}

inline Pose5DoF descent_step(const Pose5DoF& pose, const PoseGradient& g, double rho2, const OptimConfig& cfg) {
  const double s = pose.scale;
  const double ds = std::clamp(cfg.eta_s * g[kScale] / rho2, -cfg.max_step_s * s, cfg.max_step_s * s);
  const double dyaw = std::clamp(cfg.eta_yaw * g[kYaw] / (s * s * rho2), -cfg.max_step_yaw, cfg.max_step_yaw);
  Vec3 dt = cfg.eta_t * g.segment<3>(kTx);
  const double n = dt.norm();
  if (n > cfg.max_step_t) dt *= cfg.max_step_t / n;
  Pose5DoF next;
  next.scale = std::clamp(s - ds, 0.05, 20.0);
  next.yaw = normalize_yaw(pose.yaw - dyaw);
  next.translation = pose.translation - dt;
  return next;
}

}  // namespace detail

/// Gradient descent on one stage. Records one trace entry per evaluated
/// iterate; stops when the loss changed by less than the tolerance over the
/// last 10 iterations, or on a non-finite value (keeping the last finite pose).
inline int run_stage(const NodeGeometry& geom, Pose5DoF& pose, const SceneSdf& scene, const SdfField& parent,
                     const LossWeights& weights, Stage stage, const OptimConfig& cfg, const std::string& node_id,
                     OptimTrace& trace, NodeDiagnostics& diag) {
  const int budget = stage == Stage::kAlignment ? cfg.max_iters_alignment : cfg.max_iters_physics;
  const double rho2 = detail::mean_squared_radius(geom.samples_local);
  const PoseLossOptions opts{cfg.m_pairs, cfg.tau};
  std::vector<double> history;
  for (int it = 0; it < budget; ++it) {
    LossBreakdown lb;
    try {
      lb = total_loss(geom, pose, scene, parent, weights, stage, opts);
    } catch (const PreconditionError& e) {
      diag.aborted = true;
      diag.message = std::string(to_string(stage)) + ": " + e.what();
      return it;
    }
    if (!std::isfinite(lb.total.value) || !lb.total.gradient.allFinite()) {
      diag.aborted = true;
      diag.message = std::string(to_string(stage)) + ": non-finite loss or gradient at iteration " + std::to_string(it);
      return it;
    }
    trace.records.push_back({node_id, stage, it, lb.pose, lb.trans, lb.scale, lb.stab, pose});
    history.push_back(lb.total.value);
    if (history.size() > 10 && std::abs(history.back() - history[history.size() - 11]) < cfg.convergence_tol) {
      return it + 1;
    }
    const Pose5DoF next = detail::descent_step(pose, lb.total.gradient, rho2, cfg);
    if (!next.finite()) {
      diag.aborted = true;
      diag.message = std::string(to_string(stage)) + ": non-finite pose update at iteration " + std::to_string(it);
      return it + 1;
    }
    pose = next;
  }
  return budget;
}

/// Per-node loop: alignment on correspondences (when present), then the
/// physics terms against the already placed scene and the parent.
inline NodeResult optimize_node(const SceneNode& node, const SceneSdf& scene, const SdfField& parent,
                                const SceneBundle& bundle, const OptimConfig& cfg, AblationMode mode,
                                OptimTrace& trace, std::vector<Vec3> foreign_probes = {},
                                std::shared_ptr<const GridSdf> self_sdf = nullptr) {
  NodeResult out;
  out.pose = node.pose;
  out.diagnostics.node = node.id;
  if (mode == AblationMode::kRaw) return out;
  NodeGeometry geom = prepare_node_geometry(bundle, node, cfg);
  geom.foreign_probes = std::move(foreign_probes);
  geom.self_sdf = std::move(self_sdf);

  if (!geom.pairs.empty()) {
    if (select_pairs(geom.pairs, cfg.m_pairs, cfg.tau).empty()) {
      out.diagnostics.message = "alignment skipped: no correspondence with confidence >= tau";
    } else {
      out.diagnostics.iters_alignment = run_stage(geom, out.pose, scene, parent, cfg.weights, Stage::kAlignment, cfg,
                                                  node.id, trace, out.diagnostics);
      if (out.diagnostics.aborted) return out;
    }
  }
  if (mode == AblationMode::kPose) return out;
  LossWeights w = cfg.weights;
  if (mode == AblationMode::kCollision) w.stab = 0.0;
  if (w.trans > 0.0 || w.scale > 0.0 || w.stab > 0.0) {
    out.diagnostics.iters_physics =
        run_stage(geom, out.pose, scene, parent, w, Stage::kPhysics, cfg, node.id, trace, out.diagnostics);
  }
  return out;
}

struct SceneResult {
  SceneBundle bundle;
  OptimTrace trace;
  SceneSdf scene;
  /// World-frame grid of each node at its final pose (physics modes only).
  std::map<std::string, std::shared_ptr<const GridSdf>> sdfs;
};

/// Places every node in scene-graph order. After a node is finalized its
/// grid is built at the final pose and added to the scene SDF.
inline SceneResult optimize_scene(const SceneBundle& bundle, const OptimConfig& cfg = {},
                                  AblationMode mode = AblationMode::kFull) {
  if (const auto err = cfg.check(); !err.empty()) throw PreconditionError("config: " + err);
  SceneResult res;
  res.bundle = bundle;
  res.scene = SceneSdf::with_ground(bundle.graph.ground_height);
  if (mode == AblationMode::kRaw) return res;
  const bool physics = mode == AblationMode::kCollision || mode == AblationMode::kFull;
  std::vector<Vec3> placed_probes;

  for (const auto& id : bfs_order(bundle.graph)) {
    SceneNode& node = *res.bundle.graph.find(id);
    SdfField parent = GroundPlane{bundle.graph.ground_height};
    if (physics && !node.on_ground()) parent = res.sdfs.at(node.parent_id);
    std::shared_ptr<const GridSdf> self_sdf;
    const TriangleMesh& mesh = bundle.mesh_of(node);
    if (physics && cfg.feature_probes && !placed_probes.empty()) {
      self_sdf = std::make_shared<const GridSdf>(
          cached_build_sdf(mesh, node.mesh_ref, Pose5DoF{}, cfg.sdf_resolution, cfg.sdf_cache_dir));
    }
    NodeResult nr = optimize_node(node, res.scene, parent, res.bundle, cfg, mode, res.trace, placed_probes, self_sdf);
    node.pose = nr.pose;
    res.trace.nodes.push_back(nr.diagnostics);
    if (!physics) continue;
    auto grid = std::make_shared<const GridSdf>(
        cached_build_sdf(mesh, node.mesh_ref, node.pose, cfg.sdf_resolution, cfg.sdf_cache_dir));
    res.sdfs.emplace(id, grid);
    res.scene.add(id, grid);
    res.trace.finalized.push_back(id);
    if (cfg.feature_probes) {
      const double spacing = mesh.bounds().extent().maxCoeff() / cfg.sdf_resolution;
      for (const auto& p : feature_probes(mesh, 0.5 * spacing)) placed_probes.push_back(node.pose.apply(p));
    }
  }
  return res;
}

/// Runs one ablation mode and returns only the placed bundle.
inline SceneBundle ablation_run(const SceneBundle& bundle, const OptimConfig& cfg, AblationMode mode) {
  return optimize_scene(bundle, cfg, mode).bundle;
}

}  // namespace layoutforge
