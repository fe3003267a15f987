#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace lf_test;

namespace {

double yaw_difference(double a, double b) {
  const double d = normalize_yaw(a - b);
  return d > kPi ? d - kTwoPi : d;
}

double max_abs_pose_diff(const Pose5DoF& a, const Pose5DoF& b) {
  return std::max({std::abs(a.scale - b.scale), std::abs(yaw_difference(a.yaw, b.yaw)),
                   (a.translation - b.translation).cwiseAbs().maxCoeff()});
}

// Depth of the deepest posed vertex below the ground plane z = 0.
double ground_penetration(const TriangleMesh& mesh, const Pose5DoF& p) {
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& v : mesh.vertices) lowest = std::min(lowest, p.apply(v).z());
  return std::max(0.0, -lowest);
}

double spacing_of(const TriangleMesh& mesh, const Pose5DoF& p, int resolution = 64) {
  return p.scale * mesh.bounds().extent().maxCoeff() / resolution;
}

SceneBundle table_and_cup(const Pose5DoF& cup_pose) {
  SceneBundle b;
  b.meshes["table.obj"] = primitives::box({1.2, 0.8, 0.75});
  b.meshes["cup.obj"] = primitives::cylinder(0.05, 0.12);
  b.graph.nodes.push_back(make_node("table", "table.obj", Pose5DoF{}, std::string(kGroundId), Role::kAnchor));
  b.graph.nodes.push_back(make_node("cup", "cup.obj", cup_pose, "table", Role::kChild));
  return b;
}

}  // namespace

TEST(Optimizer, ConfigValidation) {
  OptimConfig cfg;
  EXPECT_TRUE(cfg.check().empty());
  cfg.eta_t = 0.0;
  EXPECT_FALSE(cfg.check().empty());
  EXPECT_THROW(optimize_scene(cube_on_ground(), cfg), PreconditionError);
  cfg = OptimConfig{};
  cfg.convergence_tol = -1.0;
  EXPECT_FALSE(cfg.check().empty());
  cfg = OptimConfig{};
  cfg.tau = 1.5;
  EXPECT_FALSE(cfg.check().empty());
}

TEST(Optimizer, DescentStepFollowsRatesAndCaps) {
  OptimConfig cfg;
  Pose5DoF p = pose_at({1, 2, 3}, 2.0, 0.5);
  PoseGradient g;
  g << 0.01, 0.02, 0.1, -0.2, 0.0;
  const double rho2 = 0.5;
  const Pose5DoF n = detail::descent_step(p, g, rho2, cfg);
  EXPECT_NEAR(n.scale, 2.0 - cfg.eta_s * 0.01 / rho2, 1e-15);
  EXPECT_NEAR(n.yaw, 0.5 - cfg.eta_yaw * 0.02 / (4.0 * rho2), 1e-15);
  EXPECT_TRUE(n.translation.isApprox(Vec3(1 - 0.002, 2 + 0.004, 3)));

  g << 100.0, 100.0, 100.0, 0.0, 0.0;
  const Pose5DoF c = detail::descent_step(p, g, rho2, cfg);
  EXPECT_NEAR(c.scale, 2.0 * (1.0 - cfg.max_step_s), 1e-15);
  EXPECT_NEAR(c.yaw, 0.5 - cfg.max_step_yaw, 1e-15);
  EXPECT_NEAR((c.translation - p.translation).norm(), cfg.max_step_t, 1e-15);

  // Scale clamp.
  cfg.max_step_s = 10.0;
  g << 1e6, 0, 0, 0, 0;
  EXPECT_EQ(detail::descent_step(p, g, rho2, cfg).scale, 0.05);
  g << -1e6, 0, 0, 0, 0;
  EXPECT_EQ(detail::descent_step(p, g, rho2, cfg).scale, 20.0);
}

TEST(Optimizer, ZeroGradientFixedPoint) {
  SceneBundle b = cube_on_ground(pose_at({0.5, -0.3, 0.0}, 1.0, 0.7));
  b.correspondences["cube"] = exact_pairs(b.meshes.at("cube.obj"), b.graph.nodes[0].pose, nullptr, 100, 1);
  OptimConfig cfg;
  cfg.weights.two_d = 0.0;
  const SceneResult r = optimize_scene(b, cfg);
  EXPECT_LT(max_abs_pose_diff(r.bundle.graph.nodes[0].pose, b.graph.nodes[0].pose), 1e-6);
  ASSERT_EQ(r.trace.nodes.size(), 1u);
  EXPECT_FALSE(r.trace.nodes[0].aborted);
}

TEST(Optimizer, SunkCubeRisesToTheGround) {
  const SceneBundle b = cube_on_ground(pose_at({0, 0, -0.2}));
  const SceneResult r = optimize_scene(b, OptimConfig{});
  const Pose5DoF& p = r.bundle.graph.nodes[0].pose;
  const double spacing = spacing_of(b.meshes.at("cube.obj"), p);
  EXPECT_LE(ground_penetration(b.meshes.at("cube.obj"), p), spacing);
  const auto st = static_stability(b.meshes.at("cube.obj"), p, GroundPlane{0.0}, spacing);
  EXPECT_LE(std::abs(st.bottom_gap), spacing);
}

TEST(Optimizer, MonotoneSafetyOnSingleCollision) {
  const SceneBundle b = cube_on_ground(pose_at({0, 0, -0.2}, 1.0, 0.3));
  const SceneResult r = optimize_scene(b, OptimConfig{});
  const auto& mesh = b.meshes.at("cube.obj");
  double previous = std::numeric_limits<double>::infinity();
  int checked = 0;
  for (const auto& rec : r.trace.records) {
    if (rec.stage != Stage::kPhysics || rec.iter % 10 != 0) continue;
    const double pen = ground_penetration(mesh, rec.pose);
    EXPECT_LE(pen, previous + 1e-12) << "iteration " << rec.iter;
    previous = pen;
    ++checked;
  }
  EXPECT_GT(checked, 1);
}

TEST(Optimizer, AlignmentRecoversPose) {
  const TriangleMesh mesh = primitives::box({0.8, 0.5, 0.6});
  const Pose5DoF truth = pose_at({0.3, -0.2, 0.0}, 1.2, 30.0 * kPi / 180.0);
  SceneBundle b;
  b.meshes["m.obj"] = mesh;
  b.camera = look_at_camera({3.0, -3.0, 2.5}, {0.0, 0.0, 0.4}, 1024, 768, 700);
  b.graph.nodes.push_back(make_node("m", "m.obj", Pose5DoF{}, std::string(kGroundId), Role::kAnchor));
  b.correspondences["m"] = exact_pairs(mesh, truth, &*b.camera, 100, 5);
  const SceneResult r = optimize_scene(b, OptimConfig{}, AblationMode::kPose);
  const Pose5DoF& p = r.bundle.graph.nodes[0].pose;
  const double extent = mesh.bounds().extent().maxCoeff();
  EXPECT_LT(std::abs(p.scale - truth.scale) / truth.scale, 0.02);
  EXPECT_LT(std::abs(yaw_difference(p.yaw, truth.yaw)), 2.0 * kPi / 180.0);
  EXPECT_LT((p.translation - truth.translation).norm(), 0.02 * extent);
  EXPECT_GT(r.trace.nodes[0].iters_alignment, 0);
  EXPECT_EQ(r.trace.nodes[0].iters_physics, 0);
}

TEST(Optimizer, CupSettlesOnTable) {
  // Cup starts 3 cm into the tabletop.
  const SceneBundle b = table_and_cup(pose_at({0.2, 0.1, 0.72}, 1.0, 0.4));
  const SceneResult r = optimize_scene(b);
  const Pose5DoF& table = r.bundle.graph.nodes[0].pose;
  const Pose5DoF& cup = r.bundle.graph.nodes[1].pose;
  EXPECT_LT(max_abs_pose_diff(table, Pose5DoF{}), 1e-6);
  const auto& cup_mesh = b.meshes.at("cup.obj");
  const auto& table_mesh = b.meshes.at("table.obj");
  const double spacing = std::max(spacing_of(cup_mesh, cup), spacing_of(table_mesh, table));
  const auto pen = exact_pair_collision(cup_mesh, cup, table_mesh, table, spacing);
  EXPECT_FALSE(pen.collided) << "penetration " << pen.penetration;
  const MeshDistanceField table_field(apply_pose(table_mesh, table));
  const auto st = static_stability(cup_mesh, cup, SupportField{&table_field}, spacing);
  EXPECT_LE(std::abs(st.bottom_gap), spacing);
  EXPECT_TRUE(st.stable);
}

TEST(Optimizer, NodesFollowSceneGraphOrder) {
  const SyntheticScene sc = make_synthetic_scene(3);
  const SceneResult r = optimize_scene(sc.bundle);
  const auto order = bfs_order(sc.bundle.graph);
  EXPECT_EQ(r.trace.finalized, order);
  // Records are grouped per node in processing order, and every parent is
  // finalized before the first record of its child.
  std::map<std::string, std::size_t> first, last;
  for (std::size_t i = 0; i < r.trace.records.size(); ++i) {
    const auto& id = r.trace.records[i].node;
    if (!first.count(id)) first[id] = i;
    last[id] = i;
  }
  for (const auto& n : sc.bundle.graph.nodes) {
    if (n.on_ground() || !first.count(n.id)) continue;
    ASSERT_TRUE(last.count(n.parent_id));
    EXPECT_LT(last.at(n.parent_id), first.at(n.id));
    const auto pos = [&](const std::string& id) { return std::find(order.begin(), order.end(), id) - order.begin(); };
    EXPECT_LT(pos(n.parent_id), pos(n.id));
  }
  // Iteration indices strictly increase per (node, stage).
  std::map<std::pair<std::string, int>, int> prev;
  for (const auto& rec : r.trace.records) {
    const auto key = std::make_pair(rec.node, static_cast<int>(rec.stage));
    if (prev.count(key)) EXPECT_GT(rec.iter, prev[key]);
    prev[key] = rec.iter;
  }
  EXPECT_EQ(r.scene.parts().size(), sc.bundle.graph.nodes.size() + 1);
}

TEST(Optimizer, MultiObjectFinalPenetrationWithinSpacing) {
  const SyntheticScene sc = make_synthetic_scene(4);
  const SceneResult r = optimize_scene(sc.bundle);
  const auto m = collision_metrics(r.bundle);
  for (const auto& o : m.per_object) {
    const SceneNode& n = *r.bundle.graph.find(o.id);
    EXPECT_LE(o.max_penetration, spacing_of(r.bundle.mesh_of(n), n.pose)) << o.id;
  }
}

TEST(Optimizer, Deterministic) {
  const SyntheticScene sc = make_synthetic_scene(5);
  OptimConfig cfg;
  cfg.seed = 42;
  const SceneResult a = optimize_scene(sc.bundle, cfg);
  const SceneResult b = optimize_scene(sc.bundle, cfg);
  std::ostringstream ta, tb;
  write_trace_ndjson(ta, a.trace);
  write_trace_ndjson(tb, b.trace);
  EXPECT_EQ(ta.str(), tb.str());
  ASSERT_EQ(a.bundle.graph.nodes.size(), b.bundle.graph.nodes.size());
  for (std::size_t i = 0; i < a.bundle.graph.nodes.size(); ++i) {
    EXPECT_EQ(a.bundle.graph.nodes[i].pose, b.bundle.graph.nodes[i].pose);
  }
}

TEST(Optimizer, OwnVolumeIsNotACollision) {
  // The scene holds the node's own grid under its id; an optimizer pass over
  // a scene without it must see no collision for a node resting in free space.
  const SceneBundle b = cube_on_ground(pose_at({0, 0, 0.5}));
  const SceneNode& n = b.graph.nodes[0];
  const OptimConfig cfg;
  const NodeGeometry g = prepare_node_geometry(b, n, cfg);
  const SceneSdf ground = SceneSdf::with_ground(0.0);
  const LossBreakdown lb = total_loss(g, n.pose, ground, GroundPlane{}, cfg.weights, Stage::kPhysics);
  EXPECT_EQ(lb.collided, 0);
  EXPECT_EQ(lb.trans, 0.0);

  // optimize_scene adds each node's grid only after it is finalized.
  const SceneResult r = optimize_scene(b, cfg);
  ASSERT_FALSE(r.trace.records.empty());
  for (const auto& rec : r.trace.records) EXPECT_EQ(rec.l_trans, 0.0);
  EXPECT_EQ(r.trace.finalized, std::vector<std::string>{"cube"});
  EXPECT_EQ(r.scene.parts().size(), 2u);
}

TEST(Optimizer, NoCorrespondencesSkipsAlignment) {
  const SceneResult r = optimize_scene(cube_on_ground(pose_at({0, 0, 0.1})));
  EXPECT_EQ(r.trace.nodes[0].iters_alignment, 0);
  EXPECT_GT(r.trace.nodes[0].iters_physics, 0);
  for (const auto& rec : r.trace.records) EXPECT_EQ(rec.stage, Stage::kPhysics);
}

TEST(Optimizer, NonFiniteLossAbortsNode) {
  SceneBundle b = cube_on_ground(pose_at({0, 0, 0.3}));
  CorrespondencePair c;
  c.p_local = Vec3(0, 0, 0.5);
  c.q_world = Vec3(std::numeric_limits<double>::quiet_NaN(), 0, 0);
  c.confidence = 1.0;
  b.correspondences["cube"] = {c};
  OptimConfig cfg;
  cfg.weights.two_d = 0.0;
  const SceneResult r = optimize_scene(b, cfg);
  ASSERT_EQ(r.trace.nodes.size(), 1u);
  EXPECT_TRUE(r.trace.nodes[0].aborted);
  EXPECT_FALSE(r.trace.nodes[0].message.empty());
  EXPECT_TRUE(r.bundle.graph.nodes[0].pose.finite());
  EXPECT_EQ(r.bundle.graph.nodes[0].pose, b.graph.nodes[0].pose);
}

TEST(Ablation, RawIsIdentity) {
  const SyntheticScene sc = make_synthetic_scene(6);
  const SceneBundle out = ablation_run(sc.bundle, OptimConfig{}, AblationMode::kRaw);
  ASSERT_EQ(out.graph.nodes.size(), sc.bundle.graph.nodes.size());
  for (std::size_t i = 0; i < out.graph.nodes.size(); ++i) {
    EXPECT_EQ(out.graph.nodes[i].pose, sc.bundle.graph.nodes[i].pose);
  }
}

TEST(Ablation, ModesParse) {
  EXPECT_EQ(parse_mode("raw"), AblationMode::kRaw);
  EXPECT_EQ(parse_mode("full"), AblationMode::kFull);
  for (auto m : {AblationMode::kRaw, AblationMode::kPose, AblationMode::kCollision, AblationMode::kFull}) {
    EXPECT_EQ(parse_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_mode("bogus"), PreconditionError);
}

TEST(Ablation, PoseModeSkipsPhysics) {
  const SyntheticScene sc = make_synthetic_scene(7);
  const SceneResult r = optimize_scene(sc.bundle, OptimConfig{}, AblationMode::kPose);
  for (const auto& rec : r.trace.records) EXPECT_EQ(rec.stage, Stage::kAlignment);
  EXPECT_TRUE(r.sdfs.empty());
}

TEST(Trace, NdjsonRecordShape) {
  const SceneResult r = optimize_scene(cube_on_ground(pose_at({0, 0, 0.1})));
  std::ostringstream os;
  write_trace_ndjson(os, r.trace);
  std::istringstream is(os.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"node", "stage", "iter", "L_pose", "L_trans", "L_scale", "L_stab", "pose"}) {
      EXPECT_TRUE(j.contains(k)) << k;
    }
    ++n;
  }
  EXPECT_EQ(n, r.trace.records.size());
}
