#include <gtest/gtest.h>

#include <memory>
#include <random>

#include "fixtures.hpp"
#include "gradient_fixtures.hpp"
#include "oracles.hpp"

using namespace lf_test;

namespace {

Camera test_camera() { return look_at_camera({3.0, -2.0, 2.0}, {0.0, 0.0, 0.5}, 800, 600, 600); }

// Unit sphere (radius 1) squeezed between walls with inner faces at x = +-0.8.
// The walls are thick so the sphere's tips stay clear of their medial planes.
struct SqueezeFixture {
  TriangleMesh sphere = primitives::icosphere(1.0, 4);
  TriangleMesh slab = primitives::box({1.0, 3.0, 3.0});
  SceneSdf scene = SceneSdf::with_ground(0.0);
  Vec3 centroid_local = centroid(sphere);
  // Sphere center at height 1.5, well clear of the ground.
  Pose5DoF pose = pose_at({0, 0, 0.5});

  SqueezeFixture() {
    scene.add("left", std::make_shared<const GridSdf>(build_sdf(slab, pose_at({-1.3, 0, 0}))));
    scene.add("right", std::make_shared<const GridSdf>(build_sdf(slab, pose_at({1.3, 0, 0}))));
  }
};

const SqueezeFixture& squeeze() {
  static const SqueezeFixture f;
  return f;
}

}  // namespace

TEST(PoseLoss, PerfectAlignmentIsZero) {
  const Camera cam = test_camera();
  const auto mesh = primitives::box({0.5, 0.4, 0.3});
  const Pose5DoF p = pose_at({0.1, 0.2, 0.0}, 1.1, 0.4);
  const auto pairs = exact_pairs(mesh, p, &cam, 50, 3);
  const LossValue lv = pose_loss(pairs, p, &cam, 100, 0.6, LossWeights{});
  EXPECT_NEAR(lv.value, 0.0, 1e-20);
  EXPECT_LT(lv.gradient.norm(), 1e-9);
}

TEST(PoseLoss, SingleResidual) {
  CorrespondencePair c;
  c.p_local = Vec3(0.1, 0.2, 0.3);
  c.q_world = c.p_local - Vec3(0.1, 0, 0);
  c.confidence = 1.0;
  LossWeights w;
  w.two_d = 0.0;
  w.three_d = 1.0;
  const LossValue lv = pose_loss(std::vector<CorrespondencePair>{c}, Pose5DoF{}, nullptr, 100, 0.6, w);
  EXPECT_NEAR(lv.value, 0.01, 1e-15);
  EXPECT_TRUE(lv.gradient.segment<3>(kTx).isApprox(Vec3(0.2, 0, 0)));
}

TEST(PoseLoss, ThresholdFilter) {
  std::vector<CorrespondencePair> pairs(5);
  const double conf[] = {0.9, 0.8, 0.7, 0.5, 0.4};
  for (int i = 0; i < 5; ++i) pairs[i].confidence = conf[i];
  EXPECT_EQ(select_pairs(pairs, 100, 0.6).size(), 3u);
  EXPECT_EQ(select_pairs(pairs, 2, 0.6), (std::vector<std::size_t>{0, 1}));
  // Residual only on a below-threshold pair: it must not count.
  LossWeights w;
  w.two_d = 0.0;
  pairs[3].q_world = Vec3(1, 0, 0);
  EXPECT_EQ(pose_loss(pairs, Pose5DoF{}, nullptr, 100, 0.6, w).value, 0.0);
}

TEST(PoseLoss, Errors) {
  std::vector<CorrespondencePair> pairs(2);
  pairs[0].confidence = pairs[1].confidence = 0.1;
  LossWeights w;
  w.two_d = 0.0;
  EXPECT_THROW(pose_loss(pairs, Pose5DoF{}, nullptr, 100, 0.6, w), PreconditionError);
  pairs[0].confidence = 0.9;
  const Camera cam = test_camera();
  pairs[0].p_local = Vec3(10, -10, 5);  // behind the camera
  EXPECT_THROW(pose_loss(pairs, Pose5DoF{}, &cam, 100, 0.6, LossWeights{}), PreconditionError);
}

TEST(PoseLoss, DefaultPixelWeight) {
  const Camera cam = test_camera();
  EXPECT_DOUBLE_EQ(LossWeights{}.resolved_two_d(&cam), 1.0 / (800.0 * 800.0 + 600.0 * 600.0));
}

TEST(DetectCollisions, NothingWhenClear) {
  const SceneSdf scene = SceneSdf::with_ground(0.0);
  const auto cube = primitives::unit_cube();
  const auto s = sample_surface(cube, 400, 1);
  const auto st = detect_collisions(s, pose_at({0, 0, 0.5}), scene, centroid(cube), 0.1);
  EXPECT_TRUE(st.points.empty());
  EXPECT_EQ(st.n_cluster, 0);
}

TEST(DetectCollisions, HalfSunkCubeIsOneCluster) {
  const SceneSdf scene = SceneSdf::with_ground(0.0);
  const auto cube = primitives::unit_cube();
  const auto s = sample_surface(cube, 400, 2);
  const double radius = kClusterLinkFactor * mean_nearest_neighbor_spacing(s.points);
  const Pose5DoF p = pose_at({0, 0, -0.5});
  const auto st = detect_collisions(s, p, scene, centroid(cube), radius);
  std::vector<Vec3> expected;
  for (const auto& q : s.points) {
    if (p.apply(q).z() <= 0.0) expected.push_back(p.apply(q));
  }
  ASSERT_EQ(st.points.size(), expected.size());
  EXPECT_EQ(lf_oracle::brute_force_clusters(expected, radius), 1);
  EXPECT_EQ(st.n_cluster, 1);
  for (const auto& cp : st.points) {
    EXPECT_LE(cp.d, 0.0);
    EXPECT_NEAR(cp.direction.norm(), 1.0, 1e-12);
  }
}

TEST(DetectCollisions, SqueezedSphereHasTwoClusters) {
  const auto& f = squeeze();
  const auto s = sample_surface(f.sphere, 400, 3);
  const double radius = kClusterLinkFactor * mean_nearest_neighbor_spacing(s.points);
  const auto st = detect_collisions(s, f.pose, f.scene, f.centroid_local, radius);
  std::vector<Vec3> hits;
  for (const auto& cp : st.points) hits.push_back(cp.world);
  EXPECT_EQ(lf_oracle::brute_force_clusters(hits, radius), 2);
  EXPECT_EQ(st.n_cluster, 2);
}

TEST(CountClusters, MatchesBruteForce) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Vec3> pts;
    const int n = 1 + static_cast<int>(rng() % 150);
    for (int i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng), 0.2 * u(rng));
    const double r = 0.02 + 0.1 * u(rng);
    EXPECT_EQ(count_clusters(pts, r), lf_oracle::brute_force_clusters(pts, r));
  }
}

TEST(TranslationLoss, Empty) {
  const LossValue lv = translation_collision_loss(CollisionState{}, Pose5DoF{});
  EXPECT_EQ(lv.value, 0.0);
  EXPECT_EQ(lv.gradient, PoseGradient::Zero());
}

TEST(TranslationLoss, SinglePoint) {
  CollisionState st;
  CollidedPoint cp;
  cp.d = -0.1;
  cp.direction = Vec3::UnitX();
  st.points.push_back(cp);
  st.n_cluster = 1;
  const LossValue lv = translation_collision_loss(st, Pose5DoF{});
  EXPECT_NEAR(lv.value, 0.01, 1e-15);
  EXPECT_TRUE(lv.gradient.segment<3>(kTx).isApprox(Vec3(-0.2, 0, 0)));
  EXPECT_EQ(lv.gradient[kScale], 0.0);
  EXPECT_EQ(lv.gradient[kYaw], 0.0);
}

TEST(TranslationLoss, OneStepReducesSinking) {
  const SceneSdf scene = SceneSdf::with_ground(0.0);
  const auto cube = primitives::unit_cube();
  const auto s = sample_surface(cube, 400, 5);
  Pose5DoF p = pose_at({0, 0, -0.2});
  auto max_pen = [&](const Pose5DoF& q) {
    double m = 0;
    for (const auto& x : s.points) m = std::max(m, -scene.query(q.apply(x)));
    return m;
  };
  const auto st = detect_collisions(s, p, scene, centroid(cube), 0.1);
  const double before = max_pen(p);
  const LossValue lv = translation_collision_loss(st, p);
  p.translation -= 0.5 * lv.gradient.segment<3>(kTx);
  EXPECT_LT(max_pen(p), before);
}

TEST(TranslationLoss, ValueIsSumOfSquaredDepths) {
  GradientFixtures fx;
  std::mt19937_64 rng(6);
  for (int i = 0; i < 20; ++i) {
    const GradientCase c = fx.translation_case(rng);
    EXPECT_NEAR(c.value, c.independent_value, 1e-12 * std::max(1.0, c.value));
  }
}

TEST(TranslationLoss, DegenerateDirectionFallsBackToSceneGradient) {
  const SceneSdf scene = SceneSdf::with_ground(0.0);
  const std::vector<Vec3> pts{Vec3(0, 0, 0)};
  const auto st = collect_collisions(pts, pose_at({0, 0, -0.1}), scene, Vec3::Zero());
  ASSERT_EQ(st.points.size(), 1u);
  EXPECT_EQ(st.degenerate_directions, 1);
  EXPECT_TRUE(st.points[0].direction.isApprox(Vec3::UnitZ()));
}

TEST(ScaleLoss, SingleClusterIsGated) {
  const SceneSdf scene = SceneSdf::with_ground(0.0);
  const auto cube = primitives::unit_cube();
  const auto s = sample_surface(cube, 400, 7);
  const auto st = detect_collisions(s, pose_at({0, 0, -0.3}), scene, centroid(cube), 0.2);
  ASSERT_EQ(st.n_cluster, 1);
  ASSERT_FALSE(st.points.empty());
  EXPECT_EQ(scale_collision_loss(st, pose_at({0, 0, -0.3})).value, 0.0);
}

TEST(ScaleLoss, SqueezedSphereTargets) {
  const auto& f = squeeze();
  const auto s = sample_surface(f.sphere, 4000, 8);
  const double radius = kClusterLinkFactor * mean_nearest_neighbor_spacing(s.points);
  const auto st = detect_collisions(s, f.pose, f.scene, f.centroid_local, radius);
  ASSERT_EQ(st.n_cluster, 2);
  // The deepest points sit at the sphere's +-x tips.
  const auto deepest = std::min_element(st.points.begin(), st.points.end(),
                                        [](const CollidedPoint& a, const CollidedPoint& b) { return a.d < b.d; });
  const double u = deepest->to_centroid.norm();
  EXPECT_NEAR(u, 1.0, 0.1);
  EXPECT_NEAR(std::abs(deepest->d), 0.2, 0.02);
  const double target = (u - std::abs(deepest->d)) / u * f.pose.scale;
  EXPECT_NEAR(target, 0.8, 0.08);
  EXPECT_NEAR((target - f.pose.scale) * (target - f.pose.scale), 0.04, 0.004);

  CollisionState one = st;
  one.points = {*deepest};
  EXPECT_NEAR(scale_collision_loss(one, f.pose).value, (target - 1.0) * (target - 1.0), 1e-15);
  EXPECT_NEAR(scale_collision_loss(one, f.pose).gradient[kScale], 2.0 * (1.0 - target), 1e-15);
}

TEST(ScaleLoss, IteratedUpdatesEndNearWallGap) {
  const auto& f = squeeze();
  const auto s = sample_surface(f.sphere, 400, 9);
  const double link = kClusterLinkFactor * mean_nearest_neighbor_spacing(s.points);
  const OptimConfig cfg;
  const double rho2 = detail::mean_squared_radius(s.points);
  Pose5DoF p = f.pose;
  int it = 0;
  for (; it < 1000; ++it) {
    const auto st = detect_collisions(s, p, f.scene, f.centroid_local, link * p.scale);
    const LossValue lv = scale_collision_loss(st, p);
    if (st.points.empty() || lv.value == 0.0) break;
    p = detail::descent_step(p, lv.gradient, rho2, cfg);
  }
  EXPECT_LT(it, 1000);
  EXPECT_GE(p.scale, 0.75);
  EXPECT_LE(p.scale, 0.82);
}

TEST(ScaleLoss, DropsToZeroWhenOneSideClears) {
  const auto& f = squeeze();
  const auto s = sample_surface(f.sphere, 400, 10);
  const double radius = kClusterLinkFactor * mean_nearest_neighbor_spacing(s.points);
  const auto two = detect_collisions(s, f.pose, f.scene, f.centroid_local, radius);
  ASSERT_EQ(two.n_cluster, 2);
  EXPECT_GT(scale_collision_loss(two, f.pose).value, 0.0);
  const Pose5DoF shifted = pose_at({0.3, 0, 0.5});
  const auto one = detect_collisions(s, shifted, f.scene, f.centroid_local, radius);
  ASSERT_EQ(one.n_cluster, 1);
  EXPECT_EQ(scale_collision_loss(one, shifted).value, 0.0);
}

TEST(ScaleLoss, ShortDirectionSkipped) {
  CollisionState st;
  st.n_cluster = 2;
  CollidedPoint a;
  a.d = -0.1;
  a.to_centroid = Vec3(0, 0, 1e-12);
  st.points = {a, a};
  ScaleLossDiagnostics diag;
  EXPECT_EQ(scale_collision_loss(st, Pose5DoF{}, &diag).value, 0.0);
  EXPECT_EQ(diag.skipped_short_u, 2);
}

TEST(StabilityLoss, ContactIsZero) {
  const auto cube = primitives::unit_cube();
  const auto layout = make_bottom_layout(16, 1);
  const LossValue lv = stability_loss(posed_bottom_points(cube, Pose5DoF{}, layout), GroundPlane{0.0});
  EXPECT_EQ(lv.value, 0.0);
  EXPECT_EQ(lv.gradient, PoseGradient::Zero());
}

TEST(StabilityLoss, FloatingClosedForm) {
  std::vector<Vec3> pts(16, Vec3(0, 0, 0.5));
  const LossValue lv = stability_loss(pts, GroundPlane{0.0});
  EXPECT_NEAR(lv.value, 16.0 * (1.0 - std::exp(-0.25)), 1e-12);
  EXPECT_NEAR(lv.gradient[kTz], 16.0 * 2 * 0.5 * std::exp(-0.25), 1e-12);
}

TEST(StabilityLoss, BoundedByPointCount) {
  std::vector<Vec3> pts(16, Vec3(0, 0, 1e6));
  const double v = stability_loss(pts, GroundPlane{0.0}).value;
  EXPECT_LE(v, 16.0);
  EXPECT_NEAR(v, 16.0, 1e-12);
}

TEST(StabilityLoss, YawInvariantOnGround) {
  const auto box = primitives::box({0.6, 0.3, 0.2});
  const auto layout = make_bottom_layout(16, 2);
  const double base = stability_loss(posed_bottom_points(box, pose_at({0, 0, 0.3}), layout), GroundPlane{}).value;
  for (double yaw = 0.1; yaw < kTwoPi; yaw += 0.7) {
    const double v = stability_loss(posed_bottom_points(box, pose_at({0, 0, 0.3}, 1.0, yaw), layout), GroundPlane{}).value;
    EXPECT_NEAR(v, base, 1e-12);
  }
}

TEST(TotalLoss, StageGatingAndLinearity) {
  SceneBundle b = cube_on_ground();
  b.camera = test_camera();
  b.correspondences["cube"] = exact_pairs(b.meshes.at("cube.obj"), Pose5DoF{}, &*b.camera, 50, 2);
  OptimConfig cfg;
  const NodeGeometry g = prepare_node_geometry(b, b.graph.nodes[0], cfg);
  const SceneSdf scene = SceneSdf::with_ground(0.0);
  const LossWeights w;
  EXPECT_NEAR(total_loss(g, Pose5DoF{}, scene, GroundPlane{}, w, Stage::kAlignment).total.value, 0.0, 1e-20);
  EXPECT_EQ(total_loss(g, Pose5DoF{}, scene, GroundPlane{}, w, Stage::kPhysics).total.value, 0.0);

  LossWeights only_stab;
  only_stab.pose = only_stab.three_d = only_stab.trans = only_stab.scale = 0.0;
  only_stab.two_d = 0.0;
  only_stab.stab = 2.0;
  // Floating 0.5 m: all 16 bottom points at d = 0.5.
  const LossBreakdown lb = total_loss(g, pose_at({0, 0, 0.5}), scene, GroundPlane{}, only_stab, Stage::kPhysics);
  EXPECT_NEAR(lb.stab, 16.0 * (1.0 - std::exp(-0.25)), 1e-12);
  EXPECT_NEAR(lb.total.value, 2.0 * lb.stab, 1e-15);
}

TEST(TotalLoss, AllTermsNonnegative) {
  GradientFixtures fx;
  std::mt19937_64 rng(11);
  for (int i = 0; i < 10; ++i) {
    EXPECT_GE(fx.pose_case(rng).value, 0.0);
    EXPECT_GE(fx.translation_case(rng).value, 0.0);
    EXPECT_GE(fx.scale_case(rng).value, 0.0);
    EXPECT_GE(fx.stability_case(rng, i % 2).value, 0.0);
  }
}

TEST(Gradients, MatchCentralDifferences) {
  GradientFixtures fx;
  std::mt19937_64 rng(12);
  int flagged = 0;
  for (int i = 0; i < 25; ++i) {
    for (int term = 0; term < 4; ++term) {
      const GradientCase c = term == 0   ? fx.pose_case(rng)
                             : term == 1 ? fx.translation_case(rng)
                             : term == 2 ? fx.scale_case(rng)
                                         : fx.stability_case(rng, i % 2 == 1);
      if (c.flagged) {
        ++flagged;
        continue;
      }
      EXPECT_LT(lf_oracle::relative_error(c.analytic, c.numeric), 1e-3) << "term " << term << " case " << i;
    }
  }
  EXPECT_LT(flagged, 25);
}

TEST(Intrusions, ForeignPointInsideMover) {
  const auto cube = primitives::unit_cube();
  const GridSdf local = build_sdf(cube, Pose5DoF{}, {32, std::nullopt});
  const Pose5DoF p = pose_at({2, 0, 0}, 2.0);
  // A foreign point 0.25 m inside the scaled cube's +x face (world x = 3).
  const std::vector<Vec3> foreign{Vec3(2.75, 0, 1), Vec3(10, 0, 0)};
  const auto st = detect_intrusions(foreign, p, local, centroid(cube));
  ASSERT_EQ(st.points.size(), 1u);
  EXPECT_NEAR(st.points[0].d, -0.25, 2 * 2.0 * local.spacing);
  // Descent moves the mover toward -x, away from the intruding point.
  EXPECT_GT(translation_collision_loss(st, p).gradient[kTx], 0.0);
}
