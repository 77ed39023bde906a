#include <gtest/gtest.h>

#include <cmath>

#include "maptree/metrics.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace maptree;

namespace {

PointwiseMap as_map(const std::vector<Index>& t, Index codomain) { return PointwiseMap(t, codomain); }

PointwiseMap identity(Index n) { return as_map(fixtures::identity_map(n), n); }

// Unit-area 10 x 10 grid of spacing h = 0.1.
TriangleMesh unit_grid() { return fixtures::rectangle(10, 10, 1.0, 1.0); }

}  // namespace

TEST(Accuracy, ExactMapIsZero) {
  const auto m = unit_grid();
  const auto geo = all_pairs_geodesics(m);
  EXPECT_EQ(accuracy(identity(m.num_vertices()), identity(m.num_vertices()), geo), 0.0);
}

TEST(Accuracy, SingleNeighbourDisplacement) {
  const auto m = unit_grid();
  const Index n = m.num_vertices();
  auto t = fixtures::identity_map(n);
  t[12] = 13;  // grid neighbour at distance h = 0.1
  const auto geo = all_pairs_geodesics(m);
  EXPECT_NEAR(accuracy(as_map(t, n), identity(n), geo), 0.1 / static_cast<double>(n), 1e-12);
}

TEST(Accuracy, MirrorAgainstIdentityMatchesBruteForce) {
  const auto m = fixtures::rectangle(8, 6, 1.2, 0.7);
  const Index n = m.num_vertices();
  const auto fw = oracles::floyd_warshall(m);
  const auto mirror = fixtures::mirror_u(8, 6);
  double expected = 0;
  for (Index v = 0; v < n; ++v) expected += fw(v, mirror[static_cast<std::size_t>(v)]);
  expected /= static_cast<double>(n) * std::sqrt(m.total_area());
  const auto geo = all_pairs_geodesics(m);
  EXPECT_NEAR(accuracy(as_map(mirror, n), identity(n), geo), expected, 1e-12);
}

TEST(Accuracy, MissingDistancesAndSubset) {
  const auto m = unit_grid();
  const Index n = m.num_vertices();
  auto t = fixtures::identity_map(n);
  t[12] = 13;
  const auto geo = geodesic_distances(m, {0, 1});
  EXPECT_THROW(accuracy(as_map(t, n), identity(n), geo), Error);
  const std::vector<Index> domain{0, 1};
  EXPECT_EQ(accuracy(as_map(t, n), identity(n), geo, domain), 0.0);
}

TEST(GeodesicDistortion, IdentityAndReflection) {
  const auto m = fixtures::klein_rectangle();
  const Index n = m.num_vertices();
  const auto samples = farthest_point_sample(m, 40);
  const auto geo = geodesic_distances(m, samples);
  EXPECT_EQ(geodesic_distortion(identity(n), geo, geo, samples), 0.0);
  const auto mirror = as_map(fixtures::mirror_u(26, 16), n);
  const auto geo_img = geodesic_distances(m, image_vertices(mirror, samples));
  EXPECT_LT(geodesic_distortion(mirror, geo, geo_img, samples), 1e-9);
}

TEST(GeodesicDistortion, SwapMatchesDoubleSum) {
  const auto m = fixtures::rectangle(6, 5, 1.0, 0.8);
  const Index n = m.num_vertices();
  auto t = fixtures::identity_map(n);
  std::swap(t[0], t[static_cast<std::size_t>(n - 1)]);
  const auto fw = oracles::floyd_warshall(m);
  const double scale = std::sqrt(m.total_area());
  std::vector<Index> samples(static_cast<std::size_t>(n));
  for (Index v = 0; v < n; ++v) samples[static_cast<std::size_t>(v)] = v;
  double expected = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (i != j) {
        const double d = (fw(i, j) - fw(t[static_cast<std::size_t>(i)], t[static_cast<std::size_t>(j)])) / scale;
        expected += d * d;
      }
  expected /= static_cast<double>(n * (n - 1));
  const auto geo = all_pairs_geodesics(m);
  EXPECT_NEAR(geodesic_distortion(as_map(t, n), geo, geo, samples), expected, 1e-12);
  EXPECT_GT(expected, 0.0);
}

TEST(Dirichlet, IdentityMatchesCotanSum) {
  const auto m = fixtures::jittered_torus(12, 8, 0.05, 3);
  const auto lap = build_laplacian(m);
  double expected = 0;
  for (int c = 0; c < 3; ++c) expected += oracles::cotan_dirichlet(m, m.positions().col(c));
  EXPECT_NEAR(dirichlet_energy(identity(m.num_vertices()), lap, m.positions()), expected, 1e-9 * expected);
}

TEST(Dirichlet, ConstantMapIsZeroAndRotationInvariant) {
  const auto m = fixtures::asymmetric_strip(12, 8);
  const Index n = m.num_vertices();
  const auto lap = build_laplacian(m);
  EXPECT_NEAR(dirichlet_energy(as_map(std::vector<Index>(static_cast<std::size_t>(n), 5), n), lap, m.positions()), 0.0,
              1e-12);
  const Eigen::Matrix3d r = Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  const auto moved = fixtures::rigid_motion(m, r, Eigen::Vector3d(0.3, -1, 2));
  const double base = dirichlet_energy(identity(n), lap, m.positions());
  EXPECT_NEAR(dirichlet_energy(identity(n), lap, moved.positions()), base, 1e-9);
  EXPECT_GE(base, -1e-8);
}

TEST(Conformal, IdentityScaleAndStretch) {
  const auto m = fixtures::rectangle(8, 8, 1.0, 1.0);
  const Index n = m.num_vertices();
  EXPECT_NEAR(conformal_distortion(identity(n), m, m).value, 0.0, 1e-12);
  EXPECT_NEAR(conformal_distortion(identity(n), m, fixtures::scaled(m, {3, 3, 3})).value, 0.0, 1e-12);
  const auto stretched = conformal_distortion(identity(n), m, fixtures::scaled(m, {2, 1, 1}));
  EXPECT_NEAR(stretched.value, 0.5, 1e-12);
  EXPECT_EQ(stretched.skipped_faces, 0);
}

TEST(Conformal, MatchesSvdOracleAndSkipsCollapsedFaces) {
  const auto m = fixtures::jittered_torus(10, 8, 0.1, 5);
  const Index n = m.num_vertices();
  auto t = fixtures::random_permutation(n, 9);
  const auto map = as_map(t, n);
  double expected = 0;
  for (Index f = 0; f < m.num_faces(); ++f) {
    const auto [i, j, k] = m.face(f);
    expected += oracles::face_conformal(m.position(i), m.position(j), m.position(k), m.position(map[i]),
                                        m.position(map[j]), m.position(map[k]));
  }
  expected /= static_cast<double>(m.num_faces());
  const auto r = conformal_distortion(map, m, m);
  EXPECT_NEAR(r.value, expected, 1e-9 * expected);
  EXPECT_GE(r.value, 0.0);

  t = fixtures::identity_map(n);
  t[1] = 0;  // collapses every face that contains both 0 and 1
  const auto collapsed = conformal_distortion(as_map(t, n), m, m);
  EXPECT_EQ(collapsed.skipped_faces, 2);
  EXPECT_GT(collapsed.value, 0.0);

  try {
    conformal_distortion(as_map(std::vector<Index>(static_cast<std::size_t>(n), 0), n), m, m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AllFacesDegenerate);
  }
}

TEST(Orientation, IdentityReflectionRotation) {
  const auto m = fixtures::rectangle(10, 8, 1.0, 0.8);
  const Index n = m.num_vertices();
  EXPECT_EQ(orientation_flip_fraction(identity(n), m, m), 0.0);
  EXPECT_EQ(orientation_flip_fraction(as_map(fixtures::mirror_u(10, 8), n), m, m), 1.0);
  EXPECT_EQ(orientation_flip_fraction(as_map(fixtures::rotate_half(10, 8), n), m, m), 0.0);
}

TEST(Metrics, InvariantUnderTargetRelabeling) {
  const auto m1 = fixtures::asymmetric_strip(14, 9);
  const Index n = m1.num_vertices();
  const auto perm = fixtures::random_permutation(n, 21);
  const auto m2 = fixtures::permuted(m1, perm);
  auto t = fixtures::identity_map(n);
  t[3] = 4;
  t[40] = 41;
  std::vector<Index> relabeled(t.size());
  for (std::size_t v = 0; v < t.size(); ++v) relabeled[v] = perm[static_cast<std::size_t>(t[v])];
  const auto a = as_map(t, n), b = as_map(relabeled, n);
  const auto lap = build_laplacian(m1);
  EXPECT_NEAR(dirichlet_energy(a, lap, m1.positions()), dirichlet_energy(b, lap, m2.positions()), 1e-12);
  EXPECT_NEAR(conformal_distortion(a, m1, m1).value, conformal_distortion(b, m1, m2).value, 1e-12);
  EXPECT_EQ(orientation_flip_fraction(a, m1, m1), orientation_flip_fraction(b, m1, m2));
  const auto samples = farthest_point_sample(m1, 20);
  const auto g1 = geodesic_distances(m1, samples);
  EXPECT_NEAR(geodesic_distortion(a, g1, geodesic_distances(m1, image_vertices(a, samples)), samples),
              geodesic_distortion(b, g1, geodesic_distances(m2, image_vertices(b, samples)), samples), 1e-12);
}

TEST(QualityReport, JsonRoundTrip) {
  QualityReport r;
  r.geodesic_distortion = 0.25;
  r.dirichlet_energy = 3.5;
  r.orientation_flip_fraction = 0.125;
  r.geodesic_samples = 300;
  auto j = to_json(r);
  EXPECT_TRUE(j["accuracy"].is_null());
  EXPECT_EQ(j["metadata"]["distance_normalization"], "sqrt_area");
  auto back = quality_report_from_json(j);
  EXPECT_FALSE(back.accuracy);
  EXPECT_EQ(back.dirichlet_energy, 3.5);
  r.accuracy = 0.01;
  EXPECT_EQ(*quality_report_from_json(to_json(r)).accuracy, 0.01);
  EXPECT_THROW(quality_report_from_json(nlohmann::json::object()), Error);
  EXPECT_NE(report_row("00", r).find("0.01"), std::string::npos);
}
