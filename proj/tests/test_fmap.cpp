#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "maptree/fmap.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace maptree;

namespace {

SpectralBasis full_basis(const TriangleMesh& mesh) {
  return compute_basis(build_laplacian(mesh), mesh.num_vertices());
}

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(PointwiseToFunctional, IdentityGivesIdentity) {
  const auto mesh = normalize_to_unit_area(fixtures::asymmetric_strip(10, 6));
  const auto b = compute_basis(build_laplacian(mesh), 12);
  const PointwiseMap id(fixtures::identity_map(mesh.num_vertices()), mesh.num_vertices());
  EXPECT_LT((pointwise_to_functional(id, b, b, 12, 12).matrix - Eigen::MatrixXd::Identity(12, 12)).norm(), 1e-6);
}

TEST(PointwiseToFunctional, ConstantToConstant) {
  const auto m1 = normalize_to_unit_area(fixtures::asymmetric_strip(10, 6));
  const auto m2 = normalize_to_unit_area(fixtures::trapezoid(8, 8));
  const auto b1 = compute_basis(build_laplacian(m1), 3), b2 = compute_basis(build_laplacian(m2), 3);
  std::vector<Index> t(static_cast<std::size_t>(m1.num_vertices()));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Index>(i * 7 % static_cast<std::size_t>(m2.num_vertices()));
  const auto c = pointwise_to_functional(PointwiseMap(t, m2.num_vertices()), b1, b2, 1, 1);
  EXPECT_NEAR(c.matrix(0, 0), 1.0, 1e-8);
}

TEST(PointwiseToFunctional, TetrahedronPermutationMatchesDenseProduct) {
  const auto mesh = normalize_to_unit_area(fixtures::tetrahedron());
  const auto b = full_basis(mesh);
  const std::vector<Index> cycle{1, 2, 0, 3};
  const auto c = pointwise_to_functional(PointwiseMap(cycle, 4), b, b, 4, 4);
  const Eigen::MatrixXd oracle =
      b.eigenfunctions.transpose() * b.mass.asDiagonal() * oracles::permutation_matrix(cycle, 4) * b.eigenfunctions;
  EXPECT_LT((c.matrix - oracle).norm(), 1e-12);
  // Round trip at full basis recovers the permutation.
  EXPECT_EQ(functional_to_pointwise(c, b, b).targets(), cycle);
}

TEST(PointwiseToFunctional, SizeContract) {
  const auto mesh = normalize_to_unit_area(fixtures::tetrahedron());
  const auto b = full_basis(mesh);
  const PointwiseMap id(fixtures::identity_map(4), 4);
  EXPECT_EQ(code_of([&] { pointwise_to_functional(id, b, b, 5, 2); }), ErrorCode::DimensionMismatch);
  FunctionalMap big{Eigen::MatrixXd::Identity(5, 5), "a", "b"};
  EXPECT_EQ(code_of([&] { functional_to_pointwise(big, b, b); }), ErrorCode::DimensionMismatch);
}

TEST(FunctionalToPointwise, IdentityRecoversIdentity) {
  const auto mesh = normalize_to_unit_area(fixtures::jittered_torus(5, 10, 0.15, 2));
  const auto b = full_basis(mesh);
  FunctionalMap c{Eigen::MatrixXd::Identity(mesh.num_vertices(), mesh.num_vertices()), "s", "s"};
  EXPECT_EQ(functional_to_pointwise(c, b, b).targets(), fixtures::identity_map(mesh.num_vertices()));
}

TEST(FunctionalToPointwise, RoundTripArbitraryPermutation) {
  const auto mesh = normalize_to_unit_area(fixtures::jittered_torus(5, 10, 0.15, 2));
  const auto b = full_basis(mesh);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto perm = fixtures::random_permutation(mesh.num_vertices(), seed);
    const PointwiseMap t(perm, mesh.num_vertices());
    const auto c = pointwise_to_functional(t, b, b, mesh.num_vertices(), mesh.num_vertices());
    EXPECT_EQ(functional_to_pointwise(c, b, b), t);
  }
}

TEST(NearestRows, MatchesBruteForceAndBreaksTiesLow) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  const Eigen::MatrixXd db = Eigen::MatrixXd::NullaryExpr(700, 6, [&] { return g(rng); });
  const Eigen::MatrixXd q = Eigen::MatrixXd::NullaryExpr(300, 6, [&] { return g(rng); });
  EXPECT_EQ(nearest_rows(db, q), oracles::nearest_rows(db, q));
  Eigen::MatrixXd dup(3, 2);
  dup << 1, 1, 0, 0, 0, 0;
  Eigen::MatrixXd origin = Eigen::MatrixXd::Zero(1, 2);
  EXPECT_EQ(nearest_rows(dup, origin), std::vector<Index>{1});
}

TEST(Energies, OrthoExamples) {
  EXPECT_EQ(energy_ortho(Eigen::MatrixXd::Identity(4, 4)), 0.0);
  EXPECT_EQ(energy_ortho(Eigen::Vector3d(1, -1, 1).asDiagonal().toDenseMatrix()), 0.0);
  EXPECT_DOUBLE_EQ(energy_ortho(Eigen::MatrixXd::Zero(2, 2)), 2.0);
}

TEST(Energies, LapCommExamples) {
  const Eigen::VectorXd e = (Eigen::VectorXd(3) << 0, 2, 5).finished();
  EXPECT_EQ(energy_lap_comm(Eigen::Vector3d(1, -1, 1).asDiagonal().toDenseMatrix(), e, e), 0.0);
  EXPECT_DOUBLE_EQ(energy_lap_comm(Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(0, 1), Eigen::Vector2d(0, 2)), 1.0);
  EXPECT_EQ(energy_lap_comm(Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)), 0.0);
  EXPECT_EQ(code_of([&] { energy_lap_comm(Eigen::MatrixXd::Ones(3, 3), e.head(2), e); }), ErrorCode::DimensionMismatch);
}

TEST(Energies, ZoomoutExamples) {
  EXPECT_EQ(energy_zoomout(Eigen::MatrixXd::Identity(7, 7)), 0.0);
  EXPECT_EQ(energy_zoomout(Eigen::Vector2d(1, -1).asDiagonal().toDenseMatrix()), 0.0);
  EXPECT_DOUBLE_EQ(energy_zoomout(Eigen::MatrixXd::Ones(2, 2)), 5.0);
  EXPECT_EQ(code_of([] { energy_zoomout(Eigen::MatrixXd::Ones(2, 3)); }), ErrorCode::NonSquare);
}

TEST(Energies, RigidMotionInvariance) {
  const auto m1 = normalize_to_unit_area(fixtures::asymmetric_strip(12, 8));
  const Eigen::Matrix3d rot = Eigen::AngleAxisd(1.1, Eigen::Vector3d(0.3, -1, 0.4).normalized()).toRotationMatrix();
  const auto m2 = fixtures::rigid_motion(m1, rot, Eigen::Vector3d(5, 1, -2));
  const auto b1 = compute_basis(build_laplacian(m1), 10), b2 = compute_basis(build_laplacian(m2), 10);
  const PointwiseMap map(fixtures::random_permutation(m1.num_vertices(), 9), m1.num_vertices());
  const auto c11 = pointwise_to_functional(map, b1, b1, 10, 10).matrix;
  const auto c12 = pointwise_to_functional(map, b1, b2, 10, 10).matrix;
  EXPECT_NEAR(energy_ortho(c11), energy_ortho(c12), 1e-8 * energy_ortho(c11));
  EXPECT_NEAR(energy_lap_comm(c11, b1.eigenvalues, b1.eigenvalues), energy_lap_comm(c12, b1.eigenvalues, b2.eigenvalues),
              1e-6 * energy_lap_comm(c11, b1.eigenvalues, b1.eigenvalues));
}

TEST(FmapDistance, Examples) {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(2, 2);
  const Eigen::MatrixXd b = Eigen::Vector2d(1, -1).asDiagonal();
  EXPECT_EQ(fmap_distance(a, a), 0.0);
  EXPECT_DOUBLE_EQ(fmap_distance(a, b), 2.0);
  EXPECT_EQ(fmap_distance(a, b), fmap_distance(b, a));
  EXPECT_EQ(code_of([&] { fmap_distance(a, Eigen::MatrixXd::Zero(2, 3)); }), ErrorCode::DimensionMismatch);
}

TEST(EmbedBlock, Shapes) {
  const Eigen::MatrixXd d = embed_block(Eigen::MatrixXd::Ones(1, 1), -Eigen::MatrixXd::Ones(1, 1));
  EXPECT_EQ(d, Eigen::Vector2d(1, -1).asDiagonal().toDenseMatrix());
  Eigen::Matrix2d swap;
  swap << 0, 1, 1, 0;
  const Eigen::MatrixXd four = embed_block(Eigen::Matrix2d::Identity(), swap);
  EXPECT_EQ(four.rows(), 4);
  EXPECT_EQ(four.topRightCorner(2, 2).norm(), 0.0);
  EXPECT_EQ(four.bottomLeftCorner(2, 2).norm(), 0.0);
  const Eigen::MatrixXd rect = embed_block(Eigen::MatrixXd::Ones(1, 1), Eigen::Vector2d(0, -1));
  EXPECT_EQ(rect.rows(), 3);
  EXPECT_EQ(rect.cols(), 2);
  EXPECT_EQ(rect(2, 1), -1.0);
}

TEST(PlancherelCore, ColumnDifferencesMatchPulledBackFunctions) {
  const auto mesh = normalize_to_unit_area(fixtures::rectangle(8, 6, 1.3, 1.0));
  const auto b = full_basis(mesh);
  const Index n = mesh.num_vertices();
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<Index> pick(0, n - 1);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Index> t1(static_cast<std::size_t>(n)), t2(static_cast<std::size_t>(n));
    for (auto& x : t1) x = pick(rng);
    for (auto& x : t2) x = pick(rng);
    const auto c1 = pointwise_to_functional(PointwiseMap(t1, n), b, b, n, n).matrix;
    const auto c2 = pointwise_to_functional(PointwiseMap(t2, n), b, b, n, n).matrix;
    for (Index i = 0; i < n; i += 7) {
      Eigen::VectorXd diff(n);
      for (Index v = 0; v < n; ++v)
        diff(v) = b.eigenfunctions(t1[static_cast<std::size_t>(v)], i) - b.eigenfunctions(t2[static_cast<std::size_t>(v)], i);
      const double lhs = (c1.col(i) - c2.col(i)).squaredNorm();
      const double rhs = diff.dot(b.mass.cwiseProduct(diff));
      EXPECT_NEAR(lhs, rhs, 1e-8 * rhs + 1e-20);  // constant column: both sides vanish
    }
  }
}

TEST(SampledBasis, WeightsSumToArea) {
  const auto mesh = normalize_to_unit_area(fixtures::asymmetric_strip(20, 12));
  const auto b = compute_basis(build_laplacian(mesh), 10);
  const auto s = restrict_to_samples(mesh, b, farthest_point_sample(mesh, 60));
  EXPECT_NEAR(s.weights.sum(), 1.0, 1e-12);
  EXPECT_EQ(s.count(), 60);
  // Weighted Gram of a sampled basis approximates the identity.
  const Eigen::MatrixXd gram = s.rows.leftCols(4).transpose() * s.weights.asDiagonal() * s.rows.leftCols(4);
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(4, 4)).norm(), 0.2);
}

TEST(Serialization, PointwiseRoundTrip) {
  const PointwiseMap m({2, 0, 1, 1}, 3);
  std::stringstream ss;
  write_pointwise(ss, m);
  EXPECT_EQ(ss.str(), "4 3\n2\n0\n1\n1\n");
  EXPECT_EQ(read_pointwise(ss), m);
  std::stringstream bad("2 3\n0\n5\n");
  EXPECT_EQ(code_of([&] { read_pointwise(bad); }), ErrorCode::ValidationError);
  std::stringstream short_file("3 3\n0\n");
  EXPECT_EQ(code_of([&] { read_pointwise(short_file); }), ErrorCode::ParseError);
}

TEST(Serialization, FunctionalRoundTrip) {
  FunctionalMap c{(Eigen::MatrixXd(2, 3) << 1, 2, 3, 4, 5, 6).finished(), "a", "b"};
  const auto j = to_json(c);
  EXPECT_EQ(j.at("row_major_values").get<std::vector<double>>(), (std::vector<double>{1, 2, 3, 4, 5, 6}));
  const auto back = functional_map_from_json(j);
  EXPECT_EQ(back.matrix, c.matrix);
  EXPECT_EQ(back.source_id, "a");
  auto broken = j;
  broken["rows"] = 4;
  EXPECT_EQ(code_of([&] { functional_map_from_json(broken); }), ErrorCode::ValidationError);
}
