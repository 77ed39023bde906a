#include <gtest/gtest.h>

#include <Eigen/SVD>

#include <random>
#include <set>
#include <sstream>

#include "maptree/analysis.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace maptree;

namespace {

// Rigid Procrustes residual (rotation or reflection plus translation).
double procrustes_residual(const Eigen::MatrixX2d& a, const Eigen::MatrixX2d& b) {
  const Eigen::MatrixX2d ac = a.rowwise() - a.colwise().mean();
  const Eigen::MatrixX2d bc = b.rowwise() - b.colwise().mean();
  Eigen::JacobiSVD<Eigen::Matrix2d> svd(ac.transpose() * bc, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix2d r = svd.matrixU() * svd.matrixV().transpose();
  return (ac * r - bc).norm();
}

Eigen::MatrixXd pairwise(const Eigen::MatrixX2d& p) {
  const Index n = p.rows();
  Eigen::MatrixXd d(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) d(i, j) = (p.row(i) - p.row(j)).norm();
  return d;
}

}  // namespace

TEST(MapPairDistance, ZeroSymmetricAndNeighbour) {
  const auto m = fixtures::rectangle(10, 10, 1.0, 1.0);
  const Index n = m.num_vertices();
  const auto geo = all_pairs_geodesics(m);
  const PointwiseMap id(fixtures::identity_map(n), n);
  auto t = fixtures::identity_map(n);
  t[30] = 31;
  const PointwiseMap moved(t, n);
  EXPECT_EQ(map_pair_distance(id, id, geo).mean, 0.0);
  const auto d = map_pair_distance(id, moved, geo);
  EXPECT_NEAR(d.mean, 0.1 / static_cast<double>(n), 1e-12);
  EXPECT_NEAR(d.max, 0.1, 1e-12);
  const auto r = map_pair_distance(moved, id, geo);
  EXPECT_EQ(r.mean, d.mean);
  EXPECT_EQ(r.max, d.max);
}

TEST(MapPairDistance, TriangleInequalityOverEnsemble) {
  const auto m = fixtures::asymmetric_strip(12, 8);
  const auto geo = all_pairs_geodesics(m);
  const auto ens = random_maps(m.num_vertices(), m.num_vertices(), 12, 5);
  const auto d = ensemble_distances(ens, geo);
  for (Index i = 0; i < 12; ++i)
    for (Index j = 0; j < 12; ++j)
      for (Index k = 0; k < 12; ++k) {
        EXPECT_LE(d.mean(i, k), d.mean(i, j) + d.mean(j, k) + 1e-9);
        EXPECT_LE(d.max(i, k), d.max(i, j) + d.max(j, k) + 1e-9);
      }
  EXPECT_TRUE(d.mean.isApprox(d.mean.transpose()));
  EXPECT_EQ(d.mean.diagonal().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mds, EquilateralTriangle) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Ones(3, 3) - Eigen::MatrixXd::Identity(3, 3);
  const auto land = mds_embed(d);
  const auto back = pairwise(land.coordinates);
  EXPECT_LT((back - d).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT(land.stress, 1e-6);
}

TEST(Mds, RecoversPlanarPointsUpToRigidMotion) {
  Eigen::MatrixX2d p(7, 2);
  p << 0, 0, 1, 0, 0.3, 2, -1, 1.5, 2, 2, -0.5, -1, 1.2, -0.7;
  const auto land = mds_embed(pairwise(p));
  EXPECT_LT(procrustes_residual(land.coordinates, p), 1e-6);
}

TEST(Mds, SinglePointAndErrors) {
  const auto one = mds_embed(Eigen::MatrixXd::Zero(1, 1));
  EXPECT_EQ(one.coordinates.rows(), 1);
  EXPECT_EQ(one.coordinates.norm(), 0.0);
  Eigen::MatrixXd bad(2, 2);
  bad << 0, 1, 2, 0;
  try {
    mds_embed(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonSymmetric);
  }
}

TEST(KMeans, SeparatedPairsAndSingletons) {
  Eigen::MatrixXd p(4, 2);
  p << 0, 0, 0.1, 0, 10, 10, 10, 10.1;
  const auto ids = kmeans(p, 2, 1);
  EXPECT_EQ(ids[0], ids[1]);
  EXPECT_EQ(ids[2], ids[3]);
  EXPECT_NE(ids[0], ids[2]);
  const auto single = kmeans(p, 4, 1);
  EXPECT_EQ(std::set<Index>(single.begin(), single.end()).size(), 4u);
  EXPECT_EQ(kmeans(p, 2, 99), kmeans(p, 2, 99));
  try {
    kmeans(p, 5, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::KTooLarge);
  }
  EXPECT_GT(silhouette(p, ids), 0.9);
}

TEST(RandomMaps, SeededAndSized) {
  const auto a = random_maps(50, 80, 7, 3), b = random_maps(50, 80, 7, 3);
  ASSERT_EQ(a.maps.size(), 7u);
  for (std::size_t i = 0; i < a.maps.size(); ++i) {
    EXPECT_EQ(a.maps[i], b.maps[i]);
    EXPECT_EQ(a.maps[i].domain_size(), 50);
    EXPECT_EQ(a.maps[i].codomain_size(), 80);
  }
  EXPECT_FALSE(random_maps(50, 80, 1, 4).maps[0] == a.maps[0]);
}

TEST(RandomMaps, AccuracyMatchesMeanPairwiseDistance) {
  const auto m = fixtures::rectangle(12, 10, 1.2, 1.0);
  const Index n = m.num_vertices();
  const Eigen::MatrixXd fw = oracles::floyd_warshall(m) / std::sqrt(m.total_area());
  const double exact = fw.sum() / static_cast<double>(n * n);
  const auto geo = all_pairs_geodesics(m);
  const PointwiseMap id(fixtures::identity_map(n), n);
  const auto ens = random_maps(n, n, 100, 11);
  double mc = 0;
  for (const auto& map : ens.maps) mc += map_pair_distance(map, id, geo).mean;
  mc /= 100.0;
  EXPECT_NEAR(mc, exact, 0.05 * exact);
}

TEST(Landscape, TwoSymmetryEnsemblesSeparate) {
  const auto m = normalize_to_unit_area(fixtures::rectangle(16, 10, 1.4, 0.8));
  const Index n = m.num_vertices();
  const auto samples = farthest_point_sample(m, 60);
  const auto geo = all_pairs_geodesics(m);
  // Perturbations of the identity and of the reflection, restricted to samples.
  const auto mirror = fixtures::mirror_u(16, 10);
  std::mt19937_64 rng(2);
  MapEnsemble ens;
  std::vector<Index> truth;
  for (int basin = 0; basin < 2; ++basin)
    for (int r = 0; r < 15; ++r) {
      std::vector<Index> t;
      for (Index s : samples) {
        Index v = basin ? mirror[static_cast<std::size_t>(s)] : s;
        if (rng() % 5 == 0) {
          const auto nb = m.neighbors(v);
          v = nb[rng() % nb.size()];
        }
        t.push_back(v);
      }
      ens.maps.emplace_back(std::move(t), n);
      truth.push_back(basin);
    }
  const auto d = ensemble_distances(ens, geo);
  auto land = mds_embed(d.mean);
  const auto ids = kmeans(land.coordinates, 2, 7);
  EXPECT_GT(silhouette(land.coordinates, ids), 0.5);
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(ids[i] == ids[0], truth[i] == truth[0]);

  land.cluster_ids = ids;
  std::ostringstream csv;
  std::vector<std::string> names(ids.size(), "m");
  write_landscape_csv(csv, land, names);
  EXPECT_EQ(csv.str().substr(0, 38), "map_id,x,y,cluster,geodesic_distortion");
}
