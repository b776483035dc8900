#include <gtest/gtest.h>

#include <random>

#include "cmc/submanifold.hpp"

using namespace cmc;

namespace {

int count_near(const Vec& ev, double value, double tol) {
  int c = 0;
  for (int i = 0; i < ev.size(); ++i) c += std::abs(ev[i] - value) < tol;
  return c;
}

}  // namespace

TEST(Submanifold, FlatTorusCoordinateCircle) {
  Submanifold K = build_submanifold(make_manifold("flat_torus(2π,2π,2π)"), "coordinate_circle(0)");
  EXPECT_EQ(K.k, 1);
  EXPECT_EQ(K.n, 2);
  EXPECT_LT(K.minimality_residual, 1e-12);
  EXPECT_LT(K.frame_orthonormality_residual(), 1e-12);
  for (int p = 0; p < K.nodes(); ++p)
    for (int i = 0; i < K.n; ++i) EXPECT_EQ(K.gamma[p][i].cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NEAR(K.volume, 2 * kPi, 1e-12);
  JacobiOperator J = jacobi_operator(K);
  // Spectrum {j²} on each of the two normal directions.
  for (int j = 0; j <= 5; ++j) EXPECT_EQ(count_near(J.eigenvalues, j * j, 1e-8), j == 0 ? 2 : 4) << j;
  auto verdict = nondegeneracy_check(J);
  EXPECT_FALSE(verdict.nondegenerate);
  EXPECT_LT(verdict.sigma_min, 1e-10);
}

TEST(Submanifold, GreatCircleJacobiSpectrum) {
  Submanifold K = build_submanifold(make_manifold("round_sphere(3,1)"), "great_circle");
  EXPECT_LT(K.minimality_residual, 1e-10);
  EXPECT_LT(K.frame_orthonormality_residual(), 1e-9);
  EXPECT_LT(K.weingarten_identity_residual(), 1e-7);
  EXPECT_NEAR(K.volume, 2 * kPi, 1e-12);
  JacobiOperator J = jacobi_operator(K);
  EXPECT_EQ(count_near(J.eigenvalues, -1.0, 1e-6), 2);
  EXPECT_EQ(count_near(J.eigenvalues, 0.0, 1e-6), 4);
  EXPECT_EQ(count_near(J.eigenvalues, 3.0, 1e-6), 4);
  EXPECT_EQ(count_near(J.eigenvalues, 8.0, 1e-6), 4);
  EXPECT_LT(J.smallest_singular_value, 1e-6);
  EXPECT_FALSE(nondegeneracy_check(J).nondegenerate);
}

TEST(Submanifold, JacobiOperatorIsSelfAdjoint) {
  Submanifold K = build_submanifold(perturbed_sphere(), "great_circle");
  JacobiOperator J = jacobi_operator(K);
  std::mt19937 rng(3);
  std::normal_distribution<double> N01;
  for (int t = 0; t < 20; ++t) {
    Vec a(J.matrix.rows()), b(J.matrix.rows());
    for (int i = 0; i < a.size(); ++i) {
      a[i] = N01(rng);
      b[i] = N01(rng);
    }
    double lhs = J.inner(J.matrix * a, b), rhs = J.inner(a, J.matrix * b);
    EXPECT_LT(std::abs(lhs - rhs), 1e-8 * std::sqrt(J.inner(a, a) * J.inner(b, b)));
  }
}

TEST(Submanifold, ShootingRecoversThePerturbedGreatCircle) {
  auto M = std::make_shared<const Manifold>(perturbed_sphere());
  Vec p0(3), v0(3);
  p0 << 1.0, 0.02, 0.01;
  v0 << 0.0, 1.0, 0.03;
  ShootingResult s = shoot_closed_geodesic(*M, p0, v0);
  EXPECT_LT(s.residual, 1e-10);
  EXPECT_NEAR(s.length, 2 * kPi, 1e-8);
  EXPECT_NEAR(s.point[2], 0.0, 1e-8);
  EXPECT_NEAR(s.point.norm(), 1.0, 1e-8);

  Submanifold K = build_submanifold(M, "shot_geodesic(1, 0.02, 0.01, 0, 1, 0.03)");
  EXPECT_LT(K.minimality_residual, 1e-8);
  for (int p = 0; p < K.nodes(); ++p) {
    EXPECT_NEAR(K.point[p][2], 0.0, 1e-8);
    EXPECT_NEAR(K.point[p].norm(), 1.0, 1e-8);
  }
  // k = 1: the only coefficient is Γ^i_11, the geodesic curvature, which vanishes.
  for (int p = 0; p < K.nodes(); ++p) EXPECT_LT(K.B_operator(p).norm(), 1e-14);
}

TEST(Submanifold, PerturbedGeodesicIsNondegenerateUnderRefinement) {
  auto M = std::make_shared<const Manifold>(perturbed_sphere());
  SubmanifoldOptions coarse, fine;
  coarse.K_nodes = 33;
  fine.K_nodes = 65;
  double s1 = jacobi_operator(build_submanifold(M, "great_circle", coarse)).smallest_singular_value;
  double s2 = jacobi_operator(build_submanifold(M, "great_circle", fine)).smallest_singular_value;
  EXPECT_GT(s1, 0.1);
  EXPECT_LT(std::abs(s1 - s2) / s2, 0.1);
  EXPECT_TRUE(nondegeneracy_check(jacobi_operator(build_submanifold(M, "great_circle", fine))).nondegenerate);
}

TEST(Submanifold, SmallCircleHasGeodesicCurvatureTanBeta) {
  auto M = std::make_shared<const Manifold>(round_sphere(3, 1.0));
  const double beta = 0.3;
  Submanifold K = build_submanifold(M, "small_circle(0.3)");
  EXPECT_NEAR(K.minimality_residual, std::tan(beta), 1e-10);
  EXPECT_NEAR(K.volume, 2 * kPi * std::cos(beta), 1e-10);
  SubmanifoldOptions strict;
  try {
    sample_submanifold(M, "small", 1, {2 * kPi}, Mat::Zero(3, 1),
                       [beta](const Vec& y) {
                         Vec u(3);
                         u << std::cos(beta) * std::cos(y[0]), std::cos(beta) * std::sin(y[0]), std::sin(beta);
                         return u;
                       },
                       strict);
    FAIL() << "non-minimal K accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::not_minimal);
  }
}

TEST(Submanifold, FlatSubTorusHasConstantKernel) {
  SubmanifoldOptions opt;
  opt.K_nodes = 9;
  Submanifold K = build_submanifold(make_manifold("flat_torus(2π,2π,2π,2π)"), "sub_torus(0,1)", opt);
  EXPECT_EQ(K.k, 2);
  EXPECT_EQ(K.n, 2);
  JacobiOperator J = jacobi_operator(K);
  EXPECT_EQ(count_near(J.eigenvalues, 0.0, 1e-8), 2);
  EXPECT_EQ(count_near(J.eigenvalues, 1.0, 1e-8), 8);
  EXPECT_EQ(count_near(J.eigenvalues, 2.0, 1e-8), 8);
}

TEST(Submanifold, CliffordTorusSecondFundamentalForm) {
  SubmanifoldOptions opt;
  opt.K_nodes = 17;
  Submanifold K = build_submanifold(make_manifold("round_sphere(4,1)"), "clifford_torus", opt);
  EXPECT_LT(K.minimality_residual, 1e-10);
  EXPECT_LT(K.gamma_symmetry_residual(), 1e-10);
  EXPECT_LT(K.weingarten_identity_residual(), 1e-9);
  EXPECT_NEAR(K.volume, 2 * kPi * kPi, 1e-9);
  for (int p = 0; p < K.nodes(); p += 7) {
    Mat B = K.B_operator(p);
    Eigen::SelfAdjointEigenSolver<Mat> es(B);
    EXPECT_NEAR(es.eigenvalues()[0], 0.0, 1e-9);
    EXPECT_NEAR(es.eigenvalues()[1], 2.0, 1e-9);
  }
}

TEST(Submanifold, RejectsBadIds) {
  auto T2 = make_manifold("flat_torus(1,1)");
  auto T3 = make_manifold("flat_torus(1,1,1)");
  for (auto [M, id] : std::vector<std::pair<Manifold, std::string>>{
           {T2, "coordinate_circle(0)"}, {T3, "coordinate_circle(5)"}, {T3, "moebius"}, {T3, "great_circle"}}) {
    try {
      build_submanifold(M, id);
      ADD_FAILURE() << id;
    } catch (const Error& e) {
      EXPECT_TRUE(e.is_validation()) << id << ": " << e.what();
    }
  }
}
