#include <gtest/gtest.h>

#include <cmc/catalog.hpp>
#include <cmc/tube.hpp>

using namespace cmc;

namespace {

const char* kFlat = "flat_torus(6.283185307179586,6.283185307179586,6.283185307179586)";

std::shared_ptr<const Submanifold> make_K(const std::string& geometry, const std::string& sub, int nodes = 33,
                                          bool minimal = true) {
  auto M = std::make_shared<const Manifold>(make_manifold(geometry));
  SubmanifoldOptions o;
  o.K_nodes = nodes;
  o.require_minimal = minimal;
  return std::make_shared<const Submanifold>(build_submanifold(M, sub, o));
}

Vec embed_s3(const Vec& u) {
  double q = u.squaredNorm();
  Vec X(4);
  X << 2 * u / (1 + q), (q - 1) / (1 + q);
  return X;
}

}  // namespace

TEST(SNK, ProjectionsAndSections) {
  SNKGrid S(make_K(kFlat, "coordinate_circle(0)", 9), 11);
  std::mt19937 rng(5);
  std::normal_distribution<double> G;
  Vec Phi(S.NK * S.n);
  for (auto& x : Phi) x = G(rng);
  Vec v = S.along_theta(Phi);
  EXPECT_LT((S.section_of(v) - Phi).norm(), 1e-12 * Phi.norm());
  Vec u(S.N);
  for (auto& x : u) x = G(rng);
  Vec a = S.project_S(u), b = S.project_perp(u);
  EXPECT_LT((S.project_S(a) - a).norm(), 1e-12 * u.norm());
  EXPECT_LT(std::abs(S.integrate(a.cwiseProduct(b))), 1e-12 * S.integrate(u.cwiseProduct(u)));
  EXPECT_LT((S.from_coefficients(S.to_coefficients(u)) - u).norm(), 1e-12 * u.norm());
  // ∫Θ^iΘ^j = (ω/n) δ^{ij}
  Mat T1 = S.degree_one_map();
  EXPECT_LT((T1 * T1.transpose() - S.omega() / S.n * Mat::Identity(2, 2)).norm(), 1e-12);
}

TEST(Tube, FlatCylinderIsExact) {
  SNKGrid S(make_K(kFlat, "coordinate_circle(0)", 17), 17);
  for (double rho : {0.05, 0.1, 0.2, 0.3}) {
    TubeState st = zero_state(S, rho);
    TubeEmbedding E = embed(S, st);
    for (int q = 0; q < S.N; ++q) {
      Vec d = E.X[q] - S.K->point[S.base(q)];
      EXPECT_NEAR(d.norm(), rho, 1e-14);
    }
    TubeGeometry T = fundamental_forms(S, st, E);
    for (int q = 0; q < S.N; ++q) {
      EXPECT_NEAR(T.mean_curvature[q], 1.0 / (2 * rho), 1e-12);
      EXPECT_NEAR(T.principal[q][0], 0.0, 1e-10);
      EXPECT_NEAR(T.principal[q][1], 1.0 / rho, 1e-10);
      EXPECT_NEAR(T.shape_norm[q], 1.0 / (rho * rho), 1e-9);
    }
    EXPECT_LT(sup_norm(mc_residual(S, st, T)), 1e-12);
    Densities D = densities(S, st, T);
    EXPECT_NEAR(D.area_density, 4 * kPi * kPi, 1e-12 * D.area_limit);
    EXPECT_NEAR(D.curvature_density, 4 * kPi * kPi, 1e-12 * D.area_limit);
  }
}

TEST(Tube, FlatTranslationBySection) {
  SNKGrid S(make_K(kFlat, "coordinate_circle(0)", 9), 9);
  TubeState st = zero_state(S, 0.2);
  for (int p = 0; p < S.NK; ++p) st.Phi[p * 2] = 0.03;
  TubeEmbedding E0 = embed(S, zero_state(S, 0.2)), E = embed(S, st);
  for (int q = 0; q < S.N; ++q)
    EXPECT_LT((E.X[q] - E0.X[q] - 0.03 * S.K->normal[S.base(q)].col(0)).norm(), 1e-15);
  EXPECT_LT(sup_norm(mc_residual(S, st)), 1e-12);
}

TEST(Tube, RoundSphereGreatCircle) {
  SNKGrid S(make_K("round_sphere(3,1)", "great_circle"), 33);
  for (double rho : {0.05, 0.3, 0.5}) {
    TubeState st = zero_state(S, rho);
    TubeEmbedding E = embed(S, st);
    // distance from the great circle {X2 = X3 = 0}
    for (int q = 0; q < S.N; q += 7) {
      Vec X = embed_s3(E.X[q]);
      EXPECT_NEAR(std::acos(std::hypot(X[0], X[1])), rho, 1e-8);
    }
    TubeGeometry T = fundamental_forms(S, st, E);
    EXPECT_LT(T.normalization_residual, 1e-9);
    EXPECT_LT(T.orthogonality_residual, 1e-8);
    double H = 1.0 / std::tan(2 * rho);
    EXPECT_LT((T.mean_curvature.array() - H).abs().maxCoeff(), 1e-7 * H);
    EXPECT_NEAR(T.principal[0][0], -std::tan(rho), 1e-6);
    EXPECT_NEAR(T.principal[0][1], 1.0 / std::tan(rho), 1e-6);
  }
}

TEST(Tube, LinearizationMatchesFiniteDifferences) {
  SNKGrid S(make_K("perturbed_sphere", "great_circle", 17), 11);
  const double rho = 0.1;
  TubeState st = zero_state(S, rho);
  TubeLinearization L = linearize(S, st);
  Vec dv = S.along_theta(test_direction_Phi(S)) + rho * test_direction_w(S);
  Vec lin = L.apply(dv);
  const double eps = 1e-5;
  Vec fd = (mc_residual(S, perturbed(S, st, eps * dv)) - mc_residual(S, perturbed(S, st, -eps * dv))) / (2 * eps * rho);
  EXPECT_LT(sup_norm(fd - lin), 1e-6 * sup_norm(lin));
  // A_ρ = 1 + O(ρ²)
  EXPECT_LT((L.geometry.A_rho.array() - 1.0).abs().maxCoeff(), 0.1);
}

TEST(Tube, ExpansionGreatCircle) {
  SNKGrid S(make_K("round_sphere(3,1)", "great_circle"), 17);
  auto rep = verify_mc_expansion(S, {0.025, 0.05, 0.1, 0.2});
  // cot(2ρ)·2ρ − 1 = −(4/3)ρ² + O(ρ⁴)
  EXPECT_NEAR(rep.residual[0] / (rep.rho[0] * rep.rho[0]), 4.0 / 3.0, 1e-3);
  EXPECT_NEAR(rep.raw_fit.slope, 2.0, 0.1);
  EXPECT_GE(rep.subtracted_fit.slope, 2.9);
  EXPECT_NEAR(rep.w_fit.slope, 2.0, 0.2);
  EXPECT_GE(rep.Phi_fit.slope, 1.9);
}

TEST(Tube, ExpansionFlatIsExact) {
  SNKGrid S(make_K(kFlat, "coordinate_circle(0)", 17), 17);
  auto rep = verify_mc_expansion(S, {0.05, 0.1, 0.2});
  EXPECT_TRUE(rep.subtracted_exact);
  for (double e : rep.w_error) EXPECT_LT(e, 1e-6);
  for (double e : rep.Phi_error) EXPECT_LT(e, 1e-6);
}

TEST(Tube, NonMinimalDegradesToFirstOrder) {
  SNKGrid S(make_K("round_sphere(3,1)", "small_circle(0.3)", 33, false), 17);
  auto rep = verify_mc_expansion(S, {0.002, 0.004, 0.008}, false);
  EXPECT_NEAR(rep.raw_fit.slope, 1.0, 0.1);
}

TEST(Tube, StateValidation) {
  SNKGrid S(make_K(kFlat, "coordinate_circle(0)", 9), 9);
  TubeState st = zero_state(S, 0.1);
  st.w = S.along_theta(test_direction_Phi(S));
  EXPECT_THROW(embed(S, st), Error);
  st = zero_state(S, 0.1);
  st.w.setConstant(-1.5);
  try {
    embed(S, st);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
  }
}
