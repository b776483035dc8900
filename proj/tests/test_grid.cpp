#include <gtest/gtest.h>

#include "cmc/grid.hpp"

using namespace cmc;

TEST(Fourier, DifferentiationIsExactOnTrigPolynomials) {
  for (int N : {16, 17}) {
    const double L = 3.0;
    auto [D1, D2] = fourier_diff_matrices(N, L);
    Vec f(N), df(N), d2f(N);
    const double w = 2 * kPi / L;
    for (int j = 0; j < N; ++j) {
      double t = L * j / N;
      f[j] = std::sin(3 * w * t) + 0.5 * std::cos(w * t) + 2.0;
      df[j] = 3 * w * std::cos(3 * w * t) - 0.5 * w * std::sin(w * t);
      d2f[j] = -9 * w * w * std::sin(3 * w * t) - 0.5 * w * w * std::cos(w * t);
    }
    EXPECT_LT((D1 * f - df).cwiseAbs().maxCoeff(), 1e-11);
    EXPECT_LT((D2 * f - d2f).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(trig_interpolate(f, L, 0.37), std::sin(3 * w * 0.37) + 0.5 * std::cos(w * 0.37) + 2.0, 1e-12);
    EXPECT_NEAR(trig_interpolate_derivative(f, L, 0.37),
                3 * w * std::cos(3 * w * 0.37) - 0.5 * w * std::sin(w * 0.37), 1e-11);
  }
}

TEST(Fourier, TensorGridDifferentiatesAlongEachAxis) {
  PeriodicGrid g({8, 9}, {2 * kPi, 1.0});
  Mat f(g.size(), 1), fy(g.size(), 1);
  for (int p = 0; p < g.size(); ++p) {
    Vec y = g.coords(p);
    f(p, 0) = std::sin(y[0]) * std::cos(2 * kPi * y[1]);
    fy(p, 0) = -2 * kPi * std::sin(y[0]) * std::sin(2 * kPi * y[1]);
  }
  EXPECT_LT((g.diff(1, f) - fy).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(g.spectral_tail(f), 1e-14);
}

TEST(SphereGrid, CircleHarmonicsAreOrthonormal) {
  SphereGrid g = circle_grid(16);
  Mat G = g.harmonics.transpose() * g.weights.asDiagonal() * g.harmonics;
  EXPECT_LT((G - Mat::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(g.weights.sum(), sphere_volume(1), 1e-13);
}

TEST(SphereGrid, TwoSphereQuadratureIsExactToDegreeL) {
  SphereGrid g = sphere2_grid(8);
  Mat G = g.harmonics.transpose() * g.weights.asDiagonal() * g.harmonics;
  EXPECT_EQ(G.rows(), 81);
  EXPECT_LT((G - Mat::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(g.weights.sum(), 4 * kPi, 1e-12);
  // ∫ Θ^i Θ^j = (ω_2 / 3) δ^ij
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int p = 0; p < g.size(); ++p) s += g.weights[p] * g.nodes[p][i] * g.nodes[p][j];
      EXPECT_NEAR(s, i == j ? 4 * kPi / 3 : 0.0, 1e-12);
    }
  for (int c = 0; c < g.harmonics.cols(); ++c) {
    int l = g.harmonic_degree[c];
    EXPECT_LT((g.laplacian * g.harmonics.col(c) - l * (l + 1.0) * g.harmonics.col(c)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(SphereGrid, VolumesAndGaussLegendre) {
  EXPECT_NEAR(sphere_volume(1), 2 * kPi, 1e-14);
  EXPECT_NEAR(sphere_volume(2), 4 * kPi, 1e-13);
  EXPECT_NEAR(sphere_volume(3), 2 * kPi * kPi, 1e-13);
  auto [x, w] = gauss_legendre(6);
  EXPECT_NEAR(w.sum(), 2.0, 1e-14);
  EXPECT_NEAR((w.array() * x.array().pow(10)).sum(), 2.0 / 11, 1e-14);
}
