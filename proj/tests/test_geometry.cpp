#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <random>

#include "cmc/catalog.hpp"

using namespace cmc;

namespace {

Vec random_vec(std::mt19937& rng, int d, double scale) {
  std::uniform_real_distribution<double> U(-scale, scale);
  Vec v(d);
  for (int i = 0; i < d; ++i) v[i] = U(rng);
  return v;
}

// Orthonormal pair with respect to g by Gram-Schmidt.
std::pair<Vec, Vec> orthonormal_pair(const Mat& g, Vec X, Vec Y) {
  X /= std::sqrt(X.dot(g * X));
  Y -= Y.dot(g * X) * X;
  Y /= std::sqrt(Y.dot(g * Y));
  return {X, Y};
}

// Inverse stereographic projection to the unit sphere in R^{d+1}.
Vec to_sphere(const ChartPoint& p) {
  const Vec& u = p.x;
  double q = 1.0 + u.squaredNorm();
  Vec X(u.size() + 1);
  X.head(u.size()) = 2.0 * u / q;
  X[u.size()] = (u.squaredNorm() - 1.0) / q;
  if (p.chart == 1) X[u.size()] = -X[u.size()];
  return X;
}

double sphere_distance(const ChartPoint& a, const ChartPoint& b) {
  return std::acos(std::clamp(to_sphere(a).dot(to_sphere(b)), -1.0, 1.0));
}

struct Sample {
  std::string id;
  double box;      // coordinates sampled in [-box, box]^d
  bool fd;         // finite-difference Christoffels
};

}  // namespace

TEST(Christoffel, FlatGeometriesVanish) {
  std::mt19937 rng(1);
  for (const auto& M : {euclidean(3), flat_torus({2 * kPi, 1.0, 3.0})}) {
    Christoffel G = christoffel(M, random_vec(rng, 3, 2.0));
    EXPECT_EQ(G.max_abs(), 0.0);
    CurvatureData C = curvature(M, random_vec(rng, 3, 2.0));
    EXPECT_EQ(C.ricci.norm(), 0.0);
  }
}

TEST(Christoffel, RoundSphereMatchesHandFormula) {
  Manifold M = round_sphere(3, 1.0);
  std::mt19937 rng(2);
  for (int t = 0; t < 20; ++t) {
    Vec u = random_vec(rng, 3, 1.5);
    double q = 1.0 + u.squaredNorm();
    Christoffel G = christoffel(M, u);
    for (int k = 0; k < 3; ++k)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          double expect = -2.0 / q * ((k == i) * u[j] + (k == j) * u[i] - (i == j) * u[k]);
          EXPECT_NEAR(G(k, i, j), expect, 1e-12);
        }
  }
}

TEST(Christoffel, FiniteDifferenceModeAgreesWithClosedForm) {
  std::mt19937 rng(3);
  const std::vector<std::pair<Manifold, double>> cases = {
      {round_sphere(3, 1.3), 1.2}, {ellipsoid(1.0, 1.2, 1.5), 1.2}, {perturbed_sphere(), 0.8}};
  for (const auto& [M, box] : cases) {
    Manifold F = M.finite_difference_copy();
    for (int t = 0; t < 10; ++t) {
      Vec x = random_vec(rng, M.dim, box);
      Christoffel a = christoffel(M, x), b = christoffel(F, x);
      for (std::size_t i = 0; i < a.raw().size(); ++i) EXPECT_NEAR(a.raw()[i], b.raw()[i], 1e-9) << M.catalog_id;
    }
  }
}

TEST(Christoffel, DegenerateMetricIsReported) {
  nlohmann::json j;
  j["dim"] = 2;
  j["metric"] = nlohmann::json::array({nlohmann::json::array({"x0", "0"}), nlohmann::json::array({"0", "1"})});
  Manifold M = manifold_from_json(j);
  Vec x(2);
  x << -1.0, 0.0;
  try {
    christoffel(M, x);
    FAIL() << "expected a degenerate-metric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_metric);
  }
}

TEST(Curvature, RoundSphereSectionalIsOne) {
  Manifold M = round_sphere(3, 1.0);
  std::mt19937 rng(4);
  for (int t = 0; t < 30; ++t) {
    Vec u = random_vec(rng, 3, 1.5);
    CurvatureData C = curvature(M, u);
    auto [X, Y] = orthonormal_pair(C.metric, random_vec(rng, 3, 1.0), random_vec(rng, 3, 1.0));
    EXPECT_NEAR(C.form(X, Y, Y, X), 1.0, 1e-6);
    // Ric = (d-1) g on the unit sphere.
    EXPECT_NEAR((C.ricci - 2.0 * C.metric).norm(), 0.0, 1e-6);
  }
}

TEST(Curvature, RicciIsMinusTraceOverFrame) {
  Manifold M = perturbed_sphere();
  Vec x(3);
  x << 0.7, 0.5, 0.2;
  CurvatureData C = curvature(M, x);
  Eigen::SelfAdjointEigenSolver<Mat> es(C.metric);
  Mat E = es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal();
  std::mt19937 rng(5);
  Vec X = random_vec(rng, 3, 1.0), Y = random_vec(rng, 3, 1.0);
  double s = 0.0;
  for (int c = 0; c < 3; ++c) s -= C.form(X, E.col(c), Y, E.col(c));
  EXPECT_NEAR(C.ric(X, Y), s, 1e-8);
}

TEST(Curvature, ProductMixedPlanesAreFlat) {
  Manifold M = make_manifold("product(round_sphere(2,1),round_sphere(2,1))");
  std::mt19937 rng(6);
  for (int t = 0; t < 10; ++t) {
    Vec x = random_vec(rng, 4, 1.2);
    CurvatureData C = curvature(M, x);
    Vec X = Vec::Zero(4), Y = Vec::Zero(4), Z = Vec::Zero(4);
    X.head(2) = random_vec(rng, 2, 1.0);
    Y.tail(2) = random_vec(rng, 2, 1.0);
    Z.head(2) = random_vec(rng, 2, 1.0);
    auto [A, B] = orthonormal_pair(C.metric, X, Y);
    EXPECT_NEAR(C.form(A, B, B, A), 0.0, 1e-6);
    auto [P, Q] = orthonormal_pair(C.metric, X, Z);
    EXPECT_NEAR(C.form(P, Q, Q, P), 1.0, 1e-6);
  }
}

TEST(Curvature, EllipsoidGaussCurvatureMatchesClosedForm) {
  const double a = 1.0, b = 1.2, c = 1.5;
  Manifold M = ellipsoid(a, b, c);
  std::mt19937 rng(7);
  for (int t = 0; t < 20; ++t) {
    Vec u = random_vec(rng, 2, 1.5);
    double q = 1.0 + u.squaredNorm();
    double x = a * 2 * u[0] / q, y = b * 2 * u[1] / q, z = c * (u.squaredNorm() - 1) / q;
    double s = x * x / std::pow(a, 4) + y * y / std::pow(b, 4) + z * z / std::pow(c, 4);
    double K = 1.0 / (a * a * b * b * c * c * s * s);
    CurvatureData C = curvature(M, u);
    auto [X, Y] = orthonormal_pair(C.metric, Vec::Unit(2, 0), Vec::Unit(2, 1));
    EXPECT_NEAR(C.form(X, Y, Y, X), K, 1e-6 * K);
  }
}

TEST(Curvature, ConformalDeformationOfEuclideanSpaceIsRoundSphere) {
  Manifold M = make_manifold("conformal(euclidean(3), 1, log(2/(1+x0^2+x1^2+x2^2)))");
  std::mt19937 rng(8);
  for (int t = 0; t < 10; ++t) {
    CurvatureData C = curvature(M, random_vec(rng, 3, 1.2));
    auto [X, Y] = orthonormal_pair(C.metric, random_vec(rng, 3, 1.0), random_vec(rng, 3, 1.0));
    EXPECT_NEAR(C.form(X, Y, Y, X), 1.0, 1e-6);
  }
}

TEST(Curvature, UserMetricFileInFiniteDifferenceMode) {
  const std::string path = testing::TempDir() + "/sphere_metric.json";
  {
    std::ofstream out(path);
    out << R"({"dim": 3, "metric": [["4/(1+x0^2+x1^2+x2^2)^2", 0, 0],
                                     [0, "4/(1+x0^2+x1^2+x2^2)^2", 0],
                                     [0, 0, "4/(1+x0^2+x1^2+x2^2)^2"]]})";
  }
  Manifold M = make_manifold("file:" + path);
  EXPECT_EQ(M.mode, DerivativeMode::finite_difference);
  std::mt19937 rng(9);
  for (int t = 0; t < 10; ++t) {
    CurvatureData C = curvature(M, random_vec(rng, 3, 1.2));
    auto [X, Y] = orthonormal_pair(C.metric, random_vec(rng, 3, 1.0), random_vec(rng, 3, 1.0));
    EXPECT_NEAR(C.form(X, Y, Y, X), 1.0, 1e-5);
  }
  std::remove(path.c_str());
}

TEST(Curvature, SymmetriesOnCatalogGeometries) {
  const std::vector<Sample> samples = {
      {"euclidean(3)", 2.0, false},
      {"flat_torus(2π,2π,2π)", 3.0, false},
      {"round_sphere(3,1)", 1.5, false},
      {"round_sphere(2,2)", 1.5, false},
      {"ellipsoid(1,1.2,1.5)", 1.5, false},
      {"product(round_sphere(2,1),round_sphere(2,1))", 1.2, false},
      {"perturbed_sphere", 0.9, false},
      {"round_sphere(3,1)", 1.5, true},
      {"ellipsoid(1,1.2,1.5)", 1.5, true},
      {"perturbed_sphere", 0.9, true},
  };
  std::mt19937 rng(10);
  for (const auto& s : samples) {
    Manifold M = make_manifold(s.id);
    if (s.fd) M = M.finite_difference_copy();
    const double tol = s.fd ? 1e-5 : 1e-7;
    double worst_anti = 0.0, worst_bianchi = 0.0;
    for (int t = 0; t < 100; ++t) {
      Vec x = random_vec(rng, M.dim, s.box);
      Eigen::SelfAdjointEigenSolver<Mat> es(M.metric(x));
      ASSERT_GT(es.eigenvalues().minCoeff(), 0.0) << s.id;
      CurvatureData C = curvature(M, x);
      worst_anti = std::max(worst_anti, C.antisymmetry_residual());
      worst_bianchi = std::max(worst_bianchi, C.bianchi_residual());
    }
    EXPECT_LT(worst_anti, tol) << s.id << (s.fd ? " (fd)" : "");
    EXPECT_LT(worst_bianchi, tol) << s.id << (s.fd ? " (fd)" : "");
  }
}

TEST(ExpMap, EuclideanIsTranslation) {
  Manifold M = euclidean(3);
  Vec p(3), v(3);
  p << 1, 2, 3;
  v << -0.5, 4.0, 0.25;
  ChartPoint q = exp_map(M, p, v);
  EXPECT_NEAR((q.x - (p + v)).norm(), 0.0, 1e-14);
}

TEST(ExpMap, RoundSphereHalfGreatCircleReachesAntipode) {
  Manifold M = round_sphere(3, 1.0);
  std::mt19937 rng(11);
  for (int t = 0; t < 5; ++t) {
    Vec p = random_vec(rng, 3, 1.0);
    Vec v = random_vec(rng, 3, 1.0);
    v *= kPi / norm_g(M.metric(p), v);
    ChartPoint q = exp_map(M, p, v);
    EXPECT_LT((to_sphere(q) + to_sphere({0, p})).norm(), 1e-7);
  }
}

TEST(ExpMap, DistanceEqualsSpeedOnSphere) {
  Manifold M = round_sphere(3, 1.0);
  std::mt19937 rng(12);
  for (int t = 0; t < 20; ++t) {
    Vec p = random_vec(rng, 3, 1.5);
    Vec v = random_vec(rng, 3, 1.0);
    double len = 0.1 + 2.5 * (t / 20.0);
    v *= len / norm_g(M.metric(p), v);
    ChartPoint q = exp_map(M, p, v);
    EXPECT_NEAR(sphere_distance({0, p}, q), len, 1e-8);
  }
}

TEST(ExpMap, FlatTorusWrapsOnce) {
  Manifold M = flat_torus({2 * kPi, 1.0, 3.0});
  Vec p(3), v(3);
  p << 0.4, 0.3, 2.0;
  v << 2 * kPi, -1.0, 3.0;
  ChartPoint q = exp_map(M, p, v);
  EXPECT_LT((q.x - p).norm(), 1e-8);
}

TEST(Geodesic, EnergyIsConserved) {
  std::mt19937 rng(13);
  for (const char* id : {"round_sphere(3,1)", "perturbed_sphere", "ellipsoid(1,1.2,1.5)"}) {
    Manifold M = make_manifold(id);
    Vec p = random_vec(rng, M.dim, 0.8);
    Vec v = random_vec(rng, M.dim, 1.0);
    v *= 1.5 / norm_g(M.metric(p), v);
    GeodesicOptions opt;
    opt.record_path = true;
    GeodesicResult r = integrate_geodesic(M, {0, p}, v, opt);
    double e0 = v.dot(M.metric(p) * v), worst = 0.0;
    for (const auto& s : r.path) {
      double e = s.velocity.dot(M.metric(s.position.x, s.position.chart) * s.velocity);
      worst = std::max(worst, std::abs(e - e0) / e0);
    }
    EXPECT_LT(worst, 1e-9) << id;
  }
}

TEST(Geodesic, ScaledExpTracesAGeodesic) {
  Manifold M = perturbed_sphere();
  Vec p(3), v(3);
  p << 0.9, 0.2, 0.1;
  v << 0.3, -0.4, 0.5;
  auto gamma = [&](double t) { return exp_map(M, p, t * v).x; };
  const double dt = 0.01;
  for (double t = 0.1; t <= 1.0 + 1e-12; t += 0.1) {
    Vec xm2 = gamma(t - 2 * dt), xm1 = gamma(t - dt), x0 = gamma(t), xp1 = gamma(t + dt), xp2 = gamma(t + 2 * dt);
    Vec vel = (xm2 - xp2 + 8.0 * (xp1 - xm1)) / (12 * dt);
    Vec acc = (-xm2 - xp2 + 16.0 * (xp1 + xm1) - 30.0 * x0) / (12 * dt * dt);
    Vec cov = acc + christoffel(M, x0).contract(vel, vel);
    EXPECT_LT(cov.norm(), 1e-6) << "t=" << t;
  }
}

TEST(ParallelTransport, EuclideanLeavesVectorsUnchanged) {
  Manifold M = euclidean(3);
  CurveFn curve = [](double t) {
    Vec x(3), v(3);
    x << std::cos(3 * t), t * t, std::sin(t);
    v << -3 * std::sin(3 * t), 2 * t, std::cos(t);
    return std::make_pair(x, v);
  };
  Vec v0(3);
  v0 << 1, -2, 0.5;
  EXPECT_LT((parallel_transport(M, curve, v0) - v0).norm(), 1e-14);
}

TEST(ParallelTransport, LatitudeHolonomyOnTwoSphere) {
  Manifold M = round_sphere(2, 1.0);
  for (double theta : {0.4, 0.9, 1.3, 2.0}) {
    const double R = 1.0 / std::tan(theta / 2);  // stereographic radius of the latitude
    CurveFn curve = [R](double t) {
      Vec x(2), v(2);
      x << R * std::cos(2 * kPi * t), R * std::sin(2 * kPi * t);
      v << -2 * kPi * R * std::sin(2 * kPi * t), 2 * kPi * R * std::cos(2 * kPi * t);
      return std::make_pair(x, v);
    };
    Vec v0(2);
    v0 << 0.3, 0.8;
    Vec v1 = parallel_transport(M, curve, v0, 4000);
    double angle = std::atan2(v0[0] * v1[1] - v0[1] * v1[0], v0.dot(v1));
    double expected = std::remainder(2 * kPi * (1 - std::cos(theta)), 2 * kPi);
    double diff = std::min(std::abs(std::remainder(angle - expected, 2 * kPi)),
                           std::abs(std::remainder(angle + expected, 2 * kPi)));
    EXPECT_LT(diff, 1e-6) << "theta=" << theta;
    EXPECT_NEAR(v1.norm(), v0.norm(), 1e-9 * v0.norm());
  }
}

TEST(ParallelTransport, ReverseTransportIsIdentityAndLinear) {
  Manifold M = perturbed_sphere();
  CurveFn curve = [](double t) {
    Vec x(3), v(3);
    x << 0.9 + 0.2 * t, 0.3 * std::sin(2 * t), 0.1 - 0.2 * t * t;
    v << 0.2, 0.6 * std::cos(2 * t), -0.4 * t;
    return std::make_pair(x, v);
  };
  Vec a(3), b(3);
  a << 1, 0.2, -0.3;
  b << -0.5, 0.7, 0.1;
  Vec ta = parallel_transport(M, curve, a), tb = parallel_transport(M, curve, b);
  EXPECT_LT((parallel_transport(M, reversed(curve), ta) - a).norm(), 1e-9);
  EXPECT_LT((parallel_transport(M, curve, Vec(2 * a - 3 * b)) - (2 * ta - 3 * tb)).norm(), 1e-12);
  auto [x0, v0] = curve(0.0);
  auto [x1, v1] = curve(1.0);
  EXPECT_NEAR(norm_g(M.metric(x1), ta), norm_g(M.metric(x0), a), 1e-9 * norm_g(M.metric(x0), a));
}

TEST(Catalog, ParsesIdsAndRejectsUnknown) {
  Manifold T = make_manifold("flat_torus(2π, 2*pi, 1)");
  ASSERT_EQ(T.periods.size(), 3u);
  EXPECT_DOUBLE_EQ(T.periods[0], 2 * kPi);
  EXPECT_EQ(make_manifold("round_sphere(3,1)").dim, 3);
  EXPECT_EQ(make_manifold("product(euclidean(1),round_sphere(2,1))").dim, 3);
  for (const char* bad : {"hyperbolic(3)", "round_sphere(3)", "flat_torus(1,-1)", "product(euclidean(2)", ""}) {
    try {
      make_manifold(bad);
      ADD_FAILURE() << "accepted " << bad;
    } catch (const Error& e) {
      EXPECT_TRUE(e.is_validation()) << bad;
    }
  }
}
