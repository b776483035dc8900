#pragma once

// Closed submanifolds K ⊂ M sampled on periodic parameter grids: frames,
// normal connection, second fundamental form and the Jacobi operator.
//
// Catalog ids: great_circle, small_circle(beta), coordinate_circle(axis),
// sub_torus(i,j,...), clifford_torus, shot_geodesic(x1,...,xd,v1,...,vd).

#include <memory>
#include <numeric>

#include "cmc/catalog.hpp"
#include "cmc/grid.hpp"

namespace cmc {

struct SubmanifoldOptions {
  int K_nodes = 65;                  // nodes per K axis (odd: no unpaired Nyquist mode)
  double minimality_tol = 1e-8;
  bool require_minimal = true;       // false: diagnostics on non-minimal K
  double resolution_tol = 1e-7;      // max relative spectral tail of the parameterization
};

struct JacobiOperator {
  Mat matrix;                  // acts on node values (p * n + i)
  Vec weights;                 // discrete L² weights per unknown
  double smallest_singular_value = 0.0;
  Vec eigenvalues;             // ascending, self-adjoint in the weighted inner product

  /// Weighted inner product ⟨Φ, Ψ⟩.
  double inner(const Vec& a, const Vec& b) const { return (a.array() * weights.array() * b.array()).sum(); }
};

class Submanifold {
 public:
  std::shared_ptr<const Manifold> M;
  std::string id;
  int k = 1, n = 2;
  PeriodicGrid grid;
  Mat lift;                               // dim x k: coordinate shift over one period of each axis
  bool affine = false;                    // straight sub-torus in an affine chart
  std::vector<Vec> point;                 // f(y_p) in chart 0
  std::vector<Mat> dX;                    // dim x k coordinate tangents ∂_a f
  std::vector<std::vector<Vec>> ddX;      // [p][a*k+b] ∂_a∂_b f
  std::vector<Mat> h;                     // induced metric in y coordinates
  std::vector<Mat> tangent;               // dim x k orthonormal frame E_a
  std::vector<Mat> normal;                // dim x n orthonormal frame E_i
  std::vector<std::vector<Mat>> connection;  // [p][a]: A(i,j) = g(∇_{∂_a} E_j, E_i)
  std::vector<std::vector<Mat>> gamma;       // [p][i]: Γ^i_{ab} = g(∇_{E_a} E_b, E_i)
  std::vector<std::vector<Mat>> weingarten;  // [p][i]: W(b,a) = g(∇_{E_a} E_i, E_b)
  Vec weight;                             // cell volume × √det h
  double volume = 0.0;
  double minimality_residual = 0.0;

  int nodes() const { return grid.size(); }
  int dim() const { return M->dim; }

  Mat metric(int p) const { return M->metric(point[p], 0); }

  /// Mean curvature vector components Σ_a Γ^i_{aa} at node p.
  Vec mean_curvature_vector(int p) const {
    Vec H = Vec::Zero(n);
    for (int i = 0; i < n; ++i) H[i] = gamma[p][i].trace();
    return H;
  }

  /// Point and tangent of a curve K (k = 1) at parameter t, by trigonometric interpolation.
  std::pair<Vec, Vec> curve_at(double t) const {
    require(k == 1, "curve_at needs a one-dimensional K");
    const int N = nodes(), d = dim();
    const double L = grid.period(0);
    Vec x(d), v(d);
    for (int c = 0; c < d; ++c) {
      Vec per(N);
      for (int p = 0; p < N; ++p) per[p] = point[p][c] - lift(c, 0) * grid.coords(p)[0] / L;
      x[c] = trig_interpolate(per, L, t) + lift(c, 0) * t / L;
      v[c] = trig_interpolate_derivative(per, L, t) + lift(c, 0) / L;
    }
    return {x, v};
  }

  /// Max |g(E_α,E_β) − δ_αβ| over nodes.
  double frame_orthonormality_residual() const {
    double r = 0.0;
    for (int p = 0; p < nodes(); ++p) {
      Mat E(dim(), k + n);
      E << tangent[p], normal[p];
      Mat G = E.transpose() * metric(p) * E;
      r = std::max(r, (G - Mat::Identity(k + n, k + n)).cwiseAbs().maxCoeff());
    }
    return r;
  }

  /// Max |Γ^i_{ab} − Γ^i_{ba}|.
  double gamma_symmetry_residual() const {
    double r = 0.0;
    for (int p = 0; p < nodes(); ++p)
      for (int i = 0; i < n; ++i) r = std::max(r, (gamma[p][i] - gamma[p][i].transpose()).cwiseAbs().maxCoeff());
    return r;
  }

  /// Max |g(∇_{E_a}E_i, E_b) + Γ^i_{ab}|.
  double weingarten_identity_residual() const {
    double r = 0.0;
    for (int p = 0; p < nodes(); ++p)
      for (int i = 0; i < n; ++i)
        r = std::max(r, (weingarten[p][i] + gamma[p][i]).cwiseAbs().maxCoeff());
    return r;
  }

  /// Normal vector field Σ φ^i E_i at node p.
  Vec normal_vector(int p, const Vec& phi) const { return normal[p] * phi; }

  /// g(𝓑^N E_i, E_j) = Σ_ab Γ^i_{ab} Γ^j_{ab}.
  Mat B_operator(int p) const {
    Mat B(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) B(i, j) = (gamma[p][i].array() * gamma[p][j].array()).sum();
    return B;
  }

  /// g(ℛ^N E_j, E_i) with ℛ^N X = (Σ_a R(X,E_a)E_a)^N.
  Mat R_operator(int p, const CurvatureData& C) const {
    Mat R = Mat::Zero(n, n);
    for (int j = 0; j < n; ++j) {
      Vec s = Vec::Zero(dim());
      for (int a = 0; a < k; ++a) s += C.apply(normal[p].col(j), tangent[p].col(a), tangent[p].col(a));
      R.col(j) = normal[p].transpose() * C.metric * s;
    }
    return 0.5 * (R + R.transpose());
  }

  /// Ricci tensor in the normal frame.
  Mat ricci_normal(int p, const CurvatureData& C) const { return normal[p].transpose() * C.ricci * normal[p]; }

  std::vector<CurvatureData> curvature_at_nodes() const {
    std::vector<CurvatureData> out(nodes());
    parallel_for(nodes(), [&](std::size_t p) { out[p] = curvature(*M, point[p], 0); });
    return out;
  }

  /// Dense spectral differentiation matrix of the K grid along axis a.
  Mat diff_matrix(int a) const { return grid.diff(a, Mat(Mat::Identity(nodes(), nodes()))); }

  /// Covariant derivative ∇^N_{∂_a} of a section given by frame components (p*n+i).
  Mat covariant_derivative_matrix(int a) const {
    const int N = nodes();
    Mat D = diff_matrix(a);
    Mat G = Mat::Zero(N * n, N * n);
    for (int p = 0; p < N; ++p)
      for (int q = 0; q < N; ++q)
        if (D(p, q) != 0.0)
          for (int i = 0; i < n; ++i) G(p * n + i, q * n + i) = D(p, q);
    for (int p = 0; p < N; ++p) G.block(p * n, p * n, n, n) += connection[p][a];
    return G;
  }

  /// Rough normal Laplacian Δ^N = (∇^N)*∇^N in the weighted L² product.
  Mat normal_laplacian() const {
    const int N = nodes();
    std::vector<Mat> G(k);
    for (int a = 0; a < k; ++a) G[a] = covariant_derivative_matrix(a);
    Mat S = Mat::Zero(N * n, N * n);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) {
        Vec wab(N * n);
        for (int p = 0; p < N; ++p) {
          Mat hinv = h[p].inverse();
          for (int i = 0; i < n; ++i) wab[p * n + i] = weight[p] * hinv(a, b);
        }
        S += G[a].transpose() * wab.asDiagonal() * G[b];
      }
    S = 0.5 * (S + S.transpose()).eval();
    Vec winv(N * n);
    for (int p = 0; p < N; ++p)
      for (int i = 0; i < n; ++i) winv[p * n + i] = 1.0 / weight[p];
    return winv.asDiagonal() * S;
  }

  Vec section_weights() const {
    Vec w(nodes() * n);
    for (int p = 0; p < nodes(); ++p)
      for (int i = 0; i < n; ++i) w[p * n + i] = weight[p];
    return w;
  }
};

/// Symmetric eigen-decomposition of an operator self-adjoint in the weighted
/// product diag(w): returns eigenvalues and w-orthonormal eigenvectors.
inline std::pair<Vec, Mat> weighted_eigen(const Mat& A, const Vec& w) {
  Vec s = w.cwiseSqrt(), si = s.cwiseInverse();
  Mat S = s.asDiagonal() * A * si.asDiagonal();
  S = 0.5 * (S + S.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  return {es.eigenvalues(), si.asDiagonal() * es.eigenvectors()};
}

/// 𝔍 = Δ^N − ℛ^N − 𝓑^N on sections of NK.
inline JacobiOperator jacobi_operator(const Submanifold& K) {
  const int N = K.nodes(), n = K.n;
  JacobiOperator J;
  J.matrix = K.normal_laplacian();
  auto curv = K.curvature_at_nodes();
  for (int p = 0; p < N; ++p) J.matrix.block(p * n, p * n, n, n) -= K.R_operator(p, curv[p]) + K.B_operator(p);
  J.weights = K.section_weights();
  auto [ev, vecs] = weighted_eigen(J.matrix, J.weights);
  J.eigenvalues = ev;
  J.smallest_singular_value = ev.cwiseAbs().minCoeff();
  return J;
}

struct NondegeneracyReport {
  bool nondegenerate = false;
  double sigma_min = 0.0;
};

inline NondegeneracyReport nondegeneracy_check(const JacobiOperator& J, double tol = 1e-6) {
  return {J.smallest_singular_value > tol, J.smallest_singular_value};
}

namespace detail {

// Orthonormalizes `cand` columns against `basis` (both in metric g); returns
// the new columns and the smallest pivot encountered.
inline std::pair<Mat, double> gram_schmidt(const Mat& g, const Mat& basis, const Mat& cand) {
  Mat out(cand.rows(), cand.cols());
  double pivot = 1e300;
  for (int c = 0; c < cand.cols(); ++c) {
    Vec v = cand.col(c);
    const double v0 = std::sqrt(v.dot(g * v));
    for (int twice = 0; twice < 2; ++twice) {
      for (int b = 0; b < basis.cols(); ++b) v -= v.dot(g * basis.col(b)) * basis.col(b);
      for (int b = 0; b < c; ++b) v -= v.dot(g * out.col(b)) * out.col(b);
    }
    double nv = std::sqrt(v.dot(g * v));
    pivot = std::min(pivot, nv / v0);
    out.col(c) = v / nv;
  }
  return {out, pivot};
}

inline std::vector<std::vector<int>> combinations(int d, int r) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  std::function<void(int)> rec = [&](int start) {
    if (static_cast<int>(cur.size()) == r) {
      out.push_back(cur);
      return;
    }
    for (int i = start; i < d; ++i) {
      cur.push_back(i);
      rec(i + 1);
      cur.pop_back();
    }
  };
  rec(0);
  return out;
}

// Spectral antiderivative (zero mean) of periodic samples on a period-L grid.
inline Vec periodic_antiderivative(const Vec& f, double L) {
  const int N = static_cast<int>(f.size());
  auto ks = fourier_wavenumbers(N);
  Vec out = Vec::Zero(N);
  for (int m = 1; m < N; ++m) {
    if (N % 2 == 0 && m == N / 2) continue;
    double re = 0, im = 0;
    for (int j = 0; j < N; ++j) {
      double ang = 2 * kPi * m * j / N;
      re += f[j] * std::cos(ang);
      im -= f[j] * std::sin(ang);
    }
    re /= N;
    im /= N;
    double kk = 2 * kPi * ks[m] / L;
    // Re[(re + i im) e^{i kk t} / (i kk)]
    for (int j = 0; j < N; ++j) {
      double w = kk * L * j / N;
      out[j] += (re * std::sin(w) + im * std::cos(w)) / kk;
    }
  }
  return out.array() - out.mean();
}

}  // namespace detail

/// Completes a Submanifold from sampled points, coordinate tangents and
/// second derivatives: frames, connection, second fundamental form.
inline void finish_submanifold(Submanifold& K, const SubmanifoldOptions& opt) {
  const int N = K.nodes(), d = K.dim(), k = K.k, n = K.n;
  require(n >= 2, "codimension must be at least 2 (tubes need a sphere fiber of dimension >= 1)");
  K.h.resize(N);
  K.tangent.resize(N);
  K.weight.resize(N);
  for (int p = 0; p < N; ++p) {
    Mat g = K.metric(p);
    check_spd(g, K.point[p]);
    K.h[p] = K.dX[p].transpose() * g * K.dX[p];
    Eigen::LLT<Mat> llt(K.h[p]);
    if (llt.info() != Eigen::Success)
      throw Error(ErrorKind::validation, "singular parameterization of K at node " + std::to_string(p));
    Mat Linv = Mat(llt.matrixL()).inverse();
    K.tangent[p] = K.dX[p] * Linv.transpose();
    K.weight[p] = K.grid.cell_volume() * std::sqrt(K.h[p].determinant());
  }
  K.volume = K.weight.sum();

  // Normal frame: Gram-Schmidt of n−1 fixed candidate fields (coordinate
  // axes or the position vector), chosen best conditioned over all of K, then
  // completed by the oriented metric cross product. Both steps are smooth.
  std::vector<std::function<Vec(int)>> cands;
  for (int c = 0; c < d; ++c) cands.push_back([d, c](int) { return Vec(Vec::Unit(d, c)); });
  double min_pos = 1e300;
  for (int p = 0; p < N; ++p) min_pos = std::min(min_pos, K.point[p].norm());
  if (min_pos > 1e-6) cands.push_back([&K](int p) { return K.point[p]; });
  auto build_partial = [&](const std::vector<int>& combo, int p) {
    Mat cand(d, combo.size());
    for (std::size_t i = 0; i < combo.size(); ++i) cand.col(i) = cands[combo[i]](p);
    return detail::gram_schmidt(K.metric(p), K.tangent[p], cand);
  };
  double best = -1.0;
  std::vector<int> chosen;
  for (const auto& combo : detail::combinations(static_cast<int>(cands.size()), n - 1)) {
    double worst = 1e300;
    for (int p = 0; p < N && worst > best; ++p) worst = std::min(worst, build_partial(combo, p).second);
    if (worst > best) {
      best = worst;
      chosen = combo;
    }
  }
  if (best < 1e-3) throw Error(ErrorKind::validation, "could not build a well-conditioned normal frame");
  K.normal.resize(N);
  for (int p = 0; p < N; ++p) {
    Mat g = K.metric(p);
    Mat partial = build_partial(chosen, p).first;
    // Last normal: w with g(w, ·) annihilating the tangents and the partial frame.
    Mat A(d - 1, d);
    A.topRows(k) = (g * K.tangent[p]).transpose();
    A.bottomRows(n - 1) = (g * partial).transpose();
    Vec w(d);
    for (int b = 0; b < d; ++b) {
      Mat minor(d - 1, d - 1);
      for (int c = 0, cc = 0; c < d; ++c)
        if (c != b) minor.col(cc++) = A.col(c);
      w[b] = ((b % 2) ? -1.0 : 1.0) * minor.determinant();
    }
    K.normal[p].resize(d, n);
    K.normal[p].leftCols(n - 1) = partial;
    K.normal[p].col(n - 1) = w / std::sqrt(w.dot(g * w));
  }

  auto compute_connection = [&]() {
    std::vector<Christoffel> G(N);
    for (int p = 0; p < N; ++p) G[p] = christoffel(*K.M, K.point[p], 0);
    K.connection.assign(N, std::vector<Mat>(k, Mat::Zero(n, n)));
    Mat Ecomp(N, d * n);
    for (int p = 0; p < N; ++p)
      for (int i = 0; i < n; ++i) Ecomp.block(p, i * d, 1, d) = K.normal[p].col(i).transpose();
    for (int a = 0; a < k; ++a) {
      Mat dE = K.grid.diff(a, Ecomp);
      for (int p = 0; p < N; ++p) {
        Mat g = K.metric(p);
        for (int j = 0; j < n; ++j) {
          Vec nab = dE.block(p, j * d, 1, d).transpose() + G[p].contract(K.dX[p].col(a), K.normal[p].col(j));
          for (int i = 0; i < n; ++i) K.connection[p][a](i, j) = K.normal[p].col(i).dot(g * nab);
        }
        K.connection[p][a] = 0.5 * (K.connection[p][a] - K.connection[p][a].transpose()).eval();
      }
    }
  };
  compute_connection();

  // Parallelize the frame along a closed curve with rank-2 normal bundle:
  // rotate by φ with φ' = ā − a, leaving a constant connection ā.
  if (k == 1 && n == 2) {
    Vec a(N);
    for (int p = 0; p < N; ++p) a[p] = K.connection[p][0](1, 0);
    if ((a.array() - a.mean()).abs().maxCoeff() > 1e-14) {
      Vec phi = detail::periodic_antiderivative(Vec(a.mean() - a.array()), K.grid.period(0));
      for (int p = 0; p < N; ++p) {
        Vec e0 = K.normal[p].col(0), e1 = K.normal[p].col(1);
        K.normal[p].col(0) = std::cos(phi[p]) * e0 + std::sin(phi[p]) * e1;
        K.normal[p].col(1) = -std::sin(phi[p]) * e0 + std::cos(phi[p]) * e1;
      }
      compute_connection();
    }
  }

  // Second fundamental form and Weingarten coefficients.
  K.gamma.assign(N, std::vector<Mat>(n, Mat::Zero(k, k)));
  K.weingarten.assign(N, std::vector<Mat>(n, Mat::Zero(k, k)));
  Mat Ecomp(N, d * n);
  for (int p = 0; p < N; ++p)
    for (int i = 0; i < n; ++i) Ecomp.block(p, i * d, 1, d) = K.normal[p].col(i).transpose();
  std::vector<Mat> dE(k);
  for (int a = 0; a < k; ++a) dE[a] = K.grid.diff(a, Ecomp);
  K.minimality_residual = 0.0;
  for (int p = 0; p < N; ++p) {
    Mat g = K.metric(p);
    Christoffel G = christoffel(*K.M, K.point[p], 0);
    Mat T = Mat(Eigen::LLT<Mat>(K.h[p]).matrixL()).inverse().transpose();  // E_tan = dX T
    Mat raw(k * k, n);  // g(∇_{X_c}X_d, E_i)
    for (int c = 0; c < k; ++c)
      for (int e = 0; e < k; ++e) {
        Vec nab = K.ddX[p][c * k + e] + G.contract(K.dX[p].col(c), K.dX[p].col(e));
        for (int i = 0; i < n; ++i) raw(c * k + e, i) = K.normal[p].col(i).dot(g * nab);
      }
    for (int i = 0; i < n; ++i) {
      Mat R(k, k);
      for (int c = 0; c < k; ++c)
        for (int e = 0; e < k; ++e) R(c, e) = raw(c * k + e, i);
      K.gamma[p][i] = T.transpose() * R * T;
      // ∇_{X_c} E_i projected on E_b, then converted to E_a = Σ_c T(c,a) X_c.
      Mat Wc(k, k);  // Wc(b, c) = g(∇_{X_c} E_i, E_b)
      for (int c = 0; c < k; ++c) {
        Vec nab = dE[c].block(p, i * d, 1, d).transpose() + G.contract(K.dX[p].col(c), K.normal[p].col(i));
        for (int b = 0; b < k; ++b) Wc(b, c) = K.tangent[p].col(b).dot(g * nab);
      }
      K.weingarten[p][i] = Wc * T;
    }
    K.minimality_residual = std::max(K.minimality_residual, K.mean_curvature_vector(p).norm());
  }
  if (opt.require_minimal && K.minimality_residual > opt.minimality_tol)
    throw Error(ErrorKind::not_minimal, "K is not minimal: sup |mean curvature vector| = " +
                                            std::to_string(K.minimality_residual));
}

/// Builds K from a sampler y -> f(y) (chart 0) on a periodic grid; `lift`
/// gives the coordinate shift of f over one period of each axis.
inline Submanifold sample_submanifold(std::shared_ptr<const Manifold> M, const std::string& id, int k,
                                      const std::vector<double>& periods, const Mat& lift,
                                      const std::function<Vec(const Vec&)>& f, const SubmanifoldOptions& opt) {
  Submanifold K;
  K.M = std::move(M);
  K.id = id;
  K.k = k;
  K.n = K.M->dim - k;
  require(K.n >= 2, "codimension must be at least 2 (tubes need a sphere fiber of dimension >= 1)");
  require(opt.K_nodes >= 9 && opt.K_nodes <= 1025 && opt.K_nodes % 2 == 1, "K_nodes must be odd, in [9, 1025]");
  K.grid = PeriodicGrid(std::vector<int>(k, opt.K_nodes), periods);
  K.lift = lift;
  const int N = K.nodes(), d = K.dim();
  Mat Q(N, d);  // periodic part
  K.point.resize(N);
  for (int p = 0; p < N; ++p) {
    Vec y = K.grid.coords(p);
    K.point[p] = f(y);
    Vec shift = Vec::Zero(d);
    for (int a = 0; a < k; ++a) shift += lift.col(a) * y[a] / periods[a];
    Q.row(p) = (K.point[p] - shift).transpose();
  }
  double scale = lift.norm();
  for (int p = 0; p < N; ++p) scale = std::max(scale, K.point[p].cwiseAbs().maxCoeff());
  double tail = K.grid.spectral_tail(Q, scale);
  if (tail > opt.resolution_tol)
    throw Error(ErrorKind::resolution, "K grid too coarse: relative spectral tail " + std::to_string(tail));
  K.dX.assign(N, Mat(d, k));
  K.ddX.assign(N, std::vector<Vec>(k * k));
  for (int a = 0; a < k; ++a) {
    Mat Da = K.grid.diff(a, Q);
    for (int p = 0; p < N; ++p) K.dX[p].col(a) = Da.row(p).transpose() + lift.col(a) / periods[a];
    for (int b = 0; b < k; ++b) {
      Mat Dab = K.grid.diff2(a, b, Q);
      for (int p = 0; p < N; ++p) K.ddX[p][a * k + b] = Dab.row(p).transpose();
    }
  }
  finish_submanifold(K, opt);
  return K;
}

struct ShootingResult {
  Vec point, velocity;  // unit-speed initial data of the closed geodesic
  double length = 0.0;
  double residual = 0.0;
  int iterations = 0;
};

/// Closed geodesic through a section near (p0, v0): Gauss-Newton on the
/// first-return map, unknowns (p, v, T).
inline ShootingResult shoot_closed_geodesic(const Manifold& M, const Vec& p0, const Vec& v0, double tol = 1e-10,
                                            int max_iter = 30) {
  const int d = M.dim;
  require(p0.size() == d && v0.size() == d, "shot_geodesic: seed dimension mismatch");
  require(v0.norm() > 0, "shot_geodesic: zero seed direction");
  const Vec e = v0.normalized();
  Vec v = v0 / norm_g(M.metric(p0), v0);
  // First return to the section {(x − p0)·e = 0}.
  GeodesicOptions rec;
  rec.record_path = true;
  rec.max_arc_step = 0.01;
  auto path = integrate_geodesic(M, {0, p0}, v * 40.0, rec).path;
  double T = -1;
  for (std::size_t i = 1; i < path.size(); ++i) {
    if (path[i].position.chart != 0 || path[i - 1].position.chart != 0) continue;
    double a = (path[i - 1].position.x - p0).dot(e), b = (path[i].position.x - p0).dot(e);
    if (path[i].arc_param > 0.5 && a < 0 && b >= 0 && (path[i].position.x - p0).norm() < 0.5) {
      T = path[i - 1].arc_param + (path[i].arc_param - path[i - 1].arc_param) * (-a) / (b - a);
      break;
    }
  }
  if (T < 0) throw Error(ErrorKind::divergence, "shot_geodesic: no return to the seed section");
  Vec z(2 * d + 1);
  z << p0, v, T;
  auto residual = [&](const Vec& zz) {
    Vec p = zz.head(d), u = zz.segment(d, d);
    double TT = zz[2 * d];
    auto [x1, v1] = geodesic_end_in_chart(M, p, TT * u, 0);
    Vec r(2 * d + 2);
    r.head(d) = x1 - p;
    r.segment(d, d) = v1 / TT - u;
    r[2 * d] = (p - p0).dot(e);
    r[2 * d + 1] = 0.5 * (u.dot(M.metric(p) * u) - 1.0);
    return r;
  };
  ShootingResult res;
  Vec r = residual(z);
  for (int it = 0; it < max_iter && r.cwiseAbs().maxCoeff() > tol; ++it) {
    Mat J(2 * d + 2, 2 * d + 1);
    for (int c = 0; c < 2 * d + 1; ++c) {
      const double hh = 1e-7 * std::max(1.0, std::abs(z[c]));
      Vec zp = z, zm = z;
      zp[c] += hh;
      zm[c] -= hh;
      J.col(c) = (residual(zp) - residual(zm)) / (2 * hh);
    }
    Vec dz = J.colPivHouseholderQr().solve(-r);
    double step = 1.0;
    Vec trial = z + dz, rt = residual(trial);
    while (rt.norm() > r.norm() && step > 1e-4) {
      step *= 0.5;
      trial = z + step * dz;
      rt = residual(trial);
    }
    z = trial;
    r = rt;
    res.iterations = it + 1;
  }
  res.point = z.head(d);
  res.velocity = z.segment(d, d);
  res.length = z[2 * d];
  res.residual = r.cwiseAbs().maxCoeff();
  if (res.residual > tol)
    throw Error(ErrorKind::divergence, "shot_geodesic: Newton on the return map stalled at residual " +
                                           std::to_string(res.residual));
  return res;
}

/// Resolves a submanifold id inside M.
inline Submanifold build_submanifold(std::shared_ptr<const Manifold> M, const std::string& id_text,
                                     const SubmanifoldOptions& opt = {}) {
  auto [name, args] = detail::split_call(id_text);
  const int d = M->dim;
  auto num = [&](std::size_t i) { return detail::parse_number(args.at(i)); };
  std::string id = detail::trim(id_text);
  if (name == "great_circle" || name == "small_circle") {
    require(d >= 3, name + " needs ambient dimension >= 3");
    require(M->transition != nullptr && M->charts.size() == 2,
            name + " is defined in stereographic charts (round or conformally perturbed spheres)");
    double beta = 0.0;
    if (name == "small_circle") {
      require(args.size() == 1, "small_circle(beta) takes one argument");
      beta = num(0);
      require(std::abs(beta) < kPi / 2, "small_circle: |beta| must be below pi/2");
      SubmanifoldOptions o = opt;
      o.require_minimal = false;
      return sample_submanifold(M, id, 1, {2 * kPi}, Mat::Zero(d, 1),
                                [d, beta](const Vec& y) {
                                  Vec u = Vec::Zero(d);
                                  u[0] = std::cos(beta) * std::cos(y[0]);
                                  u[1] = std::cos(beta) * std::sin(y[0]);
                                  u[2] = std::sin(beta);
                                  return u;
                                },
                                o);
    }
    require(args.empty(), "great_circle takes no arguments");
    return sample_submanifold(M, id, 1, {2 * kPi}, Mat::Zero(d, 1),
                              [d](const Vec& y) {
                                Vec u = Vec::Zero(d);
                                u[0] = std::cos(y[0]);
                                u[1] = std::sin(y[0]);
                                return u;
                              },
                              opt);
  }
  if (name == "clifford_torus") {
    require(d >= 4 && M->charts.size() == 2, "clifford_torus lives in a stereographic chart of S^d, d >= 4");
    Submanifold K = sample_submanifold(M, id, 2, {2 * kPi, 2 * kPi}, Mat::Zero(d, 2),
                                       [d](const Vec& y) {
                                         Vec u = Vec::Zero(d);
                                         u[0] = std::cos(y[0]) / std::sqrt(2.0);
                                         u[1] = std::sin(y[0]) / std::sqrt(2.0);
                                         u[2] = std::cos(y[1]) / std::sqrt(2.0);
                                         u[3] = std::sin(y[1]) / std::sqrt(2.0);
                                         return u;
                                       },
                                       opt);
    return K;
  }
  if (name == "coordinate_circle" || name == "sub_torus") {
    require(M->affine, name + " needs a flat geometry");
    std::vector<int> dims;
    for (std::size_t i = 0; i < args.size(); ++i) dims.push_back(static_cast<int>(num(i)));
    require(!dims.empty(), name + " needs at least one axis");
    if (name == "coordinate_circle") require(dims.size() == 1, "coordinate_circle(axis) takes one axis");
    const int k = static_cast<int>(dims.size());
    Mat lift = Mat::Zero(d, k);
    std::vector<double> periods;
    for (int a = 0; a < k; ++a) {
      require(dims[a] >= 0 && dims[a] < d, name + ": axis out of range");
      require(static_cast<int>(M->periods.size()) > dims[a] && M->periods[dims[a]] > 0,
              name + ": axis " + std::to_string(dims[a]) + " is not periodic");
      for (int b = 0; b < a; ++b) require(dims[b] != dims[a], name + ": repeated axis");
      lift(dims[a], a) = M->periods[dims[a]];
      periods.push_back(M->periods[dims[a]]);
    }
    Submanifold K = sample_submanifold(M, id, k, periods, lift,
                                       [d, k, dims](const Vec& y) {
                                         Vec x = Vec::Zero(d);
                                         for (int a = 0; a < k; ++a) x[dims[a]] = y[a];
                                         return x;
                                       },
                                       opt);
    K.affine = true;
    return K;
  }
  if (name == "shot_geodesic") {
    require(static_cast<int>(args.size()) == 2 * d, "shot_geodesic needs 2*dim numbers: point then direction");
    Vec p0(d), v0(d);
    for (int i = 0; i < d; ++i) {
      p0[i] = num(i);
      v0[i] = num(d + i);
    }
    ShootingResult s = shoot_closed_geodesic(*M, p0, v0);
    // Nodes by marching along the geodesic; the parameter t ∈ [0, 2π) has speed length/2π.
    const int N = opt.K_nodes;
    std::vector<Vec> pts(N);
    Vec x = s.point, v = s.velocity * (s.length / N);
    for (int j = 0; j < N; ++j) {
      pts[j] = x;
      auto [x1, v1] = geodesic_end_in_chart(*M, x, v, 0);
      x = x1;
      v = v1;
    }
    return sample_submanifold(M, id, 1, {2 * kPi}, Mat::Zero(d, 1),
                              [&pts, N](const Vec& y) {
                                int j = static_cast<int>(std::lround(y[0] / (2 * kPi) * N)) % N;
                                return pts[j];
                              },
                              opt);
  }
  throw Error(ErrorKind::validation, "unknown submanifold id '" + id + "'");
}

inline Submanifold build_submanifold(const Manifold& M, const std::string& id, const SubmanifoldOptions& opt = {}) {
  return build_submanifold(std::make_shared<const Manifold>(M), id, opt);
}

}  // namespace cmc
