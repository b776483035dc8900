#pragma once
// Perturbed geodesic tubes S_ρ(w,Φ) over the spherical normal bundle of K:
// embedding, exact numerical fundamental forms, the mean curvature residual,
// densities and the linearization of the residual.

#include <cmc/common.hpp>
#include <cmc/fermi.hpp>
#include <cmc/manifold.hpp>
#include <cmc/snk.hpp>
#include <cmc/submanifold.hpp>

#include <memory>
#include <string>
#include <vector>

namespace cmc {

struct TubeState {
  double rho = 0.1;
  Vec w;    // node values on SNK, Π w = 0
  Vec Phi;  // frame components p*n+i on K nodes
  std::string provenance = "raw";
  int iterate = 0;
};

inline TubeState zero_state(const SNKGrid& S, double rho) {
  return {rho, Vec::Zero(S.N), Vec::Zero(S.NK * S.n), "raw", 0};
}

/// Checks positivity of the radius function and the absence of degree-1 content in w.
inline void check_state(const SNKGrid& S, const TubeState& st, double tol = 1e-8) {
  require(st.rho > 0, "tube: rho must be positive");
  require(st.w.size() == S.N && st.Phi.size() == S.NK * S.n, "tube: state size mismatch");
  require(st.w.allFinite() && st.Phi.allFinite(), "tube: state has non-finite values");
  if ((1.0 + st.w.array()).minCoeff() <= 0.0)
    throw Error(ErrorKind::validation, "tube: graph condition 1 + w > 0 violated");
  double defect = sup_norm(S.project_S(st.w));
  if (defect > tol * std::max(1.0, sup_norm(st.w)))
    throw Error(ErrorKind::validation, "tube: w carries degree-1 content (defect " + std::to_string(defect) + ")");
}

/// Ambient points of the tube at every SNK node, with dG/dc when requested.
struct TubeEmbedding {
  std::vector<Vec> X;     // chart-0 coordinates
  std::vector<Vec> out;   // outward direction (end velocity of the normal geodesic)
  std::vector<Mat> Jexp;  // dim x n derivative of the point in the fiber vector c
  int steps = 0;
};

inline int tube_geodesic_steps(double rho) { return std::max(16, static_cast<int>(std::ceil(2.0 * rho / 0.004))); }

inline TubeEmbedding embed(const SNKGrid& S, const TubeState& st, bool with_jacobian = false) {
  check_state(S, st);
  const Submanifold& K = *S.K;
  const Manifold& M = *K.M;
  require(S.n == 2, "tube geometry is implemented for codimension n = 2");
  TubeEmbedding E;
  E.X.resize(S.N);
  E.out.resize(S.N);
  if (with_jacobian) E.Jexp.resize(S.N);
  E.steps = tube_geodesic_steps(st.rho);
  GeodesicOptions opt;
  opt.min_steps = E.steps;
  opt.max_arc_step = 1e9;
  const double budget = normal_injectivity_budget(M);
  parallel_for(S.N, [&](std::size_t qi) {
    const int q = static_cast<int>(qi), p = S.base(q);
    const Mat& En = K.normal[p];
    Vec c = st.rho * (1.0 + st.w[q]) * S.theta(q) + st.Phi.segment(p * S.n, S.n);
    if (c.norm() >= budget) throw Error(ErrorKind::injectivity, "tube: radius exceeds the normal injectivity budget");
    if (M.affine) {
      E.X[q] = K.point[p] + En * c;
      E.out[q] = En * c;
      if (with_jacobian) E.Jexp[q] = En;
      return;
    }
    auto [x, v] = geodesic_end_in_chart(M, K.point[p], En * c, 0, opt);
    E.X[q] = x;
    E.out[q] = v;
    if (with_jacobian) {
      const double h = 1e-6;
      Mat J(M.dim, S.n);
      for (int i = 0; i < S.n; ++i) {
        Vec cp = c, cm = c;
        cp[i] += h;
        cm[i] -= h;
        Vec xp = geodesic_end_in_chart(M, K.point[p], En * cp, 0, opt).first;
        Vec xm = geodesic_end_in_chart(M, K.point[p], En * cm, 0, opt).first;
        J.col(i) = (xp - xm) / (2 * h);
      }
      E.Jexp[q] = J;
    }
  });
  return E;
}

namespace detail {

/// Index of the unordered pair (mu <= nu) among m(m+1)/2.
inline int pair_index(int mu, int nu, int m) {
  if (mu > nu) std::swap(mu, nu);
  return mu * m - mu * (mu - 1) / 2 + (nu - mu);
}

/// g-unit normal of the hyperplane spanned by the columns of P, from the cofactor covector.
inline Vec cofactor_normal(const Mat& g, const Mat& P) {
  const int d = static_cast<int>(P.rows()), m = static_cast<int>(P.cols());
  Vec nu(d);
  Mat B(d, d);
  B.leftCols(m) = P;
  for (int i = 0; i < d; ++i) {
    B.col(m) = Vec::Unit(d, i);
    nu[i] = B.determinant();
  }
  Vec N = g.ldlt().solve(nu);
  double len = norm_g(g, N);
  if (!(len > 0)) throw Error(ErrorKind::degenerate_metric, "tube: degenerate tangent frame");
  return N / len;
}

}  // namespace detail

/// Shape data at one point from the point X, tangents P (dim x m) and second
/// derivatives PP (pair order); `sign` fixes the orientation of the cofactor normal.
struct LocalShape {
  Vec normal;
  Mat I, h;
  double H = 0.0;
};

inline LocalShape local_shape(const Mat& g, const Christoffel& G, const Mat& P, const std::vector<Vec>& PP,
                              double sign) {
  const int m = static_cast<int>(P.cols());
  LocalShape L;
  L.I = P.transpose() * g * P;
  L.normal = sign * detail::cofactor_normal(g, P);
  Vec gN = g * L.normal;
  L.h.resize(m, m);
  for (int mu = 0; mu < m; ++mu)
    for (int nu = mu; nu < m; ++nu)
      L.h(mu, nu) = L.h(nu, mu) = gN.dot(PP[detail::pair_index(mu, nu, m)] + G.contract(P.col(mu), P.col(nu)));
  L.H = (L.I.ldlt().solve(L.h)).trace() / m;
  return L;
}

struct TubeGeometry {
  int m = 0;
  std::vector<Mat> first_ff, second_ff;
  std::vector<Vec> normal;
  std::vector<Vec> principal;  // principal curvatures, ascending
  Vec mean_curvature, shape_norm, area_element, A_rho;
  std::vector<double> orientation;  // sign applied to the cofactor normal
  double normalization_residual = 0.0, orthogonality_residual = 0.0;
  // Derivative data kept for the linearization.
  std::vector<Mat> P;
  std::vector<std::vector<Vec>> PP;
};

/// Spectral derivatives of the embedding along the SNK axes (θ, y_1..y_k).
inline std::pair<std::vector<Mat>, std::vector<std::vector<Vec>>> tube_derivatives(const SNKGrid& S,
                                                                                    const std::vector<Vec>& X) {
  const Submanifold& K = *S.K;
  const int d = K.dim(), m = 1 + S.k, N = S.N;
  Mat Q(N, d);
  for (int q = 0; q < N; ++q) {
    Vec shift = Vec::Zero(d);
    Vec y = K.grid.coords(S.base(q));
    for (int a = 0; a < S.k; ++a) shift += K.lift.col(a) * y[a] / K.grid.period(a);
    Q.row(q) = (X[q] - shift).transpose();
  }
  std::vector<Mat> D1(m);
  for (int mu = 0; mu < m; ++mu) D1[mu] = S.grid->diff(mu, Q);
  std::vector<Mat> P(N, Mat(d, m));
  for (int q = 0; q < N; ++q)
    for (int mu = 0; mu < m; ++mu) {
      P[q].col(mu) = D1[mu].row(q).transpose();
      if (mu > 0) P[q].col(mu) += K.lift.col(mu - 1) / K.grid.period(mu - 1);
    }
  std::vector<std::vector<Vec>> PP(N, std::vector<Vec>(m * (m + 1) / 2));
  for (int mu = 0; mu < m; ++mu)
    for (int nu = mu; nu < m; ++nu) {
      Mat D2 = mu == nu ? S.grid->diff2(mu, mu, Q) : S.grid->diff(mu, D1[nu]);
      const int id = detail::pair_index(mu, nu, m);
      for (int q = 0; q < N; ++q) PP[q][id] = D2.row(q).transpose();
    }
  return {P, PP};
}

inline TubeGeometry fundamental_forms(const SNKGrid& S, const TubeState& st, const TubeEmbedding& E) {
  const Submanifold& K = *S.K;
  const Manifold& M = *K.M;
  const int N = S.N, m = 1 + S.k;
  TubeGeometry T;
  T.m = m;
  std::tie(T.P, T.PP) = tube_derivatives(S, E.X);
  T.first_ff.resize(N);
  T.second_ff.resize(N);
  T.normal.resize(N);
  T.principal.resize(N);
  T.orientation.assign(N, 1.0);
  T.mean_curvature.resize(N);
  T.shape_norm.resize(N);
  T.area_element.resize(N);
  T.A_rho = Vec::Ones(N);
  std::vector<double> nres(N), ores(N);
  parallel_for(N, [&](std::size_t qi) {
    const int q = static_cast<int>(qi);
    Mat g = M.metric(E.X[q], 0);
    Christoffel G = christoffel(M, E.X[q], 0);
    LocalShape L = local_shape(g, G, T.P[q], T.PP[q], 1.0);
    if (L.normal.dot(g * E.out[q]) > 0) {
      T.orientation[q] = -1.0;
      L = local_shape(g, G, T.P[q], T.PP[q], -1.0);
    }
    Eigen::LLT<Mat> llt(L.I);
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::degenerate_metric, "tube: first fundamental form not SPD");
    T.first_ff[q] = L.I;
    T.second_ff[q] = L.h;
    T.normal[q] = L.normal;
    T.mean_curvature[q] = L.H;
    Eigen::GeneralizedSelfAdjointEigenSolver<Mat> ges(L.h, L.I);
    T.principal[q] = ges.eigenvalues();
    T.shape_norm[q] = ges.eigenvalues().squaredNorm();
    T.area_element[q] = std::sqrt(L.I.determinant());
    nres[q] = std::abs(L.normal.dot(g * L.normal) - 1.0);
    ores[q] = (T.P[q].transpose() * g * L.normal).cwiseAbs().maxCoeff();
    const int p = S.base(q);
    double snk = std::sqrt(K.h[p].determinant()) * std::pow(st.rho, S.n - 1);
    if (!E.Jexp.empty()) {
      Vec ups = E.Jexp[q] * S.theta(q);
      T.A_rho[q] = -L.normal.dot(g * ups) * T.area_element[q] / snk;
    }
  });
  T.normalization_residual = *std::max_element(nres.begin(), nres.end());
  T.orthogonality_residual = *std::max_element(ores.begin(), ores.end());
  return T;
}

inline TubeGeometry tube_geometry(const SNKGrid& S, const TubeState& st, bool with_jacobian = false) {
  return fundamental_forms(S, st, embed(S, st, with_jacobian));
}

/// ρ m H − (n−1) at every node.
inline Vec mc_residual(const SNKGrid& S, const TubeState& st, const TubeGeometry& T) {
  return (st.rho * T.m * T.mean_curvature).array() - (S.n - 1.0);
}
inline Vec mc_residual(const SNKGrid& S, const TubeState& st) { return mc_residual(S, st, tube_geometry(S, st)); }

// ---------------------------------------------------------------------------
// Densities

struct Densities {
  double rho = 0.0, q = 2.0;
  double area = 0.0, area_density = 0.0, area_limit = 0.0;
  double curvature = 0.0, curvature_density = 0.0, curvature_limit = 0.0;
};

inline Densities densities(const SNKGrid& S, const TubeState& st, const TubeGeometry& T, double q = 2.0) {
  const Submanifold& K = *S.K;
  const int k = S.k, m = T.m;
  Densities D;
  D.rho = st.rho;
  D.q = q;
  for (int i = 0; i < S.N; ++i) {
    const int p = S.base(i);
    double cell = S.weight[i] / std::sqrt(K.h[p].determinant());
    D.area += cell * T.area_element[i];
    D.curvature += cell * T.area_element[i] * std::pow(T.shape_norm[i], q / 2.0);
  }
  D.area_density = std::pow(st.rho, k - m) * D.area;
  D.curvature_density = std::pow(st.rho, k - m + q) * D.curvature;
  D.area_limit = S.omega() * K.volume;
  D.curvature_limit = std::pow(S.n - 1.0, q / 2.0) * S.omega() * K.volume;
  return D;
}

// ---------------------------------------------------------------------------
// Linearization of v ↦ (ρ m H − (n−1))/ρ with v = ρ δw + g(δΦ, Θ)

struct TubeLinearization {
  const SNKGrid* S = nullptr;
  TubeState background;
  TubeEmbedding embedding;
  TubeGeometry geometry;
  std::vector<Vec> gX;               // ∂H/∂X
  std::vector<Mat> gP;               // ∂H/∂P_μ (dim x m)
  std::vector<std::vector<Vec>> gPP; // ∂H/∂P_μν (pair order)
  std::vector<Vec> gN;               // g N (oriented unit normal, lowered)

  /// Fiber vectors δc (n x cols) at node q for a batch of directions δv (N x cols).
  Mat fiber_update(int q, const Mat& dv, const std::vector<Mat>& dPhi) const {
    const Vec& th = S->theta(q);
    const int p = S->base(q);
    Mat proj = Mat::Identity(S->n, S->n) - th * th.transpose();
    return th * dv.row(q) + proj * dPhi[p];
  }

  /// m · δH for each column of dv (N x cols).
  Mat apply(const Mat& dv) const {
    const SNKGrid& G = *S;
    const int N = G.N, n = G.n, d = G.K->dim(), m = geometry.m, cols = static_cast<int>(dv.cols());
    require(dv.rows() == N, "linearization: direction size mismatch");
    // δΦ per K node (n x cols)
    std::vector<Mat> dPhi(G.NK, Mat::Zero(n, cols));
    const double c = n / G.omega();
    for (int q = 0; q < N; ++q) dPhi[G.base(q)] += c * G.sphere.weights[G.fiber(q)] * G.theta(q) * dv.row(q);
    std::vector<Mat> dX(d, Mat(N, cols));
    for (int q = 0; q < N; ++q) {
      Mat dXq = embedding.Jexp[q] * fiber_update(q, dv, dPhi);
      for (int r = 0; r < d; ++r) dX[r].row(q) = dXq.row(r);
    }
    Mat out = Mat::Zero(N, cols);
    for (int r = 0; r < d; ++r) {
      for (int q = 0; q < N; ++q) out.row(q) += gX[q][r] * dX[r].row(q);
      std::vector<Mat> D1(m);
      for (int mu = 0; mu < m; ++mu) {
        D1[mu] = G.grid->diff(mu, dX[r]);
        for (int q = 0; q < N; ++q) out.row(q) += gP[q](r, mu) * D1[mu].row(q);
      }
      for (int mu = 0; mu < m; ++mu)
        for (int nu = mu; nu < m; ++nu) {
          Mat D2 = mu == nu ? G.grid->diff2(mu, mu, dX[r]) : G.grid->diff(mu, D1[nu]);
          const int id = detail::pair_index(mu, nu, m);
          for (int q = 0; q < N; ++q) out.row(q) += gPP[q][id][r] * D2.row(q);
        }
    }
    return m * out;
  }
  Vec apply(const Vec& dv) const { return apply(Mat(dv)).col(0); }

  /// Normal speed −g(N, δX) of the tube for each column of dv.
  Mat normal_speed(const Mat& dv) const {
    const SNKGrid& G = *S;
    const int N = G.N, n = G.n, cols = static_cast<int>(dv.cols());
    std::vector<Mat> dPhi(G.NK, Mat::Zero(n, cols));
    const double c = n / G.omega();
    for (int q = 0; q < N; ++q) dPhi[G.base(q)] += c * G.sphere.weights[G.fiber(q)] * G.theta(q) * dv.row(q);
    Mat out(N, cols);
    for (int q = 0; q < N; ++q) out.row(q) = -gN[q].transpose() * embedding.Jexp[q] * fiber_update(q, dv, dPhi);
    return out;
  }
  /// Area density of the tube against ρ^{n−1} dvol_SNK at each node.
  Vec area_ratio() const {
    Vec a(S->N);
    for (int q = 0; q < S->N; ++q)
      a[q] = geometry.area_element[q] /
             (std::sqrt(S->K->h[S->base(q)].determinant()) * std::pow(background.rho, S->n - 1));
    return a;
  }
};

inline TubeLinearization linearize(const SNKGrid& S, const TubeState& st) {
  TubeLinearization L;
  L.S = &S;
  L.background = st;
  L.embedding = embed(S, st, true);
  L.geometry = fundamental_forms(S, st, L.embedding);
  const Manifold& M = *S.K->M;
  const int N = S.N, d = M.dim, m = L.geometry.m, np = m * (m + 1) / 2;
  L.gX.assign(N, Vec::Zero(d));
  L.gP.assign(N, Mat::Zero(d, m));
  L.gPP.assign(N, std::vector<Vec>(np, Vec::Zero(d)));
  L.gN.assign(N, Vec::Zero(d));
  parallel_for(N, [&](std::size_t qi) {
    const int q = static_cast<int>(qi);
    const Vec& X = L.embedding.X[q];
    const Mat& P = L.geometry.P[q];
    const auto& PP = L.geometry.PP[q];
    const double sg = L.geometry.orientation[q];
    Mat g = M.metric(X, 0);
    Christoffel G = christoffel(M, X, 0);
    // H is linear in PP.
    LocalShape base = local_shape(g, G, P, PP, sg);
    Mat Iinv = base.I.inverse();
    Vec gN = g * base.normal;
    L.gN[q] = gN;
    for (int mu = 0; mu < m; ++mu)
      for (int nu = mu; nu < m; ++nu)
        L.gPP[q][detail::pair_index(mu, nu, m)] = (mu == nu ? Iinv(mu, mu) : 2 * Iinv(mu, nu)) / m * gN;
    if (!M.affine) {
      const double hx = 1e-5 * M.chart_scale;
      for (int r = 0; r < d; ++r) {
        Vec xp = X, xm = X;
        xp[r] += hx;
        xm[r] -= hx;
        double Hp = local_shape(M.metric(xp, 0), christoffel(M, xp, 0), P, PP, sg).H;
        double Hm = local_shape(M.metric(xm, 0), christoffel(M, xm, 0), P, PP, sg).H;
        L.gX[q][r] = (Hp - Hm) / (2 * hx);
      }
    }
    for (int mu = 0; mu < m; ++mu) {
      const double hp = 1e-5 * P.col(mu).norm();
      for (int r = 0; r < d; ++r) {
        Mat Pp = P, Pm = P;
        Pp(r, mu) += hp;
        Pm(r, mu) -= hp;
        L.gP[q](r, mu) = (local_shape(g, G, Pp, PP, sg).H - local_shape(g, G, Pm, PP, sg).H) / (2 * hp);
      }
    }
  });
  return L;
}

/// State after adding the perturbation v = ρ δw + g(δΦ, Θ).
inline TubeState perturbed(const SNKGrid& S, const TubeState& st, const Vec& dv) {
  TubeState out = st;
  out.w += S.project_perp(dv) / st.rho;
  out.Phi += S.section_of(dv);
  return out;
}

// ---------------------------------------------------------------------------
// Second-order expansion of the residual at (w, Φ) = (0, 0)

/// ρ² coefficient of ρ m H − (n−1) for minimal K:
/// −⅔ g(ℛ^N Θ,Θ) − ⅓ Ric(Θ,Θ) − g(𝓑^N Θ,Θ) at every SNK node.
inline Vec curvature_bracket(const SNKGrid& S) {
  const Submanifold& K = *S.K;
  auto curv = K.curvature_at_nodes();
  Vec out(S.N);
  for (int p = 0; p < S.NK; ++p) {
    Mat R = K.R_operator(p, curv[p]), B = K.B_operator(p), Ric = K.ricci_normal(p, curv[p]);
    for (int j = 0; j < S.Ns; ++j) {
      const Vec& th = S.sphere.nodes[j];
      out[j + S.Ns * p] = -2.0 / 3.0 * th.dot(R * th) - th.dot(Ric * th) / 3.0 - th.dot(B * th);
    }
  }
  return out;
}

/// Smooth test directions: δw without degree-1 content, δΦ a section.
inline Vec test_direction_w(const SNKGrid& S) {
  Vec v(S.N);
  for (int q = 0; q < S.N; ++q) {
    const Vec& th = S.theta(q);
    double y = S.K->grid.coords(S.base(q))[0] * 2 * kPi / S.K->grid.period(0);
    double c2 = th[0] * th[0] - th[1] * th[1], s2 = 2 * th[0] * th[1];
    v[q] = 0.3 + 0.2 * std::cos(y) + 0.25 * c2 * std::cos(y) + 0.15 * s2 * std::sin(2 * y);
  }
  return S.project_perp(v);
}
inline Vec test_direction_Phi(const SNKGrid& S) {
  Vec Phi(S.NK * S.n);
  for (int p = 0; p < S.NK; ++p) {
    double y = S.K->grid.coords(p)[0] * 2 * kPi / S.K->grid.period(0);
    for (int i = 0; i < S.n; ++i) Phi[p * S.n + i] = (i == 0 ? 0.4 * std::cos(y) + 0.1 : 0.3 * std::sin(2 * y));
  }
  return Phi;
}

struct MCExpansionReport {
  std::vector<double> rho, residual, subtracted, w_error, Phi_error, bracket_sup;
  LineFit raw_fit, subtracted_fit, w_fit, Phi_fit;
  bool subtracted_exact = false, w_exact = false, Phi_exact = false;
};

/// Residual orders at (0,0) and first-order responses along (δw,0) and (0,δΦ)
/// compared with ℒ_ρ δw and ρ g(𝔍 δΦ, Θ).
inline MCExpansionReport verify_mc_expansion(const SNKGrid& S, const std::vector<double>& rhos,
                                             bool directional = true, double noise_floor = 1e-11) {
  MCExpansionReport rep;
  Vec br = curvature_bracket(S);
  Vec dw = test_direction_w(S), dPhi = test_direction_Phi(S);
  Vec JdPhi;
  if (directional) {
    const JacobiOperator& J = S.jacobi();
    JdPhi = S.along_theta(J.matrix * dPhi);
  }
  for (double rho : rhos) {
    TubeState st = zero_state(S, rho);
    Vec r = mc_residual(S, st);
    rep.rho.push_back(rho);
    rep.residual.push_back(sup_norm(r));
    rep.subtracted.push_back(sup_norm(r - rho * rho * br));
    rep.bracket_sup.push_back(sup_norm(br));
    if (!directional) continue;
    const double eps = 1e-4;
    TubeState a = st, b = st;
    a.w += eps * dw;
    b.w -= eps * dw;
    Vec dR = (mc_residual(S, a) - mc_residual(S, b)) / (2 * eps);
    rep.w_error.push_back(sup_norm(dR - rho * rho * S.model_apply(dw, rho)));
    a = st;
    b = st;
    a.Phi += eps * dPhi;
    b.Phi -= eps * dPhi;
    dR = (mc_residual(S, a) - mc_residual(S, b)) / (2 * eps);
    rep.Phi_error.push_back(sup_norm(dR - rho * JdPhi));
  }
  auto fit = [&](const std::vector<double>& e, bool& exact) {
    exact = *std::max_element(e.begin(), e.end()) < noise_floor;
    return exact ? LineFit{} : loglog_fit(rep.rho, e);
  };
  bool dummy = false;
  rep.raw_fit = fit(rep.residual, dummy);
  rep.subtracted_fit = fit(rep.subtracted, rep.subtracted_exact);
  if (directional) {
    rep.w_fit = fit(rep.w_error, rep.w_exact);
    rep.Phi_fit = fit(rep.Phi_error, rep.Phi_exact);
  }
  return rep;
}

}  // namespace cmc
