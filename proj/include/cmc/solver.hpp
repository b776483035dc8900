#pragma once
// Iterative improvement of the tube and the Newton solve of ρ m H = n − 1.

#include <cmc/spectral.hpp>
#include <cmc/tube.hpp>

#include <random>

namespace cmc {

struct SolverConfig {
  int i_max = 2;
  int q = 2;
  double alpha = 0.5;  // Hölder exponent; only enters the depth budget D
  double newton_tol = 1e-9;
  int max_newton_steps = 15;
  double armijo = 1e-4;
  int max_halvings = 20;
  bool freeze_Phi = false;         // quotient out a degenerate 𝔍 (symmetric geometries)
  bool allow_outside_I = false;    // experiments off the admissible set
  double jacobi_tol = 1e-8;        // 𝔍 counts as degenerate below this (relative)
  double gap_floor = 1e-12;        // reciprocal condition floor for the Newton Jacobian
  std::string method = "newton";  // or "picard": the contraction map with the model operator on 𝒮^⊥
  int max_picard_steps = 200;

  /// Depth budget D = 3k/2 + q + 1 + α.
  double budget(int k) const { return 1.5 * k + q + 1 + alpha; }
  int faithful_depth(int k) const { return static_cast<int>(std::floor(2 * budget(k) + 1)) + 1; }
};

struct IterateSequence {
  std::vector<TubeState> iterates;  // iterates[i] = (w^(i), Φ^(i)), iterates[0] the bare tube
  std::vector<double> residual_norms;
  std::vector<double> w_diffs, Phi_diffs;  // ‖w^(i+1) − w^(i)‖_∞, ‖Φ^(i+1) − Φ^(i)‖_∞
};

namespace detail {

/// Smallest |eigenvalue| of 𝔍 relative to the largest.
inline double jacobi_conditioning(const SNKGrid& S) {
  const Vec& ev = S.jacobi().eigenvalues;
  return ev.cwiseAbs().minCoeff() / std::max(1e-300, ev.cwiseAbs().maxCoeff());
}

/// Solves ℒ_0 w = f fiberwise, ℒ_0 = −(Δ_S + (n−1)) with eigenvalue λ_l − (n−1) on degree l.
inline Vec invert_L0(const SNKGrid& S, const Vec& f) {
  Vec coef = S.to_coefficients(f);
  const int nb = S.basis_size();
  double s1 = 0.0, total = 0.0;
  for (int p = 0; p < S.NK; ++p)
    for (int b = 0; b < nb; ++b) {
      const int l = S.sphere.harmonic_degree[b];
      double& c = coef[p * nb + b];
      total = std::max(total, std::abs(c));
      if (l == 1) {
        s1 = std::max(s1, std::abs(c));
        c = 0.0;
      } else {
        c /= S.sphere_eigenvalue(l) - (S.n - 1.0);
      }
    }
  if (s1 > 1e-10 * std::max(1.0, total))
    throw Error(ErrorKind::validation, "improve: degree-1 content reached the fiber inversion (defect " +
                                           std::to_string(s1) + ")");
  return S.from_coefficients(coef);
}

/// One improvement step from the residual r of `st`.
inline TubeState improve_step(const SNKGrid& S, const TubeState& st, const Vec& r, const SolverConfig& cfg) {
  TubeState next = st;
  next.w = st.w - invert_L0(S, S.project_perp(r));
  Vec demand = S.section_of(r);
  if (cfg.freeze_Phi) {
    if (sup_norm(demand) > 1e-8 * std::max(1e-4, sup_norm(r)))
      throw Error(ErrorKind::degenerate_jacobi, "improve: frozen sections but the residual has degree-1 content " +
                                                    std::to_string(sup_norm(demand)));
  } else {
    Eigen::PartialPivLU<Mat> lu(S.jacobi().matrix);
    next.Phi = st.Phi - lu.solve(demand) / st.rho;
  }
  next.iterate = st.iterate + 1;
  next.provenance = "iterate(" + std::to_string(next.iterate) + ")";
  return next;
}

/// Solves ρ²·(model operator) w = f on 𝒮^⊥ degree by degree. Unlike ℒ_0 alone this
/// keeps the horizontal term, so high K-frequencies do not get amplified.
inline Vec model_solve_perp(const SNKGrid& S, const Vec& f, double rho, double gap_floor) {
  Vec coef = S.to_coefficients(f), out = Vec::Zero(coef.size());
  for (int l = 0; l <= S.max_degree(); ++l) {
    if (l == 1) continue;
    Eigen::PartialPivLU<Mat> lu(rho * rho * S.model_block(l, rho));
    if (!(lu.rcond() > gap_floor))
      throw Error(ErrorKind::resonance, "model operator singular on degree " + std::to_string(l) +
                                            ": rho is close to a resonance");
    S.scatter(lu.solve(S.gather(coef, l).cwiseProduct(S.block_mass(l))), l, out);
  }
  return S.from_coefficients(out);
}

/// One step of the contraction map: the model operator on 𝒮^⊥, 𝔍 on sections.
inline TubeState contraction_step(const SNKGrid& S, const TubeState& st, const Vec& r, const SolverConfig& cfg) {
  TubeState next = improve_step(S, st, r, cfg);
  next.w = st.w - model_solve_perp(S, S.project_perp(r), st.rho, cfg.gap_floor);
  return next;
}

inline void require_nondegenerate(const SNKGrid& S, const SolverConfig& cfg) {
  if (cfg.freeze_Phi) return;
  double c = jacobi_conditioning(S);
  if (c < cfg.jacobi_tol)
    throw Error(ErrorKind::degenerate_jacobi, "Jacobi operator is degenerate: min|σ|/max|σ| = " + std::to_string(c) +
                                                  "; freeze the sections for symmetric geometries");
}

}  // namespace detail

/// Iterates w^(i), Φ^(i) for i ≤ depth; each step inverts ℒ_0 on 𝒮^⊥ and 𝔍 on sections
/// against the full numerical residual of the current iterate.
inline IterateSequence improve(const SNKGrid& S, double rho, int depth, const SolverConfig& cfg = {}) {
  require(depth >= 0, "improve: depth must be non-negative");
  require(S.K->minimality_residual <= 1e-6, "improve: K must be minimal");
  detail::require_nondegenerate(S, cfg);
  IterateSequence seq;
  TubeState st = zero_state(S, rho);
  for (int i = 0;; ++i) {
    Vec r = mc_residual(S, st);
    seq.iterates.push_back(st);
    seq.residual_norms.push_back(sup_norm(r));
    if (i == depth) break;
    TubeState next = detail::improve_step(S, st, r, cfg);
    seq.w_diffs.push_back(sup_norm(next.w - st.w));
    seq.Phi_diffs.push_back(sup_norm(next.Phi - st.Phi));
    st = std::move(next);
  }
  return seq;
}

struct SolveResult {
  TubeState state;
  TubeState background;  // the improve iterate the solve started from
  int steps = 0;
  std::vector<double> residual_history;  // sup-node |ρ m H − (n−1)|
  double distance = 0.0;                 // ‖v‖_∞ from the background
  double quadratic_ratio = 0.0;          // r_{k+1}/r_k² at the last step
  double min_rcond = 1.0;
  bool in_I = true;
};

namespace detail {

/// Trial basis for the Newton update: all node directions, or 𝒮^⊥ only.
inline Mat newton_basis(const SNKGrid& S, bool freeze_Phi) {
  if (!freeze_Phi) return Mat::Identity(S.N, S.N);
  Mat T = synthesis_matrix(S);
  const int nb = S.basis_size();
  std::vector<int> keep;
  for (int c = 0; c < T.cols(); ++c)
    if (S.sphere.harmonic_degree[c % nb] != 1) keep.push_back(c);
  Mat B(S.N, keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) B.col(i) = T.col(keep[i]);
  return B;
}

inline double merit(const SNKGrid& S, const Vec& r) { return std::sqrt(S.integrate(r.cwiseProduct(r))); }

}  // namespace detail

/// Newton (or the contraction map) on ρ m H − (n−1) = 0 from `start`.
inline SolveResult solve_from(const SNKGrid& S, const TubeState& start, const SolverConfig& cfg) {
  SolveResult res;
  res.background = start;
  TubeState st = start;
  Vec r = mc_residual(S, st);
  res.residual_history.push_back(sup_norm(r));
  const double rho = st.rho;
  if (cfg.method == "picard") {
    for (int k = 0; k < cfg.max_picard_steps && res.residual_history.back() >= cfg.newton_tol; ++k) {
      st = detail::contraction_step(S, st, r, cfg);
      r = mc_residual(S, st);
      res.residual_history.push_back(sup_norm(r));
      res.steps = k + 1;
      if (!std::isfinite(res.residual_history.back()) || res.residual_history.back() > 1e3 * res.residual_history[0])
        throw Error(ErrorKind::divergence, "contraction map diverged");
    }
  } else {
    require(cfg.method == "newton", "solver: unknown method " + cfg.method);
    const Mat B = detail::newton_basis(S, cfg.freeze_Phi);
    const Mat BtW = B.transpose() * S.weight.asDiagonal();
    while (res.residual_history.back() >= cfg.newton_tol) {
      if (res.steps == cfg.max_newton_steps)
        throw Error(ErrorKind::divergence, "Newton did not converge in " + std::to_string(cfg.max_newton_steps) +
                                               " steps; residual " + std::to_string(res.residual_history.back()));
      TubeLinearization lin = linearize(S, st);
      Mat J = rho * (BtW * lin.apply(B));
      Eigen::PartialPivLU<Mat> lu(J);
      double rc = lu.rcond();
      res.min_rcond = std::min(res.min_rcond, rc);
      if (!(rc > cfg.gap_floor))
        throw Error(ErrorKind::resonance, "Newton Jacobian nearly singular (rcond " + std::to_string(rc) +
                                              "): rho is close to a resonance");
      Vec dv = B * lu.solve(-(BtW * r));
      const double f0 = detail::merit(S, r);
      double t = 1.0;
      TubeState trial;
      Vec rt;
      bool accepted = false;
      for (int h = 0; h <= cfg.max_halvings; ++h, t *= 0.5) {
        try {
          trial = perturbed(S, st, t * dv);
          rt = mc_residual(S, trial);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::validation && e.kind() != ErrorKind::injectivity) throw;
          continue;
        }
        if (rt.allFinite() && detail::merit(S, rt) <= (1.0 - cfg.armijo * t) * f0) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        std::string trace;
        for (double x : res.residual_history) trace += " " + std::to_string(x);
        throw Error(ErrorKind::divergence, "Newton damping exhausted; residual history:" + trace);
      }
      st = std::move(trial);
      r = std::move(rt);
      res.residual_history.push_back(sup_norm(r));
      ++res.steps;
    }
  }
  if (cfg.freeze_Phi && sup_norm(S.section_of(r)) > std::max(cfg.newton_tol, 1e-8 * res.residual_history[0]))
    throw Error(ErrorKind::degenerate_jacobi, "frozen sections but the converged residual has degree-1 content");
  // last step above the round-off floor
  const auto& h = res.residual_history;
  for (std::size_t k = 1; k < h.size(); ++k)
    if (h[k] > 1e-11) res.quadratic_ratio = h[k] / (h[k - 1] * h[k - 1]);
  st.provenance = "solved";
  check_state(S, st, 1e-10);
  res.distance = sup_norm(rho * (st.w - start.w) + S.along_theta(st.Phi - start.Phi));
  res.state = std::move(st);
  return res;
}

/// Solves the CMC equation at ρ from the i_max improve iterate. `I` (if given)
/// is the admissible interval set the radius is checked against.
inline SolveResult solve_cmc(const SNKGrid& S, double rho, const SolverConfig& cfg = {},
                             const IntervalSet* I = nullptr) {
  bool in_I = true;
  if (I) {
    in_I = I->contains(rho);
    if (!in_I) {
      std::string msg = "rho = " + std::to_string(rho) + " is outside the admissible interval set";
      if (!cfg.allow_outside_I) throw Error(ErrorKind::resonance, msg);
      log_warning(msg);
    }
  }
  IterateSequence seq = improve(S, rho, cfg.i_max, cfg);
  SolveResult res = solve_from(S, seq.iterates.back(), cfg);
  res.in_I = in_I;
  return res;
}

struct UniquenessReport {
  int restarts = 0;
  double perturbation = 0.0;   // sup size of the random starts
  double max_deviation = 0.0;  // sup over restarts of ‖v − v_ref‖_∞
  std::vector<int> steps;
};

/// Random smooth perturbations of the background, each solved; all should land
/// on the reference solution.
inline UniquenessReport uniqueness_check(const SNKGrid& S, const SolveResult& ref, const SolverConfig& cfg,
                                         int restarts = 10, double amplitude = -1.0, unsigned seed = 7) {
  UniquenessReport rep;
  rep.restarts = restarts;
  const double rho = ref.state.rho;
  rep.perturbation = amplitude > 0 ? amplitude : 0.5 * 0.25 * rho * rho;
  std::mt19937 rng(seed);
  std::normal_distribution<double> G;
  const int nb = S.basis_size();
  Mat F = detail::k_fourier_basis(*S.K, std::min(3, (S.K->grid.shape(0) - 1) / 2));
  for (int t = 0; t < restarts; ++t) {
    Vec v = Vec::Zero(S.N);
    for (int c = 0; c < F.cols(); ++c)
      for (int b = 0; b < nb; ++b) {
        const int l = S.sphere.harmonic_degree[b];
        if (l > 2 || (cfg.freeze_Phi && l == 1)) continue;
        const double a = G(rng);
        for (int q = 0; q < S.N; ++q) v[q] += a * F(S.base(q), c) * S.sphere.harmonics(S.fiber(q), b);
      }
    v *= rep.perturbation / sup_norm(v);
    SolveResult r = solve_from(S, perturbed(S, ref.background, v), cfg);
    rep.steps.push_back(r.steps);
    Vec diff = rho * (r.state.w - ref.state.w) + S.along_theta(r.state.Phi - ref.state.Phi);
    rep.max_deviation = std::max(rep.max_deviation, sup_norm(diff));
  }
  return rep;
}

struct ScalingReport {
  std::vector<double> rho, w_norm, Phi_norm, w_beyond_iterate;
  LineFitReport w_fit, Phi_fit, w_beyond_fit;
  bool w_exact = false, Phi_exact = false;
};

/// Sup norms of the solved (w, Φ) against the bare tube, with log-log fits.
inline ScalingReport scaling_study(const SNKGrid& S, const std::vector<double>& rhos, const SolverConfig& cfg = {},
                                   const IntervalSet* I = nullptr) {
  ScalingReport rep;
  for (double r : rhos) {
    SolveResult s = solve_cmc(S, r, cfg, I);
    SolverConfig one = cfg;
    IterateSequence seq = improve(S, r, 1, one);
    rep.rho.push_back(r);
    rep.w_norm.push_back(sup_norm(s.state.w));
    rep.Phi_norm.push_back(sup_norm(s.state.Phi));
    rep.w_beyond_iterate.push_back(sup_norm(s.state.w - seq.iterates[1].w));
  }
  require(rep.rho.size() >= 4, "scaling: fewer than 4 solved radii");
  auto fit = [&](const std::vector<double>& y, bool& exact) {
    LineFitReport f;
    f.points = static_cast<int>(y.size());
    exact = *std::max_element(y.begin(), y.end()) < 1e-13;
    if (exact) return f;
    LineFit l = loglog_fit(rep.rho, y);
    f.slope = l.slope;
    f.intercept = l.intercept;
    return f;
  };
  bool dummy = false;
  rep.w_fit = fit(rep.w_norm, rep.w_exact);
  rep.Phi_fit = fit(rep.Phi_norm, rep.Phi_exact);
  rep.w_beyond_fit = fit(rep.w_beyond_iterate, dummy);
  return rep;
}

}  // namespace cmc
