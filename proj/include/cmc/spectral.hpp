#pragma once
// Spectral analysis of the linearized CMC operator on SNK: mode decomposition,
// model and full assembly, generalized eigenproblems, index, branch tracking,
// resonances, the admissible interval set and Weyl fits.

#include <cmc/common.hpp>
#include <cmc/snk.hpp>
#include <cmc/tube.hpp>

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace cmc {

// ---------------------------------------------------------------------------
// Mode decomposition v = ρ w + g(Φ, Θ)

struct Modes {
  Vec w, w0, w1, Phi;
};

inline Modes decompose(const SNKGrid& S, const Vec& v, double rho) {
  Modes m;
  m.Phi = S.section_of(v);
  m.w = (v - S.along_theta(m.Phi)) / rho;
  m.w0 = S.fiber_average(m.w);
  m.w1 = m.w - m.w0;
  return m;
}
inline Vec compose(const SNKGrid& S, const Vec& w, const Vec& Phi, double rho) { return rho * w + S.along_theta(Phi); }

// ---------------------------------------------------------------------------
// Operators: symmetric forms A with diagonal masses B, blockwise.

struct OperatorBlock {
  int degree = -1;  // harmonic degree, or -1 for a coupled (full-mode) block
  Mat A;
  Vec mass;
};

struct LinearizedOperator {
  double rho = 0.0;
  std::string mode;  // "model" | "full"
  std::vector<OperatorBlock> blocks;
  double symmetry_defect = 0.0;
  Mat synthesis;  // full mode: node values of the trial functions
};

inline LinearizedOperator assemble_model(const SNKGrid& S, double rho, int max_degree = -1) {
  LinearizedOperator op;
  op.rho = rho;
  op.mode = "model";
  const int L = max_degree < 0 ? S.max_degree() : std::min(max_degree, S.max_degree());
  for (int l = 0; l <= L; ++l) op.blocks.push_back({l, S.model_block(l, rho), S.block_mass(l)});
  return op;
}

/// Harmonic-coefficient synthesis matrix (nodes x coefficients).
inline Mat synthesis_matrix(const SNKGrid& S) {
  const int nc = S.NK * S.basis_size();
  Mat T(S.N, nc);
  for (int c = 0; c < nc; ++c) T.col(c) = S.from_coefficients(Vec::Unit(nc, c));
  return T;
}

namespace detail {

/// Real Fourier modes |j_a| ≤ cutoff on the K grid, orthonormalized in the K
/// quadrature (columns of the result).
inline Mat k_fourier_basis(const Submanifold& K, int cutoff) {
  const int NK = K.nodes(), k = K.k, m1 = 2 * cutoff + 1;
  int cols = 1;
  for (int a = 0; a < k; ++a) cols *= m1;
  Mat F(NK, cols);
  for (int c = 0; c < cols; ++c)
    for (int p = 0; p < NK; ++p) {
      double v = 1.0;
      for (int a = 0, r = c; a < k; ++a, r /= m1) {
        const int m = r % m1, j = (m + 1) / 2;
        const double x = 2 * kPi * K.grid.index(a, p) / K.grid.shape(a);
        v *= m == 0 ? 1.0 : (m % 2 ? std::cos(j * x) : std::sin(j * x));
      }
      F(p, c) = v;
    }
  Mat G = F.transpose() * K.weight.asDiagonal() * F;
  Eigen::LLT<Mat> llt(G);
  return llt.matrixU().solve<Eigen::OnTheRight>(F);
}

}  // namespace detail

/// Node values of the full-mode trial functions. With `dealias` these are the
/// fiber degrees ≤ L−1 times the K Fourier modes up to a third of the grid
/// band, orthonormal in L²(SNK): products with Θ and with the variable
/// coefficients then stay resolved. Otherwise all harmonic coefficients.
inline Mat full_trial_basis(const SNKGrid& S, bool dealias = true) {
  if (!dealias) return synthesis_matrix(S);
  int cutoff = S.K->grid.shape(0);
  for (int a = 0; a < S.k; ++a) cutoff = std::min(cutoff, (S.K->grid.shape(a) - 1) / 3);
  Mat F = detail::k_fourier_basis(*S.K, cutoff);
  std::vector<int> fib;
  for (int b = 0; b < S.basis_size(); ++b)
    if (S.sphere.harmonic_degree[b] < S.max_degree()) fib.push_back(b);
  const int nf = static_cast<int>(fib.size());
  Mat T(S.N, F.cols() * nf);
  for (int c = 0; c < F.cols(); ++c)
    for (int f = 0; f < nf; ++f)
      for (int q = 0; q < S.N; ++q) T(q, c * nf + f) = F(S.base(q), c) * S.sphere.harmonics(S.fiber(q), fib[f]);
  return T;
}

/// Symmetrized Jacobian of v ↦ ρ m H − (n−1) at the background state as a
/// Galerkin form on the trial functions of full_trial_basis. Test directions
/// enter through their normal speed against the tube area, which reduces to
/// A_ρ v for radial directions.
inline LinearizedOperator assemble_full(const SNKGrid& S, const TubeLinearization& lin, const Mat& T,
                                        const Vec& mass, double defect_tol = 1e-4) {
  LinearizedOperator op;
  op.rho = lin.background.rho;
  op.mode = "full";
  op.synthesis = T;
  OperatorBlock blk;
  blk.mass = mass;
  // paired in the normal speed of the test direction against the tube area
  Mat J = lin.apply(T);
  Mat U = lin.normal_speed(T);
  Vec wa = S.weight.cwiseProduct(lin.area_ratio());
  Mat A = U.transpose() * wa.asDiagonal() * J;
  op.symmetry_defect = (A - A.transpose()).norm() / std::max(1e-300, A.norm());
  blk.A = 0.5 * (A + A.transpose());
  op.blocks.push_back(std::move(blk));
  if (op.symmetry_defect > defect_tol)
    log_warning("full-mode Jacobian symmetry defect " + std::to_string(op.symmetry_defect));
  return op;
}
/// L² mass of the trial functions of full_trial_basis.
inline Vec full_trial_mass(const SNKGrid& S, bool dealias = true) {
  if (dealias) return Vec::Ones(static_cast<Eigen::Index>(full_trial_basis(S, true).cols()));
  Vec m(S.NK * S.basis_size());
  for (int c = 0; c < m.size(); ++c) m[c] = S.K->weight[c / S.basis_size()];
  return m;
}
inline LinearizedOperator assemble_full(const SNKGrid& S, const TubeState& background, bool dealias = true) {
  Mat T = full_trial_basis(S, dealias);
  Vec mass = dealias ? Vec(Vec::Ones(T.cols())) : full_trial_mass(S, false);
  return assemble_full(S, linearize(S, background), T, mass);
}

/// Node values of a full-mode eigenvector.
inline Vec full_mode_nodes(const LinearizedOperator& op, const Vec& c) { return op.synthesis * c; }

/// Generalized eigenpairs of (A, diag(mass)); vectors are mass-orthonormal.
inline std::pair<Vec, Mat> generalized_eigen(const Mat& A, const Vec& mass) {
  Vec si = mass.cwiseSqrt().cwiseInverse();
  Mat Ssym = si.asDiagonal() * A * si.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (Ssym + Ssym.transpose()));
  if (es.info() != Eigen::Success) throw Error(ErrorKind::divergence, "eigensolver failed");
  return {es.eigenvalues(), si.asDiagonal() * es.eigenvectors()};
}

/// Negative-eigenvalue count of A by Sylvester inertia of an LDLᵀ factorization.
inline int inertia_negative(const Mat& A, double zero_tolerance = 1e-10) {
  Eigen::LDLT<Mat> ldlt(A);
  const Vec d = ldlt.vectorD();
  const double tol = zero_tolerance * std::max(1e-300, d.cwiseAbs().maxCoeff());
  return static_cast<int>((d.array() < -tol).count());
}

struct EigenPairs {
  Vec sigma;
  std::vector<int> block;  // index into LinearizedOperator::blocks
  std::vector<Vec> vectors;
  double max_residual = 0.0;  // ‖Av − σBv‖/‖Bv‖
};

inline EigenPairs eigenpairs(const LinearizedOperator& op, bool with_vectors = true) {
  EigenPairs out;
  std::vector<std::pair<double, std::pair<int, Vec>>> all;
  for (std::size_t b = 0; b < op.blocks.size(); ++b) {
    const auto& blk = op.blocks[b];
    auto [ev, V] = generalized_eigen(blk.A, blk.mass);
    for (int i = 0; i < ev.size(); ++i) {
      Vec v = V.col(i);
      Vec Bv = blk.mass.cwiseProduct(v);
      out.max_residual = std::max(out.max_residual, (blk.A * v - ev[i] * Bv).norm() / Bv.norm());
      all.push_back({ev[i], {static_cast<int>(b), with_vectors ? v : Vec()}});
    }
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  out.sigma.resize(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    out.sigma[i] = all[i].first;
    out.block.push_back(all[i].second.first);
    out.vectors.push_back(std::move(all[i].second.second));
  }
  return out;
}

/// Index split into the 𝒮^⊥ part (degree ≠ 1) and the 𝔍 part (degree 1).
struct IndexCount {
  int perp = 0, S = 0, total = 0, inertia = 0;
};
inline IndexCount morse_index(const LinearizedOperator& op, double zero_tolerance = 1e-10) {
  IndexCount c;
  for (const auto& blk : op.blocks) {
    auto [ev, V] = generalized_eigen(blk.A, blk.mass);
    const double tol = zero_tolerance * std::max(1.0, ev.cwiseAbs().maxCoeff());
    int neg = static_cast<int>((ev.array() < -tol).count());
    if (blk.degree == 1)
      c.S += neg;
    else
      c.perp += neg;
    c.inertia += inertia_negative(blk.A, zero_tolerance);
  }
  c.total = c.perp + c.S;
  return c;
}

// ---------------------------------------------------------------------------
// ρ-independent pieces of the model: per degree l ≠ 1 the block is
// S_l + ((λ_l − (n−1))/ρ²) M_l, so its eigenvalues are μ_j^{(l)} + shift_l(ρ).

struct ModelSpectrum {
  int n = 2, k = 1;
  std::vector<int> degrees;        // degrees present (1 denotes the 𝔍 block)
  std::vector<double> lambda;      // sphere eigenvalue per entry of `degrees`
  std::vector<Vec> mu;             // horizontal eigenvalues (or spec 𝔍 for degree 1)
  std::vector<int> multiplicity;   // basis functions per degree

  double shift(std::size_t i, double rho) const {
    return degrees[i] == 1 ? 0.0 : (lambda[i] - (n - 1.0)) / (rho * rho);
  }
  Vec eigenvalues(double rho) const {
    std::vector<double> all;
    for (std::size_t i = 0; i < degrees.size(); ++i)
      for (int j = 0; j < mu[i].size(); ++j) all.push_back(mu[i][j] + shift(i, rho));
    std::sort(all.begin(), all.end());
    return Eigen::Map<Vec>(all.data(), all.size());
  }
  IndexCount index(double rho, double zero_tolerance = 1e-10) const {
    IndexCount c;
    for (std::size_t i = 0; i < degrees.size(); ++i) {
      int neg = 0;
      const double tol = zero_tolerance * std::max(1.0, mu[i].cwiseAbs().maxCoeff());
      for (int j = 0; j < mu[i].size(); ++j) neg += mu[i][j] + shift(i, rho) < -tol;
      (degrees[i] == 1 ? c.S : c.perp) += neg;
    }
    c.total = c.perp + c.S;
    c.inertia = c.total;
    return c;
  }
  /// Zeros ρ = sqrt(((n−1) − λ_l)/μ) of the degree-0 branches (other degrees have none).
  std::vector<double> closed_form_resonances(double lo, double hi) const {
    std::vector<double> out;
    for (std::size_t i = 0; i < degrees.size(); ++i) {
      if (degrees[i] == 1 || lambda[i] >= n - 1.0) continue;
      for (int j = 0; j < mu[i].size(); ++j)
        if (mu[i][j] > 0) {
          double r = std::sqrt((n - 1.0 - lambda[i]) / mu[i][j]);
          if (r >= lo && r <= hi) out.push_back(r);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
  }
};

namespace detail {

/// Eigenvalues of the scalar Laplacian on an affine K with constant diagonal
/// metric, as sums of one-dimensional spectral eigenvalues.
inline std::optional<Vec> separable_laplacian(const Submanifold& K) {
  if (!K.affine) return std::nullopt;
  Mat h0 = K.h[0];
  for (int p = 0; p < K.nodes(); ++p)
    if ((K.h[p] - h0).cwiseAbs().maxCoeff() > 1e-11 * h0.norm()) return std::nullopt;
  if ((h0 - Mat(h0.diagonal().asDiagonal())).cwiseAbs().maxCoeff() > 1e-11 * h0.norm()) return std::nullopt;
  Vec all = Vec::Zero(1);
  for (int a = 0; a < K.k; ++a) {
    Mat D2 = -K.grid.d2(a) / h0(a, a);
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (D2 + D2.transpose()), Eigen::EigenvaluesOnly);
    Vec ev = es.eigenvalues();
    Vec next(all.size() * ev.size());
    for (int i = 0; i < all.size(); ++i)
      for (int j = 0; j < ev.size(); ++j) next[i * ev.size() + j] = all[i] + ev[j];
    all = next;
  }
  std::sort(all.data(), all.data() + all.size());
  return all;
}

}  // namespace detail

inline ModelSpectrum model_spectrum(const SNKGrid& S, int max_degree = -1) {
  ModelSpectrum M;
  M.n = S.n;
  M.k = S.k;
  const int L = max_degree < 0 ? S.max_degree() : std::min(max_degree, S.max_degree());
  for (int l = 0; l <= L; ++l) {
    M.degrees.push_back(l);
    M.lambda.push_back(S.sphere_eigenvalue(l));
    M.multiplicity.push_back(static_cast<int>(S.degree_columns(l).size()));
    if (l == 1) {
      M.mu.push_back(generalized_eigen(S.jacobi_block(), S.block_mass(1)).first);
      continue;
    }
    if (l == 0 || S.flat_normal_connection()) {
      std::optional<Vec> sep = detail::separable_laplacian(*S.K);
      Vec base = sep ? *sep : generalized_eigen(S.horizontal_stiffness(0), S.block_mass(0)).first;
      const int dl = M.multiplicity.back();
      Vec mu(base.size() * dl);
      for (int i = 0; i < base.size(); ++i) mu.segment(i * dl, dl).setConstant(base[i]);
      M.mu.push_back(mu);
    } else {
      M.mu.push_back(generalized_eigen(S.horizontal_stiffness(l), S.block_mass(l)).first);
    }
  }
  return M;
}

// ---------------------------------------------------------------------------
// Sweeps, branches and resonances

struct SpectralSample {
  double rho = 0.0;
  Vec sigma;
  std::vector<int> block;
  std::vector<Vec> vectors;  // may be empty: branches then follow sorted order
  IndexCount index;
  std::shared_ptr<const Mat> synthesis;  // full mode: node values = synthesis * vector
};

/// Family ρ ↦ tracked eigenpairs (fixed count and block structure across ρ).
using SpectralFamily = std::function<SpectralSample(double)>;

/// Model family on the low blocks (degrees 0 and 1), eigenvectors ρ-independent.
inline SpectralFamily model_family(const SNKGrid& S) {
  auto spec = std::make_shared<ModelSpectrum>(model_spectrum(S));
  auto vecs = std::make_shared<std::vector<std::pair<Mat, Vec>>>();
  for (int l = 0; l <= std::min(1, S.max_degree()); ++l) {
    Mat A = l == 1 ? S.jacobi_block() : S.horizontal_stiffness(0);
    auto [ev, V] = generalized_eigen(A, S.block_mass(l));
    vecs->push_back({V, ev});
  }
  const int n = S.n;
  return [spec, vecs, n](double rho) {
    SpectralSample s;
    s.rho = rho;
    std::vector<std::pair<double, std::pair<int, Vec>>> all;
    for (int l = 0; l < static_cast<int>(vecs->size()); ++l) {
      const auto& [V, ev] = (*vecs)[l];
      double sh = l == 1 ? 0.0 : -(n - 1.0) / (rho * rho);
      for (int j = 0; j < ev.size(); ++j) all.push_back({ev[j] + sh, {l, V.col(j)}});
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    s.sigma.resize(all.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
      s.sigma[i] = all[i].first;
      s.block.push_back(all[i].second.first);
      s.vectors.push_back(all[i].second.second);
    }
    s.index = spec->index(rho);
    return s;
  };
}

/// Full-mode family about a background state per ρ (default: the unperturbed
/// tube). `S` must outlive the family.
inline SpectralFamily full_family(const SNKGrid& S, std::function<TubeState(double)> background = nullptr) {
  const SNKGrid* grid = &S;
  if (!background) background = [grid](double rho) { return zero_state(*grid, rho); };
  auto T = std::make_shared<const Mat>(full_trial_basis(S));
  auto warned = std::make_shared<bool>(false);
  return [grid, background, T, warned](double rho) {
    LinearizedOperator op = assemble_full(*grid, linearize(*grid, background(rho)), *T, Vec::Ones(T->cols()),
                                          std::numeric_limits<double>::infinity());
    if (op.symmetry_defect > 1e-4 && !*warned) {
      *warned = true;
      log_warning("full-mode Jacobian symmetry defect " + std::to_string(op.symmetry_defect) + " at rho = " +
                  std::to_string(rho) + " (further defects of this family not reported)");
    }
    EigenPairs ep = eigenpairs(op);
    SpectralSample s;
    s.rho = rho;
    s.sigma = ep.sigma;
    s.block.assign(ep.sigma.size(), -1);  // degrees are mixed
    s.vectors = std::move(ep.vectors);
    s.index = morse_index(op);
    s.synthesis = T;
    return s;
  };
}

struct Resonance {
  double rho = 0.0;
  int multiplicity = 1;
  int block = 0;
};

struct LineFitReport {
  double slope = 0.0, intercept = 0.0;
  int points = 0;
};

struct SpectralReport {
  std::vector<double> rho;
  std::vector<Vec> branches;  // branches[s][b]: branch b at sample s
  std::vector<int> branch_block;
  std::vector<IndexCount> index;
  std::vector<Resonance> resonances;
  std::vector<int> flagged_samples;  // ambiguous matches
  LineFitReport weyl;
  double weyl_constant = 0.0;
};

namespace detail {

/// Permutation perm with next[perm[b]] continuing branch b, by maximal overlap.
inline std::vector<int> match_branches(const SpectralSample& prev, const SpectralSample& next, bool& ambiguous) {
  const int m = static_cast<int>(prev.sigma.size());
  std::vector<int> perm(m);
  ambiguous = false;
  if (prev.vectors.empty() || next.vectors.empty()) {
    for (int i = 0; i < m; ++i) perm[i] = i;
    return perm;
  }
  std::vector<std::tuple<double, int, int>> cand;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      if (prev.block[i] != next.block[j]) continue;
      double ov = std::abs(prev.vectors[i].dot(next.vectors[j]));
      if (ov > 1e-3) cand.push_back({ov, i, j});
    }
  std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
  std::vector<char> used_i(m, 0), used_j(m, 0);
  for (auto& [ov, i, j] : cand) {
    if (used_i[i] || used_j[j]) continue;
    used_i[i] = used_j[j] = 1;
    perm[i] = j;
    if (ov < 0.5) ambiguous = true;
  }
  // leftovers in sorted order
  std::vector<int> free_j;
  for (int j = 0; j < m; ++j)
    if (!used_j[j]) free_j.push_back(j);
  std::size_t f = 0;
  for (int i = 0; i < m; ++i)
    if (!used_i[i]) {
      perm[i] = free_j[f++];
      ambiguous = true;
    }
  return perm;
}

inline double branch_value(const SpectralSample& ref, int b, const SpectralSample& at) {
  if (ref.vectors.empty()) return at.sigma[b];
  double best = -1.0, val = at.sigma[b];
  for (int j = 0; j < at.sigma.size(); ++j) {
    if (at.block[j] != ref.block[b]) continue;
    double ov = std::abs(ref.vectors[b].dot(at.vectors[j]));
    if (ov > best) {
      best = ov;
      val = at.sigma[j];
    }
  }
  return val;
}

}  // namespace detail

/// Sweeps the family over sorted ρ samples, matches branches, bisects sign
/// changes to relative tolerance `tol` and fits log(index_perp) vs log ρ.
inline SpectralReport eigen_sweep(const SpectralFamily& family, std::vector<double> rhos, double tol = 1e-8) {
  require(rhos.size() >= 2, "eigen_sweep needs at least two samples");
  std::sort(rhos.begin(), rhos.end());
  SpectralReport rep;
  std::vector<SpectralSample> samples(rhos.size());
  parallel_for(rhos.size(), [&](std::size_t i) { samples[i] = family(rhos[i]); });
  const int m = static_cast<int>(samples[0].sigma.size());
  // order[s][b]: position within sample s of branch b
  std::vector<std::vector<int>> order(samples.size(), std::vector<int>(m));
  for (int b = 0; b < m; ++b) order[0][b] = b;
  for (std::size_t s = 1; s < samples.size(); ++s) {
    require(static_cast<int>(samples[s].sigma.size()) == m, "eigen_sweep: branch count changed along the sweep");
    bool amb = false;
    auto perm = detail::match_branches(samples[s - 1], samples[s], amb);
    if (amb) rep.flagged_samples.push_back(static_cast<int>(s));
    for (int b = 0; b < m; ++b) order[s][b] = perm[order[s - 1][b]];
  }
  for (std::size_t s = 0; s < samples.size(); ++s) {
    Vec v(m);
    for (int b = 0; b < m; ++b) v[b] = samples[s].sigma[order[s][b]];
    rep.branches.push_back(v);
    rep.rho.push_back(samples[s].rho);
    rep.index.push_back(samples[s].index);
  }
  for (int b = 0; b < m; ++b) rep.branch_block.push_back(samples[0].block[order[0][b]]);
  // Sign changes between definite samples; |σ| below the zero tolerance
  // counts as undecided, so branches pinned at zero never register.
  std::vector<double> ztol(samples.size());
  for (std::size_t s = 0; s < samples.size(); ++s)
    ztol[s] = 1e-10 * std::max(1.0, samples[s].sigma.cwiseAbs().maxCoeff());
  auto sign = [&](std::size_t s, int b) {
    double v = rep.branches[s][b];
    return std::abs(v) <= ztol[s] ? 0 : (v < 0 ? -1 : 1);
  };
  std::vector<Resonance> raw;
  for (int b = 0; b < m; ++b) {
    int last = -1;  // last definite sample
    for (std::size_t s = 0; s < samples.size(); ++s) {
      const int sg = sign(s, b);
      if (sg == 0) continue;
      if (last < 0) {
        if (s > 0) raw.push_back({rep.rho[s - 1], 1, samples[0].block[order[0][b]]});  // zero at the lower end
      } else if (sg != sign(last, b)) {
        const SpectralSample& ref = samples[last];
        const int pos = order[last][b];
        double lo = rep.rho[last], hi = rep.rho[s];
        const bool neg_lo = sign(last, b) < 0;
        while (hi - lo > tol * hi) {
          double mid = 0.5 * (lo + hi);
          double val = detail::branch_value(ref, pos, family(mid));
          if ((val < 0) == neg_lo)
            lo = mid;
          else
            hi = mid;
        }
        raw.push_back({0.5 * (lo + hi), 1, ref.block[pos]});
      }
      last = static_cast<int>(s);
    }
    if (last >= 0 && last + 1 < static_cast<int>(samples.size()))
      raw.push_back({rep.rho[last + 1], 1, samples.back().block[order.back()[b]]});  // zero at the upper end
  }
  std::sort(raw.begin(), raw.end(), [](const auto& x, const auto& y) { return x.rho < y.rho; });
  for (const auto& r : raw) {
    if (!rep.resonances.empty() && std::abs(rep.resonances.back().rho - r.rho) < 10 * tol * r.rho)
      ++rep.resonances.back().multiplicity;
    else
      rep.resonances.push_back(r);
  }
  // Weyl fit on samples with a positive 𝒮^⊥ index
  std::vector<double> xr, yi;
  for (std::size_t s = 0; s < rep.rho.size(); ++s)
    if (rep.index[s].perp > 0) {
      xr.push_back(rep.rho[s]);
      yi.push_back(rep.index[s].perp);
    }
  if (xr.size() >= 2) {
    LineFit f = loglog_fit(xr, yi);
    rep.weyl = {f.slope, f.intercept, static_cast<int>(xr.size())};
    rep.weyl_constant = std::exp(f.intercept);
  }
  return rep;
}

/// Weyl fit from the model index alone (no branch tracking), for large K grids.
inline LineFitReport weyl_fit(const ModelSpectrum& M, const std::vector<double>& rhos, double* constant = nullptr) {
  std::vector<double> xr, yi;
  for (double r : rhos) {
    int ind = M.index(r).perp;
    if (ind > 0) {
      xr.push_back(r);
      yi.push_back(ind);
    }
  }
  require(xr.size() >= 2, "weyl_fit: index vanishes on the sweep");
  LineFit f = loglog_fit(xr, yi);
  if (constant) *constant = std::exp(f.intercept);
  return {f.slope, f.intercept, static_cast<int>(xr.size())};
}

// ---------------------------------------------------------------------------
// Eigenvalue variation (centered difference along a branch)

struct BranchDerivative {
  double rho = 0.0, sigma = 0.0, rho_dsigma = 0.0, bound = 0.0;
  bool satisfied = false, flagged = false;
};

/// ρ ∂_ρ σ for the eigenvalue of `sample` at position `pos`; refuses |σ| > c0.
inline BranchDerivative eigenvalue_derivative(const SpectralFamily& family, const SpectralSample& sample, int pos,
                                              double c0 = 0.25, double c = 5.0, int n = 2) {
  BranchDerivative d;
  d.rho = sample.rho;
  d.sigma = sample.sigma[pos];
  if (std::abs(d.sigma) > c0)
    throw Error(ErrorKind::validation, "eigenvalue_derivative: |sigma| above the smallness threshold");
  double h = 1e-4 * sample.rho;
  for (int attempt = 0; attempt < 4; ++attempt, h *= 0.1) {
    double sp = detail::branch_value(sample, pos, family(sample.rho + h));
    double sm = detail::branch_value(sample, pos, family(sample.rho - h));
    double d1 = (sp - sm) / (2 * h);
    // consistency: one-sided differences agree unless a crossing sits in the stencil
    double dp = (sp - d.sigma) / h, dm = (d.sigma - sm) / h;
    d.rho_dsigma = sample.rho * d1;
    d.flagged = std::abs(dp - dm) > 0.1 * std::abs(d1) + 1e-6;
    if (!d.flagged) break;
  }
  d.bound = 2.0 * (n - 1) - c * sample.rho;
  d.satisfied = d.rho_dsigma >= d.bound;
  return d;
}

/// All branches with |σ| < c0 over the sweep samples. Model 𝒮-block branches
/// (spec 𝔍, constant in ρ) are skipped: the variation bound concerns the
/// 𝒮^⊥-dominated branches.
inline std::vector<BranchDerivative> small_branch_derivatives(const SpectralFamily& family,
                                                              const std::vector<double>& rhos, double c0 = 0.25,
                                                              double c = 5.0, int n = 2) {
  std::vector<BranchDerivative> out;
  for (double r : rhos) {
    SpectralSample s = family(r);
    for (int i = 0; i < s.sigma.size(); ++i)
      if (std::abs(s.sigma[i]) < c0 && s.block[i] != 1) out.push_back(eigenvalue_derivative(family, s, i, c0, c, n));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Localization of small-eigenvalue eigenfunctions

/// ‖(w,Φ)‖²_{H¹_ρ} = ∫_SNK (ρ²|∇_K w|² + |∇_S w|² + w²) + ω ∫_K (|∇Φ|² + |Φ|²).
struct H1Norm {
  const SNKGrid* S = nullptr;
  std::vector<Mat> stiffness;  // per degree
  Mat normal_stiffness;        // W Δ^N on sections

  explicit H1Norm(const SNKGrid& grid) : S(&grid) {
    for (int l = 0; l <= grid.max_degree(); ++l) stiffness.push_back(grid.horizontal_stiffness(l));
    normal_stiffness = grid.K->section_weights().asDiagonal() * grid.K->normal_laplacian();
    normal_stiffness = 0.5 * (normal_stiffness + normal_stiffness.transpose()).eval();
  }
  double squared(const Vec& w, const Vec& Phi, double rho) const {
    Vec coef = S->to_coefficients(w);
    double s = 0.0;
    for (int l = 0; l <= S->max_degree(); ++l) {
      Vec c = S->gather(coef, l);
      Vec m = S->block_mass(l);
      s += rho * rho * c.dot(stiffness[l] * c) + (S->sphere_eigenvalue(l) + 1.0) * c.dot(m.cwiseProduct(c));
    }
    Vec sw = S->K->section_weights();
    s += S->omega() * (Phi.dot(normal_stiffness * Phi) + Phi.dot(sw.cwiseProduct(Phi)));
    return s;
  }
};

/// ‖(w − w_0, Φ)‖_{H¹_ρ}/‖(w, Φ)‖_{H¹_ρ} for an eigenfunction given by node values v.
inline double localization_ratio(const SNKGrid& S, const H1Norm& norm, const Vec& v, double rho) {
  Modes m = decompose(S, v, rho);
  double num = norm.squared(m.w1, m.Phi, rho), den = norm.squared(m.w, m.Phi, rho);
  return std::sqrt(num / den);
}

/// Ratio for eigenpair `pos` of a sample; refuses |σ| > c0.
inline double localization_check(const SNKGrid& S, const H1Norm& norm, const SpectralSample& sample, int pos,
                                 double c0 = 0.25) {
  if (std::abs(sample.sigma[pos]) > c0)
    throw Error(ErrorKind::validation, "localization: |sigma| above the smallness threshold");
  require(sample.synthesis != nullptr, "localization: the sample carries no node synthesis");
  return localization_ratio(S, norm, *sample.synthesis * sample.vectors[pos], sample.rho);
}

/// Secant iteration in ρ on the branch through eigenpair `pos` of `start`
/// until |σ| < tol; returns the sample and the branch position there.
inline std::pair<SpectralSample, int> refine_crossing(const SpectralFamily& family, const SpectralSample& start,
                                                      int pos, double tol = 1e-6, int max_iter = 12) {
  auto locate = [](const SpectralSample& ref, int b, const SpectralSample& at) {
    int best = b;
    double ov = -1.0;
    for (int j = 0; j < at.sigma.size(); ++j) {
      if (ref.vectors.empty() || at.block[j] != ref.block[b]) continue;
      double o = std::abs(ref.vectors[b].dot(at.vectors[j]));
      if (o > ov) {
        ov = o;
        best = j;
      }
    }
    return best;
  };
  SpectralSample a = start;
  int ia = pos;
  double h = 1e-3 * start.rho;
  SpectralSample b = family(start.rho + (a.sigma[ia] > 0 ? -h : h));
  int ib = locate(a, ia, b);
  for (int it = 0; it < max_iter && std::abs(b.sigma[ib]) >= tol; ++it) {
    double slope = (b.sigma[ib] - a.sigma[ia]) / (b.rho - a.rho);
    require(slope != 0.0, "refine_crossing: flat branch");
    double r = b.rho - b.sigma[ib] / slope;
    r = std::clamp(r, b.rho - 0.1 * b.rho, b.rho + 0.1 * b.rho);
    SpectralSample c = family(r);
    int ic = locate(b, ib, c);
    a = std::move(b);
    ia = ib;
    b = std::move(c);
    ib = ic;
  }
  if (std::abs(b.sigma[ib]) >= tol)
    throw Error(ErrorKind::resolution, "refine_crossing: no convergence near rho = " + std::to_string(start.rho));
  return {std::move(b), ib};
}

// ---------------------------------------------------------------------------
// Admissible interval set

struct Interval {
  double lo = 0.0, hi = 0.0;
  double rho_i = 0.0;        // resonance closing the interval from above
  double min_abs_sigma = 0.0;  // sampled gap
  double gap_ratio = 0.0;      // min|σ| / ρ_i^{k+q−1}
};

struct IntervalSet {
  int k = 1, q = 2;
  double lo = 0.0, hi = 0.0;  // range covered by the resonance sweep
  std::vector<double> resonances;
  std::vector<Interval> intervals;

  bool contains(double rho) const {
    for (const auto& I : intervals)
      if (rho > I.lo && rho < I.hi) return true;
    return false;
  }
  /// ℋ¹((lo, ρ) ∩ I)
  double measure_below(double rho) const {
    double s = 0.0;
    for (const auto& I : intervals) s += std::max(0.0, std::min(rho, I.hi) - std::max(lo, I.lo));
    return s;
  }
};

/// Keeps (ρ_{i+1}, ρ_i) when ρ_i − ρ_{i+1} ≥ ρ_i^{k+q} and shrinks it by ¼ρ_i^{k+q}
/// at both ends. The pieces below the first and above the last resonance in
/// [lo, hi] run to lo and hi, shrunk only at their resonance end.
inline IntervalSet build_intervals(std::vector<double> resonances, int k, int q, double lo, double hi) {
  require(q >= 2, "intervals: q must be at least 2");
  require(0 < lo && lo < hi, "intervals: need 0 < lo < hi");
  std::sort(resonances.begin(), resonances.end());
  IntervalSet I;
  I.k = k;
  I.q = q;
  I.lo = lo;
  I.hi = hi;
  I.resonances = resonances;
  struct Cut {
    double at;
    bool resonance;
  };
  std::vector<Cut> cuts;
  const double eps = 1e-12 * hi;
  for (double r : resonances)
    if (r >= lo - eps && r <= hi + eps) cuts.push_back({std::clamp(r, lo, hi), true});
  if (cuts.empty() || cuts.front().at > lo) cuts.insert(cuts.begin(), {lo, false});
  if (cuts.back().at < hi) cuts.push_back({hi, false});
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double a = cuts[i].at, b = cuts[i + 1].at;
    const bool a_res = cuts[i].resonance, b_res = cuts[i + 1].resonance;
    if (!a_res && !b_res) {
      I.intervals.push_back({a, b, 0.0});
      continue;
    }
    const double e = std::pow(b_res ? b : a, k + q);  // ρ_i^{k+q}, ρ_i the upper resonance when there is one
    if (a_res && b_res && b - a < e) continue;
    const double L = a_res ? a + 0.25 * e : a;
    const double R = b_res ? b - 0.25 * e : b;
    if (R > L) I.intervals.push_back({L, R, b_res ? b : 0.0});
  }
  return I;
}

/// Samples min |σ| on each interval and records min|σ|/ρ_i^{k+q−1}.
inline void sample_gaps(IntervalSet& I, const std::function<Vec(double)>& eigenvalues, int samples = 16) {
  for (auto& J : I.intervals) {
    double m = 1e300;
    for (int s = 0; s <= samples; ++s) {
      double r = J.lo + (J.hi - J.lo) * s / samples;
      m = std::min(m, eigenvalues(r).cwiseAbs().minCoeff());
    }
    J.min_abs_sigma = m;
    double top = J.rho_i > 0 ? J.rho_i : J.hi;
    J.gap_ratio = m / std::pow(top, I.k + I.q - 1);
  }
}

}  // namespace cmc
