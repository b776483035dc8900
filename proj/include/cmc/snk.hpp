#pragma once
// Spherical normal bundle SNK discretized as (fiber sphere grid) x (K grid).
// Node index q = j + Ns * p, j the fiber node and p the K node.

#include <cmc/common.hpp>
#include <cmc/grid.hpp>
#include <cmc/submanifold.hpp>

#include <memory>
#include <mutex>
#include <optional>

namespace cmc {

class SNKGrid {
 public:
  std::shared_ptr<const Submanifold> K;
  SphereGrid sphere;
  int n = 0, k = 0;
  int Ns = 0, NK = 0, N = 0;
  Vec weight;                        // quadrature weights of ∫_SNK
  std::optional<PeriodicGrid> grid;  // θ x K axes, n = 2 only
  Mat theta_coef;                    // n x nb: Θ_i = Σ_b theta_coef(i,b) Y_b

  SNKGrid(std::shared_ptr<const Submanifold> sub, int sphere_resolution) : K(std::move(sub)) {
    require(K != nullptr, "SNK: null submanifold");
    n = K->n;
    k = K->k;
    sphere = make_sphere_grid(n, sphere_resolution);
    Ns = sphere.size();
    NK = K->nodes();
    N = Ns * NK;
    weight.resize(N);
    for (int p = 0; p < NK; ++p)
      for (int j = 0; j < Ns; ++j) weight[j + Ns * p] = sphere.weights[j] * K->weight[p];
    if (n == 2) {
      require(Ns % 2 == 1, "SNK: the circle fiber needs an odd node count");
      std::vector<int> shape{Ns};
      std::vector<double> periods{2 * kPi};
      for (int a = 0; a < k; ++a) {
        shape.push_back(K->grid.shape(a));
        periods.push_back(K->grid.period(a));
      }
      grid.emplace(shape, periods);
    }
    const int nb = basis_size();
    theta_coef = Mat::Zero(n, nb);
    for (int i = 0; i < n; ++i)
      for (int b = 0; b < nb; ++b)
        for (int j = 0; j < Ns; ++j) theta_coef(i, b) += sphere.weights[j] * sphere.nodes[j][i] * sphere.harmonics(j, b);
  }

  int fiber(int q) const { return q % Ns; }
  int base(int q) const { return q / Ns; }
  const Vec& theta(int q) const { return sphere.nodes[q % Ns]; }
  double omega() const { return sphere_volume(n - 1); }
  int basis_size() const { return static_cast<int>(sphere.harmonic_degree.size()); }

  double integrate(const Vec& f) const { return weight.dot(f); }

  /// Φ (NK*n, index p*n+i) with Π v = g(Φ,Θ); uses ∫Θ^iΘ^j = (ω/n)δ^{ij}.
  Vec section_of(const Vec& v) const {
    require(v.size() == N, "SNK: field size mismatch");
    Vec Phi = Vec::Zero(NK * n);
    const double c = n / omega();
    for (int p = 0; p < NK; ++p)
      for (int j = 0; j < Ns; ++j) Phi.segment(p * n, n) += c * sphere.weights[j] * v[j + Ns * p] * sphere.nodes[j];
    return Phi;
  }
  /// Node values of g(Φ,Θ).
  Vec along_theta(const Vec& Phi) const {
    require(Phi.size() == NK * n, "SNK: section size mismatch");
    Vec v(N);
    for (int p = 0; p < NK; ++p)
      for (int j = 0; j < Ns; ++j) v[j + Ns * p] = Phi.segment(p * n, n).dot(sphere.nodes[j]);
    return v;
  }
  Vec project_S(const Vec& v) const { return along_theta(section_of(v)); }
  Vec project_perp(const Vec& v) const { return v - project_S(v); }

  /// Fiber average w_0, broadcast to every node of its fiber.
  Vec fiber_average(const Vec& w) const {
    Vec out(N);
    for (int p = 0; p < NK; ++p) {
      double s = 0.0;
      for (int j = 0; j < Ns; ++j) s += sphere.weights[j] * w[j + Ns * p];
      s /= omega();
      for (int j = 0; j < Ns; ++j) out[j + Ns * p] = s;
    }
    return out;
  }

  /// Harmonic coefficients (index p*nb+b) of node values, by quadrature.
  Vec to_coefficients(const Vec& v) const {
    const int nb = basis_size();
    Vec c = Vec::Zero(NK * nb);
    for (int p = 0; p < NK; ++p)
      for (int j = 0; j < Ns; ++j) c.segment(p * nb, nb) += sphere.weights[j] * v[j + Ns * p] * sphere.harmonics.row(j).transpose();
    return c;
  }
  Vec from_coefficients(const Vec& c) const {
    const int nb = basis_size();
    Vec v(N);
    for (int p = 0; p < NK; ++p)
      for (int j = 0; j < Ns; ++j) v[j + Ns * p] = sphere.harmonics.row(j).dot(c.segment(p * nb, nb));
    return v;
  }

  /// Node values of the Fourier-extended fiber derivative ∂_θ (n = 2).
  Mat fiber_derivative() const {
    require(grid.has_value(), "SNK: fiber derivative needs n = 2");
    return grid->diff(0, Mat(Mat::Identity(N, N)));
  }

  // -- harmonic blocks ------------------------------------------------------
  // Horizontal derivatives X_a = ∂_a − α_a ∂_θ preserve the harmonic degree,
  // so operators built from them are block diagonal in l. Block unknowns are
  // ordered p*dl + s, s running over the degree-l basis functions.

  int max_degree() const { return sphere.degree; }
  std::vector<int> degree_columns(int l) const {
    std::vector<int> cols;
    for (int b = 0; b < basis_size(); ++b)
      if (sphere.harmonic_degree[b] == l) cols.push_back(b);
    return cols;
  }
  double sphere_eigenvalue(int l) const { return l * (l + n - 2.0); }

  Vec gather(const Vec& coef, int l) const {
    auto cols = degree_columns(l);
    const int dl = static_cast<int>(cols.size()), nb = basis_size();
    Vec out(NK * dl);
    for (int p = 0; p < NK; ++p)
      for (int s = 0; s < dl; ++s) out[p * dl + s] = coef[p * nb + cols[s]];
    return out;
  }
  void scatter(const Vec& block, int l, Vec& coef) const {
    auto cols = degree_columns(l);
    const int dl = static_cast<int>(cols.size()), nb = basis_size();
    for (int p = 0; p < NK; ++p)
      for (int s = 0; s < dl; ++s) coef[p * nb + cols[s]] = block[p * dl + s];
  }

  /// Normal connection form α_a(p) = g(∇_a E_1, E_2); zero for n = 3 (checked).
  double alpha(int p, int a) const { return K->connection[p][a](1, 0); }
  bool flat_normal_connection(double tol = 1e-10) const {
    for (int p = 0; p < NK; ++p)
      for (int a = 0; a < k; ++a)
        if (K->connection[p][a].cwiseAbs().maxCoeff() > tol) return false;
    return true;
  }

  /// Horizontal derivative along ∂_a on the degree-l block.
  Mat horizontal_derivative(int l, int a) const {
    const int dl = static_cast<int>(degree_columns(l).size());
    Mat D = K->diff_matrix(a);
    Mat X = Mat::Zero(NK * dl, NK * dl);
    for (int p = 0; p < NK; ++p)
      for (int r = 0; r < NK; ++r)
        if (D(p, r) != 0.0)
          for (int s = 0; s < dl; ++s) X(p * dl + s, r * dl + s) = D(p, r);
    if (l > 0 && n == 2) {
      // ∂_θ on (cos lθ, sin lθ) coefficients
      for (int p = 0; p < NK; ++p) {
        double al = alpha(p, a);
        X(p * dl, p * dl + 1) -= al * l;
        X(p * dl + 1, p * dl) += al * l;
      }
    } else if (l > 0) {
      require(flat_normal_connection(), "SNK: n = 3 horizontal derivatives need a flat normal connection");
    }
    return X;
  }

  /// ∫_SNK <∇_K u, ∇_K v> on the degree-l block.
  Mat horizontal_stiffness(int l) const {
    const int dl = static_cast<int>(degree_columns(l).size());
    std::vector<Mat> X(k);
    for (int a = 0; a < k; ++a) X[a] = horizontal_derivative(l, a);
    Mat S = Mat::Zero(NK * dl, NK * dl);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) {
        Vec wab(NK * dl);
        for (int p = 0; p < NK; ++p) {
          double hab = K->h[p].inverse()(a, b);
          for (int s = 0; s < dl; ++s) wab[p * dl + s] = K->weight[p] * hab;
        }
        S += X[a].transpose() * wab.asDiagonal() * X[b];
      }
    return 0.5 * (S + S.transpose());
  }

  /// Diagonal of the L² mass on a degree-l block (harmonics are orthonormal).
  Vec block_mass(int l) const {
    const int dl = static_cast<int>(degree_columns(l).size());
    Vec m(NK * dl);
    for (int p = 0; p < NK; ++p)
      for (int s = 0; s < dl; ++s) m[p * dl + s] = K->weight[p];
    return m;
  }

  /// n x n map from degree-1 coefficients to frame components: Φ = (n/ω) T1 c.
  Mat degree_one_map() const {
    auto cols = degree_columns(1);
    Mat T1(n, cols.size());
    for (std::size_t s = 0; s < cols.size(); ++s) T1.col(s) = theta_coef.col(cols[s]);
    return T1;
  }

  const JacobiOperator& jacobi() const {
    std::call_once(jacobi_once_, [this] { jacobi_ = jacobi_operator(*K); });
    return jacobi_;
  }

  /// ∫_SNK v 𝕃 v on the degree-1 block: (n/ω) (I⊗T1)ᵀ W 𝔍 (I⊗T1).
  Mat jacobi_block() const {
    const JacobiOperator& J = jacobi();
    Mat T1 = degree_one_map();
    Mat E = Mat::Zero(NK * n, NK * n);
    for (int p = 0; p < NK; ++p) E.block(p * n, p * n, n, n) = T1;
    Mat A = (n / omega()) * E.transpose() * J.weights.asDiagonal() * J.matrix * E;
    return 0.5 * (A + A.transpose());
  }

  /// Model form on the degree-l block at radius ρ.
  Mat model_block(int l, double rho) const {
    if (l == 1) return jacobi_block();
    Mat A = horizontal_stiffness(l);
    A.diagonal() += (sphere_eigenvalue(l) - (n - 1.0)) / (rho * rho) * block_mass(l);
    return A;
  }

  /// Node values of the model operator B⁻¹A applied to v.
  Vec model_apply(const Vec& v, double rho) const {
    Vec coef = to_coefficients(v), out = Vec::Zero(coef.size());
    for (int l = 0; l <= max_degree(); ++l) {
      Vec b = gather(coef, l);
      Vec r = model_block(l, rho) * b;
      scatter(r.cwiseQuotient(block_mass(l)), l, out);
    }
    return from_coefficients(out);
  }

 private:
  mutable std::once_flag jacobi_once_;
  mutable JacobiOperator jacobi_;
};

}  // namespace cmc
