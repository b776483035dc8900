#pragma once

// Periodic tensor-product grids with Fourier differentiation, and quadrature
// grids on the fiber spheres S^1 (uniform) and S^2 (Gauss-Legendre x uniform).

#include <map>

#include "cmc/common.hpp"

namespace cmc {

/// First and second Fourier differentiation matrices on N equispaced nodes
/// of a period-L interval (nodes at j L / N).
inline std::pair<Mat, Mat> fourier_diff_matrices(int N, double L) {
  require(N >= 2, "Fourier grid needs at least two nodes");
  Mat D1 = Mat::Zero(N, N), D2 = Mat::Zero(N, N);
  const double h = 2 * kPi / N;
  const double s = 2 * kPi / L;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      if (i == j) continue;
      const int k = i - j;
      const double sign = (k % 2 == 0) ? 1.0 : -1.0;
      if (N % 2 == 0) {
        D1(i, j) = 0.5 * sign / std::tan(k * h / 2);
        D2(i, j) = -0.5 * sign / std::pow(std::sin(k * h / 2), 2);
      } else {
        D1(i, j) = 0.5 * sign / std::sin(k * h / 2);
        D2(i, j) = -0.5 * sign * std::cos(k * h / 2) / std::pow(std::sin(k * h / 2), 2);
      }
    }
  const double diag2 = (N % 2 == 0) ? -kPi * kPi / (3 * h * h) - 1.0 / 6.0 : -kPi * kPi / (3 * h * h) + 1.0 / 12.0;
  for (int i = 0; i < N; ++i) D2(i, i) = diag2;
  return {D1 * s, D2 * (s * s)};
}

/// Integer Fourier wavenumbers for N nodes: 0, 1, ..., -1 (Nyquist counted positive).
inline std::vector<int> fourier_wavenumbers(int N) {
  std::vector<int> k(N);
  for (int j = 0; j < N; ++j) k[j] = j <= N / 2 ? j : j - N;
  return k;
}

/// Tensor-product periodic grid; node index p = i0 + N0 (i1 + N1 (i2 + ...)).
class PeriodicGrid {
 public:
  PeriodicGrid() = default;
  PeriodicGrid(std::vector<int> shape, std::vector<double> periods)
      : shape_(std::move(shape)), periods_(std::move(periods)) {
    require(shape_.size() == periods_.size() && !shape_.empty(), "grid: shape/period mismatch");
    size_ = 1;
    for (std::size_t a = 0; a < shape_.size(); ++a) {
      require(shape_[a] >= 2, "grid: each axis needs at least two nodes");
      require(periods_[a] > 0, "grid: periods must be positive");
      auto [d1, d2] = fourier_diff_matrices(shape_[a], periods_[a]);
      d1_.push_back(d1);
      d2_.push_back(d2);
      size_ *= shape_[a];
    }
    stride_.assign(shape_.size(), 1);
    for (std::size_t a = 1; a < shape_.size(); ++a) stride_[a] = stride_[a - 1] * shape_[a - 1];
  }

  int dims() const { return static_cast<int>(shape_.size()); }
  int size() const { return size_; }
  int shape(int a) const { return shape_[a]; }
  double period(int a) const { return periods_[a]; }
  int stride(int a) const { return stride_[a]; }
  const Mat& d1(int a) const { return d1_[a]; }
  const Mat& d2(int a) const { return d2_[a]; }

  int index(int a, int p) const { return (p / stride_[a]) % shape_[a]; }
  /// Node p with the index along axis a replaced by j.
  int with_index(int p, int a, int j) const { return p + (j - index(a, p)) * stride_[a]; }
  Vec coords(int p) const {
    Vec y(dims());
    for (int a = 0; a < dims(); ++a) y[a] = periods_[a] * index(a, p) / shape_[a];
    return y;
  }
  double cell_volume() const {
    double v = 1.0;
    for (int a = 0; a < dims(); ++a) v *= periods_[a] / shape_[a];
    return v;
  }

  /// Applies an (N_a x N_a) matrix along axis a to each column of data (rows = nodes).
  Mat apply_axis(const Mat& op, int a, const Mat& data) const {
    require(data.rows() == size_, "grid: data size mismatch");
    Mat out = Mat::Zero(data.rows(), data.cols());
    const int Na = shape_[a], st = stride_[a];
    for (int p = 0; p < size_; ++p) {
      if (index(a, p) != 0) continue;
      for (int i = 0; i < Na; ++i) {
        auto row = out.row(p + i * st);
        for (int j = 0; j < Na; ++j) {
          double c = op(i, j);
          if (c != 0.0) row += c * data.row(p + j * st);
        }
      }
    }
    return out;
  }
  Mat diff(int a, const Mat& data) const { return apply_axis(d1_[a], a, data); }
  Mat diff2(int a, int b, const Mat& data) const {
    if (a == b) return apply_axis(d2_[a], a, data);
    return diff(a, diff(b, data));
  }
  Vec diff(int a, const Vec& data) const { return apply_axis(d1_[a], a, Mat(data)).col(0); }

  /// RMS amplitude of the Fourier coefficients in the upper half of the
  /// resolved band along each axis, relative to max(scale, RMS of all
  /// coefficients); a resolution indicator.
  double spectral_tail(const Mat& data, double scale = 0.0) const {
    double tail = 0.0, total = 0.0, lines = 0.0;
    for (int a = 0; a < dims(); ++a) {
      const int N = shape_[a];
      auto ks = fourier_wavenumbers(N);
      for (int p = 0; p < size_; ++p) {
        if (index(a, p) != 0) continue;
        for (int c = 0; c < data.cols(); ++c) {
          lines += 1.0;
          for (int m = 0; m < N; ++m) {
            double re = 0, im = 0;
            for (int j = 0; j < N; ++j) {
              double ang = 2 * kPi * m * j / N;
              re += data(p + j * stride_[a], c) * std::cos(ang);
              im -= data(p + j * stride_[a], c) * std::sin(ang);
            }
            double e = (re * re + im * im) / (static_cast<double>(N) * N);
            total += e;
            if (std::abs(ks[m]) > N / 4) tail += e;
          }
        }
      }
    }
    if (lines == 0.0) return 0.0;
    double ref = std::max(scale, std::sqrt(total / lines));
    return ref > 0 ? std::sqrt(tail / lines) / ref : 0.0;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> periods_;
  std::vector<int> stride_;
  int size_ = 0;
  std::vector<Mat> d1_, d2_;
};

/// Trigonometric interpolation of periodic samples f_j = f(j L / N) at t.
inline double trig_interpolate(const Vec& samples, double L, double t) {
  const int N = static_cast<int>(samples.size());
  auto ks = fourier_wavenumbers(N);
  double out = 0.0;
  for (int m = 0; m < N; ++m) {
    double re = 0, im = 0;
    for (int j = 0; j < N; ++j) {
      double ang = 2 * kPi * m * j / N;
      re += samples[j] * std::cos(ang);
      im -= samples[j] * std::sin(ang);
    }
    re /= N;
    im /= N;
    double w = 2 * kPi * ks[m] * t / L;
    double term = re * std::cos(w) - im * std::sin(w);
    if (N % 2 == 0 && m == N / 2) term = re * std::cos(w);  // real Nyquist part
    out += term;
  }
  return out;
}

/// Derivative of the trigonometric interpolant.
inline double trig_interpolate_derivative(const Vec& samples, double L, double t) {
  const int N = static_cast<int>(samples.size());
  auto ks = fourier_wavenumbers(N);
  double out = 0.0;
  for (int m = 0; m < N; ++m) {
    if (N % 2 == 0 && m == N / 2) continue;
    double re = 0, im = 0;
    for (int j = 0; j < N; ++j) {
      double ang = 2 * kPi * m * j / N;
      re += samples[j] * std::cos(ang);
      im -= samples[j] * std::sin(ang);
    }
    re /= N;
    im /= N;
    double kk = 2 * kPi * ks[m] / L, w = kk * t;
    out += -kk * (re * std::sin(w) + im * std::cos(w));
  }
  return out;
}

/// Trigonometric interpolant with precomputed coefficients; odd sample counts only.
class TrigSeries {
 public:
  TrigSeries() = default;
  TrigSeries(const Vec& samples, double L) : L_(L) {
    const int N = static_cast<int>(samples.size());
    require(N % 2 == 1, "TrigSeries: odd sample count required");
    const int K = N / 2;
    a_ = Vec::Zero(K + 1);
    b_ = Vec::Zero(K + 1);
    for (int m = 0; m <= K; ++m)
      for (int j = 0; j < N; ++j) {
        double ang = 2 * kPi * m * j / N;
        a_[m] += samples[j] * std::cos(ang);
        b_[m] += samples[j] * std::sin(ang);
      }
    a_ *= 2.0 / N;
    b_ *= 2.0 / N;
    a_[0] /= 2.0;
  }

  /// Value (order 0) or derivative of the given order at t.
  double operator()(double t, int order = 0) const {
    double out = order == 0 ? a_[0] : 0.0;
    for (int m = 1; m < a_.size(); ++m) {
      double k = 2 * kPi * m / L_, w = k * t;
      double c = std::cos(w), s = std::sin(w);
      switch (order) {
        case 0: out += a_[m] * c + b_[m] * s; break;
        case 1: out += k * (-a_[m] * s + b_[m] * c); break;
        case 2: out += -k * k * (a_[m] * c + b_[m] * s); break;
        default: throw Error(ErrorKind::validation, "TrigSeries: derivative order > 2");
      }
    }
    return out;
  }

 private:
  double L_ = 1.0;
  Vec a_, b_;
};

/// Volume of the unit d-sphere S^d (omega_1 = 2 pi, omega_2 = 4 pi).
inline double sphere_volume(int d) {
  return 2.0 * std::pow(kPi, (d + 1) / 2.0) / std::tgamma((d + 1) / 2.0);
}

/// Gauss-Legendre nodes and weights on [-1, 1] (Golub-Welsch).
inline std::pair<Vec, Vec> gauss_legendre(int n) {
  require(n >= 1, "gauss_legendre needs n >= 1");
  Mat T = Mat::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    double b = i / std::sqrt(4.0 * i * i - 1.0);
    T(i, i - 1) = T(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(T);
  Vec x = es.eigenvalues();
  Vec w = 2.0 * es.eigenvectors().row(0).transpose().array().square();
  return {x, w};
}

/// Quadrature grid on the fiber sphere S^{n-1} with an orthonormal basis of
/// real spherical harmonics up to degree L.
struct SphereGrid {
  int n = 2;                         // ambient dimension of the fiber: S^{n-1} ⊂ R^n
  int degree = 0;                    // harmonic degree budget L
  std::vector<Vec> nodes;            // unit vectors Θ
  Vec weights;                       // quadrature weights, summing to omega_{n-1}
  Mat harmonics;                     // (nodes x basis) values, orthonormal under weights
  std::vector<int> harmonic_degree;  // degree of each basis function
  Mat laplacian;                     // -Δ_{S^{n-1}} acting on node values
  std::vector<int> axis_shape;       // fiber axes for periodic differentiation: {Nθ} or {Nθ_polar, Nφ}

  int size() const { return static_cast<int>(nodes.size()); }

  /// Orthogonal projector (in the weighted inner product) onto harmonics of degree in `degrees`.
  Mat projector(const std::vector<int>& degrees) const {
    std::vector<int> cols;
    for (int j = 0; j < static_cast<int>(harmonic_degree.size()); ++j)
      if (std::find(degrees.begin(), degrees.end(), harmonic_degree[j]) != degrees.end()) cols.push_back(j);
    Mat Y(size(), cols.size());
    for (std::size_t c = 0; c < cols.size(); ++c) Y.col(c) = harmonics.col(cols[c]);
    return Y * Y.transpose() * weights.asDiagonal();
  }
};

/// Uniform grid on S^1: Θ = (cos θ, sin θ), θ_j = 2πj/N; harmonics up to (N-1)/2
/// (odd N, complete basis) or N/2 - 1 (even N, Nyquist mode dropped).
inline SphereGrid circle_grid(int N) {
  require(N >= 3, "circle grid needs at least three nodes");
  SphereGrid g;
  g.n = 2;
  g.degree = N % 2 ? (N - 1) / 2 : N / 2 - 1;
  g.axis_shape = {N};
  g.weights = Vec::Constant(N, 2 * kPi / N);
  for (int j = 0; j < N; ++j) {
    double t = 2 * kPi * j / N;
    Vec th(2);
    th << std::cos(t), std::sin(t);
    g.nodes.push_back(th);
  }
  g.harmonics = Mat::Zero(N, 2 * g.degree + 1);
  int col = 0;
  for (int l = 0; l <= g.degree; ++l) {
    for (int part = 0; part < (l == 0 ? 1 : 2); ++part) {
      for (int j = 0; j < N; ++j) {
        double t = 2 * kPi * j / N;
        g.harmonics(j, col) = l == 0 ? 1.0 / std::sqrt(2 * kPi)
                                     : (part == 0 ? std::cos(l * t) : std::sin(l * t)) / std::sqrt(kPi);
      }
      g.harmonic_degree.push_back(l);
      ++col;
    }
  }
  g.laplacian = -fourier_diff_matrices(N, 2 * kPi).second;
  return g;
}

/// Gauss-Legendre (in cos of the polar angle) x uniform azimuth grid on S^2,
/// exact for products of harmonics up to total degree 2L.
inline SphereGrid sphere2_grid(int L) {
  require(L >= 1, "sphere grid needs degree >= 1");
  const int nt = L + 1, np = 2 * L + 2;
  auto [x, w] = gauss_legendre(nt);
  SphereGrid g;
  g.n = 3;
  g.degree = L;
  g.axis_shape = {nt, np};
  g.weights.resize(nt * np);
  for (int i = 0; i < nt; ++i)
    for (int j = 0; j < np; ++j) {
      double ct = x[i], st = std::sqrt(1 - ct * ct), ph = 2 * kPi * j / np;
      Vec th(3);
      th << st * std::cos(ph), st * std::sin(ph), ct;
      g.nodes.push_back(th);
      g.weights[i * np + j] = w[i] * 2 * kPi / np;
    }
  // Real spherical harmonics via normalized associated Legendre recursion.
  const int nn = nt * np;
  std::vector<Vec> cols;
  for (int l = 0; l <= L; ++l)
    for (int m = -l; m <= l; ++m) {
      Vec Y(nn);
      const int am = std::abs(m);
      for (int p = 0; p < nn; ++p) {
        double ct = g.nodes[p][2], ph = std::atan2(g.nodes[p][1], g.nodes[p][0]);
        double st = std::sqrt(std::max(0.0, 1 - ct * ct));
        // P_am^am, then upward in l.
        double pmm = 1.0;
        for (int i = 1; i <= am; ++i) pmm *= -(2 * i - 1) * st;
        double plm = pmm;
        if (l > am) {
          double pm1 = ct * (2 * am + 1) * pmm;
          plm = pm1;
          double pm2 = pmm;
          for (int ll = am + 2; ll <= l; ++ll) {
            double pl = ((2 * ll - 1) * ct * pm1 - (ll + am - 1) * pm2) / (ll - am);
            pm2 = pm1;
            pm1 = pl;
            plm = pl;
          }
        }
        double norm = std::sqrt((2 * l + 1) / (4 * kPi) * std::tgamma(l - am + 1) / std::tgamma(l + am + 1));
        double v = norm * plm;
        if (m > 0) v *= std::sqrt(2.0) * std::cos(m * ph);
        if (m < 0) v *= std::sqrt(2.0) * std::sin(am * ph);
        Y[p] = v;
      }
      cols.push_back(Y);
      g.harmonic_degree.push_back(l);
    }
  g.harmonics.resize(nn, cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) g.harmonics.col(c) = cols[c];
  Vec eig(cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) eig[c] = g.harmonic_degree[c] * (g.harmonic_degree[c] + 1.0);
  g.laplacian = g.harmonics * eig.asDiagonal() * g.harmonics.transpose() * g.weights.asDiagonal();
  return g;
}

inline SphereGrid make_sphere_grid(int n, int resolution) {
  if (n == 2) return circle_grid(resolution);
  if (n == 3) return sphere2_grid(resolution);
  throw Error(ErrorKind::validation, "fiber spheres are supported for n = 2 and n = 3 only");
}

}  // namespace cmc
