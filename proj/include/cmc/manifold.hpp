#pragma once

// Riemannian manifolds presented by coordinate charts: Christoffel symbols,
// curvature, geodesics, exponential map and parallel transport.
//
// Curvature convention: R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z, so that
// the unit round sphere has sectional curvature g(R(X,Y)Y,X) = +1, and
// Ric(X,Y) = −Σ g(R(X,E_γ)Y,E_γ) = Σ g(R(E_γ,X)Y,E_γ).

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "cmc/common.hpp"

namespace cmc {

/// Γ^a_{bc}, stored densely and symmetric in (b,c).
class Christoffel {
 public:
  Christoffel() = default;
  explicit Christoffel(int dim) : dim_(dim), data_(static_cast<std::size_t>(dim) * dim * dim, 0.0) {}
  int dim() const { return dim_; }
  double& operator()(int a, int b, int c) { return data_[(static_cast<std::size_t>(a) * dim_ + b) * dim_ + c]; }
  double operator()(int a, int b, int c) const { return data_[(static_cast<std::size_t>(a) * dim_ + b) * dim_ + c]; }

  /// Γ(u,v)^a = Γ^a_{bc} u^b v^c.
  Vec contract(const Vec& u, const Vec& v) const {
    Vec out = Vec::Zero(dim_);
    for (int a = 0; a < dim_; ++a) {
      double s = 0.0;
      for (int b = 0; b < dim_; ++b) {
        if (u[b] == 0.0) continue;
        const double* row = &data_[(static_cast<std::size_t>(a) * dim_ + b) * dim_];
        double t = 0.0;
        for (int c = 0; c < dim_; ++c) t += row[c] * v[c];
        s += u[b] * t;
      }
      out[a] = s;
    }
    return out;
  }
  double max_abs() const {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::abs(x));
    return m;
  }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

 private:
  int dim_ = 0;
  std::vector<double> data_;
};

using MetricFn = std::function<Mat(const Vec&)>;
using ChristoffelFn = std::function<Christoffel(const Vec&)>;

struct Chart {
  MetricFn metric;
  ChristoffelFn christoffel;                  // empty: finite differences of the metric
  std::function<bool(const Vec&)> in_domain;  // empty: everywhere
  std::function<int(const Vec&)> switch_to;   // preferred chart at x, or -1 to stay; empty: never
};

/// Coordinate change between charts: returns (x', J) with J = ∂x'/∂x.
using TransitionFn = std::function<std::pair<Vec, Mat>(int from, int to, const Vec& x)>;

enum class DerivativeMode { closed_form, finite_difference };

struct ChartPoint {
  int chart = 0;
  Vec x;
};

class Manifold {
 public:
  int dim = 0;
  std::vector<Chart> charts;
  TransitionFn transition;  // empty: single chart
  DerivativeMode mode = DerivativeMode::closed_form;
  double fd_step = 1e-4;          // metric differentiation step (finite_difference mode)
  double chart_scale = 1.0;       // curvature step is 1e-3 * chart_scale
  std::vector<double> periods;    // nonempty: coordinate i is periodic with period periods[i] (0: not)
  std::string catalog_id;
  std::optional<double> constant_curvature;  // known sectional curvature, if any
  bool affine = false;                       // Γ ≡ 0 in every chart: geodesics are straight lines

  const Chart& chart(int c) const {
    require(c >= 0 && c < static_cast<int>(charts.size()), "chart index out of range");
    return charts[c];
  }

  /// Copy of this manifold whose Christoffels come from metric differences.
  Manifold finite_difference_copy(double h = 1e-4) const {
    Manifold m = *this;
    m.mode = DerivativeMode::finite_difference;
    m.fd_step = h;
    return m;
  }

  Mat metric(const Vec& x, int c = 0) const { return chart(c).metric(x); }
};

inline void check_spd(const Mat& g, const Vec& x) {
  Eigen::LLT<Mat> llt(g);
  if (llt.info() != Eigen::Success || !g.allFinite())
    throw Error(ErrorKind::degenerate_metric, "metric is not positive definite at point with |x| = " +
                                                  std::to_string(x.norm()));
}

namespace detail {
// Fourth-order central difference of a matrix-valued function along axis k.
template <class F>
Mat diff4(const F& f, const Vec& x, int k, double h) {
  Vec xp1 = x, xm1 = x, xp2 = x, xm2 = x;
  xp1[k] += h;
  xm1[k] -= h;
  xp2[k] += 2 * h;
  xm2[k] -= 2 * h;
  return ((f(xm2) - f(xp2)) + 8.0 * (f(xp1) - f(xm1))) / (12.0 * h);
}
}  // namespace detail

inline Christoffel christoffel_from_metric(const MetricFn& metric, const Vec& x, double h) {
  const int d = static_cast<int>(x.size());
  Mat g = metric(x);
  check_spd(g, x);
  Mat ginv = g.inverse();
  std::vector<Mat> dg(d);
  for (int k = 0; k < d; ++k) dg[k] = detail::diff4([&](const Vec& y) -> Mat { return metric(y); }, x, k, h);
  Christoffel G(d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b)
      for (int c = b; c < d; ++c) {
        double s = 0.0;
        for (int e = 0; e < d; ++e) s += ginv(a, e) * (dg[b](e, c) + dg[c](e, b) - dg[e](b, c));
        G(a, b, c) = G(a, c, b) = 0.5 * s;
      }
  return G;
}

/// Γ^a_{bc} at x in the given chart.
inline Christoffel christoffel(const Manifold& M, const Vec& x, int c = 0) {
  const Chart& ch = M.chart(c);
  if (M.mode == DerivativeMode::closed_form && ch.christoffel) return ch.christoffel(x);
  return christoffel_from_metric(ch.metric, x, M.fd_step * M.chart_scale);
}

/// Riemann tensor and Ricci tensor at a point.
struct CurvatureData {
  Vec point;
  int dim = 0;
  std::vector<double> riemann;          // R^a_{bcd}: R(∂_c,∂_d)∂_b = R^a_{bcd} ∂_a
  std::vector<double> riemann_lowered;  // R_{abcd} = g(R(∂_c,∂_d)∂_b, ∂_a)
  Mat metric;
  Mat ricci;

  std::size_t idx(int a, int b, int c, int d) const {
    return ((static_cast<std::size_t>(a) * dim + b) * dim + c) * dim + d;
  }
  double up(int a, int b, int c, int d) const { return riemann[idx(a, b, c, d)]; }
  double low(int a, int b, int c, int d) const { return riemann_lowered[idx(a, b, c, d)]; }

  /// R(X,Y)Z as a vector.
  Vec apply(const Vec& X, const Vec& Y, const Vec& Z) const {
    Vec out = Vec::Zero(dim);
    for (int a = 0; a < dim; ++a) {
      double s = 0.0;
      for (int b = 0; b < dim; ++b)
        for (int c = 0; c < dim; ++c)
          for (int d = 0; d < dim; ++d) s += up(a, b, c, d) * Z[b] * X[c] * Y[d];
      out[a] = s;
    }
    return out;
  }
  /// g(R(X,Y)Z, W).
  double form(const Vec& X, const Vec& Y, const Vec& Z, const Vec& W) const {
    return W.dot(metric * apply(X, Y, Z));
  }
  /// Sectional curvature of span(X,Y).
  double sectional(const Vec& X, const Vec& Y) const {
    double gxx = X.dot(metric * X), gyy = Y.dot(metric * Y), gxy = X.dot(metric * Y);
    return form(X, Y, Y, X) / (gxx * gyy - gxy * gxy);
  }
  double ric(const Vec& X, const Vec& Y) const { return X.dot(ricci * Y); }

  /// max |R_abcd + R_bacd|, |R_abcd + R_abdc|.
  double antisymmetry_residual() const {
    double r = 0.0;
    for (int a = 0; a < dim; ++a)
      for (int b = 0; b < dim; ++b)
        for (int c = 0; c < dim; ++c)
          for (int d = 0; d < dim; ++d) {
            r = std::max(r, std::abs(low(a, b, c, d) + low(b, a, c, d)));
            r = std::max(r, std::abs(low(a, b, c, d) + low(a, b, d, c)));
          }
    return r;
  }
  /// max |R_abcd + R_bcad + R_cabd|.
  double bianchi_residual() const {
    double r = 0.0;
    for (int a = 0; a < dim; ++a)
      for (int b = 0; b < dim; ++b)
        for (int c = 0; c < dim; ++c)
          for (int d = 0; d < dim; ++d)
            r = std::max(r, std::abs(low(a, b, c, d) + low(b, c, a, d) + low(c, a, b, d)));
    return r;
  }
};

/// Curvature from fourth-order central differences of the Christoffel symbols.
inline CurvatureData curvature(const Manifold& M, const Vec& x, int c = 0) {
  const int d = M.dim;
  const double h = 1e-3 * M.chart_scale;
  if (!(h > 1e-8 * (1.0 + x.norm())))
    throw Error(ErrorKind::step_size, "curvature difference step underflows the chart scale");
  CurvatureData out;
  out.point = x;
  out.dim = d;
  out.metric = M.metric(x, c);
  check_spd(out.metric, x);
  Christoffel G = christoffel(M, x, c);
  std::vector<Christoffel> dG(d);  // dG[k](a,b,c) = ∂_k Γ^a_{bc}
  for (int k = 0; k < d; ++k) {
    Vec xp1 = x, xm1 = x, xp2 = x, xm2 = x;
    xp1[k] += h;
    xm1[k] -= h;
    xp2[k] += 2 * h;
    xm2[k] -= 2 * h;
    Christoffel gp1 = christoffel(M, xp1, c), gm1 = christoffel(M, xm1, c);
    Christoffel gp2 = christoffel(M, xp2, c), gm2 = christoffel(M, xm2, c);
    dG[k] = Christoffel(d);
    for (std::size_t i = 0; i < dG[k].raw().size(); ++i)
      dG[k].raw()[i] = ((gm2.raw()[i] - gp2.raw()[i]) + 8.0 * (gp1.raw()[i] - gm1.raw()[i])) / (12.0 * h);
  }
  const std::size_t n4 = static_cast<std::size_t>(d) * d * d * d;
  out.riemann.assign(n4, 0.0);
  out.riemann_lowered.assign(n4, 0.0);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b)
      for (int cc = 0; cc < d; ++cc)
        for (int dd = 0; dd < d; ++dd) {
          double s = dG[cc](a, dd, b) - dG[dd](a, cc, b);
          for (int e = 0; e < d; ++e) s += G(a, cc, e) * G(e, dd, b) - G(a, dd, e) * G(e, cc, b);
          out.riemann[out.idx(a, b, cc, dd)] = s;
        }
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b)
      for (int cc = 0; cc < d; ++cc)
        for (int dd = 0; dd < d; ++dd) {
          double s = 0.0;
          for (int e = 0; e < d; ++e) s += out.metric(a, e) * out.up(e, b, cc, dd);
          out.riemann_lowered[out.idx(a, b, cc, dd)] = s;
        }
  out.ricci = Mat::Zero(d, d);
  for (int b = 0; b < d; ++b)
    for (int dd = 0; dd < d; ++dd) {
      double s = 0.0;
      for (int a = 0; a < d; ++a) s += out.up(a, b, a, dd);
      out.ricci(b, dd) = s;
    }
  out.ricci = 0.5 * (out.ricci + out.ricci.transpose()).eval();
  return out;
}

// ---------------------------------------------------------------------------
// Geodesics

struct GeodesicState {
  ChartPoint position;
  Vec velocity;
  double arc_param = 0.0;
};

struct GeodesicOptions {
  double max_arc_step = 0.004;  // RK4 step in arc length; local error ~1e-12 per unit arc
  int min_steps = 8;
  bool record_path = false;
};

struct GeodesicResult {
  GeodesicState end;
  std::vector<GeodesicState> path;  // filled when record_path
};

inline double norm_g(const Mat& g, const Vec& v) { return std::sqrt(std::max(0.0, v.dot(g * v))); }

namespace detail {
inline void maybe_switch_chart(const Manifold& M, ChartPoint& p, Vec& v) {
  const Chart& ch = M.chart(p.chart);
  int to = ch.switch_to && M.transition ? ch.switch_to(p.x) : -1;
  if (to >= 0 && to != p.chart) {
    auto [y, J] = M.transition(p.chart, to, p.x);
    v = J * v;
    p.x = y;
    p.chart = to;
  }
  const Chart& now = M.chart(p.chart);
  if (now.in_domain && !now.in_domain(p.x))
    throw Error(ErrorKind::chart_transition, "geodesic left the chart domain");
}
}  // namespace detail

/// Integrates the geodesic equation for unit parameter time from (p, v)
/// with classical RK4 at a fixed step count set by the arc length.
inline GeodesicResult integrate_geodesic(const Manifold& M, const ChartPoint& p, const Vec& v,
                                         const GeodesicOptions& opt = {}) {
  require(v.size() == M.dim && p.x.size() == M.dim, "geodesic: dimension mismatch");
  Mat g0 = M.metric(p.x, p.chart);
  check_spd(g0, p.x);
  const double len = norm_g(g0, v);
  const int steps = std::max(opt.min_steps, static_cast<int>(std::ceil(len / opt.max_arc_step)));
  const double h = 1.0 / steps;
  GeodesicResult res;
  if (M.affine) {
    if (opt.record_path)
      for (int s = 0; s <= steps; ++s) res.path.push_back({{p.chart, p.x + (s * h) * v}, v, s * h * len});
    res.end = {{p.chart, p.x + v}, v, len};
    return res;
  }
  ChartPoint cur = p;
  Vec vel = v;
  if (opt.record_path) res.path.push_back({cur, vel, 0.0});
  auto accel = [&](const Vec& x, const Vec& u, int c) -> Vec { return -christoffel(M, x, c).contract(u, u); };
  for (int s = 0; s < steps; ++s) {
    const int c = cur.chart;
    Vec k1x = vel, k1v = accel(cur.x, vel, c);
    Vec x2 = cur.x + 0.5 * h * k1x, v2 = vel + 0.5 * h * k1v;
    Vec k2x = v2, k2v = accel(x2, v2, c);
    Vec x3 = cur.x + 0.5 * h * k2x, v3 = vel + 0.5 * h * k2v;
    Vec k3x = v3, k3v = accel(x3, v3, c);
    Vec x4 = cur.x + h * k3x, v4 = vel + h * k3v;
    Vec k4x = v4, k4v = accel(x4, v4, c);
    cur.x += (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x);
    vel += (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v);
    if (!cur.x.allFinite() || !vel.allFinite())
      throw Error(ErrorKind::step_size, "geodesic integration produced non-finite values");
    detail::maybe_switch_chart(M, cur, vel);
    if (opt.record_path) res.path.push_back({cur, vel, (s + 1) * h * len});
  }
  res.end = {cur, vel, len};
  return res;
}

inline void wrap_periodic(const Manifold& M, Vec& x) {
  for (std::size_t i = 0; i < M.periods.size() && i < static_cast<std::size_t>(x.size()); ++i) {
    double L = M.periods[i];
    if (L > 0) x[i] -= L * std::floor(x[i] / L);
  }
}

/// exp^M_p(v); periodic coordinates are wrapped into [0, L).
inline ChartPoint exp_map(const Manifold& M, const ChartPoint& p, const Vec& v, const GeodesicOptions& opt = {}) {
  ChartPoint q = integrate_geodesic(M, p, v, opt).end.position;
  wrap_periodic(M, q.x);
  return q;
}
inline ChartPoint exp_map(const Manifold& M, const Vec& p, const Vec& v, const GeodesicOptions& opt = {}) {
  return exp_map(M, ChartPoint{0, p}, v, opt);
}

/// A sampled curve on [0,1] in a single chart: t -> (point, velocity).
using CurveFn = std::function<std::pair<Vec, Vec>(double)>;

/// Parallel transport of v0 along the curve (RK4, `steps` steps).
inline Vec parallel_transport(const Manifold& M, const CurveFn& curve, const Vec& v0, int steps = 2000,
                              int chart_index = 0) {
  require(steps > 0, "parallel_transport: steps must be positive");
  const double h = 1.0 / steps;
  Vec v = v0;
  auto rhs = [&](double t, const Vec& u) -> Vec {
    auto [x, xd] = curve(t);
    return -christoffel(M, x, chart_index).contract(xd, u);
  };
  for (int s = 0; s < steps; ++s) {
    double t = s * h;
    Vec k1 = rhs(t, v);
    Vec k2 = rhs(t + 0.5 * h, v + 0.5 * h * k1);
    Vec k3 = rhs(t + 0.5 * h, v + 0.5 * h * k2);
    Vec k4 = rhs(t + h, v + h * k3);
    v += (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  if (!v.allFinite()) throw Error(ErrorKind::step_size, "parallel transport produced non-finite values");
  return v;
}

/// Reverses a curve: t -> curve(1 - t) with negated velocity.
inline CurveFn reversed(const CurveFn& curve) {
  return [curve](double t) {
    auto [x, v] = curve(1.0 - t);
    return std::make_pair(x, Vec(-v));
  };
}

}  // namespace cmc

namespace cmc {

/// Expresses a point in chart `target` (identity if it already is).
inline ChartPoint to_chart(const Manifold& M, const ChartPoint& p, int target = 0) {
  if (p.chart == target) return p;
  require(static_cast<bool>(M.transition), "to_chart: manifold has a single chart");
  return {target, M.transition(p.chart, target, p.x).first};
}

/// Integrates a geodesic and returns its end point and end velocity in chart `target`.
inline std::pair<Vec, Vec> geodesic_end_in_chart(const Manifold& M, const Vec& p, const Vec& v, int target = 0,
                                                 const GeodesicOptions& opt = {}) {
  GeodesicState s = integrate_geodesic(M, {target, p}, v, opt).end;
  if (s.position.chart != target) {
    auto [y, J] = M.transition(s.position.chart, target, s.position.x);
    return {y, J * s.velocity};
  }
  return {s.position.x, s.velocity};
}

}  // namespace cmc
