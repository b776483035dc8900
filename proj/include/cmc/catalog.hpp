#pragma once

// Built-in ambient geometries, addressed by string id:
//   euclidean(d), flat_torus(L1,...,Ld), round_sphere(d,r), ellipsoid(a,b,c),
//   product(id1,id2), conformal(id,eps,bump), perturbed_sphere, file:<path>.

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cmc/expr.hpp"
#include "cmc/manifold.hpp"

namespace cmc {

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\n\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\n\r");
  return s.substr(b, e - b + 1);
}

/// Splits "name(a, b(c,d), e)" into name and top-level arguments.
inline std::pair<std::string, std::vector<std::string>> split_call(const std::string& text) {
  std::string s = trim(text);
  auto open = s.find('(');
  if (open == std::string::npos) return {s, {}};
  require(s.back() == ')', "malformed id '" + s + "': missing closing parenthesis");
  std::string name = trim(s.substr(0, open));
  std::string inner = s.substr(open + 1, s.size() - open - 2);
  std::vector<std::string> args;
  int depth = 0;
  std::string cur;
  for (char c : inner) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    require(depth >= 0, "malformed id '" + s + "': unbalanced parentheses");
    if (c == ',' && depth == 0) {
      args.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  require(depth == 0, "malformed id '" + s + "': unbalanced parentheses");
  if (!trim(cur).empty() || !args.empty()) args.push_back(trim(cur));
  return {name, args};
}

inline double parse_number(const std::string& s) {
  double v = Expr::parse(s).eval(Vec::Zero(10));
  require(std::isfinite(v), "non-finite numeric argument '" + s + "'");
  return v;
}

// Γ for g = e^{2ψ}δ: Γ^k_ij = δ^k_i ∂_jψ + δ^k_j ∂_iψ − δ_ij ∂_kψ.
inline Christoffel conformally_flat_christoffel(const Vec& dpsi) {
  const int d = static_cast<int>(dpsi.size());
  Christoffel G(d);
  for (int k = 0; k < d; ++k)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        double v = 0.0;
        if (k == i) v += dpsi[j];
        if (k == j) v += dpsi[i];
        if (i == j) v -= dpsi[k];
        G(k, i, j) = v;
      }
  return G;
}

// Inversion u -> u/|u|^2 with its Jacobian.
inline std::pair<Vec, Mat> inversion(const Vec& u) {
  double r2 = u.squaredNorm();
  require(r2 > 0, "chart transition at the chart origin");
  const int d = static_cast<int>(u.size());
  Mat J = (Mat::Identity(d, d) * r2 - 2.0 * u * u.transpose()) / (r2 * r2);
  return {u / r2, J};
}

inline std::function<int(const Vec&)> inversion_switch(int other) {
  return [other](const Vec& x) { return x.squaredNorm() > 4.0 ? other : -1; };
}

}  // namespace detail

inline Manifold euclidean(int d) {
  require(d >= 1, "euclidean: dimension must be positive");
  Manifold M;
  M.dim = d;
  Chart c;
  c.metric = [d](const Vec&) -> Mat { return Mat::Identity(d, d); };
  c.christoffel = [d](const Vec&) { return Christoffel(d); };
  M.charts = {c};
  M.catalog_id = "euclidean(" + std::to_string(d) + ")";
  M.constant_curvature = 0.0;
  M.affine = true;
  return M;
}

inline Manifold flat_torus(const std::vector<double>& periods) {
  require(!periods.empty(), "flat_torus: needs at least one period");
  for (double L : periods) require(L > 0, "flat_torus: periods must be positive");
  Manifold M = euclidean(static_cast<int>(periods.size()));
  M.periods = periods;
  std::ostringstream id;
  id.precision(17);
  id << "flat_torus(";
  for (std::size_t i = 0; i < periods.size(); ++i) id << (i ? "," : "") << periods[i];
  id << ")";
  M.catalog_id = id.str();
  return M;
}

/// Round sphere S^d of radius r in stereographic coordinates from either pole.
/// The great circle u = (cos s, sin s, 0, ...) has speed r.
inline Manifold round_sphere(int d, double r) {
  require(d >= 1 && r > 0, "round_sphere: need d >= 1 and r > 0");
  Manifold M;
  M.dim = d;
  Chart c;
  c.metric = [d, r](const Vec& u) -> Mat {
    double q = 1.0 + u.squaredNorm();
    return Mat::Identity(d, d) * (4.0 * r * r / (q * q));
  };
  c.christoffel = [](const Vec& u) {
    double q = 1.0 + u.squaredNorm();
    return detail::conformally_flat_christoffel(-2.0 * u / q);
  };
  c.in_domain = [](const Vec& u) { return u.squaredNorm() < 1e8; };
  Chart c0 = c, c1 = c;
  c0.switch_to = detail::inversion_switch(1);
  c1.switch_to = detail::inversion_switch(0);
  M.charts = {c0, c1};
  M.transition = [](int from, int to, const Vec& x) -> std::pair<Vec, Mat> {
    if (from == to) return {x, Mat::Identity(x.size(), x.size())};
    return detail::inversion(x);
  };
  std::ostringstream id;
  id << "round_sphere(" << d << "," << r << ")";
  M.catalog_id = id.str();
  M.constant_curvature = 1.0 / (r * r);
  return M;
}

/// Ellipsoid x²/a² + y²/b² + z²/c² = 1 with the induced metric, charted by
/// stereographic coordinates from the north (chart 0) and south (chart 1) poles.
inline Manifold ellipsoid(double a, double b, double c) {
  require(a > 0 && b > 0 && c > 0, "ellipsoid: semi-axes must be positive");
  const std::array<double, 3> ax{a, b, c};
  // X(u) = diag(a,b,c)·(2u1, 2u2, s(|u|²−1))/(1+|u|²), with s = ±1 by chart.
  auto jets = [ax](const Vec& u, double s, Mat& dX, std::array<Mat, 2>& ddX) {
    double q = 1.0 + u.squaredNorm(), q2 = q * q, q3 = q2 * q;
    dX = Mat::Zero(3, 2);
    ddX = {Mat::Zero(3, 2), Mat::Zero(3, 2)};
    for (int j = 0; j < 2; ++j) {
      for (int k = 0; k < 2; ++k) dX(k, j) = ax[k] * (2.0 * (k == j) / q - 4.0 * u[k] * u[j] / q2);
      dX(2, j) = ax[2] * s * 4.0 * u[j] / q2;
    }
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        for (int k = 0; k < 2; ++k)
          ddX[i](k, j) = ax[k] * (-4.0 * (k == j) * u[i] / q2 - 4.0 * ((k == i) * u[j] + u[k] * (i == j)) / q2 +
                                  16.0 * u[k] * u[j] * u[i] / q3);
        ddX[i](2, j) = ax[2] * s * (4.0 * (i == j) / q2 - 16.0 * u[j] * u[i] / q3);
      }
  };
  auto make_chart = [jets](double s, int other) {
    Chart ch;
    ch.metric = [jets, s](const Vec& u) -> Mat {
      Mat dX;
      std::array<Mat, 2> ddX;
      jets(u, s, dX, ddX);
      return dX.transpose() * dX;
    };
    ch.christoffel = [jets, s](const Vec& u) {
      Mat dX;
      std::array<Mat, 2> ddX;
      jets(u, s, dX, ddX);
      Mat ginv = (dX.transpose() * dX).inverse();
      Christoffel G(2);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          Vec proj = dX.transpose() * ddX[i].col(j);  // ⟨∂_l X, ∂_i∂_j X⟩
          Vec up = ginv * proj;
          for (int k = 0; k < 2; ++k) G(k, i, j) = up[k];
        }
      return G;
    };
    ch.in_domain = [](const Vec& u) { return u.squaredNorm() < 1e8; };
    ch.switch_to = detail::inversion_switch(other);
    return ch;
  };
  Manifold M;
  M.dim = 2;
  M.charts = {make_chart(1.0, 1), make_chart(-1.0, 0)};
  M.transition = [](int from, int to, const Vec& x) -> std::pair<Vec, Mat> {
    if (from == to) return {x, Mat::Identity(2, 2)};
    return detail::inversion(x);
  };
  std::ostringstream id;
  id << "ellipsoid(" << a << "," << b << "," << c << ")";
  M.catalog_id = id.str();
  if (a == b && b == c) M.constant_curvature = 1.0 / (a * a);
  return M;
}

/// Riemannian product; chart index = c1 * (#charts of B) + c2.
inline Manifold product(const Manifold& A, const Manifold& B) {
  Manifold M;
  const int da = A.dim, db = B.dim, nb = static_cast<int>(B.charts.size());
  M.dim = da + db;
  auto pa = std::make_shared<Manifold>(A);
  auto pb = std::make_shared<Manifold>(B);
  for (int ca = 0; ca < static_cast<int>(A.charts.size()); ++ca)
    for (int cb = 0; cb < nb; ++cb) {
      Chart ch;
      ch.metric = [pa, pb, ca, cb, da, db](const Vec& x) -> Mat {
        Mat g = Mat::Zero(da + db, da + db);
        g.topLeftCorner(da, da) = pa->metric(x.head(da), ca);
        g.bottomRightCorner(db, db) = pb->metric(x.tail(db), cb);
        return g;
      };
      ch.christoffel = [pa, pb, ca, cb, da, db](const Vec& x) {
        Christoffel ga = christoffel(*pa, x.head(da), ca), gb = christoffel(*pb, x.tail(db), cb);
        Christoffel G(da + db);
        for (int i = 0; i < da; ++i)
          for (int j = 0; j < da; ++j)
            for (int k = 0; k < da; ++k) G(i, j, k) = ga(i, j, k);
        for (int i = 0; i < db; ++i)
          for (int j = 0; j < db; ++j)
            for (int k = 0; k < db; ++k) G(da + i, da + j, da + k) = gb(i, j, k);
        return G;
      };
      ch.in_domain = [pa, pb, ca, cb, da, db](const Vec& x) {
        const Chart& a = pa->chart(ca);
        const Chart& b = pb->chart(cb);
        return (!a.in_domain || a.in_domain(x.head(da))) && (!b.in_domain || b.in_domain(x.tail(db)));
      };
      if (A.transition || B.transition) {
        ch.switch_to = [pa, pb, ca, cb, da, db, nb](const Vec& x) {
          const Chart& a = pa->chart(ca);
          const Chart& b = pb->chart(cb);
          int ta = a.switch_to && pa->transition ? a.switch_to(x.head(da)) : -1;
          int tb = b.switch_to && pb->transition ? b.switch_to(x.tail(db)) : -1;
          if (ta < 0 && tb < 0) return -1;
          return (ta < 0 ? ca : ta) * nb + (tb < 0 ? cb : tb);
        };
      }
      M.charts.push_back(ch);
    }
  if (A.transition || B.transition) {
    M.transition = [pa, pb, da, db, nb](int from, int to, const Vec& x) -> std::pair<Vec, Mat> {
      Vec y = x;
      Mat J = Mat::Identity(da + db, da + db);
      int fa = from / nb, fb = from % nb, ta = to / nb, tb = to % nb;
      if (fa != ta) {
        auto [ya, Ja] = pa->transition(fa, ta, x.head(da));
        y.head(da) = ya;
        J.topLeftCorner(da, da) = Ja;
      }
      if (fb != tb) {
        auto [yb, Jb] = pb->transition(fb, tb, x.tail(db));
        y.tail(db) = yb;
        J.bottomRightCorner(db, db) = Jb;
      }
      return {y, J};
    };
  }
  if (!A.periods.empty() || !B.periods.empty()) {
    M.periods.assign(M.dim, 0.0);
    for (std::size_t i = 0; i < A.periods.size(); ++i) M.periods[i] = A.periods[i];
    for (std::size_t i = 0; i < B.periods.size(); ++i) M.periods[da + i] = B.periods[i];
  }
  M.affine = A.affine && B.affine;
  M.catalog_id = "product(" + A.catalog_id + "," + B.catalog_id + ")";
  if (A.mode == DerivativeMode::finite_difference || B.mode == DerivativeMode::finite_difference)
    M.mode = DerivativeMode::finite_difference;
  return M;
}

/// Conformal deformation e^{2 eps f} g, with f an expression in the
/// coordinates of chart 0 of the base.
inline Manifold conformal(const Manifold& base, double eps, const Expr& f, const std::string& f_text = "f") {
  require(f.max_variable() < base.dim, "conformal: bump references a coordinate beyond the dimension");
  auto pb = std::make_shared<Manifold>(base);
  std::vector<Expr> all{f};
  for (int i = 0; i < base.dim; ++i) all.push_back(f.derivative(i));
  auto value_prog = std::make_shared<ExprProgram>(std::vector<Expr>{f});
  auto grad_prog = std::make_shared<ExprProgram>(all);
  auto to_base = [pb](const Vec& x, int c) {
    if (c == 0) return std::make_pair(x, Mat(Mat::Identity(x.size(), x.size())));
    return pb->transition(c, 0, x);
  };
  // f and its gradient expressed in chart c.
  auto local = [grad_prog, to_base](const Vec& x, int c, double& val, Vec& grad) {
    auto [y, J] = to_base(x, c);
    Vec out(grad_prog->outputs());
    grad_prog->eval(y, out.data());
    val = out[0];
    grad = J.transpose() * out.tail(x.size());
  };
  Manifold M = base;
  for (int c = 0; c < static_cast<int>(base.charts.size()); ++c) {
    Chart& ch = M.charts[c];
    ch.metric = [pb, value_prog, to_base, eps, c](const Vec& x) -> Mat {
      double v;
      value_prog->eval(c == 0 ? x : to_base(x, c).first, &v);
      return std::exp(2.0 * eps * v) * pb->metric(x, c);
    };
    ch.christoffel = [pb, local, eps, c](const Vec& x) {
      double v;
      Vec grad;
      local(x, c, v, grad);
      Christoffel G = christoffel(*pb, x, c);
      Mat g = pb->metric(x, c);
      Vec up = g.ldlt().solve(grad);
      const int d = static_cast<int>(x.size());
      for (int k = 0; k < d; ++k)
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j) {
            double t = 0.0;
            if (k == i) t += grad[j];
            if (k == j) t += grad[i];
            t -= g(i, j) * up[k];
            G(k, i, j) += eps * t;
          }
      return G;
    };
  }
  std::ostringstream id;
  id << "conformal(" << base.catalog_id << "," << eps << "," << f_text << ")";
  M.catalog_id = id.str();
  M.constant_curvature.reset();
  M.affine = false;
  if (eps == 0.0) M.constant_curvature = base.constant_curvature;
  return M;
}

/// Bump for the perturbed sphere. With ν1 = u2 and ν2 = (|u|²−1)/2, it
/// vanishes to second order on the great circle {u2 = 0, |u| = 1}, so that
/// circle stays a closed geodesic while its Jacobi operator becomes
/// invertible. The cubic terms break the reflection symmetries.
inline const std::string& perturbed_sphere_bump() {
  static const std::string s =
      "0.25*x2^2*(1+0.3*x0) - 0.25*((x0^2+x1^2+x2^2-1)/2)^2"
      " + 0.1*x2^3 + 0.1*x2*((x0^2+x1^2+x2^2-1)/2)^2 + 0.2*x1*x2*(x0^2+x1^2+x2^2-1)/2";
  return s;
}

inline Manifold perturbed_sphere() {
  Manifold M = conformal(round_sphere(3, 1.0), 1.0, Expr::parse(perturbed_sphere_bump()), "bump");
  M.catalog_id = "perturbed_sphere";
  return M;
}

/// User metric from a JSON file:
///   {"dim": 2, "metric": [["1", "0"], ["0", "exp(2*x0)"]], "periods": [0, 6.283]}
/// Entries are expressions in x0..x{dim-1}; Christoffels use finite differences.
inline Manifold manifold_from_json(const nlohmann::json& j, const std::string& label = "user") {
  require(j.contains("dim") && j.contains("metric"), "metric file needs 'dim' and 'metric'");
  const int d = j.at("dim").get<int>();
  require(d >= 1 && d <= 10, "metric file: dim must be in 1..10");
  const auto& rows = j.at("metric");
  require(rows.is_array() && static_cast<int>(rows.size()) == d, "metric file: metric must have dim rows");
  auto table = std::make_shared<std::vector<Expr>>(d * d);
  for (int a = 0; a < d; ++a) {
    require(rows[a].is_array() && static_cast<int>(rows[a].size()) == d, "metric file: each row needs dim entries");
    for (int b = 0; b < d; ++b) {
      const auto& e = rows[a][b];
      Expr ex = e.is_number() ? Expr::constant(e.get<double>()) : Expr::parse(e.get<std::string>());
      require(ex.max_variable() < d, "metric file: entry references coordinate beyond dim");
      (*table)[a * d + b] = ex;
    }
  }
  auto prog = std::make_shared<ExprProgram>(*table);
  Manifold M;
  M.dim = d;
  Chart c;
  c.metric = [prog, d](const Vec& x) -> Mat {
    Mat g(d, d);
    prog->eval(x, g.data());  // column-major fill of the row-major table gives gᵀ
    return 0.5 * (g + g.transpose());
  };
  M.charts = {c};
  M.mode = DerivativeMode::finite_difference;
  if (j.contains("periods")) {
    M.periods = j.at("periods").get<std::vector<double>>();
    require(static_cast<int>(M.periods.size()) == d, "metric file: periods must have dim entries");
  }
  M.catalog_id = "file:" + label;
  return M;
}

/// Resolves a catalog id.
inline Manifold make_manifold(const std::string& id_text) {
  std::string id = detail::trim(id_text);
  require(!id.empty(), "empty geometry id");
  if (id.rfind("file:", 0) == 0) {
    std::string path = id.substr(5);
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open metric file '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw Error(ErrorKind::validation, "metric file '" + path + "' is not valid JSON: " + e.what());
    }
    return manifold_from_json(j, path);
  }
  auto [name, args] = detail::split_call(id);
  auto nums = [&](std::size_t lo) {
    std::vector<double> v;
    for (std::size_t i = lo; i < args.size(); ++i) v.push_back(detail::parse_number(args[i]));
    return v;
  };
  if (name == "euclidean") {
    require(args.size() == 1, "euclidean(d) takes one argument");
    return euclidean(static_cast<int>(detail::parse_number(args[0])));
  }
  if (name == "flat_torus") return flat_torus(nums(0));
  if (name == "round_sphere") {
    require(args.size() == 2, "round_sphere(d,r) takes two arguments");
    auto v = nums(0);
    return round_sphere(static_cast<int>(v[0]), v[1]);
  }
  if (name == "ellipsoid") {
    require(args.size() == 3, "ellipsoid(a,b,c) takes three arguments");
    auto v = nums(0);
    return ellipsoid(v[0], v[1], v[2]);
  }
  if (name == "product") {
    require(args.size() == 2, "product(id1,id2) takes two arguments");
    return product(make_manifold(args[0]), make_manifold(args[1]));
  }
  if (name == "conformal") {
    require(args.size() == 3, "conformal(id,eps,bump) takes three arguments");
    return conformal(make_manifold(args[0]), detail::parse_number(args[1]), Expr::parse(args[2]), args[2]);
  }
  if (name == "perturbed_sphere") {
    require(args.empty(), "perturbed_sphere takes no arguments");
    return perturbed_sphere();
  }
  throw Error(ErrorKind::validation, "unknown geometry id '" + id + "'");
}

}  // namespace cmc
