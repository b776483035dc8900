#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace cmc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kPi = std::numbers::pi;

/// Failure categories. Validation errors are caller mistakes (bad ids, bad
/// configuration, violated preconditions); numerical errors come from the
/// computation itself (degenerate metric, divergence, resolution).
enum class ErrorKind {
  validation,
  degenerate_metric,
  step_size,
  chart_transition,
  not_minimal,
  resolution,
  injectivity,
  degenerate_jacobi,
  resonance,
  divergence,
  sampling,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::degenerate_metric: return "degenerate_metric";
    case ErrorKind::step_size: return "step_size";
    case ErrorKind::chart_transition: return "chart_transition";
    case ErrorKind::not_minimal: return "not_minimal";
    case ErrorKind::resolution: return "resolution";
    case ErrorKind::injectivity: return "injectivity";
    case ErrorKind::degenerate_jacobi: return "degenerate_jacobi";
    case ErrorKind::resonance: return "resonance";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::sampling: return "sampling";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  bool is_validation() const noexcept { return kind_ == ErrorKind::validation; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(ErrorKind::validation, what);
}

// Thread cap: CMC_THREADS environment variable, overridable at runtime.
inline unsigned& thread_cap() {
  static unsigned cap = [] {
    if (const char* env = std::getenv("CMC_THREADS")) {
      int v = std::atoi(env);
      if (v > 0) return static_cast<unsigned>(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
  }();
  return cap;
}

/// Runs body(i) for i in [0, n). Work is split into contiguous chunks so the
/// result is independent of the thread count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  unsigned threads = std::min<std::size_t>(thread_cap(), n);
  if (threads <= 1 || n < 16) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Least-squares line through (log x, log y). Non-positive y are rejected.
inline LineFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "loglog_fit needs at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0 && y[i] > 0, "loglog_fit needs positive data");
    double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  LineFit f;
  f.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  f.intercept = (sy - f.slope * sx) / n;
  return f;
}

inline double sup_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

inline std::vector<double> linspace(double lo, double hi, int count) {
  std::vector<double> out(count);
  for (int i = 0; i < count; ++i) out[i] = count == 1 ? lo : lo + (hi - lo) * i / (count - 1);
  return out;
}

inline std::vector<double> logspace(double lo, double hi, int count) {
  std::vector<double> out(count);
  for (int i = 0; i < count; ++i)
    out[i] = count == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(i) / (count - 1));
  return out;
}

/// Warnings raised by numerical routines; collected for reports and echoed to stderr.
inline std::vector<std::string>& warning_log() {
  static std::vector<std::string> log;
  return log;
}
inline void log_warning(const std::string& msg) {
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  warning_log().push_back(msg);
  std::cerr << "warning: " << msg << "\n";
}

}  // namespace cmc
