// cmc_tube: batch front end for Fermi checks, tube geometry, spectra and CMC solves.
//
// Every JSON output carries a "manifest" object (config snapshot, version, hash);
// every CSV starts with "# manifest <hash>". Outputs contain no timestamps, so a
// rerun with the same config reproduces them byte for byte.
//
// Exit codes: 0 success, 2 validation error (bad ids, flags, preconditions),
// 3 numerical failure (written to <out>/error.json).

#include <CLI11.hpp>
#include <json.hpp>

#include <cmc/catalog.hpp>
#include <cmc/fermi.hpp>
#include <cmc/solver.hpp>
#include <cmc/spectral.hpp>
#include <cmc/tube.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cmc;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.3.0";
constexpr const char* kStateSchema = "cmc-tube-state/1";

struct RunConfig {
  std::string geometry = "round_sphere(3,1)";
  std::string submanifold = "great_circle";
  std::string out = "cmc_out";
  int K_nodes = 33;
  int Ns = 25;
  int threads = 0;
  unsigned seed = 12345;
  int q = 2;
  double alpha = 0.5;
  int i_max = 2;
  double newton_tol = 1e-9;
  int max_newton_steps = 15;
  std::string method = "newton";
  bool freeze_Phi = false;
  bool allow_outside_I = false;
  bool allow_nonminimal = false;

  // command arguments
  std::string command;
  double rho = 0.0;
  std::string rho_sweep, rho_range, rho_list, interval_range, state_file, report, mode = "model";
  int node = 0, depth = 2, samples = 400, restarts = 0, max_degree = -1;
  double power = 2.0;
  bool no_interval_check = false;
};

ojson config_snapshot(const RunConfig& c) {
  ojson j;
  j["command"] = c.command;
  j["geometry"] = c.geometry;
  j["submanifold"] = c.submanifold;
  j["grid"] = {{"K_nodes", c.K_nodes}, {"Ns", c.Ns}};
  j["seed"] = c.seed;
  j["solver"] = {{"q", c.q},
                 {"alpha", c.alpha},
                 {"i_max", c.i_max},
                 {"newton_tol", c.newton_tol},
                 {"max_newton_steps", c.max_newton_steps},
                 {"method", c.method},
                 {"freeze_Phi", c.freeze_Phi},
                 {"allow_outside_I", c.allow_outside_I}};
  ojson a;
  if (c.rho > 0) a["rho"] = c.rho;
  if (!c.rho_sweep.empty()) a["rho_sweep"] = c.rho_sweep;
  if (!c.rho_range.empty()) a["rho_range"] = c.rho_range;
  if (!c.rho_list.empty()) a["rho_list"] = c.rho_list;
  if (!c.interval_range.empty()) a["interval_range"] = c.interval_range;
  if (!c.state_file.empty()) a["state"] = c.state_file;
  a["mode"] = c.mode;
  a["node"] = c.node;
  a["depth"] = c.depth;
  a["samples"] = c.samples;
  a["restarts"] = c.restarts;
  a["max_degree"] = c.max_degree;
  a["power"] = c.power;
  a["interval_check"] = !c.no_interval_check;
  a["allow_nonminimal"] = c.allow_nonminimal;
  j["arguments"] = a;
  return j;
}

// FNV-1a, 64 bit
std::string hash_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

class Output {
 public:
  explicit Output(const RunConfig& c) : dir_(c.out) {
    config_ = config_snapshot(c);
    hash_ = hash_hex(config_.dump() + kVersion);
    fs::create_directories(dir_);
  }
  const std::string& hash() const { return hash_; }
  fs::path path(const std::string& name) const { return dir_ / name; }

  ojson manifest() const { return {{"hash", hash_}, {"version", kVersion}, {"config", config_}}; }

  void json(const std::string& name, ojson body) { write_json(path(name), std::move(body)); }
  void write_json(const fs::path& p, ojson body) {
    body["manifest"] = manifest();
    std::ofstream f(p);
    require(static_cast<bool>(f), "cannot write " + p.string());
    f << body.dump(2) << "\n";
    files_.push_back(p.filename().string());
  }
  void csv(const std::string& name, const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows) {
    std::ofstream f(path(name));
    require(static_cast<bool>(f), "cannot write " + path(name).string());
    f << "# manifest " << hash_ << "\n";
    for (std::size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
    f << "\n";
    char buf[32];
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", r[i]);
        f << (i ? "," : "") << buf;
      }
      f << "\n";
    }
    files_.push_back(name);
  }
  void finish() {
    std::sort(files_.begin(), files_.end());
    files_.erase(std::unique(files_.begin(), files_.end()), files_.end());
    ojson m = manifest();
    m["outputs"] = files_;
    std::ofstream f(path("run_manifest.json"));
    f << m.dump(2) << "\n";
  }

 private:
  fs::path dir_;
  ojson config_;
  std::string hash_;
  std::vector<std::string> files_;
};

std::vector<double> to_vector(const Vec& v) { return {v.data(), v.data() + v.size()}; }

ojson to_json(const Mat& m) {
  ojson a = ojson::array();
  for (int i = 0; i < m.rows(); ++i) a.push_back(to_vector(m.row(i).transpose()));
  return a;
}

ojson to_json(const LineFitReport& f) { return {{"slope", f.slope}, {"intercept", f.intercept}, {"points", f.points}}; }

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) out.push_back(detail::trim(part));
  return out;
}

std::pair<double, double> parse_range(const std::string& s, const std::string& flag) {
  auto p = split(s, ':');
  require(p.size() == 2, flag + " expects lo:hi");
  double lo = detail::parse_number(p[0]), hi = detail::parse_number(p[1]);
  require(0 < lo && lo < hi, flag + " needs 0 < lo < hi");
  return {lo, hi};
}

std::vector<double> parse_sweep(const std::string& s) {
  auto p = split(s, ':');
  require(p.size() == 3, "--rho-sweep expects lo:hi:steps");
  double lo = detail::parse_number(p[0]), hi = detail::parse_number(p[1]);
  int steps = static_cast<int>(detail::parse_number(p[2]));
  require(0 < lo && lo <= hi && steps >= 1 && steps <= 10000, "--rho-sweep needs 0 < lo <= hi and 1 <= steps <= 10000");
  return linspace(lo, hi, steps);
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& p : split(s, ',')) {
    double v = detail::parse_number(p);
    require(v > 0, "--rho-list entries must be positive");
    out.push_back(v);
  }
  return out;
}

std::vector<double> radii(const RunConfig& c) {
  require((c.rho > 0) != !c.rho_sweep.empty(), "give exactly one of --rho and --rho-sweep");
  return c.rho > 0 ? std::vector<double>{c.rho} : parse_sweep(c.rho_sweep);
}

SolverConfig solver_config(const RunConfig& c) {
  SolverConfig s;
  s.i_max = c.i_max;
  s.q = c.q;
  s.alpha = c.alpha;
  s.newton_tol = c.newton_tol;
  s.max_newton_steps = c.max_newton_steps;
  s.method = c.method;
  s.freeze_Phi = c.freeze_Phi;
  s.allow_outside_I = c.allow_outside_I;
  return s;
}

void validate(const RunConfig& c) {
  require(c.K_nodes >= 5 && c.K_nodes <= 257 && c.K_nodes % 2 == 1, "--K-nodes must be odd and in [5, 257]");
  require(c.Ns >= 5 && c.Ns <= 129, "--Ns must be in [5, 129]");
  require(c.q >= 2, "--q must be at least 2");
  require(c.alpha > 0 && c.alpha < 1, "--alpha must be in (0, 1)");
  require(c.i_max >= 0 && c.i_max <= 10, "--i-max must be in [0, 10]");
  require(c.newton_tol > 0, "--newton-tol must be positive");
  require(c.samples >= 8 && c.samples <= 20000, "--samples must be in [8, 20000]");
  require(c.mode == "model" || c.mode == "full", "--mode must be model or full");
  require(c.method == "newton" || c.method == "picard", "--method must be newton or picard");
}

struct Setup {
  std::shared_ptr<const Manifold> M;
  std::shared_ptr<const Submanifold> K;
  std::unique_ptr<SNKGrid> S;
};

Setup setup(const RunConfig& c, bool grid = true) {
  Setup s;
  s.M = std::make_shared<const Manifold>(make_manifold(c.geometry));
  SubmanifoldOptions o;
  o.K_nodes = c.K_nodes;
  o.require_minimal = !c.allow_nonminimal;
  s.K = std::make_shared<const Submanifold>(build_submanifold(s.M, c.submanifold, o));
  if (grid) s.S = std::make_unique<SNKGrid>(s.K, c.Ns);
  return s;
}

// State files

ojson grid_json(const RunConfig& c, const SNKGrid& S) {
  return {{"geometry", c.geometry}, {"submanifold", c.submanifold}, {"K_nodes", c.K_nodes}, {"Ns", c.Ns},
          {"n", S.n},           {"k", S.k},                     {"N", S.N},             {"NK", S.NK}};
}

ojson state_json(const RunConfig& c, const SNKGrid& S, const TubeState& st) {
  return {{"schema", kStateSchema},  {"rho", st.rho},          {"provenance", st.provenance},
          {"iterate", st.iterate},   {"grid", grid_json(c, S)}, {"w", to_vector(st.w)},
          {"Phi", to_vector(st.Phi)}};
}

TubeState load_state(const RunConfig& c, const SNKGrid& S, const std::string& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), "cannot read state file " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw Error(ErrorKind::validation, "state file " + path + ": " + e.what());
  }
  require(j.value("schema", "") == kStateSchema, "state file " + path + ": unknown schema");
  const auto& g = j.at("grid");
  require(g.at("geometry") == c.geometry && g.at("submanifold") == c.submanifold && g.at("K_nodes") == c.K_nodes &&
              g.at("Ns") == c.Ns,
          "state file " + path + " was written for a different geometry or grid");
  TubeState st = zero_state(S, j.at("rho").get<double>());
  auto w = j.at("w").get<std::vector<double>>();
  auto Phi = j.at("Phi").get<std::vector<double>>();
  require(static_cast<int>(w.size()) == S.N && static_cast<int>(Phi.size()) == S.NK * S.n,
          "state file " + path + ": size mismatch");
  st.w = Eigen::Map<Vec>(w.data(), w.size());
  st.Phi = Eigen::Map<Vec>(Phi.data(), Phi.size());
  st.provenance = j.value("provenance", "file");
  st.iterate = j.value("iterate", 0);
  check_state(S, st);
  return st;
}

std::string state_name(double rho) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "state_rho_%.6g.json", rho);
  return buf;
}

// Resonances and intervals. Model mode: exact ρ-dependence, resonances of 𝕃_ρ's
// leading part. Full mode: the linearization about the improve iterate, one
// assembly per sample (much slower; about 60 samples per decade suffice).

struct IntervalReport {
  SpectralReport sweep;
  IntervalSet I;
  double resolved_below = 0.0;  // radii below this have unresolved K modes
  bool gaps_sampled = false;
};

IntervalReport build_interval_report(const RunConfig& c, const SNKGrid& S, double lo, double hi) {
  IntervalReport r;
  const std::vector<double> rhos = logspace(lo, hi, c.samples);
  ModelSpectrum M = model_spectrum(S, 0);
  r.resolved_below = std::sqrt((S.n - 1.0) / M.mu[0].maxCoeff());
  if (c.mode == "model") {
    r.sweep = eigen_sweep(model_family(S), rhos);
  } else {
    SolverConfig cfg = solver_config(c);
    r.sweep = eigen_sweep(full_family(S, [&](double x) { return improve(S, x, c.i_max, cfg).iterates.back(); }), rhos);
  }
  std::vector<double> res;
  for (const auto& x : r.sweep.resonances) res.push_back(x.rho);
  r.I = build_intervals(res, S.k, c.q, lo, hi);
  if (c.mode == "model") {
    sample_gaps(r.I, [&](double rho) { return M.eigenvalues(rho); });
    r.gaps_sampled = true;
  }
  return r;
}

ojson intervals_json(const IntervalSet& I) {
  ojson a = ojson::array();
  for (const auto& J : I.intervals)
    a.push_back({{"lo", J.lo}, {"hi", J.hi}, {"rho_i", J.rho_i}, {"min_abs_sigma", J.min_abs_sigma},
                 {"gap_ratio", J.gap_ratio}});
  return a;
}

std::pair<double, double> solve_interval_range(const RunConfig& c, const std::vector<double>& rhos) {
  if (!c.interval_range.empty()) return parse_range(c.interval_range, "--interval-range");
  const double lo = 0.5 * *std::min_element(rhos.begin(), rhos.end());
  const double hi = std::max(1.0, 1.5 * *std::max_element(rhos.begin(), rhos.end()));
  return {lo, hi};
}

// Commands

void cmd_verify_fermi(const RunConfig& c, Output& out) {
  Setup s = setup(c, false);
  FermiChart F(s.K, c.node);
  FitOptions opt;
  opt.seed = c.seed;
  ExpansionFit fit = fit_expansion(F, opt);
  CovariantReport cov = verify_covariant_expansions(F, opt);
  ojson blocks = ojson::array();
  for (const auto& b : fit.blocks) {
    ojson entries = ojson::array();
    for (const auto& e : b.entries)
      entries.push_back({{"alpha", e.alpha},
                         {"beta", e.beta},
                         {"linear_fit", to_vector(e.linear_fit)},
                         {"linear_predicted", to_vector(e.linear_predicted)},
                         {"quadratic_fit", to_json(e.quadratic_fit)},
                         {"quadratic_predicted", to_json(e.quadratic_predicted)},
                         {"quadratic_is_predicted", e.quadratic_is_predicted}});
    blocks.push_back({{"block", b.name},
                      {"residual_slope", b.residual.exact ? ojson() : ojson(b.residual.slope)},
                      {"residual_exact", b.residual.exact},
                      {"radii", b.residual.radii},
                      {"residuals", b.residual.residuals},
                      {"max_abs_error", b.max_abs_error},
                      {"relative_error", b.relative_error},
                      {"entries", entries}});
  }
  ojson checks = ojson::array();
  for (const auto& ch : cov.checks)
    checks.push_back({{"name", ch.name},
                      {"expected_order", ch.expected_order},
                      {"slope", ch.residual.exact ? ojson() : ojson(ch.residual.slope)},
                      {"exact", ch.residual.exact},
                      {"pass", ch.pass}});
  ojson body = {{"node", c.node},
                {"identity_residual", fit.identity_residual},
                {"max_relative_error", fit.max_relative_error},
                {"ai_raw_slope", fit.ai_raw.exact ? ojson() : ojson(fit.ai_raw.slope)},
                {"blocks", blocks},
                {"covariant", checks},
                {"pass", fit.pass() && cov.pass()}};
  if (c.report.empty())
    out.json("verify_fermi.json", body);
  else
    out.write_json(c.report, body);
}

void cmd_tube_mc(const RunConfig& c, Output& out) {
  Setup s = setup(c);
  const SNKGrid& S = *s.S;
  std::vector<TubeState> states;
  if (!c.state_file.empty()) {
    require(c.rho == 0 && c.rho_sweep.empty(), "--state fixes rho; do not combine with --rho or --rho-sweep");
    states.push_back(load_state(c, S, c.state_file));
  } else {
    for (double r : radii(c)) states.push_back(zero_state(S, r));
  }
  std::vector<std::vector<double>> rows(states.size());
  parallel_for(states.size(), [&](std::size_t i) {
    const TubeState& st = states[i];
    TubeGeometry T = tube_geometry(S, st, true);  // the Jacobian gives A_ρ
    Vec r = mc_residual(S, st, T);
    double kmin = 1e300, kmax = -1e300;
    for (const auto& p : T.principal) {
      kmin = std::min(kmin, p.minCoeff());
      kmax = std::max(kmax, p.maxCoeff());
    }
    rows[i] = {st.rho,
               T.mean_curvature.minCoeff(),
               T.mean_curvature.maxCoeff(),
               sup_norm(r),
               kmin,
               kmax,
               T.A_rho.minCoeff(),
               T.A_rho.maxCoeff(),
               T.normalization_residual,
               T.orthogonality_residual};
  });
  std::vector<std::string> header{"rho",   "H_min",     "H_max",     "residual_sup",          "kappa_min",
                                  "kappa_max", "A_rho_min", "A_rho_max", "normalization_residual", "orthogonality_residual"};
  out.csv("tube_mc.csv", header, rows);
  ojson table = ojson::array();
  for (const auto& r : rows) {
    ojson e;
    for (std::size_t i = 0; i < header.size(); ++i) e[header[i]] = r[i];
    table.push_back(e);
  }
  ojson body = {{"rows", table}};
  if (c.state_file.empty() && states.size() >= 3) {
    std::vector<double> rh;
    for (const auto& st : states) rh.push_back(st.rho);
    const bool minimal = s.K->minimality_residual <= 1e-6;
    MCExpansionReport rep = verify_mc_expansion(S, rh, minimal);
    auto fit = [](const LineFit& f, bool exact) {
      return exact ? ojson{{"exact", true}} : ojson{{"slope", f.slope}, {"intercept", f.intercept}};
    };
    body["expansion"] = {{"minimal", minimal},
                         {"residual", rep.residual},
                         {"raw", fit(rep.raw_fit, false)},
                         {"subtracted", rep.subtracted},
                         {"subtracted_fit", fit(rep.subtracted_fit, rep.subtracted_exact)}};
    if (minimal) {
      body["expansion"]["w_response_error"] = rep.w_error;
      body["expansion"]["w_response_fit"] = fit(rep.w_fit, rep.w_exact);
      body["expansion"]["Phi_response_error"] = rep.Phi_error;
      body["expansion"]["Phi_response_fit"] = fit(rep.Phi_fit, rep.Phi_exact);
    }
  }
  out.json("tube_mc.json", body);
}

void cmd_densities(const RunConfig& c, Output& out) {
  Setup s = setup(c);
  const SNKGrid& S = *s.S;
  std::vector<TubeState> states;
  if (!c.state_file.empty()) {
    require(c.rho == 0 && c.rho_sweep.empty(), "--state fixes rho; do not combine with --rho or --rho-sweep");
    states.push_back(load_state(c, S, c.state_file));
  } else {
    for (double r : radii(c)) states.push_back(zero_state(S, r));
  }
  std::vector<Densities> D(states.size());
  parallel_for(states.size(), [&](std::size_t i) { D[i] = densities(S, states[i], tube_geometry(S, states[i]), c.power); });
  std::vector<std::vector<double>> rows;
  ojson table = ojson::array();
  std::vector<double> rh, area_defect, curv_defect;
  for (const auto& d : D) {
    const double ea = std::abs(d.area_density / d.area_limit - 1.0);
    const double ec = std::abs(d.curvature_density / d.curvature_limit - 1.0);
    rows.push_back({d.rho, d.area, d.area_density, d.area_limit, ea, d.curvature, d.curvature_density,
                    d.curvature_limit, ec});
    table.push_back({{"rho", d.rho},
                     {"area", d.area},
                     {"area_density", d.area_density},
                     {"area_limit", d.area_limit},
                     {"area_relative_defect", ea},
                     {"curvature", d.curvature},
                     {"curvature_density", d.curvature_density},
                     {"curvature_limit", d.curvature_limit},
                     {"curvature_relative_defect", ec}});
    rh.push_back(d.rho);
    area_defect.push_back(ea);
    curv_defect.push_back(ec);
  }
  out.csv("densities.csv",
          {"rho", "area", "area_density", "area_limit", "area_relative_defect", "curvature", "curvature_density",
           "curvature_limit", "curvature_relative_defect"},
          rows);
  ojson body = {{"power", c.power}, {"rows", table}};
  auto fit = [&](const std::vector<double>& y) -> ojson {
    if (*std::max_element(y.begin(), y.end()) < 1e-12) return {{"exact", true}};
    if (*std::min_element(y.begin(), y.end()) <= 0) return nullptr;
    LineFit f = loglog_fit(rh, y);
    return {{"slope", f.slope}, {"intercept", f.intercept}};
  };
  if (rh.size() >= 3) body["fits"] = {{"area", fit(area_defect)}, {"curvature", fit(curv_defect)}};
  out.json("densities.json", body);
}

ojson index_json(const IndexCount& ix) {
  return {{"perp", ix.perp}, {"S", ix.S}, {"total", ix.total}, {"inertia", ix.inertia}};
}

void cmd_spectrum(const RunConfig& c, Output& out) {
  require(c.rho > 0, "spectrum needs --rho");
  Setup s = setup(c);
  const SNKGrid& S = *s.S;
  LinearizedOperator op;
  if (c.mode == "model") {
    op = assemble_model(S, c.rho, c.max_degree);
  } else {
    TubeState bg = improve(S, c.rho, c.i_max, solver_config(c)).iterates.back();
    op = assemble_full(S, bg);
  }
  EigenPairs ep = eigenpairs(op, false);
  IndexCount ix = morse_index(op);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < ep.sigma.size(); ++i)
    rows.push_back({static_cast<double>(i), ep.sigma[i], static_cast<double>(op.blocks[ep.block[i]].degree)});
  out.csv("spectrum.csv", {"i", "sigma", "degree"}, rows);
  ojson body = {{"rho", c.rho},
                {"mode", c.mode},
                {"count", ep.sigma.size()},
                {"index", index_json(ix)},
                {"max_residual", ep.max_residual},
                {"symmetry_defect", op.symmetry_defect},
                {"smallest_abs_sigma", ep.sigma.cwiseAbs().minCoeff()}};
  out.json("spectrum.json", body);
}

void cmd_resonances(const RunConfig& c, Output& out) {
  require(!c.rho_range.empty(), "resonances needs --rho-range lo:hi");
  auto [lo, hi] = parse_range(c.rho_range, "--rho-range");
  Setup s = setup(c);
  const SNKGrid& S = *s.S;
  const std::vector<double> rhos = logspace(lo, hi, c.samples);
  IntervalReport ir = build_interval_report(c, S, lo, hi);
  const SpectralReport& rep = ir.sweep;
  const IntervalSet& I = ir.I;
  std::vector<std::string> header{"rho", "index_perp", "index_S"};
  for (std::size_t b = 0; b < rep.branch_block.size(); ++b) header.push_back("branch_" + std::to_string(b));
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < rep.rho.size(); ++i) {
    std::vector<double> r{rep.rho[i], static_cast<double>(rep.index[i].perp), static_cast<double>(rep.index[i].S)};
    for (int b = 0; b < rep.branches[i].size(); ++b) r.push_back(rep.branches[i][b]);
    rows.push_back(std::move(r));
  }
  out.csv("resonances.csv", header, rows);

  ojson res = ojson::array();
  for (const auto& r : rep.resonances) res.push_back({{"rho", r.rho}, {"multiplicity", r.multiplicity}, {"block", r.block}});
  ojson gap = ojson::array();
  for (double r : logspace(lo, hi, 12)) {
    double m = I.measure_below(r);
    gap.push_back({{"rho", r}, {"measure", m}, {"defect", r - lo - m}});
  }
  ojson body = {{"mode", c.mode},
                {"rho_range", {lo, hi}},
                {"samples", c.samples},
                {"q", c.q},
                {"resonances", res},
                {"intervals", intervals_json(I)},
                {"gap_measure", gap},
                {"flagged_samples", rep.flagged_samples}};
  body["resolved_below"] = ir.resolved_below;
  body["gaps_sampled"] = ir.gaps_sampled;
  if (c.mode == "model") {
    double C = 0.0;
    LineFitReport w = weyl_fit(model_spectrum(S, 0), rhos, &C);
    body["weyl"] = to_json(w);
    body["weyl"]["constant"] = C;
    body["weyl"]["expected_slope"] = -S.k;
  }
  out.json("resonances.json", body);
}

void cmd_improve(const RunConfig& c, Output& out) {
  require(c.rho > 0, "improve needs --rho");
  Setup s = setup(c);
  const SNKGrid& S = *s.S;
  SolverConfig cfg = solver_config(c);
  IterateSequence seq = improve(S, c.rho, c.depth, cfg);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < seq.iterates.size(); ++i)
    rows.push_back({static_cast<double>(i), seq.residual_norms[i], i ? seq.w_diffs[i - 1] : 0.0,
                    i ? seq.Phi_diffs[i - 1] : 0.0, sup_norm(seq.iterates[i].w), sup_norm(seq.iterates[i].Phi)});
  out.csv("improve.csv", {"iterate", "residual_sup", "w_diff", "Phi_diff", "w_sup", "Phi_sup"}, rows);
  out.json(state_name(c.rho), state_json(c, S, seq.iterates.back()));
  out.json("improve.json", {{"rho", c.rho},
                            {"depth", c.depth},
                            {"budget_D", cfg.budget(S.k)},
                            {"faithful_depth", cfg.faithful_depth(S.k)},
                            {"residual_norms", seq.residual_norms},
                            {"w_diffs", seq.w_diffs},
                            {"Phi_diffs", seq.Phi_diffs},
                            {"state", state_name(c.rho)}});
}

void cmd_solve(const RunConfig& c, Output& out) {
  Setup s = setup(c);
  const SNKGrid& S = *s.S;
  SolverConfig cfg = solver_config(c);
  const std::vector<double> rhos = radii(c);
  std::optional<IntervalReport> ir;
  if (!c.no_interval_check) {
    auto [lo, hi] = solve_interval_range(c, rhos);
    ir = build_interval_report(c, S, lo, hi);
  }
  std::vector<std::vector<double>> rows;
  ojson solves = ojson::array();
  for (double rho : rhos) {
    SolveResult r = solve_cmc(S, rho, cfg, ir ? &ir->I : nullptr);
    rows.push_back({rho, r.in_I ? 1.0 : 0.0, static_cast<double>(r.steps), r.residual_history.back(), r.distance,
                    r.quadratic_ratio, sup_norm(r.state.w), sup_norm(r.state.Phi)});
    ojson e = {{"rho", rho},
               {"in_I", r.in_I},
               {"steps", r.steps},
               {"residual_history", r.residual_history},
               {"distance_from_iterate", r.distance},
               {"quadratic_ratio", r.quadratic_ratio},
               {"min_rcond", r.min_rcond},
               {"w_sup", sup_norm(r.state.w)},
               {"Phi_sup", sup_norm(r.state.Phi)},
               {"state", state_name(rho)}};
    if (c.restarts > 0) {
      UniquenessReport u = uniqueness_check(S, r, cfg, c.restarts, -1.0, c.seed);
      e["uniqueness"] = {{"restarts", u.restarts}, {"perturbation", u.perturbation}, {"max_deviation", u.max_deviation},
                         {"steps", u.steps}};
    }
    solves.push_back(e);
    out.json(state_name(rho), state_json(c, S, r.state));
  }
  out.csv("solve.csv", {"rho", "in_I", "steps", "residual_sup", "distance", "quadratic_ratio", "w_sup", "Phi_sup"}, rows);
  ojson body = {{"method", c.method}, {"solves", solves}};
  if (ir) {
    body["interval_mode"] = c.mode;
    body["interval_range"] = {ir->I.lo, ir->I.hi};
    body["intervals"] = intervals_json(ir->I);
    body["resolved_below"] = ir->resolved_below;
  }
  out.json("solve.json", body);
}

void cmd_scaling(const RunConfig& c, Output& out) {
  require(!c.rho_list.empty(), "scaling needs --rho-list");
  const std::vector<double> rhos = parse_list(c.rho_list);
  require(rhos.size() >= 4, "scaling needs at least 4 radii");
  Setup s = setup(c);
  const SNKGrid& S = *s.S;
  SolverConfig cfg = solver_config(c);
  std::optional<IntervalReport> ir;
  if (!c.no_interval_check) {
    auto [lo, hi] = solve_interval_range(c, rhos);
    ir = build_interval_report(c, S, lo, hi);
  }
  ScalingReport rep = scaling_study(S, rhos, cfg, ir ? &ir->I : nullptr);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < rep.rho.size(); ++i)
    rows.push_back({rep.rho[i], rep.w_norm[i], rep.Phi_norm[i], rep.w_beyond_iterate[i]});
  out.csv("scaling.csv", {"rho", "w_sup", "Phi_sup", "w_beyond_iterate_sup"}, rows);
  auto fit = [](const LineFitReport& f, bool exact) { return exact ? ojson{{"exact", true}} : to_json(f); };
  out.json("scaling.json", {{"rho", rep.rho},
                            {"w_sup", rep.w_norm},
                            {"Phi_sup", rep.Phi_norm},
                            {"w_beyond_iterate_sup", rep.w_beyond_iterate},
                            {"w_fit", fit(rep.w_fit, rep.w_exact)},
                            {"Phi_fit", fit(rep.Phi_fit, rep.Phi_exact)},
                            {"w_beyond_iterate_fit", to_json(rep.w_beyond_fit)}});
}

void write_error(const RunConfig& c, const Error& e) {
  try {
    Output out(c);
    out.json("error.json", {{"command", c.command}, {"error", {{"kind", to_string(e.kind())}, {"message", e.what()}}},
                            {"warnings", warning_log()}});
  } catch (...) {
  }
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig c;
  CLI::App app{"Geodesic tubes and constant mean curvature hypersurfaces around minimal submanifolds"};
  app.set_config("--config", "", "TOML/INI config file; flags given on the command line win");
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.add_option("--geometry", c.geometry, "Ambient manifold id, e.g. round_sphere(3,1)")->capture_default_str();
  app.add_option("--submanifold", c.submanifold, "Submanifold id, e.g. great_circle")->capture_default_str();
  app.add_option("--out", c.out, "Output directory")->capture_default_str();
  app.add_option("--threads", c.threads, "Worker threads (default: CMC_THREADS or hardware)");
  app.add_option("--K-nodes", c.K_nodes, "Nodes per K axis (odd)")->capture_default_str();
  app.add_option("--Ns", c.Ns, "Fiber resolution")->capture_default_str();
  app.add_option("--seed", c.seed, "Seed for random directions and restarts")->capture_default_str();
  app.add_option("--q", c.q, "Interval exponent q >= 2")->capture_default_str();
  app.add_option("--alpha", c.alpha, "Hölder exponent entering the depth budget")->capture_default_str();
  app.add_option("--i-max", c.i_max, "Improve depth before Newton")->capture_default_str();
  app.add_option("--newton-tol", c.newton_tol, "Sup-residual tolerance")->capture_default_str();
  app.add_option("--max-newton-steps", c.max_newton_steps)->capture_default_str();
  app.add_option("--method", c.method, "newton or picard")->capture_default_str();
  app.add_flag("--freeze-Phi", c.freeze_Phi, "Quotient out the sections (degenerate Jacobi operator)");
  app.add_flag("--allow-outside-I", c.allow_outside_I, "Solve at radii outside the admissible set (warns)");
  app.add_flag("--allow-nonminimal", c.allow_nonminimal, "Accept a non-minimal K (diagnostics only)");

  auto* fermi = app.add_subcommand("verify-fermi", "Fit the Fermi metric expansion at a base point");
  fermi->add_option("--node", c.node, "K node for the base point");
  fermi->add_option("--report", c.report, "Report path (default <out>/verify_fermi.json)");

  auto add_radii = [&](CLI::App* sub) {
    sub->add_option("--rho", c.rho, "Tube radius");
    sub->add_option("--rho-sweep", c.rho_sweep, "lo:hi:steps, evenly spaced");
  };
  auto* tube = app.add_subcommand("tube-mc", "Mean curvature of the bare tube or of a state file");
  add_radii(tube);
  tube->add_option("--state", c.state_file, "State JSON to evaluate instead of the bare tube");
  auto* dens = app.add_subcommand("densities", "Area and curvature densities");
  add_radii(dens);
  dens->add_option("--state", c.state_file, "State JSON to evaluate instead of the bare tube");
  dens->add_option("--power", c.power, "Exponent q of |A|^q in the curvature density")->capture_default_str();

  auto* spec = app.add_subcommand("spectrum", "Eigenvalues of the linearized operator at one radius");
  spec->add_option("--rho", c.rho, "Tube radius")->required();
  spec->add_option("--mode", c.mode, "model or full")->capture_default_str();
  spec->add_option("--max-degree", c.max_degree, "Highest fiber degree in model mode (-1: all)");

  auto* res = app.add_subcommand("resonances", "Resonance sweep, admissible intervals and Weyl fit");
  res->add_option("--rho-range", c.rho_range, "lo:hi")->required();
  res->add_option("--samples", c.samples, "Log-spaced sweep samples")->capture_default_str();
  res->add_option("--mode", c.mode, "model or full")->capture_default_str();

  auto* imp = app.add_subcommand("improve", "Iterative improvement of the tube");
  imp->add_option("--rho", c.rho, "Tube radius")->required();
  imp->add_option("--i", c.depth, "Depth")->capture_default_str();

  auto* sol = app.add_subcommand("solve", "Solve the CMC equation at radii in the admissible set");
  add_radii(sol);
  sol->add_option("--interval-range", c.interval_range, "lo:hi of the resonance sweep (default covers the radii)");
  sol->add_option("--samples", c.samples, "Resonance sweep samples")->capture_default_str();
  sol->add_option("--mode", c.mode, "Operator for the resonance sweep: model or full")->capture_default_str();
  sol->add_option("--restarts", c.restarts, "Random restarts for the uniqueness check");
  sol->add_flag("--no-interval-check", c.no_interval_check, "Skip the admissible-set check");

  auto* sca = app.add_subcommand("scaling", "Scaling of the solved corrections in rho");
  sca->add_option("--rho-list", c.rho_list, "Comma-separated radii (at least 4)")->required();
  sca->add_option("--interval-range", c.interval_range, "lo:hi of the resonance sweep");
  sca->add_option("--samples", c.samples, "Resonance sweep samples")->capture_default_str();
  sca->add_option("--mode", c.mode, "Operator for the resonance sweep: model or full")->capture_default_str();
  sca->add_flag("--no-interval-check", c.no_interval_check, "Skip the admissible-set check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  c.command = app.get_subcommands().front()->get_name();

  const auto t0 = std::chrono::steady_clock::now();
  try {
    validate(c);
    if (c.threads > 0) thread_cap() = static_cast<unsigned>(c.threads);
    Output out(c);
    if (c.command == "verify-fermi") cmd_verify_fermi(c, out);
    else if (c.command == "tube-mc") cmd_tube_mc(c, out);
    else if (c.command == "densities") cmd_densities(c, out);
    else if (c.command == "spectrum") cmd_spectrum(c, out);
    else if (c.command == "resonances") cmd_resonances(c, out);
    else if (c.command == "improve") cmd_improve(c, out);
    else if (c.command == "solve") cmd_solve(c, out);
    else if (c.command == "scaling") cmd_scaling(c, out);
    out.finish();
    std::cerr << c.command << ": done in " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
              << " s, outputs in " << c.out << " (manifest " << out.hash() << ")\n";
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.is_validation()) return 2;
    write_error(c, e);
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
