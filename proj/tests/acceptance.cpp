// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Reference values are computed here from closed forms, independently of the library.

#include <cmc/catalog.hpp>
#include <cmc/fermi.hpp>
#include <cmc/solver.hpp>
#include <cmc/spectral.hpp>
#include <cmc/tube.hpp>

#include <chrono>
#include <cstdio>
#include <sstream>

using namespace cmc;

namespace {

const char* kT3 = "flat_torus(6.283185307179586,6.283185307179586,6.283185307179586)";
const char* kT4 = "flat_torus(6.283185307179586,6.283185307179586,6.283185307179586,6.283185307179586)";

std::shared_ptr<const Submanifold> make_K(const std::string& geometry, const std::string& sub, int nodes,
                                          bool minimal = true) {
  auto M = std::make_shared<const Manifold>(make_manifold(geometry));
  SubmanifoldOptions o;
  o.K_nodes = nodes;
  o.require_minimal = minimal;
  return std::make_shared<const Submanifold>(build_submanifold(M, sub, o));
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [fails: " << what << "]";
    }
  }
};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

int failures = 0;

void criterion(int id, const std::string& name, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << " [error: " << e.what() << "]";
  }
  const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  failures += !o.pass;
  std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << name << ":" << o.detail.str() << " (" << fmt(t)
            << " s)" << std::endl;
}

// Perturbed great circle: refined full-mode crossings near ρ = 1/j, shared by criteria 7 and 8.
struct Crossing {
  int j = 0;
  double rho = 0.0, ratio = 0.0;
  BranchDerivative derivative;
};

const SNKGrid& perturbed_grid() {
  static SNKGrid S(make_K("perturbed_sphere", "great_circle", 33), 9);
  return S;
}

const std::vector<Crossing>& perturbed_crossings() {
  static std::vector<Crossing> out = [] {
    const SNKGrid& S = perturbed_grid();
    H1Norm norm(S);
    SpectralFamily fam = full_family(S, [&](double r) { return improve(S, r, 2).iterates.back(); });
    std::vector<Crossing> cs;
    for (int j = 5; j <= 10; ++j) {
      SpectralSample s = fam(1.0 / j);
      int pos = -1;
      double best = 1e300;
      for (int i = 0; i < s.sigma.size(); ++i)
        if (std::abs(s.sigma[i]) < 5) {
          double r = localization_ratio(S, norm, *s.synthesis * s.vectors[i], s.rho);
          if (r < best) best = r, pos = i;
        }
      require(pos >= 0, "no small eigenvalue near 1/" + std::to_string(j));
      auto [c, ic] = refine_crossing(fam, s, pos);
      Crossing x;
      x.j = j;
      x.rho = c.rho;
      x.ratio = localization_check(S, norm, c, ic);
      x.derivative = eigenvalue_derivative(fam, c, ic);
      cs.push_back(x);
    }
    return cs;
  }();
  return out;
}

}  // namespace

int main() {
  criterion(1, "Fermi expansion on the S3 great circle", [](Outcome& o) {
    auto K = make_K("round_sphere(3,1)", "great_circle", 65);
    double worst_oracle = 0.0, worst_slope = 1e9;
    for (int node : {0, 21}) {
      FermiChart F(K, node);
      ExpansionFit fit = fit_expansion(F);
      // unit sphere: g_ij = δ_ij − ⅓(|x|²δ_ij − x_i x_j) in the normal block
      for (const auto& e : fit.block("ij").entries) {
        Mat Q(2, 2);
        for (int k = 0; k < 2; ++k)
          for (int l = 0; l < 2; ++l)
            Q(k, l) = -((k == l) * (e.alpha == e.beta) -
                        0.5 * ((e.alpha == k) * (e.beta == l) + (e.alpha == l) * (e.beta == k))) /
                      3.0;
        worst_oracle = std::max(worst_oracle, (e.quadratic_fit - Q).cwiseAbs().maxCoeff() / (1.0 / 3.0));
      }
      o.check(fit.max_relative_error <= 1e-3, "fit vs curvature prediction " + fmt(fit.max_relative_error));
      for (const auto& b : fit.blocks) {
        if (!b.residual.exact) worst_slope = std::min(worst_slope, b.residual.slope);
        o.check(b.residual.meets(3, 0.1), "block " + b.name + " slope " + fmt(b.residual.slope));
      }
    }
    o.detail << " max rel. error vs closed-form curvature " << fmt(worst_oracle) << ", min residual slope "
             << fmt(worst_slope) << " (g_ai identically 0)";
    o.check(worst_oracle <= 1e-3, "closed-form coefficients");
  });

  criterion(2, "exact cylinder in the flat torus", [](Outcome& o) {
    SNKGrid S(make_K(kT3, "coordinate_circle(0)", 17), 17);
    double eH = 0.0, ek = 0.0;
    for (double rho : {0.05, 0.1, 0.2, 0.3}) {
      TubeGeometry T = tube_geometry(S, zero_state(S, rho));
      // (n−1)/(mρ) with n = 2, m = 2
      eH = std::max(eH, rho * (T.mean_curvature.array() - 1.0 / (2 * rho)).abs().maxCoeff());
      for (const auto& k : T.principal) ek = std::max(ek, std::max(std::abs(k[0]), std::abs(k[1] - 1.0 / rho)));
    }
    o.detail << " max rho|H - 1/(2rho)| " << fmt(eH) << ", principal curvature error " << fmt(ek);
    o.check(eH < 1e-10, "H");
    o.check(ek < 1e-10, "principal curvatures");
  });

  criterion(3, "S3 great-circle tube vs cot(2rho)", [](Outcome& o) {
    SNKGrid S(make_K("round_sphere(3,1)", "great_circle", 33), 33);
    double worst = 0.0;
    for (double rho : linspace(0.05, 0.5, 10)) {
      TubeGeometry T = tube_geometry(S, zero_state(S, rho));
      const double H = 1.0 / std::tan(2 * rho);
      worst = std::max(worst, (T.mean_curvature.array() - H).abs().maxCoeff() / H);
    }
    o.detail << " max relative error " << fmt(worst) << " over 10 radii in [0.05, 0.5]";
    o.check(worst < 1e-7, "cot(2rho)");
  });

  criterion(4, "mean-curvature expansion order", [](Outcome& o) {
    for (const char* geom : {"round_sphere(3,1)", "perturbed_sphere"}) {
      SNKGrid S(make_K(geom, "great_circle", 33), 17);
      auto rep = verify_mc_expansion(S, {0.0125, 0.025, 0.05, 0.1}, false);
      o.detail << " " << geom << ": raw slope " << fmt(rep.raw_fit.slope) << ", subtracted "
               << (rep.subtracted_exact ? std::string("exact") : fmt(rep.subtracted_fit.slope)) << ";";
      o.check(std::abs(rep.raw_fit.slope - 2.0) <= 0.1, std::string(geom) + " raw slope");
      o.check(rep.subtracted_exact || rep.subtracted_fit.slope >= 2.9, std::string(geom) + " subtracted slope");
      if (std::string(geom) == "round_sphere(3,1)") {
        // 2ρ cot 2ρ − 1 = −(4/3)ρ² + O(ρ⁴)
        const double c = rep.residual[0] / (rep.rho[0] * rep.rho[0]);
        o.check(std::abs(c - 4.0 / 3.0) < 1e-2, "S3 rho^2 coefficient " + fmt(c));
      }
    }
    SNKGrid N(make_K("round_sphere(3,1)", "small_circle(0.3)", 33, false), 17);
    auto rep = verify_mc_expansion(N, {0.002, 0.004, 0.008}, false);
    o.detail << " non-minimal small circle: slope " << fmt(rep.raw_fit.slope);
    o.check(std::abs(rep.raw_fit.slope - 1.0) <= 0.1, "non-minimal slope");
  });

  criterion(5, "flat-torus spectral oracle", [](Outcome& o) {
    SNKGrid S(make_K(kT3, "coordinate_circle(0)", 33), 9);
    const double rho = 0.35;
    // σ = j² + (l² − 1)/ρ² for l ≠ 1 (two modes per l ≥ 1), σ = j² on the l = 1 block
    std::vector<double> cf;
    int neg_perp = 0;
    for (int j = -16; j <= 16; ++j)
      for (int l = 0; l <= 4; ++l)
        for (int c = 0; c < (l == 0 ? 1 : 2); ++c) {
          double s = l == 1 ? j * j : j * j + (l * l - 1.0) / (rho * rho);
          cf.push_back(s);
          neg_perp += l != 1 && s < 0;
        }
    std::sort(cf.begin(), cf.end());
    EigenPairs ep = eigenpairs(assemble_model(S, rho), false);
    require(static_cast<std::size_t>(ep.sigma.size()) == cf.size(), "eigenvalue count");
    double ev = 0.0;
    for (std::size_t i = 0; i < cf.size(); ++i)
      ev = std::max(ev, std::abs(ep.sigma[i] - cf[i]) / std::max(1.0, std::abs(cf[i])));
    const int index = morse_index(assemble_model(S, rho)).perp;

    SNKGrid R(make_K(kT3, "coordinate_circle(0)", 65), 5);
    SpectralReport rep = eigen_sweep(model_family(R), logspace(0.05, 0.5, 400));
    double er = 0.0;
    std::vector<int> js;
    for (const auto& r : rep.resonances) {
      const int j = static_cast<int>(std::lround(1.0 / r.rho));
      js.push_back(j);
      er = std::max(er, std::abs(r.rho - 1.0 / j));
    }
    std::vector<int> expected;
    for (int j = 20; j >= 2; --j) expected.push_back(j);
    o.detail << " eigenvalue error " << fmt(ev) << ", " << rep.resonances.size() << " resonances, max |rho_i - 1/j| "
             << fmt(er) << ", index(0.35) on S-perp " << index << " (closed form " << neg_perp << ")";
    o.check(ev <= 1e-8, "eigenvalues");
    o.check(js == expected, "resonances at 1/j, j = 2..20");
    o.check(er <= 1e-6, "resonance radii");
    o.check(index == 5 && neg_perp == 5, "index");
  });

  criterion(6, "Weyl slopes", [](Outcome& o) {
    auto rhos = logspace(0.02, 0.2, 40);
    SNKGrid S1(make_K(kT3, "coordinate_circle(0)", 129), 5);
    SNKGrid S2(make_K(kT4, "sub_torus(0,1)", 105), 5);
    const double s1 = weyl_fit(model_spectrum(S1, 0), rhos).slope;
    const double s2 = weyl_fit(model_spectrum(S2, 0), rhos).slope;
    o.detail << " k=1 slope " << fmt(s1) << ", k=2 slope " << fmt(s2);
    o.check(std::abs(s1 + 1.0) <= 0.05, "k=1");
    o.check(std::abs(s2 + 2.0) <= 0.1, "k=2");
  });

  criterion(7, "eigenvalue variation", [](Outcome& o) {
    SNKGrid F(make_K(kT3, "coordinate_circle(0)", 33), 5);
    SpectralFamily flat = model_family(F);
    double ej = 0.0;
    for (int j : {1, 2, 3, 4}) {
      SpectralSample s = flat(1.0 / j);
      int pos = -1;
      for (int i = 0; i < s.sigma.size(); ++i)
        if (s.block[i] == 0 && std::abs(s.sigma[i]) < 1e-9) pos = i;
      require(pos >= 0, "no zero eigenvalue at 1/j");
      ej = std::max(ej, std::abs(eigenvalue_derivative(flat, s, pos).rho_dsigma - 2.0 * j * j));
    }
    int checked = 0, violated = 0;
    double margin = 1e300;
    auto tally = [&](const BranchDerivative& d) {
      ++checked;
      violated += !d.satisfied;
      margin = std::min(margin, d.rho_dsigma - d.bound);
    };
    for (const auto& d : small_branch_derivatives(flat, logspace(0.1, 0.5, 30))) tally(d);
    const SNKGrid& P = perturbed_grid();
    for (const auto& d : small_branch_derivatives(model_family(P), logspace(0.1, 0.5, 30))) tally(d);
    for (const auto& c : perturbed_crossings()) tally(c.derivative);
    o.detail << " zero crossings |rho dsigma/drho - 2j^2| " << fmt(ej) << "; " << checked << " small branches, "
             << violated << " below 2(n-1) - 5rho, min margin " << fmt(margin);
    o.check(ej <= 1e-6, "2j^2");
    o.check(violated == 0 && checked > 0, "variation bound");
  });

  criterion(8, "localization on the perturbed great circle", [](Outcome& o) {
    std::vector<double> rs, ratios;
    for (const auto& c : perturbed_crossings()) {
      rs.push_back(c.rho);
      ratios.push_back(c.ratio);
    }
    const double slope = loglog_fit(rs, ratios).slope;
    double C = 0.0;
    for (std::size_t i = 0; i < rs.size(); ++i) C = std::max(C, ratios[i] / rs[i]);
    o.detail << " crossings";
    for (const auto& c : perturbed_crossings()) o.detail << " " << fmt(c.rho) << " (1/" << c.j << ")";
    o.detail << ", ratio/rho <= " << fmt(C) << ", slope " << fmt(slope);
    o.check(slope >= 0.9, "slope");
  });

  criterion(9, "admissible intervals and gap measure", [](Outcome& o) {
    std::vector<double> res;
    for (int j = 1; j <= 400; ++j) res.push_back(1.0 / j);
    IntervalSet I = build_intervals(res, 1, 2, 1.0 / 400, 1.0);
    // closed form: (1/(j+1) + ¼j⁻³, 1/j − ¼j⁻³) for 2 ≤ j < 400; (½, 1) is shorter than 1 and dropped
    std::vector<std::pair<double, double>> expected;
    for (int j = 399; j >= 2; --j)
      expected.push_back({1.0 / (j + 1) + 0.25 * std::pow(1.0 / j, 3), 1.0 / j - 0.25 * std::pow(1.0 / j, 3)});
    bool same = I.intervals.size() == expected.size();
    for (std::size_t i = 0; same && i < expected.size(); ++i)
      same = std::abs(I.intervals[i].lo - expected[i].first) < 1e-15 &&
             std::abs(I.intervals[i].hi - expected[i].second) < 1e-15;
    std::vector<double> rhos = logspace(0.05, 0.5, 12), defect;
    double C = 0.0;
    for (double r : rhos) {
      defect.push_back(r - I.lo - I.measure_below(r));
      C = std::max(C, defect.back() / (r * r));
    }
    const double slope = loglog_fit(rhos, defect).slope;

    SNKGrid S(make_K(kT3, "coordinate_circle(0)", 65), 5);
    ModelSpectrum M = model_spectrum(S, 0);
    IntervalSet J = build_intervals(res, 1, 2, 0.05, 0.5);
    sample_gaps(J, [&](double r) { return M.eigenvalues(r); });
    double gap = 1e300;
    for (const auto& piece : J.intervals) gap = std::min(gap, piece.gap_ratio);
    o.detail << " " << I.intervals.size() << " intervals " << (same ? "match" : "differ from")
             << " the closed form; defect <= " << fmt(C) << " rho^2, slope " << fmt(slope)
             << "; min |sigma| / rho_i^(k+q-1) = " << fmt(gap) << " over " << J.intervals.size() << " pieces";
    o.check(same, "closed-form intervals");
    o.check(C <= 1.0 && slope >= 1.7, "gap measure O(rho^2)");
    o.check(gap >= 0.1, "sampled gap");
  });

  criterion(10, "iteration orders on the perturbed great circle", [](Outcome& o) {
    const SNKGrid& S = perturbed_grid();
    std::vector<double> rhos{0.05, 0.075, 0.1, 0.15, 0.2}, dw, dp;
    for (double rho : rhos) {
      IterateSequence seq = improve(S, rho, 2);
      dw.push_back(seq.w_diffs[1]);
      dp.push_back(seq.Phi_diffs[1]);
    }
    const double sw = loglog_fit(rhos, dw).slope, sp = loglog_fit(rhos, dp).slope;
    o.detail << " |w2 - w1| slope " << fmt(sw) << ", |Phi2 - Phi1| slope " << fmt(sp);
    o.check(sw >= 3.7, "w slope");
    o.check(sp >= 2.7, "Phi slope");
  });

  criterion(11, "nonlinear solve on the perturbed great circle", [](Outcome& o) {
    const SNKGrid& S = perturbed_grid();
    // admissible set of the full linearization: resonances are the refined crossings near 1/j
    std::vector<double> res;
    for (const auto& c : perturbed_crossings()) res.push_back(c.rho);
    std::sort(res.begin(), res.end());
    IntervalSet I = build_intervals(res, 1, 2, res.front(), res.back());
    std::vector<double> rhos;
    for (const auto& J : I.intervals) rhos.push_back(0.5 * (J.lo + J.hi));
    require(rhos.size() >= 5, "fewer than 5 admissible intervals");
    SolverConfig cfg;
    int max_steps = 0;
    double max_res = 0.0, max_dev = 0.0;
    std::vector<double> phi;
    for (double rho : rhos) {
      SolveResult r = solve_cmc(S, rho, cfg, &I);
      o.check(r.in_I, "radius outside I");
      max_steps = std::max(max_steps, r.steps);
      max_res = std::max(max_res, r.residual_history.back());
      phi.push_back(sup_norm(r.state.Phi));
      UniquenessReport u = uniqueness_check(S, r, cfg, 10);
      max_dev = std::max(max_dev, u.max_deviation);
    }
    const double slope = loglog_fit(rhos, phi).slope;
    o.detail << " " << rhos.size() << " radii in I (between full-mode crossings), max " << max_steps
             << " Newton steps, residual " << fmt(max_res)
             << ", 10 restarts each: max deviation " << fmt(max_dev) << ", |Phi| slope " << fmt(slope);
    o.check(max_steps <= 15 && max_res < 1e-9, "Newton");
    o.check(max_dev <= 1e-8, "uniqueness");
    o.check(std::abs(slope - 2.0) <= 0.3, "Phi scaling");
  });

  criterion(12, "densities", [](Outcome& o) {
    SNKGrid F(make_K(kT3, "coordinate_circle(0)", 17), 17);
    double ef = 0.0;
    for (double rho : {0.05, 0.1, 0.2}) {
      TubeState st = zero_state(F, rho);
      Densities d = densities(F, st, tube_geometry(F, st));
      // area 2πρ·2π, ∫|A|² = area/ρ²; both densities equal 4π²
      ef = std::max({ef, std::abs(d.area_density / (4 * kPi * kPi) - 1.0),
                     std::abs(d.curvature_density / (4 * kPi * kPi) - 1.0)});
    }
    SNKGrid S(make_K("round_sphere(3,1)", "great_circle", 33), 17);
    std::vector<double> rhos = logspace(0.02, 0.08, 4), defect;
    double ea = 0.0;
    for (double rho : rhos) {
      TubeState st = zero_state(S, rho);
      Densities d = densities(S, st, tube_geometry(S, st));
      // tube area 4π² sin ρ cos ρ
      ea = std::max(ea, std::abs(d.area_density / (4 * kPi * kPi * std::sin(rho) * std::cos(rho) / rho) - 1.0));
      defect.push_back(std::abs(d.area_density / d.area_limit - 1.0));
    }
    const double slope = loglog_fit(rhos, defect).slope;
    o.detail << " flat relative error " << fmt(ef) << ", S3 area vs 4pi^2 sin cos " << fmt(ea) << ", S3 defect slope "
             << fmt(slope);
    o.check(ef <= 1e-12, "flat densities");
    o.check(ea <= 1e-8, "S3 closed-form area");
    o.check(std::abs(slope - 2.0) <= 0.2, "S3 defect slope");
  });

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
