#pragma once

// End-to-end experiment pipeline: desired state from a fine-grid solve,
// optional reachable target, solve, verification, report and output files.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "imc/fem_core.hpp"
#include "imc/kkt_general.hpp"
#include "imc/kkt_positive.hpp"
#include "imc/measures.hpp"
#include "imc/pde_solver.hpp"

namespace imc {

enum class SolverKind { positive, general };

inline const char* to_string(SolverKind s) {
  return s == SolverKind::positive ? "positive" : "general";
}

inline SolverKind solver_from_string(const std::string& s) {
  if (s == "positive") return SolverKind::positive;
  if (s == "general") return SolverKind::general;
  throw std::invalid_argument("solver must be \"positive\" or \"general\", got \"" + s + "\"");
}

struct GridSpec {
  std::size_t n_elements = 20;
  std::size_t n_steps = 20;
};

struct ExperimentConfig {
  std::string name = "experiment";
  double domain_length = 1.0;
  double T = 1.0;
  double diffusion_a = 0.01;
  GridSpec coarse{20, 20};
  GridSpec fine{1000, 1000};
  std::vector<Atom> true_control{{0.5, 1.0}};
  double alpha = 1.0;
  SolverKind solver = SolverKind::positive;
  std::optional<double> kappa;  // 1 for positive, 2 for general
  double gamma = 70.0;
  bool homotopy = false;
  double gamma0 = 1.0;
  double growth = 2.0;
  double gamma_max = 65536.0;
  double tol = 1e-12;
  std::optional<int> max_iter;  // 200 for positive, 2000 for general
  bool line_search = true;
  bool reachable_target = false;
  std::optional<double> target_constant;  // y_d = constant instead of the fine solve
  std::string output_dir;

  double effective_kappa() const {
    return kappa.value_or(solver == SolverKind::positive ? 1.0 : 2.0);
  }
  int effective_max_iter() const {
    return max_iter.value_or(solver == SolverKind::positive ? 200 : 2000);
  }

  SpaceTimeGrid coarse_grid() const {
    return build_grid(domain_length, coarse.n_elements, T, coarse.n_steps);
  }
  SpaceTimeGrid fine_grid() const { return build_grid(domain_length, fine.n_elements, T, fine.n_steps); }

  void validate() const {
    if (!(domain_length > 0.0) || !std::isfinite(domain_length))
      throw std::invalid_argument("config: domain_length must be positive");
    if (!(T > 0.0) || !std::isfinite(T)) throw std::invalid_argument("config: T must be positive");
    if (!(diffusion_a > 0.0)) throw std::invalid_argument("config: diffusion_a must be positive");
    if (coarse.n_elements < 1 || coarse.n_steps < 1 || fine.n_elements < 1 || fine.n_steps < 1)
      throw std::invalid_argument("config: grids need at least one element and one step");
    if (fine.n_elements % coarse.n_elements != 0)
      throw std::invalid_argument("config: coarse nodes must be fine nodes (fine.n_elements must be a multiple of coarse.n_elements)");
    const double h_fine = domain_length / static_cast<double>(fine.n_elements);
    for (const auto& a : true_control) {
      if (!std::isfinite(a.location) || !std::isfinite(a.weight))
        throw std::invalid_argument("config: true_control entries must be finite");
      const double s = a.location / h_fine;
      if (a.location < 0.0 || a.location > domain_length ||
          std::abs(s - std::round(s)) > 1e-9 * std::max(1.0, s))
        throw std::invalid_argument("config: true_control atoms must sit on fine-grid nodes");
    }
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("config: alpha must be >= 0");
    if (!(effective_kappa() > 0.0)) throw std::invalid_argument("config: kappa must be > 0");
    if (!(gamma > 0.0)) throw std::invalid_argument("config: gamma must be > 0");
    if (!(gamma0 > 0.0) || !(growth > 1.0) || !(gamma_max >= gamma0))
      throw std::invalid_argument("config: need gamma0 > 0, growth > 1, gamma_max >= gamma0");
    if (!(tol > 0.0)) throw std::invalid_argument("config: tol must be > 0");
    if (effective_max_iter() < 0) throw std::invalid_argument("config: max_iter must be >= 0");
    if (target_constant && !std::isfinite(*target_constant))
      throw std::invalid_argument("config: target_constant must be finite");
    if (target_constant && reachable_target)
      throw std::invalid_argument("config: target_constant and reachable_target exclude each other");
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  auto atoms = nlohmann::json::array();
  for (const auto& a : c.true_control) atoms.push_back({{"x", a.location}, {"weight", a.weight}});
  j = {{"name", c.name},
       {"domain_length", c.domain_length},
       {"T", c.T},
       {"diffusion_a", c.diffusion_a},
       {"coarse", {{"n_elements", c.coarse.n_elements}, {"n_steps", c.coarse.n_steps}}},
       {"fine", {{"n_elements", c.fine.n_elements}, {"n_steps", c.fine.n_steps}}},
       {"true_control", atoms},
       {"alpha", c.alpha},
       {"solver", to_string(c.solver)},
       {"kappa", c.effective_kappa()},
       {"gamma", c.gamma},
       {"homotopy", c.homotopy},
       {"gamma0", c.gamma0},
       {"growth", c.growth},
       {"gamma_max", c.gamma_max},
       {"tol", c.tol},
       {"max_iter", c.effective_max_iter()},
       {"line_search", c.line_search},
       {"reachable_target", c.reachable_target},
       {"target_constant", c.target_constant ? nlohmann::json(*c.target_constant) : nlohmann::json()},
       {"output_dir", c.output_dir}};
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "name",   "domain_length", "T",         "diffusion_a", "coarse",      "fine",
      "true_control", "alpha",   "solver",    "kappa",       "gamma",       "homotopy",
      "gamma0", "growth",        "gamma_max", "tol",         "max_iter",    "line_search",
      "reachable_target", "target_constant", "output_dir"};
  if (!j.is_object()) throw std::invalid_argument("config JSON must be an object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument("config: unknown field \"" + key + "\"");

  ExperimentConfig c;
  try {
    c.name = j.value("name", c.name);
    c.domain_length = j.value("domain_length", c.domain_length);
    c.T = j.value("T", c.T);
    c.diffusion_a = j.value("diffusion_a", c.diffusion_a);
    auto grid = [](const nlohmann::json& g, GridSpec d) {
      d.n_elements = g.value("n_elements", d.n_elements);
      d.n_steps = g.value("n_steps", d.n_steps);
      return d;
    };
    if (j.contains("coarse")) c.coarse = grid(j.at("coarse"), c.coarse);
    if (j.contains("fine")) c.fine = grid(j.at("fine"), c.fine);
    if (j.contains("true_control")) {
      c.true_control.clear();
      for (const auto& a : j.at("true_control"))
        c.true_control.push_back({a.at("x").get<double>(), a.at("weight").get<double>()});
    }
    c.alpha = j.value("alpha", c.alpha);
    if (j.contains("solver")) c.solver = solver_from_string(j.at("solver").get<std::string>());
    if (j.contains("kappa") && !j.at("kappa").is_null()) c.kappa = j.at("kappa").get<double>();
    c.gamma = j.value("gamma", c.gamma);
    c.homotopy = j.value("homotopy", c.homotopy);
    c.gamma0 = j.value("gamma0", c.gamma0);
    c.growth = j.value("growth", c.growth);
    c.gamma_max = j.value("gamma_max", c.gamma_max);
    c.tol = j.value("tol", c.tol);
    if (j.contains("max_iter") && !j.at("max_iter").is_null()) c.max_iter = j.at("max_iter").get<int>();
    c.line_search = j.value("line_search", c.line_search);
    c.reachable_target = j.value("reachable_target", c.reachable_target);
    if (j.contains("target_constant") && !j.at("target_constant").is_null())
      c.target_constant = j.at("target_constant").get<double>();
    c.output_dir = j.value("output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Fine-grid forward solve from Upsilon_h(true_control) with f = 0, read off
/// at T on the coarse nodes. A target_constant overrides the solve.
inline Vector generate_desired_state(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto coarse = cfg.coarse_grid();
  const auto nc = static_cast<Eigen::Index>(coarse.n_nodes());
  if (cfg.target_constant) return Vector::Constant(nc, *cfg.target_constant);

  const auto fine = cfg.fine_grid();
  const auto sys = assemble(fine, cfg.diffusion_a);
  const StepFactors factors(sys, fine);
  const auto u = upsilon_h(GeneralMeasure{cfg.true_control, {}}, fine);
  Vector y = factors.mass().solve(u.coeffs);
  for (double tau : fine.tau) y = factors.at(tau).solve(sys.mass * y);

  const std::size_t stride = cfg.fine.n_elements / cfg.coarse.n_elements;
  Vector yd(nc);
  for (Eigen::Index j = 0; j < nc; ++j) yd(j) = y(static_cast<Eigen::Index>(j * stride));
  return yd;
}

struct ReachableTarget {
  Vector y_d;
  DiscreteMeasure control;  // the coarse control that attains y_d
};

/// Coarse final state of Upsilon_h(true_control); attained exactly by that control.
inline ReachableTarget project_reachable_target(const FemSystem& sys, const SpaceTimeGrid& grid,
                                                const std::vector<Atom>& true_control) {
  auto u = upsilon_h(GeneralMeasure{true_control, {}}, grid);
  auto y = solve_forward(sys, grid, u, SourceTerm::zero());
  return {y.final(), std::move(u)};
}

struct SolveReport {
  nlohmann::json config;
  SolverKind solver = SolverKind::positive;
  SolveStatus status = SolveStatus::max_iterations;
  std::string diagnostic;
  Vector y_d;
  Vector u_plus;
  Vector u_minus;
  std::vector<double> x_nodes;
  double tv_plus = 0.0;
  double tv_minus = 0.0;
  std::vector<double> support_plus;   // node coordinates
  std::vector<double> support_minus;
  double objective = 0.0;
  double lambda_bar = 0.0;            // min_j phi(x_j, 0)
  double phi0_sup = 0.0;              // max_j |phi(x_j, 0)|
  double duality_value = 0.0;         // sum_j phi(x_j, 0) u_j
  double final_misfit = 0.0;          // ||y(T) - y_d||_M
  double adjoint_max = 0.0;
  double complementarity = 0.0;
  bool budget_active = false;
  bool support_condition = false;     // supports sit where phi(., 0) is extremal
  bool unique_certificate = false;
  int newton_steps = 0;
  std::optional<double> terminal_gamma;
  std::vector<HomotopyStage> stages;
  std::vector<double> residual_history;
  std::optional<Vector> generating_control;  // reachable-target runs
  double wall_time = 0.0;             // seconds; not part of the JSON report

  bool converged() const { return status == SolveStatus::converged; }
  Vector control() const { return u_plus - u_minus; }

  nlohmann::json to_json() const {
    auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    nlohmann::json j;
    j["config"] = config;
    j["solver"] = to_string(solver);
    j["status"] = imc::to_string(status);
    j["diagnostic"] = diagnostic;
    j["tv_plus"] = tv_plus;
    j["tv_minus"] = tv_minus;
    j["support_plus"] = support_plus;
    j["support_minus"] = support_minus;
    j["objective"] = objective;
    j["lambda_bar"] = lambda_bar;
    j["phi0_sup"] = phi0_sup;
    j["duality_value"] = duality_value;
    j["final_misfit"] = final_misfit;
    j["adjoint_max"] = adjoint_max;
    j["complementarity"] = complementarity;
    j["budget_active"] = budget_active;
    j["support_condition"] = support_condition;
    j["unique_certificate"] = unique_certificate;
    j["newton_steps"] = newton_steps;
    j["terminal_gamma"] = terminal_gamma ? nlohmann::json(*terminal_gamma) : nlohmann::json();
    auto st = nlohmann::json::array();
    for (const auto& s : stages)
      st.push_back({{"gamma", s.gamma},
                    {"newton_steps", s.newton_steps},
                    {"residual", s.residual},
                    {"complementarity", s.complementarity},
                    {"status", imc::to_string(s.status)}});
    j["homotopy_stages"] = st;
    j["residual_history"] = residual_history;
    j["x_nodes"] = x_nodes;
    j["desired_state"] = vec(y_d);
    j["u_plus"] = vec(u_plus);
    j["u_minus"] = vec(u_minus);
    j["generating_control"] = generating_control ? nlohmann::json(vec(*generating_control)) : nlohmann::json();
    return j;
  }
};

struct SolveOutcome {
  Vector u_plus;
  Vector u_minus;
  SolveStatus status = SolveStatus::max_iterations;
  std::string diagnostic;
  int newton_steps = 0;
  std::optional<double> terminal_gamma;
  std::vector<HomotopyStage> stages;
  std::vector<double> residual_history;
};

inline SolveOutcome solve_configured(const ReducedProblem& prob, const ExperimentConfig& cfg) {
  SolveOutcome o;
  if (cfg.solver == SolverKind::positive) {
    SsnConfig sc{cfg.alpha, cfg.effective_kappa(), cfg.tol, cfg.effective_max_iter()};
    const auto it = ssn_solve_positive(prob, sc);
    o.u_plus = it.u.cwiseMax(0.0);
    o.u_minus = (-it.u).cwiseMax(0.0);
    o.status = it.status;
    o.diagnostic = it.diagnostic;
    o.newton_steps = it.iteration;
    o.residual_history = it.residual_history;
    return o;
  }
  GeneralSsnConfig gc;
  gc.alpha = cfg.alpha;
  gc.kappa = cfg.effective_kappa();
  gc.gamma = cfg.gamma;
  gc.tol = cfg.tol;
  gc.max_iter = cfg.effective_max_iter();
  gc.line_search = cfg.line_search;
  const auto it = cfg.homotopy ? gamma_homotopy(prob, gc, {cfg.gamma0, cfg.growth, cfg.gamma_max})
                               : ssn_solve_general(prob, gc);
  o.u_plus = it.u_plus;
  o.u_minus = it.u_minus;
  o.status = it.status;
  o.diagnostic = it.diagnostic;
  o.newton_steps = cfg.homotopy ? it.total_newton_steps : it.iteration;
  o.terminal_gamma = it.gamma;
  o.stages = it.stages;
  o.residual_history = it.residual_history;
  return o;
}

/// Verification quantities of a control (u+, u-) for the problem `prob`.
inline void fill_verification(SolveReport& r, const ReducedProblem& prob, double alpha) {
  const auto& grid = prob.grid();
  const Vector u = r.control();
  const double scale = std::max(alpha, 1.0);
  const double support_eps = 1e-10 * scale;
  const auto y = prob.state(u);
  const Vector res = y.final() - prob.desired_state();
  const auto phi = solve_adjoint(prob.sys(), grid, prob.factors(), res);
  const Vector& phi0 = phi.initial();

  r.x_nodes = grid.x_nodes;
  r.tv_plus = r.u_plus.cwiseMax(0.0).sum();
  r.tv_minus = r.u_minus.cwiseMax(0.0).sum();
  r.objective = 0.5 * res.dot(prob.sys().mass * res);
  r.final_misfit = std::sqrt(std::max(0.0, 2.0 * r.objective));
  r.adjoint_max = phi.max_abs();
  r.lambda_bar = phi0.minCoeff();
  r.phi0_sup = phi0.cwiseAbs().maxCoeff();
  r.duality_value = phi0.dot(u);
  r.complementarity = r.u_plus.cwiseProduct(r.u_minus).maxCoeff();
  r.budget_active = std::abs(r.u_plus.sum() + r.u_minus.sum() - alpha) <= 1e-9 * scale;
  r.unique_certificate = neighbour_values_distinct(phi0);

  // Positive problem: supp u in {phi = lambda_bar}. Signed problem: supp u+ in
  // {phi = -sup|phi|}, supp u- in {phi = +sup|phi|}.
  const bool positive = r.solver == SolverKind::positive;
  const double slack = 1e-8 * (1.0 + (positive ? std::abs(r.lambda_bar) : r.phi0_sup));
  r.support_plus.clear();
  r.support_minus.clear();
  r.support_condition = true;
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    if (r.u_plus(j) > support_eps) {
      r.support_plus.push_back(grid.x_nodes[j]);
      const double target = positive ? r.lambda_bar : -r.phi0_sup;
      r.support_condition = r.support_condition && phi0(j) <= target + slack;
    }
    if (r.u_minus(j) > support_eps) {
      r.support_minus.push_back(grid.x_nodes[j]);
      r.support_condition = r.support_condition && phi0(j) >= r.phi0_sup - slack;
    }
  }
}

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_field_csv(const std::filesystem::path& p, const SpaceTimeGrid& g,
                            const Trajectory& tr) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << "t";
  for (double x : g.x_nodes) out << ',' << fmt(x);
  out << '\n';
  for (std::size_t k = 0; k < tr.values.size(); ++k) {
    out << fmt(g.t_nodes[k]);
    for (Eigen::Index j = 0; j < tr.values[k].size(); ++j) out << ',' << fmt(tr.values[k](j));
    out << '\n';
  }
}

inline void write_outputs(const std::filesystem::path& dir, const SolveReport& r,
                          const ReducedProblem& prob) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "report.json").string());
    out << r.to_json().dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "control.csv");
    out << "node,x,coefficient,part\n";
    for (Eigen::Index j = 0; j < r.u_plus.size(); ++j) {
      if (r.u_plus(j) != 0.0)
        out << j << ',' << fmt(r.x_nodes[j]) << ',' << fmt(r.u_plus(j)) << ",plus\n";
      if (r.u_minus(j) != 0.0)
        out << j << ',' << fmt(r.x_nodes[j]) << ',' << fmt(-r.u_minus(j)) << ",minus\n";
    }
  }
  const auto y = prob.state(r.control());
  const auto phi = solve_adjoint(prob.sys(), prob.grid(), prob.factors(),
                                 y.final() - prob.desired_state());
  write_field_csv(dir / "state.csv", prob.grid(), y);
  write_field_csv(dir / "adjoint.csv", prob.grid(), phi);
  {
    std::ofstream out(dir / "profiles.csv");
    out << "x,y_T,y_d,phi_0\n";
    for (Eigen::Index j = 0; j < prob.n(); ++j)
      out << fmt(r.x_nodes[j]) << ',' << fmt(y.final()(j)) << ',' << fmt(prob.desired_state()(j))
          << ',' << fmt(phi.initial()(j)) << '\n';
  }
  {
    std::ofstream out(dir / "plot.gp");
    out << "# gnuplot " << dir.filename().string() << "/plot.gp (run inside this directory)\n"
        << "set datafile separator ','\n"
        << "set terminal pngcairo size 1600,400\n"
        << "set output 'solution.png'\n"
        << "set multiplot layout 1,4\n"
        << "set title 'control'\n"
        << "plot 'control.csv' using 2:(strcol(4) eq 'plus' ? $3 : 1/0) skip 1 with impulses lc "
           "rgb 'black' notitle, \\\n"
        << "     '' using 2:(strcol(4) eq 'plus' ? $3 : 1/0) skip 1 with points pt 6 lc rgb "
           "'black' title 'u+', \\\n"
        << "     '' using 2:(strcol(4) eq 'minus' ? $3 : 1/0) skip 1 with impulses lc rgb 'red' "
           "notitle, \\\n"
        << "     '' using 2:(strcol(4) eq 'minus' ? $3 : 1/0) skip 1 with points pt 12 lc rgb "
           "'red' title 'u-'\n"
        << "set title 'state'\n"
        << "plot 'state.csv' matrix rowheaders columnheaders with image notitle\n"
        << "set title 'adjoint'\n"
        << "plot 'adjoint.csv' matrix rowheaders columnheaders with image notitle\n"
        << "set title 'profiles'\n"
        << "plot 'profiles.csv' using 1:2 skip 1 with lines title 'y(T)', \\\n"
        << "     '' using 1:3 skip 1 with points title 'y_d', \\\n"
        << "     '' using 1:4 skip 1 with linespoints title 'phi(0)'\n"
        << "unset multiplot\n";
  }
}

}  // namespace detail

/// generate -> (project) -> solve -> verify, writing files when output_dir is set.
/// A failed solve still yields a report with status and diagnostic.
inline SolveReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto grid = cfg.coarse_grid();

  Vector y_d;
  std::optional<Vector> generating;
  if (cfg.reachable_target) {
    const auto rt = project_reachable_target(assemble(grid, cfg.diffusion_a), grid, cfg.true_control);
    y_d = rt.y_d;
    generating = rt.control.coeffs;
  } else {
    y_d = generate_desired_state(cfg);
  }

  const ReducedProblem prob(grid, cfg.diffusion_a, y_d);
  SolveReport r;
  r.config = cfg;
  r.solver = cfg.solver;
  r.y_d = y_d;
  r.generating_control = generating;

  SolveOutcome o = solve_configured(prob, cfg);
  r.u_plus = std::move(o.u_plus);
  r.u_minus = std::move(o.u_minus);
  r.status = o.status;
  r.diagnostic = std::move(o.diagnostic);
  r.newton_steps = o.newton_steps;
  r.terminal_gamma = o.terminal_gamma;
  r.stages = std::move(o.stages);
  r.residual_history = std::move(o.residual_history);
  fill_verification(r, prob, cfg.alpha);
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!cfg.output_dir.empty()) detail::write_outputs(cfg.output_dir, r, prob);
  return r;
}

/// Rebuild the problem of a saved report and recompute its verification
/// quantities from the stored control.
inline SolveReport reverify_report(const nlohmann::json& saved) {
  const ExperimentConfig cfg = config_from_json(saved.at("config"));
  const auto grid = cfg.coarse_grid();
  auto vec = [&](const char* key) {
    const auto v = saved.at(key).get<std::vector<double>>();
    if (v.size() != grid.n_nodes())
      throw std::invalid_argument(std::string("report: ") + key + " has the wrong length");
    return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  const ReducedProblem prob(grid, cfg.diffusion_a, vec("desired_state"));
  SolveReport r;
  r.config = cfg;
  r.solver = cfg.solver;
  r.y_d = prob.desired_state();
  r.u_plus = vec("u_plus");
  r.u_minus = vec("u_minus");
  r.status = saved.at("status").get<std::string>() == "converged" ? SolveStatus::converged
                                                                   : SolveStatus::max_iterations;
  r.newton_steps = saved.value("newton_steps", 0);
  fill_verification(r, prob, cfg.alpha);
  return r;
}

// ---------------------------------------------------------------------------
// Reproduction suite

struct ReferenceValue {
  std::string quantity;
  std::string reference;  // as printed in the comparison table
  std::string ours;
  bool agrees = false;
};

struct ReproductionCase {
  ExperimentConfig config;
  int reference_newton_steps = 0;
  SolveReport report;
  std::vector<ReferenceValue> values;

  bool newton_count_flagged() const {
    if (reference_newton_steps <= 0 || report.newton_steps <= 0) return true;
    const double ratio = static_cast<double>(report.newton_steps) / reference_newton_steps;
    return ratio > 3.0 || ratio < 1.0 / 3.0;
  }
};

struct ReproductionSuite {
  std::vector<ReproductionCase> cases;
  double wall_time = 0.0;

  bool all_converged() const {
    return std::all_of(cases.begin(), cases.end(),
                       [](const ReproductionCase& c) { return c.report.converged(); });
  }
  std::string table() const;
};

inline std::vector<ReproductionCase> reference_cases() {
  auto base = [](std::string name, SolverKind s, double alpha) {
    ExperimentConfig c;
    c.name = std::move(name);
    c.solver = s;
    c.alpha = alpha;
    return c;
  };
  const std::vector<Atom> second{{0.3, 1.0}, {0.8, -0.5}};
  std::vector<ReproductionCase> v;
  auto add = [&](ExperimentConfig c, int steps) { v.push_back({std::move(c), steps, {}, {}}); };

  add(base("positive_alpha0.1", SolverKind::positive, 0.1), 16);
  add(base("positive_alpha1", SolverKind::positive, 1.0), 15);
  add(base("positive_alpha2", SolverKind::positive, 2.0), 17);
  {
    auto c = base("positive_alpha2_reachable", SolverKind::positive, 2.0);
    c.reachable_target = true;
    add(c, 27);
  }
  add(base("general1_alpha0.1", SolverKind::general, 0.1), 11);
  add(base("general1_alpha1", SolverKind::general, 1.0), 64);
  {
    auto c = base("general1_alpha2_homotopy", SolverKind::general, 2.0);
    c.homotopy = true;
    add(c, 183);
  }
  {
    auto c = base("general1_alpha2_reachable", SolverKind::general, 2.0);
    c.reachable_target = true;
    add(c, 56);
  }
  {
    auto c = base("general2_alpha0.15", SolverKind::general, 0.15);
    c.true_control = second;
    add(c, 29);
  }
  {
    auto c = base("general2_alpha1.5", SolverKind::general, 1.5);
    c.true_control = second;
    add(c, 44);
  }
  {
    auto c = base("general2_alpha3_homotopy", SolverKind::general, 3.0);
    c.true_control = second;
    c.homotopy = true;
    add(c, 137);
  }
  {
    auto c = base("general2_alpha3_reachable", SolverKind::general, 3.0);
    c.true_control = second;
    c.reachable_target = true;
    c.gamma = 100.0;
    add(c, 20);
  }
  {
    auto c = base("general1_alpha2_homotopy_40", SolverKind::general, 2.0);
    c.coarse = {40, 40};
    c.homotopy = true;
    add(c, 255);
  }
  return v;
}

namespace detail {

inline std::string fmt_short(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

inline std::string fmt_set(const std::vector<double>& s) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << std::setprecision(6) << s[i];
  os << '}';
  return os.str();
}

inline ReferenceValue near(const std::string& q, double reference, double ours, double rel, double abs = 0.0) {
  const bool ok = std::abs(ours - reference) <= std::max(abs, rel * std::abs(reference));
  return {q, fmt_short(reference), fmt_short(ours), ok};
}

inline ReferenceValue at_most(const std::string& q, double bound, double ours) {
  return {q, "<= " + fmt_short(bound), fmt_short(ours), ours <= bound};
}

inline ReferenceValue set_equals(const std::string& q, const std::vector<double>& reference,
                             const std::vector<double>& ours) {
  bool ok = reference.size() == ours.size();
  for (std::size_t i = 0; ok && i < reference.size(); ++i) ok = std::abs(reference[i] - ours[i]) <= 1e-9;
  return {q, fmt_set(reference), fmt_set(ours), ok};
}

inline ReferenceValue gamma_equals(double reference, const std::optional<double>& ours) {
  const double g = ours.value_or(0.0);
  return {"terminal_gamma", fmt_short(reference), fmt_short(g), g == reference};
}

// Quantities quoted in the text for each configuration.
inline std::vector<ReferenceValue> compare_with_reference(const std::string& name, const SolveReport& r) {
  std::vector<ReferenceValue> v;
  const double mass = r.tv_plus - r.tv_minus;
  if (name == "positive_alpha0.1") {
    v.push_back(near("total_mass", 0.1, mass, 0.0, 1e-10));
    v.push_back(set_equals("support", {0.5}, r.support_plus));
    v.push_back(near("lambda_bar", -35.859, r.lambda_bar, 0.01));
    v.push_back(near("duality_value", -3.5859, r.duality_value, 0.01));
  } else if (name == "positive_alpha1") {
    v.push_back(near("total_mass", 1.0, mass, 0.0, 1e-10));
    v.push_back(set_equals("support", {0.5}, r.support_plus));
    v.push_back(near("lambda_bar", -0.0436, r.lambda_bar, 0.02));
    v.push_back(near("duality_value", -0.0436, r.duality_value, 0.02));
  } else if (name == "positive_alpha2") {
    v.push_back({"y(T) != y_d", "misfit > 0", fmt_short(r.final_misfit), r.final_misfit > 1e-6});
  } else if (name == "positive_alpha2_reachable") {
    v.push_back(near("total_mass", 1.0, mass, 0.0, 1e-6));
    v.push_back(set_equals("support", {0.5}, r.support_plus));
    v.push_back(at_most("final_misfit", 1e-10, r.final_misfit));
    v.push_back(at_most("adjoint_max", 1e-8, r.adjoint_max));
  } else if (name == "general1_alpha0.1") {
    v.push_back(near("tv_plus", 0.1, r.tv_plus, 0.0, 1e-6));
    v.push_back(near("tv_minus", 0.0, r.tv_minus, 0.0, 1e-6));
  } else if (name == "general1_alpha1") {
    v.push_back(near("tv_plus", 1.0, r.tv_plus, 0.0, 1e-6));
    v.push_back(near("tv_minus", 1.8635e-20, r.tv_minus, 0.0, 1e-6));
  } else if (name == "general1_alpha2_homotopy") {
    v.push_back(near("tv_plus", 1.5, r.tv_plus, 0.0, 1e-3));
    v.push_back(near("tv_minus", 0.5, r.tv_minus, 0.0, 1e-3));
    v.push_back(at_most("final_misfit", 1e-6, r.final_misfit));
    v.push_back(gamma_equals(64.0, r.terminal_gamma));
  } else if (name == "general1_alpha2_reachable") {
    v.push_back(near("tv_plus", 1.0, r.tv_plus, 0.0, 1e-6));
    v.push_back(near("tv_minus", 0.0, r.tv_minus, 0.0, 1e-6));
    v.push_back(set_equals("support_plus", {0.5}, r.support_plus));
    v.push_back(at_most("final_misfit", 1e-10, r.final_misfit));
  } else if (name == "general2_alpha0.15") {
    v.push_back(near("tv_plus", 0.15, r.tv_plus, 0.0, 1e-6));
    v.push_back(near("tv_minus", 1.2929e-16, r.tv_minus, 0.0, 1e-6));
  } else if (name == "general2_alpha1.5") {
    v.push_back(near("tv_plus", 1.0001, r.tv_plus, 0.0, 1e-3));
    v.push_back(near("tv_minus", 0.4999, r.tv_minus, 0.0, 1e-3));
  } else if (name == "general2_alpha3_homotopy") {
    v.push_back(near("tv_plus", 1.75, r.tv_plus, 0.0, 1e-3));
    v.push_back(near("tv_minus", 1.25, r.tv_minus, 0.0, 1e-3));
    v.push_back(at_most("final_misfit", 1e-6, r.final_misfit));
    v.push_back(gamma_equals(64.0, r.terminal_gamma));
  } else if (name == "general2_alpha3_reachable") {
    v.push_back(near("tv_plus", 1.0, r.tv_plus, 0.0, 1e-6));
    v.push_back(near("tv_minus", 0.5, r.tv_minus, 0.0, 1e-6));
    v.push_back(set_equals("support_plus", {0.3}, r.support_plus));
    v.push_back(set_equals("support_minus", {0.8}, r.support_minus));
    v.push_back(at_most("final_misfit", 1e-10, r.final_misfit));
  } else if (name == "general1_alpha2_homotopy_40") {
    v.push_back(gamma_equals(64.0, r.terminal_gamma));
  }
  return v;
}

}  // namespace detail

inline std::string ReproductionSuite::table() const {
  std::ostringstream os;
  os << "| case | quantity | reference | ours | agrees |\n|---|---|---|---|---|\n";
  for (const auto& c : cases) {
    const auto& r = c.report;
    os << "| " << c.config.name << " | status | converged | " << imc::to_string(r.status) << " | "
       << (r.converged() ? "yes" : "no") << " |\n";
    for (const auto& v : c.values)
      os << "| " << c.config.name << " | " << v.quantity << " | " << v.reference << " | " << v.ours
         << " | " << (v.agrees ? "yes" : "no") << " |\n";
    os << "| " << c.config.name << " | newton_steps | " << c.reference_newton_steps << " | "
       << r.newton_steps << " | " << (c.newton_count_flagged() ? "differs >3x (info)" : "within 3x")
       << " |\n";
  }
  return os.str();
}

/// Runs every reference configuration concurrently; per-case output goes to
/// output_root/<name> when output_root is non-empty.
inline ReproductionSuite reproduce_reference(const std::string& output_root = "") {
  const auto t0 = std::chrono::steady_clock::now();
  ReproductionSuite suite;
  suite.cases = reference_cases();
  std::vector<std::future<SolveReport>> jobs;
  for (auto& c : suite.cases) {
    if (!output_root.empty())
      c.config.output_dir = (std::filesystem::path(output_root) / c.config.name).string();
    jobs.push_back(std::async(std::launch::async, [cfg = c.config] { return run_experiment(cfg); }));
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto& c = suite.cases[i];
    c.report = jobs[i].get();
    c.values = detail::compare_with_reference(c.config.name, c.report);
  }
  suite.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return suite;
}

}  // namespace imc
