// Command-line front end: generate, solve, verify, reproduce.
// Exit codes: 0 success, 1 invalid input, 2 non-convergence or failed check.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "imc/experiments.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kFailed = 2;

struct Overrides {
  std::string config_path;
  std::optional<double> alpha;
  std::optional<std::string> solver;
  std::optional<double> gamma;
  bool homotopy = false;
  std::optional<double> kappa;
  std::optional<double> tol;
  std::optional<int> max_iter;
  std::optional<std::size_t> grid;
  bool reachable = false;
  std::optional<std::string> out;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "experiment config (JSON)");
    app->add_option("--alpha", alpha, "total-variation budget");
    app->add_option("--solver", solver, "positive | general");
    app->add_option("--gamma", gamma, "penalty parameter for the general solver");
    app->add_flag("--homotopy", homotopy, "continuation in gamma");
    app->add_option("--kappa", kappa, "NCP scaling");
    app->add_option("--tol", tol, "residual tolerance");
    app->add_option("--max-iter", max_iter, "Newton step limit");
    app->add_option("--grid", grid, "coarse grid: N elements and N time steps");
    app->add_flag("--reachable", reachable, "project the target onto the coarse reachable set");
    app->add_option("--out", out, "output directory");
  }

  imc::ExperimentConfig build() const {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw std::invalid_argument("cannot open config " + config_path);
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config " + config_path + ": " + e.what());
      }
    }
    if (alpha) j["alpha"] = *alpha;
    if (solver) j["solver"] = *solver;
    if (gamma) j["gamma"] = *gamma;
    if (homotopy) j["homotopy"] = true;
    if (kappa) j["kappa"] = *kappa;
    if (tol) j["tol"] = *tol;
    if (max_iter) j["max_iter"] = *max_iter;
    if (grid) j["coarse"] = {{"n_elements", *grid}, {"n_steps", *grid}};
    if (reachable) j["reachable_target"] = true;
    if (out) j["output_dir"] = *out;
    return imc::config_from_json(j);
  }
};

void print_summary(const imc::SolveReport& r) {
  auto set = [](const std::vector<double>& s) {
    std::string o = "{";
    for (std::size_t i = 0; i < s.size(); ++i) o += (i ? ", " : "") + std::to_string(s[i]);
    return o + "}";
  };
  std::cout << "status          " << imc::to_string(r.status);
  if (!r.diagnostic.empty()) std::cout << " (" << r.diagnostic << ")";
  std::cout << "\nnewton steps    " << r.newton_steps << "\n"
            << "tv plus/minus   " << r.tv_plus << " / " << r.tv_minus << "\n"
            << "support plus    " << set(r.support_plus) << "\n"
            << "support minus   " << set(r.support_minus) << "\n"
            << "lambda_bar      " << r.lambda_bar << "\n"
            << "<phi(0), u>     " << r.duality_value << "\n"
            << "final misfit    " << r.final_misfit << "\n"
            << "max |phi|       " << r.adjoint_max << "\n";
  if (r.terminal_gamma) std::cout << "terminal gamma  " << *r.terminal_gamma << "\n";
  std::cout << "wall time [s]   " << r.wall_time << "\n";
}

// Optimality conditions read off the final adjoint.
bool conditions_hold(const imc::SolveReport& r, double alpha) {
  const double eps = 1e-8 * (1.0 + r.phi0_sup);
  bool inactive_ok = true;
  if (!r.budget_active)
    inactive_ok = r.solver == imc::SolverKind::positive ? r.lambda_bar >= -eps : r.phi0_sup <= eps;
  const bool within = r.tv_plus + r.tv_minus <= alpha * (1.0 + 1e-9) + 1e-12;
  return r.support_condition && inactive_ok && within;
}

int cmd_generate(const Overrides& o) {
  const auto cfg = o.build();
  const auto grid = cfg.coarse_grid();
  nlohmann::json j;
  j["config"] = cfg;
  j["x_nodes"] = grid.x_nodes;
  if (cfg.reachable_target) {
    const auto rt = imc::project_reachable_target(imc::assemble(grid, cfg.diffusion_a), grid,
                                                  cfg.true_control);
    j["desired_state"] = std::vector<double>(rt.y_d.data(), rt.y_d.data() + rt.y_d.size());
    j["generating_control"] = imc::to_sparse_json(rt.control, grid);
  } else {
    const auto yd = imc::generate_desired_state(cfg);
    j["desired_state"] = std::vector<double>(yd.data(), yd.data() + yd.size());
  }
  if (cfg.output_dir.empty()) {
    std::cout << j.dump(2) << "\n";
    return kOk;
  }
  std::filesystem::create_directories(cfg.output_dir);
  std::ofstream(std::filesystem::path(cfg.output_dir) / "desired_state.json") << j.dump(2) << "\n";
  std::ofstream csv(std::filesystem::path(cfg.output_dir) / "desired_state.csv");
  csv << "x,y_d\n";
  for (std::size_t i = 0; i < grid.n_nodes(); ++i)
    csv << imc::detail::fmt(grid.x_nodes[i]) << ','
        << imc::detail::fmt(j["desired_state"][i].get<double>()) << '\n';
  std::cout << "wrote " << cfg.output_dir << "/desired_state.{json,csv}\n";
  return kOk;
}

int cmd_solve(const Overrides& o) {
  const auto cfg = o.build();
  const auto r = imc::run_experiment(cfg);
  print_summary(r);
  if (!cfg.output_dir.empty()) std::cout << "outputs in " << cfg.output_dir << "\n";
  return r.converged() ? kOk : kFailed;
}

int cmd_verify(const Overrides& o, const std::string& report_path) {
  imc::SolveReport r;
  double alpha = 0.0;
  if (!report_path.empty()) {
    std::ifstream in(report_path);
    if (!in) throw std::invalid_argument("cannot open report " + report_path);
    nlohmann::json saved;
    try {
      in >> saved;
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("report " + report_path + ": " + e.what());
    }
    r = imc::reverify_report(saved);
    alpha = r.config.at("alpha").get<double>();
  } else {
    const auto cfg = o.build();
    r = imc::run_experiment(cfg);
    alpha = cfg.alpha;
  }
  print_summary(r);
  const bool ok = conditions_hold(r, alpha);
  std::cout << "support condition  " << (r.support_condition ? "holds" : "violated") << "\n"
            << "budget             " << (r.budget_active ? "active" : "inactive") << "\n"
            << "unique certificate " << (r.unique_certificate ? "yes" : "no") << "\n"
            << "optimality         " << (ok ? "PASS" : "FAIL") << "\n";
  return ok && r.converged() ? kOk : kFailed;
}

int cmd_reproduce(const std::string& out) {
  const auto suite = imc::reproduce_reference(out);
  const std::string table = suite.table();
  std::cout << table << "\nwall time [s] " << suite.wall_time << "\n";
  for (const auto& c : suite.cases)
    std::cout << c.config.name << ": " << c.report.wall_time << " s\n";
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    std::ofstream(std::filesystem::path(out) / "comparison.md") << table;
  }
  return suite.all_converged() ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse initial-data identification for the heat equation"};
  app.require_subcommand(1);

  Overrides gen_o, solve_o, verify_o;
  auto* gen = app.add_subcommand("generate", "compute the desired state");
  gen_o.attach(gen);
  auto* solve = app.add_subcommand("solve", "solve one configured problem");
  solve_o.attach(solve);
  auto* verify = app.add_subcommand("verify", "check optimality of a saved or fresh solution");
  verify_o.attach(verify);
  std::string report_path;
  verify->add_option("--report", report_path, "report.json written by solve");
  auto* repro = app.add_subcommand("reproduce", "run the reference experiment set");
  std::string repro_out;
  repro->add_option("--out", repro_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*gen) return cmd_generate(gen_o);
    if (*solve) return cmd_solve(solve_o);
    if (*verify) return cmd_verify(verify_o, report_path);
    if (*repro) return cmd_reproduce(repro_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kInvalid;
}
