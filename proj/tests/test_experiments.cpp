#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "imc/experiments.hpp"
#include "support.hpp"

using namespace imc;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("imc_test_" + name);
  fs::remove_all(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(IMC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, DefaultsAreEchoed) {
  const auto c = config_from_json(nlohmann::json::object());
  const nlohmann::json j = c;
  EXPECT_EQ(j.at("diffusion_a").get<double>(), 0.01);
  EXPECT_EQ(j.at("coarse").at("n_elements").get<int>(), 20);
  EXPECT_EQ(j.at("fine").at("n_steps").get<int>(), 1000);
  EXPECT_EQ(j.at("kappa").get<double>(), 1.0);
  EXPECT_EQ(j.at("max_iter").get<int>(), 200);
  const auto g = config_from_json({{"solver", "general"}});
  EXPECT_EQ(g.effective_kappa(), 2.0);
  EXPECT_EQ(g.effective_max_iter(), 2000);
  EXPECT_EQ(config_from_json(j).effective_kappa(), 1.0);
}

TEST(Config, RejectsInvalidInput) {
  EXPECT_THROW(config_from_json({{"alpah", 1.0}}), std::invalid_argument);
  EXPECT_THROW(config_from_json({{"solver", "signed"}}), std::invalid_argument);
  EXPECT_THROW(config_from_json({{"alpha", -1.0}}), std::invalid_argument);
  EXPECT_THROW(config_from_json({{"fine", {{"n_elements", 1001}}}}), std::invalid_argument);
  EXPECT_THROW(config_from_json({{"true_control", {{{"x", 0.5005}, {"weight", 1.0}}}}}),
               std::invalid_argument);
  EXPECT_THROW(config_from_json({{"true_control", {{{"x", 1.5}, {"weight", 1.0}}}}}),
               std::invalid_argument);
  EXPECT_THROW(config_from_json({{"alpha", "one"}}), std::invalid_argument);
}

TEST(DesiredState, CentredDirac) {
  const auto c = oracle::reference_config(1.0);
  const Vector yd = generate_desired_state(c);
  ASSERT_EQ(yd.size(), 21);
  for (int j = 0; j <= 10; ++j) EXPECT_NEAR(yd(j), yd(20 - j), 1e-12);
  EXPECT_GT(yd.minCoeff(), 0.0);
  const auto g = c.coarse_grid();
  double lumped = 0.0;
  for (int j = 0; j < 21; ++j) lumped += (j == 0 || j == 20 ? g.h / 2 : g.h) * yd(j);
  EXPECT_NEAR(lumped, 1.0, 1e-3);
}

TEST(DesiredState, ZeroAndSignedTrueControls) {
  auto c = oracle::reference_config(1.0);
  c.true_control.clear();
  EXPECT_EQ(generate_desired_state(c).cwiseAbs().maxCoeff(), 0.0);
  const Vector yd = generate_desired_state(oracle::second_example(1.0));
  EXPECT_GT(yd(6), 0.0);
  EXPECT_LT(yd(16), 0.0);
  EXPECT_EQ(yd.maxCoeff(), yd(6));
  EXPECT_EQ(yd.minCoeff(), yd(16));
}

TEST(DesiredState, FineGridRefinementConsistency) {
  auto c = oracle::reference_config(1.0);
  const Vector a = generate_desired_state(c);
  c.fine = {2000, 2000};
  const Vector b = generate_desired_state(c);
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(ReachableTarget, GeneratingControlAttainsTarget) {
  const auto g = build_grid(1.0, 20, 1.0, 20);
  const auto sys = assemble(g, 0.01);
  const auto rt = project_reachable_target(sys, g, {{0.5, 1.0}});
  EXPECT_EQ(rt.control.coeffs, Vector(Vector::Unit(21, 10)));
  EXPECT_LE((final_time_operator(sys, g) * rt.control.coeffs - rt.y_d).cwiseAbs().maxCoeff(), 1e-15);
  const auto zero = project_reachable_target(sys, g, {});
  EXPECT_EQ(zero.y_d.cwiseAbs().maxCoeff(), 0.0);
}

TEST(RunExperiment, ZeroBudget) {
  auto c = oracle::reference_config(0.0);
  const auto r = run_experiment(c);
  ASSERT_TRUE(r.converged());
  EXPECT_EQ(r.tv_plus + r.tv_minus, 0.0);
  EXPECT_NEAR(r.objective, 0.5 * r.y_d.dot(assemble(c.coarse_grid(), 0.01).mass * r.y_d), 1e-15);
}

TEST(RunExperiment, SecondExampleAlphaOneAndAHalf) {
  const auto r = run_experiment(oracle::second_example(1.5));
  ASSERT_TRUE(r.converged()) << r.diagnostic;
  EXPECT_NEAR(r.tv_plus, 1.0001, 1e-3);
  EXPECT_NEAR(r.tv_minus, 0.4999, 1e-3);
}

TEST(RunExperiment, OutputFilesAndDeterminism) {
  const auto dir_a = scratch("det_a"), dir_b = scratch("det_b");
  auto c = oracle::reference_config(0.1, SolverKind::general);
  c.output_dir = dir_a.string();
  const auto ra = run_experiment(c);
  c.output_dir = dir_b.string();
  run_experiment(c);

  for (const char* f : {"report.json", "control.csv", "state.csv", "adjoint.csv", "plot.gp"})
    ASSERT_TRUE(fs::exists(dir_a / f)) << f;
  // The echoed output_dir differs by construction; everything else must match.
  auto ja = nlohmann::json::parse(slurp(dir_a / "report.json"));
  auto jb = nlohmann::json::parse(slurp(dir_b / "report.json"));
  ja["config"].erase("output_dir");
  jb["config"].erase("output_dir");
  EXPECT_EQ(ja.dump(), jb.dump());
  EXPECT_EQ(slurp(dir_a / "state.csv"), slurp(dir_b / "state.csv"));
  EXPECT_EQ(slurp(dir_a / "control.csv"), slurp(dir_b / "control.csv"));

  std::ifstream state(dir_a / "state.csv");
  std::string header;
  std::getline(state, header);
  EXPECT_EQ(header.rfind("t,0,0.050000000000000003,", 0), 0u) << header;
  std::ifstream control(dir_a / "control.csv");
  std::string line;
  std::getline(control, line);
  EXPECT_EQ(line, "node,x,coefficient,part");
  std::getline(control, line);
  EXPECT_EQ(line.rfind("10,0.5,", 0), 0u) << line;
  EXPECT_NEAR(std::stod(line.substr(7)), 0.1, 1e-12);
  EXPECT_EQ(line.substr(line.rfind(',')), ",plus");
  EXPECT_FALSE(std::getline(control, line));
  EXPECT_FALSE(ja.contains("wall_time"));
  EXPECT_GE(ra.wall_time, 0.0);
}

TEST(RunExperiment, ReverifyFromSavedReport) {
  const auto r = run_experiment(oracle::reference_config(0.1));
  const auto again = reverify_report(nlohmann::json::parse(r.to_json().dump()));
  EXPECT_EQ(again.lambda_bar, r.lambda_bar);
  EXPECT_EQ(again.support_plus, r.support_plus);
  EXPECT_TRUE(again.support_condition);
}

TEST(ExperimentProperty, ReachableRunsHitTheTarget) {
  std::vector<ExperimentConfig> cases = {oracle::reference_config(2.0),
                                         oracle::reference_config(2.0, SolverKind::general),
                                         oracle::second_example(3.0)};
  cases[2].gamma = 100.0;
  for (auto& c : cases) {
    c.reachable_target = true;
    const auto r = run_experiment(c);
    ASSERT_TRUE(r.converged()) << c.alpha;
    EXPECT_LE(r.final_misfit, 1e-10) << to_string(c.solver) << " " << c.alpha;
    EXPECT_LE(r.adjoint_max, 1e-8) << to_string(c.solver) << " " << c.alpha;
  }
}

TEST(Reproduction, SuiteConvergesWithinBudget) {
  const auto suite = reproduce_reference();
  ASSERT_EQ(suite.cases.size(), 13u);
  EXPECT_TRUE(suite.all_converged());
  EXPECT_LT(suite.wall_time, 300.0);
  const std::string table = suite.table();
  for (const auto& c : suite.cases) {
    EXPECT_NE(table.find(c.config.name), std::string::npos);
    EXPECT_GT(c.report.newton_steps, 0) << c.config.name;
  }
}

TEST(Cli, ExitCodes) {
  const auto out = scratch("cli");
  EXPECT_EQ(run_cli("solve --alpha 0.1 --out " + out.string()), 0);
  EXPECT_TRUE(fs::exists(out / "report.json"));
  EXPECT_EQ(run_cli("verify --report " + (out / "report.json").string()), 0);
  EXPECT_EQ(run_cli("solve --alpha 1 --solver general --max-iter 1"), 2);
  EXPECT_EQ(run_cli("solve --alpha -1"), 1);
  EXPECT_EQ(run_cli("solve --solver nope"), 1);
  EXPECT_EQ(run_cli("solve --config /nonexistent.json"), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("generate --grid 40"), 0);
  EXPECT_EQ(run_cli("generate --grid 30"), 1);
}
