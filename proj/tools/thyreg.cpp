// thyreg: closed-loop methimazole dosing simulator.
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "thyreg/params.hpp"
#include "thyreg/scenarios.hpp"
#include "thyreg/sim.hpp"
#include "thyreg/thyroid.hpp"

namespace {

std::string read_text(const std::string& path) {
  if (path.empty()) return thyreg::default_config_text();
  std::ifstream in(path);
  if (!in) throw thyreg::ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

int cmd_run(const std::string& config_path, const std::string& scenario, const std::string& mode,
            std::optional<unsigned long long> seed, const std::string& out_dir,
            const std::vector<std::string>& overrides) {
  const std::string text = thyreg::apply_overrides(read_text(config_path), overrides);
  const thyreg::ParameterSet p = thyreg::load_parameters(text);
  thyreg::ScenarioRun run =
      thyreg::run_scenario(p, thyreg::parse_scenario_name(scenario), thyreg::parse_run_mode(mode), seed);

  std::filesystem::create_directories(out_dir);
  const std::string stem = scenario + "_" + mode;
  {
    std::ofstream csv(std::filesystem::path(out_dir) / (stem + ".csv"));
    thyreg::write_csv(run.record, csv);
  }
  write_file(std::filesystem::path(out_dir) / (stem + ".metrics.json"), thyreg::metrics_json(run.metrics, run.setup));
  write_file(std::filesystem::path(out_dir) / (stem + ".manifest.json"),
             thyreg::manifest_json(run.setup, text, stem + ".csv", stem + ".metrics.json"));

  std::cout << thyreg::metrics_json(run.metrics, run.setup);
  if (run.record.aborted) {
    std::cerr << "run aborted: " << run.record.diagnostic << "\n";
    return 3;
  }
  return run.metrics.degraded_steps > 0 ? 2 : 0;
}

int cmd_steady_state(const std::string& config_path) {
  const thyreg::ParameterSet p = thyreg::load_parameters(read_text(config_path));
  const thyreg::ModelParams healthy = thyreg::make_model(p, thyreg::IodideRegime::Normal, 1.0);
  const thyreg::SteadyStateResult r = thyreg::solve_steady_state(healthy, 0.0);
  const thyreg::AlgebraicOutputs o = thyreg::algebraic_outputs(0.0, r.x, healthy);
  std::printf("# healthy setpoint (TRH at its mean, no MMI), residual %.3g\n", r.residual);
  for (int i = 0; i < thyreg::kStateSize; ++i) std::printf("%-5s %.10g\n", thyreg::state_name(i), r.x(i));
  std::printf("FT4   %.10g\nFT3   %.10g\nTPO_a %.10g\n", o.FT4, o.FT3, o.TPO_a);
  return 0;
}

int cmd_metrics(const std::string& csv_path, const std::string& config_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open " + csv_path);
  thyreg::SimulationRecord rec = thyreg::read_csv(in);
  const thyreg::ParameterSet p = thyreg::load_parameters(read_text(config_path));
  thyreg::ScenarioSetup s;
  s.x_s = thyreg::healthy_setpoint(p);
  thyreg::RunMetrics m = thyreg::compute_metrics(rec, s.x_s);
  auto days = [](const std::optional<int>& d) { return d ? std::to_string(*d) : std::string("not reached"); };
  std::printf("time_to_band T4: %s\ntime_to_band T3: %s\ntime_to_band TSH: %s\ntime_to_band all: %s\n",
              days(m.t4_days).c_str(), days(m.t3_days).c_str(), days(m.tsh_days).c_str(), days(m.all_days).c_str());
  std::printf("initial_dose_mg: %.6g\nmaintenance_dose_mg: %.6g\ntotal_administered_mg: %.6g\n", m.initial_dose_mg,
              m.maintenance_dose_mg, m.total_administered_mg);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"thyreg: model predictive methimazole dosing for hyperthyroidism"};
  app.require_subcommand(1);

  std::string config, scenario = "ordinary", mode = "nominal", out = "out", csv;
  unsigned long long seed = 0;
  std::vector<std::string> overrides;

  auto* run = app.add_subcommand("run", "simulate one scenario under MPC dosing");
  run->add_option("--scenario", scenario, "ordinary | high-iodide | thyrotoxicosis")
      ->check(CLI::IsMember({"ordinary", "high-iodide", "thyrotoxicosis"}));
  run->add_option("--mode", mode, "nominal | realistic")->check(CLI::IsMember({"nominal", "realistic"}));
  run->add_option("--config", config, "config file (default: built-in default.cfg)");
  auto* seed_opt = run->add_option("--seed", seed, "RNG seed (default: scenario section)");
  run->add_option("--out", out, "output directory");
  run->add_option("--set", overrides, "override section.key=value");

  auto* ss = app.add_subcommand("steady-state", "print the healthy setpoint");
  ss->add_option("--config", config, "config file");

  auto* met = app.add_subcommand("metrics", "recompute metrics from a record CSV");
  met->add_option("record", csv, "record CSV")->required();
  met->add_option("--config", config, "config file used for the setpoint");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) {
      std::optional<unsigned long long> s;
      if (*seed_opt) s = seed;
      return cmd_run(config, scenario, mode, s, out, overrides);
    }
    if (*ss) return cmd_steady_state(config);
    if (*met) return cmd_metrics(csv, config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
