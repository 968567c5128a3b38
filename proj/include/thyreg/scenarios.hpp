#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "thyreg/mpc.hpp"
#include "thyreg/params.hpp"
#include "thyreg/sim.hpp"
#include "thyreg/thyroid.hpp"

namespace thyreg {

enum class RunMode { Nominal, Realistic };

std::string to_string(RunMode m);
RunMode parse_run_mode(const std::string& s);

struct RunMetrics {
  // Days until the daily mean enters and stays in the band; nullopt = not reached.
  std::optional<int> t4_days, t3_days, tsh_days, all_days;
  double initial_dose_mg = 0.0;
  double maintenance_dose_mg = 0.0;  // mean administered dose over the last 5 days
  double total_administered_mg = 0.0;
  int days = 0;
  long solver_iterations = 0;
  int degraded_steps = 0;
  double worst_stationarity = 0.0;
  bool aborted = false;
};

// Daily means of one state component over whole days of the grid.
std::vector<double> daily_means(const SimulationRecord& r, int component);

// First day d such that every daily mean from d on is within +-band of x_s.
std::optional<int> time_to_band(const std::vector<double>& daily, double setpoint, double band);

RunMetrics compute_metrics(const SimulationRecord& r, const HormoneState& x_s, double band = 0.1);

// Fully resolved inputs of one closed-loop run.
struct ScenarioSetup {
  ScenarioConfig scenario;
  RunMode mode = RunMode::Nominal;
  ModelParams controller_model;  // never sees the mismatch
  ModelParams plant;
  HormoneState x_s;
  HormoneState x0;
  OcpConfig ocp;
  ClosedLoopSetup loop;
};

// Healthy setpoint: zero-dose steady state, normal iodide, TRH at its mean.
HormoneState healthy_setpoint(const ParameterSet& p);

ScenarioSetup prepare_scenario(const ParameterSet& p, ScenarioName name, RunMode mode,
                               std::optional<unsigned long long> seed = std::nullopt);

struct ScenarioRun {
  ScenarioSetup setup;
  SimulationRecord record;
  RunMetrics metrics;
};

ScenarioRun run_scenario(const ParameterSet& p, ScenarioName name, RunMode mode,
                         std::optional<unsigned long long> seed = std::nullopt);

// "section.key=value" edits applied to config text before loading.
std::string apply_overrides(const std::string& config_text, const std::vector<std::string>& overrides);

std::uint64_t config_hash(const std::string& text);
std::string metrics_json(const RunMetrics& m, const ScenarioSetup& s);
std::string manifest_json(const ScenarioSetup& s, const std::string& config_text, const std::string& csv_name,
                          const std::string& metrics_name);

}  // namespace thyreg
