#include "thyreg/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <numeric>

namespace thyreg {

std::string to_string(RunMode m) { return m == RunMode::Realistic ? "realistic" : "nominal"; }

RunMode parse_run_mode(const std::string& s) {
  if (s == "nominal") return RunMode::Nominal;
  if (s == "realistic") return RunMode::Realistic;
  throw ConfigError("unknown mode '" + s + "'");
}

std::vector<double> daily_means(const SimulationRecord& r, int component) {
  std::vector<double> sum, count;
  for (const auto& row : r.grid) {
    const auto day = static_cast<std::size_t>(std::floor(row.time / 86400.0));
    if (sum.size() <= day) {
      sum.resize(day + 1, 0.0);
      count.resize(day + 1, 0.0);
    }
    sum[day] += row.x(component);
    count[day] += 1.0;
  }
  // the closing row at the final instant starts a day that is not covered
  if (!count.empty() && count.back() < count.front()) {
    sum.pop_back();
    count.pop_back();
  }
  std::vector<double> out(sum.size());
  for (std::size_t d = 0; d < sum.size(); ++d) out[d] = sum[d] / count[d];
  return out;
}

std::optional<int> time_to_band(const std::vector<double>& daily, double setpoint, double band) {
  int first = static_cast<int>(daily.size());
  for (int d = static_cast<int>(daily.size()) - 1; d >= 0; --d) {
    if (std::fabs(daily[d] - setpoint) > band * std::fabs(setpoint)) break;
    first = d;
  }
  if (first == static_cast<int>(daily.size())) return std::nullopt;
  return first;
}

RunMetrics compute_metrics(const SimulationRecord& r, const HormoneState& x_s, double band) {
  RunMetrics m;
  m.aborted = r.aborted;
  m.t4_days = time_to_band(daily_means(r, T4), x_s(T4), band);
  m.t3_days = time_to_band(daily_means(r, T3), x_s(T3), band);
  m.tsh_days = time_to_band(daily_means(r, TSH), x_s(TSH), band);
  if (m.t4_days && m.t3_days && m.tsh_days) m.all_days = std::max({*m.t4_days, *m.t3_days, *m.tsh_days});
  m.days = static_cast<int>(daily_means(r, T4).size());

  if (!r.samples.empty()) m.initial_dose_mg = r.samples.front().commanded_mg;
  double last_t = r.samples.empty() ? 0.0 : r.samples.back().time;
  double sum = 0.0;
  int n = 0;
  for (const auto& s : r.samples) {
    m.total_administered_mg += s.administered_mg;
    if (s.time > last_t - 5.0 * 86400.0) {
      sum += s.administered_mg;
      ++n;
    }
    m.solver_iterations += s.iterations;
    if (s.degraded) ++m.degraded_steps;
    m.worst_stationarity = std::max(m.worst_stationarity, s.stationarity);
  }
  m.maintenance_dose_mg = n > 0 ? sum / n : 0.0;
  return m;
}

HormoneState healthy_setpoint(const ParameterSet& p) {
  return solve_steady_state(make_model(p, IodideRegime::Normal, 1.0, TrhMode::Frozen), 0.0).x;
}

ScenarioSetup prepare_scenario(const ParameterSet& p, ScenarioName name, RunMode mode,
                               std::optional<unsigned long long> seed) {
  ScenarioSetup s;
  s.scenario = p.scenario(scenario_key(name));
  if (seed) s.scenario.rng_seed = *seed;
  s.mode = mode;
  const ScenarioConfig& sc = s.scenario;

  s.controller_model = make_model(p, sc.sigmoid, sc.gT_multiplier, TrhMode::Circadian);
  s.plant = s.controller_model;
  if (mode == RunMode::Realistic) s.plant.thyroid = apply_mismatch(s.plant.thyroid, sc.mismatch);

  s.x_s = healthy_setpoint(p);
  s.x0 = solve_steady_state(s.plant, 0.0).x;
  s.ocp = OcpConfig::from(p, sc, s.x_s);

  ClosedLoopSetup& l = s.loop;
  l.plant = s.plant;
  l.x0 = s.x0;
  l.route = sc.route;
  l.delta = sc.delta;
  l.duration = sc.sim_duration;
  l.noisy = mode == RunMode::Realistic;
  l.noise = sc.noise;
  if (mode == RunMode::Realistic && sc.route == Route::Oral) l.missed_dose_days = sc.missed_dose_days;
  l.seed = sc.rng_seed;
  l.integrator = IntegratorConfig::from(p.integrator);
  l.scenario = scenario_key(name);
  l.mode = to_string(mode);
  return s;
}

ScenarioRun run_scenario(const ParameterSet& p, ScenarioName name, RunMode mode,
                         std::optional<unsigned long long> seed) {
  ScenarioRun run;
  run.setup = prepare_scenario(p, name, mode, seed);
  MpcController controller(run.setup.ocp, run.setup.controller_model);
  run.record = run_closed_loop(run.setup.loop, controller);
  run.metrics = compute_metrics(run.record, run.setup.x_s);
  return run;
}

std::string apply_overrides(const std::string& config_text, const std::vector<std::string>& overrides) {
  if (overrides.empty()) return config_text;
  ConfigDocument doc = parse_config(config_text);
  for (const auto& o : overrides) {
    auto eq = o.find('=');
    auto dot = o.rfind('.', eq);
    if (eq == std::string::npos || dot == std::string::npos || dot == 0)
      throw ConfigError("override must look like section.key=value, got '" + o + "'");
    std::string sec = o.substr(0, dot), key = o.substr(dot + 1, eq - dot - 1), value = o.substr(eq + 1);
    const ConfigSection* s = doc.find(sec);
    if (!s || !s->find(key)) throw ConfigError("override names unknown key '" + sec + "." + key + "'");
    doc.set(sec, key, value);
  }
  return format_config(doc);
}

std::uint64_t config_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a offset basis
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

nlohmann::json days_json(const std::optional<int>& d) { return d ? nlohmann::json(*d) : nlohmann::json(nullptr); }

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string metrics_json(const RunMetrics& m, const ScenarioSetup& s) {
  nlohmann::json j;
  j["scenario"] = scenario_key(s.scenario.name);
  j["mode"] = to_string(s.mode);
  j["seed"] = s.scenario.rng_seed;
  j["band"] = 0.1;
  j["time_to_band_days"] = {{"T4", days_json(m.t4_days)},
                            {"T3", days_json(m.t3_days)},
                            {"TSH", days_json(m.tsh_days)},
                            {"all", days_json(m.all_days)}};
  j["initial_dose_mg"] = m.initial_dose_mg;
  j["maintenance_dose_mg"] = m.maintenance_dose_mg;
  j["total_administered_mg"] = m.total_administered_mg;
  j["days"] = m.days;
  j["solver"] = {{"iterations", m.solver_iterations},
                 {"degraded_steps", m.degraded_steps},
                 {"worst_stationarity", m.worst_stationarity}};
  j["aborted"] = m.aborted;
  return j.dump(2) + "\n";
}

std::string manifest_json(const ScenarioSetup& s, const std::string& config_text, const std::string& csv_name,
                          const std::string& metrics_name) {
  nlohmann::json j;
  j["scenario"] = scenario_key(s.scenario.name);
  j["mode"] = to_string(s.mode);
  j["seed"] = s.scenario.rng_seed;
  j["config_fnv1a64"] = hex(config_hash(config_text));
  j["record"] = csv_name;
  j["metrics"] = metrics_name;
  j["route"] = to_string(s.scenario.route);
  j["delta_s"] = s.scenario.delta;
  j["u_max_mg"] = s.scenario.u_max;
  j["gT_multiplier"] = s.scenario.gT_multiplier;
  j["sigmoid"] = to_string(s.scenario.sigmoid);
  return j.dump(2) + "\n";
}

}  // namespace thyreg
