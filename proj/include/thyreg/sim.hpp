#pragma once

#include <Eigen/Dense>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "thyreg/bdf.hpp"
#include "thyreg/params.hpp"
#include "thyreg/pk.hpp"
#include "thyreg/thyroid.hpp"

namespace thyreg {

using ode::IntegrationError;

struct IntegratorConfig {
  double rtol = 1e-8;
  HormoneState atol = typical_magnitudes() * 1e-8;
  double max_step = 0.0;  // 0: unbounded
  bool check_nonnegative = true;
  bool split_at_doses = true;  // restart the integrator at dose instants

  static IntegratorConfig from(const IntegratorSettings& s);
};

// Dense trajectory: one interpolating polynomial per accepted step.
class Trajectory {
 public:
  double t0() const { return steps_.empty() ? t_start_ : steps_.front().t_old; }
  double t1() const { return steps_.empty() ? t_start_ : steps_.back().t; }
  HormoneState at(double t) const;
  const HormoneState& initial() const { return x0_; }
  const HormoneState& final_state() const { return x1_; }
  std::size_t step_count() const { return steps_.size(); }
  std::size_t segment_count() const { return segments_; }

 private:
  friend Trajectory integrate(const HormoneState&, double, double, const DoseSchedule&, const ModelParams&,
                              const IntegratorConfig&);
  double t_start_ = 0.0;
  HormoneState x0_, x1_;
  std::vector<ode::DenseStep> steps_;
  std::size_t segments_ = 0;
};

// Integrates over [t0, t1], restarting at every dose time inside the interval.
Trajectory integrate(const HormoneState& x0, double t0, double t1, const DoseSchedule& schedule, const ModelParams& m,
                     const IntegratorConfig& cfg);

// Forward sensitivities for integrate_steps: S(t0) = S0, and per column k the
// forcing is the plasma response to sens_doses[k] per unit amount (1 mg).
struct SensitivityRequest {
  Eigen::MatrixXd S0;
  std::vector<DoseEvent> unit_doses;  // may be empty for pure initial-state sensitivities
};

// Lower-level driver: calls on_step after each accepted step with the solver,
// which exposes the dense polynomial of that step.
struct StepResult {
  HormoneState x;
  Eigen::MatrixXd S;
  long steps = 0;
  std::size_t segments = 0;
};
StepResult integrate_steps(const HormoneState& x0, double t0, double t1, const DoseSchedule& schedule,
                           const ModelParams& m, const IntegratorConfig& cfg,
                           const std::function<void(const ode::BdfSolver&)>& on_step,
                           const SensitivityRequest* sens = nullptr);

// Relative multiplicative measurement noise, truncated by rejection.
HormoneState measure(const HormoneState& x, const NoiseConfig& n, std::mt19937_64& rng);
double truncated_normal(double std, double truncation, std::mt19937_64& rng);

ThyroidParams apply_mismatch(const ThyroidParams& p, const std::map<std::string, double>& mismatch);

// Decision made at one sampling instant.
struct ControlDecision {
  double dose_mg = 0.0;
  bool degraded = false;
  int iterations = 0;
  double stationarity = 0.0;
  double cost = 0.0;
};

// Anything that can prescribe a dose from a measured state.
class DoseController {
 public:
  virtual ~DoseController() = default;
  virtual ControlDecision decide(double t, const HormoneState& measured) = 0;
};

struct SampleRecord {
  double time = 0.0;
  HormoneState measured;
  double commanded_mg = 0.0;
  double administered_mg = 0.0;
  bool degraded = false;
  int iterations = 0;
  double stationarity = 0.0;
};

struct GridRow {
  double time = 0.0;
  HormoneState x;
  double FT4 = 0.0, FT3 = 0.0, TPO_a = 0.0;
  std::optional<double> commanded_mg;
  std::optional<double> administered_mg;
};

struct SimulationRecord {
  std::string scenario;
  std::string mode;
  unsigned long long seed = 0;
  double delta = 0.0;
  Route route = Route::Oral;
  std::vector<GridRow> grid;
  std::vector<SampleRecord> samples;
  bool aborted = false;
  std::string diagnostic;
};

struct ClosedLoopSetup {
  ModelParams plant;
  HormoneState x0;
  Route route = Route::Oral;
  double delta = 86400.0;
  double duration = 0.0;
  bool noisy = false;
  NoiseConfig noise;
  std::vector<int> missed_dose_days;
  unsigned long long seed = 0;
  IntegratorConfig integrator;
  double grid_step = 3600.0;
  std::string scenario;
  std::string mode;
};

SimulationRecord run_closed_loop(const ClosedLoopSetup& setup, DoseController& controller);

// CSV with the fixed header documented in README.md.
std::string csv_header();
void write_csv(const SimulationRecord& r, std::ostream& out);
SimulationRecord read_csv(std::istream& in);

}  // namespace thyreg
