#pragma once

#include <Eigen/Dense>
#include <vector>

#include "thyreg/optim.hpp"
#include "thyreg/params.hpp"
#include "thyreg/pk.hpp"
#include "thyreg/sim.hpp"
#include "thyreg/thyroid.hpp"

namespace thyreg {

struct OcpConfig {
  double horizon = 10 * 86400.0;  // s
  double delta = 86400.0;         // s
  double q_T4 = 1e3, q_T3 = 1e3, q_TSH = 1e3;
  double R1 = 5e-3, R2 = 1e-2;  // doses in mg
  double u_max = 15.0;          // mg
  HormoneState x_s = HormoneState::Zero();
  double quadrature_step = 3600.0;  // s
  Route route = Route::Oral;
  double tolerance = 1e-6;
  int max_iterations = 100;
  bool finite_difference_gradient = false;
  IntegratorConfig integrator;

  int steps() const;
  void validate() const;
  static OcpConfig from(const ParameterSet& p, const ScenarioConfig& sc, const HormoneState& x_s);
};

struct ControllerState {
  double prev_dose = 0.0;        // u*(t - delta), mg
  DoseSchedule history;          // doses the controller believes were given
  Eigen::VectorXd last_sequence;  // empty before the first solve
};

ControllerState initial_controller_state(const OcpConfig& cfg);

// Candidate dose k is given at t + k*delta.
DoseSchedule candidate_schedule(double t, const Eigen::VectorXd& candidate, const OcpConfig& cfg);

// Plasma at t + k*delta from the history plus the candidate doses given up to that instant.
double predict_plasma(const DoseSchedule& history, const Eigen::VectorXd& candidate, double t, int k,
                      const PkParams& pk, Route route, double delta);

struct CostBreakdown {
  double total = 0.0;
  double state = 0.0;
  double r1 = 0.0;
  double r2 = 0.0;
  Eigen::VectorXd gradient;  // filled when requested
  // Gauss-Newton Hessian model, filled with the sensitivity gradient
  Eigen::MatrixXd curvature;
};

// Shooting cost from x_t at absolute time t.
CostBreakdown evaluate_cost(double t, const HormoneState& x_t, const Eigen::VectorXd& candidate, double prev_dose,
                            const DoseSchedule& history, const OcpConfig& cfg, const ModelParams& model,
                            bool with_gradient = false);

struct OcpSolution {
  Eigen::VectorXd sequence;
  double cost = 0.0;
  int iterations = 0;
  int evaluations = 0;
  double stationarity = 0.0;
  bool converged = false;
};

// Warm start: previous sequence shifted by one with the last entry repeated;
// all u_max on the first call. `initial` overrides the warm start.
OcpSolution solve_ocp(double t, const HormoneState& x_t, const ControllerState& ctrl, const OcpConfig& cfg,
                      const ModelParams& model, const Eigen::VectorXd* initial = nullptr);

ControlDecision mpc_step(double t, const HormoneState& x_t, ControllerState& ctrl, const OcpConfig& cfg,
                         const ModelParams& model);

// Receding-horizon controller over an unmismatched prediction model.
class MpcController : public DoseController {
 public:
  MpcController(OcpConfig cfg, ModelParams model);
  ControlDecision decide(double t, const HormoneState& measured) override;

  const ControllerState& state() const { return state_; }
  const OcpConfig& config() const { return cfg_; }
  const ModelParams& model() const { return model_; }

 private:
  OcpConfig cfg_;
  ModelParams model_;
  ControllerState state_;
};

}  // namespace thyreg
