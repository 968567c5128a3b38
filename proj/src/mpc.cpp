#include "thyreg/mpc.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace thyreg {

int OcpConfig::steps() const { return static_cast<int>(std::lround(horizon / delta)); }

void OcpConfig::validate() const {
  if (!(delta > 0.0) || !(horizon > 0.0) || std::fabs(horizon / delta - steps()) > 1e-9)
    throw std::invalid_argument("OcpConfig: horizon must be an integer multiple of delta");
  if (q_T4 < 0 || q_T3 < 0 || q_TSH < 0 || R1 < 0 || R2 < 0) throw std::invalid_argument("OcpConfig: negative weight");
  if (!(u_max > 0.0)) throw std::invalid_argument("OcpConfig: u_max must be positive");
  if (!(quadrature_step > 0.0)) throw std::invalid_argument("OcpConfig: quadrature step must be positive");
}

OcpConfig OcpConfig::from(const ParameterSet& p, const ScenarioConfig& sc, const HormoneState& x_s) {
  OcpConfig c;
  c.horizon = sc.horizon;
  c.delta = sc.delta;
  c.q_T4 = p.mpc.q_T4;
  c.q_T3 = p.mpc.q_T3;
  c.q_TSH = p.mpc.q_TSH;
  c.R1 = p.mpc.R1;
  c.R2 = p.mpc.R2;
  c.u_max = sc.u_max;
  c.x_s = x_s;
  c.quadrature_step = p.mpc.quadrature_step;
  c.route = sc.route;
  c.tolerance = p.mpc.tolerance;
  c.max_iterations = p.mpc.max_iterations;
  c.finite_difference_gradient = p.mpc.finite_difference_gradient;
  c.integrator = IntegratorConfig::from(p.integrator);
  c.validate();
  return c;
}

ControllerState initial_controller_state(const OcpConfig& cfg) {
  ControllerState s;
  s.prev_dose = cfg.u_max;
  return s;
}

DoseSchedule candidate_schedule(double t, const Eigen::VectorXd& candidate, const OcpConfig& cfg) {
  DoseSchedule s;
  for (Eigen::Index k = 0; k < candidate.size(); ++k)
    s.add({t + static_cast<double>(k) * cfg.delta, candidate(k), cfg.route});
  return s;
}

double predict_plasma(const DoseSchedule& history, const Eigen::VectorXd& candidate, double t, int k,
                      const PkParams& pk, Route route, double delta) {
  const double tk = t + static_cast<double>(k) * delta;
  double sum = 0.0;
  for (const auto& e : history.events()) sum += plasma_single(e, tk, pk);
  for (Eigen::Index j = 0; j < candidate.size() && j <= k; ++j)
    sum += plasma_single({t + static_cast<double>(j) * delta, candidate(j), route}, tk, pk);
  return sum;
}

namespace {

struct Tracking {
  const OcpConfig& cfg;
  double weight(int i) const {
    if (i == T4) return cfg.q_T4;
    if (i == T3) return cfg.q_T3;
    if (i == TSH) return cfg.q_TSH;
    return 0.0;
  }
  double stage(const HormoneState& x) const {
    double s = 0.0;
    for (int i : {T4, T3, TSH}) s += weight(i) * (x(i) - cfg.x_s(i)) * (x(i) - cfg.x_s(i));
    return s;
  }
};

// Trapezoid of the tracking integral on the fixed grid, optionally with its
// gradient through the forward sensitivities.
double state_cost(double t, const HormoneState& x_t, const Eigen::VectorXd& candidate, const DoseSchedule& history,
                  const OcpConfig& cfg, const ModelParams& model, Eigen::VectorXd* grad, Eigen::MatrixXd* curv) {
  const int n_dose = static_cast<int>(candidate.size());
  const long n_quad = std::lround(cfg.horizon / cfg.quadrature_step);
  const double hq = cfg.horizon / static_cast<double>(n_quad);
  DoseSchedule sched = DoseSchedule::merge(history, candidate_schedule(t, candidate, cfg));
  Tracking tr{cfg};

  SensitivityRequest sens;
  if (grad) {
    sens.S0 = Eigen::MatrixXd::Zero(kStateSize, n_dose);
    for (int k = 0; k < n_dose; ++k) sens.unit_doses.push_back({t + k * cfg.delta, 1.0, cfg.route});
    grad->setZero(n_dose);
    if (curv) curv->setZero(n_dose, n_dose);
  }

  double sum = 0.5 * tr.stage(x_t);
  long next = 1;
  Eigen::VectorXd y(kStateSize);
  Eigen::MatrixXd S;
  auto on_step = [&](const ode::BdfSolver& s) {
    while (next <= n_quad) {
      const double tq = t + static_cast<double>(next) * hq;
      if (tq > s.t() + 1e-9 * hq) break;
      s.eval(tq, y);
      const double w = next == n_quad ? 0.5 : 1.0;
      sum += w * tr.stage(y);
      if (grad) {
        s.eval_sens(tq, S);
        for (int i : {T4, T3, TSH}) {
          const double c = 2.0 * w * tr.weight(i) * (y(i) - cfg.x_s(i));
          *grad += c * S.row(i).transpose();
          if (curv) curv->noalias() += (2.0 * w * tr.weight(i)) * S.row(i).transpose() * S.row(i);
        }
      }
      ++next;
    }
  };
  integrate_steps(x_t, t, t + cfg.horizon, sched, model, cfg.integrator, on_step, grad ? &sens : nullptr);
  if (next <= n_quad) throw IntegrationError("quadrature grid not covered", t + cfg.horizon);
  if (grad) *grad *= hq;
  if (grad && curv) *curv *= hq;
  return sum * hq;
}

}  // namespace

CostBreakdown evaluate_cost(double t, const HormoneState& x_t, const Eigen::VectorXd& candidate, double prev_dose,
                            const DoseSchedule& history, const OcpConfig& cfg, const ModelParams& model,
                            bool with_gradient) {
  if (candidate.size() != cfg.steps()) throw std::invalid_argument("evaluate_cost: candidate length must be T/delta");
  if ((candidate.array() < 0.0).any() || (candidate.array() > cfg.u_max).any())
    throw std::domain_error("evaluate_cost: candidate outside [0, u_max]");
  CostBreakdown c;
  const bool sens_grad = with_gradient && !cfg.finite_difference_gradient;
  Eigen::VectorXd g;
  c.state = state_cost(t, x_t, candidate, history, cfg, model, sens_grad ? &g : nullptr,
                       sens_grad ? &c.curvature : nullptr);
  if (with_gradient && cfg.finite_difference_gradient) {
    g.resize(candidate.size());
    const double h = 1e-4 * cfg.u_max;
    for (Eigen::Index k = 0; k < candidate.size(); ++k) {
      Eigen::VectorXd up = candidate, dn = candidate;
      up(k) = std::min(cfg.u_max, candidate(k) + h);
      dn(k) = std::max(0.0, candidate(k) - h);
      g(k) = (state_cost(t, x_t, up, history, cfg, model, nullptr, nullptr) -
              state_cost(t, x_t, dn, history, cfg, model, nullptr, nullptr)) /
             (up(k) - dn(k));
    }
  }
  c.r1 = cfg.R1 * candidate.squaredNorm();
  c.r2 = cfg.R2 * (candidate.array() - prev_dose).square().sum();
  c.total = c.state + c.r1 + c.r2;
  if (with_gradient) {
    c.gradient = g + 2.0 * cfg.R1 * candidate + 2.0 * cfg.R2 * (candidate.array() - prev_dose).matrix();
    if (c.curvature.size() != 0) c.curvature.diagonal().array() += 2.0 * (cfg.R1 + cfg.R2);
  }
  return c;
}

OcpSolution solve_ocp(double t, const HormoneState& x_t, const ControllerState& ctrl, const OcpConfig& cfg,
                      const ModelParams& model, const Eigen::VectorXd* initial) {
  if (!x_t.allFinite()) throw std::invalid_argument("solve_ocp: non-finite state");
  const int n = cfg.steps();
  Eigen::VectorXd x0;
  if (initial) {
    x0 = *initial;
  } else if (ctrl.last_sequence.size() == n) {
    x0.resize(n);
    x0.head(n - 1) = ctrl.last_sequence.tail(n - 1);
    x0(n - 1) = ctrl.last_sequence(n - 1);
  } else {
    x0 = Eigen::VectorXd::Constant(n, cfg.u_max);
  }
  const Eigen::VectorXd lo = Eigen::VectorXd::Zero(n);
  const Eigen::VectorXd hi = Eigen::VectorXd::Constant(n, cfg.u_max);
  x0 = optim::project(x0, lo, hi);

  bool first = true;
  optim::Objective fg = [&](const Eigen::VectorXd& u, Eigen::VectorXd& grad, Eigen::MatrixXd& curv) {
    try {
      CostBreakdown c = evaluate_cost(t, x_t, u, ctrl.prev_dose, ctrl.history, cfg, model, true);
      grad = c.gradient;
      curv = c.curvature;
      first = false;
      return c.total;
    } catch (const IntegrationError&) {
      if (first) throw;
      grad.setZero(u.size());
      curv.resize(0, 0);
      return std::numeric_limits<double>::infinity();
    }
  };
  optim::BoxQnOptions opts;
  opts.max_iterations = cfg.max_iterations;
  opts.tolerance = cfg.tolerance;
  optim::BoxQnResult r = optim::minimize_box(fg, x0, lo, hi, opts);

  OcpSolution s;
  s.sequence = r.x;
  s.cost = r.f;
  s.iterations = r.iterations;
  s.evaluations = r.evaluations;
  s.stationarity = r.stationarity;
  s.converged = r.converged;
  return s;
}

ControlDecision mpc_step(double t, const HormoneState& x_t, ControllerState& ctrl, const OcpConfig& cfg,
                         const ModelParams& model) {
  OcpSolution sol = solve_ocp(t, x_t, ctrl, cfg, model);
  ControlDecision d;
  d.dose_mg = sol.sequence(0);
  d.degraded = !sol.converged;
  d.iterations = sol.iterations;
  d.stationarity = sol.stationarity;
  d.cost = sol.cost;
  ctrl.prev_dose = d.dose_mg;
  ctrl.history.add({t, d.dose_mg, cfg.route});
  ctrl.last_sequence = sol.sequence;
  return d;
}

MpcController::MpcController(OcpConfig cfg, ModelParams model)
    : cfg_(std::move(cfg)), model_(std::move(model)), state_(initial_controller_state(cfg_)) {
  cfg_.validate();
}

ControlDecision MpcController::decide(double t, const HormoneState& measured) {
  return mpc_step(t, measured, state_, cfg_, model_);
}

}  // namespace thyreg
