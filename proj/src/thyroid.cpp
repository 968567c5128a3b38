#include "thyreg/thyroid.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <algorithm>
#include <limits>

#include "thyreg/bdf.hpp"

namespace thyreg {

namespace {

using AdVec = Eigen::Matrix<double, kStateSize, 1>;
using Ad = Eigen::AutoDiffScalar<AdVec>;

}  // namespace

const char* state_name(int i) {
  static const char* names[kStateSize] = {"T4th", "T4", "T3", "T3c", "TSH", "TSHz", "I_Tg", "MMI1", "MMI2"};
  return (i >= 0 && i < kStateSize) ? names[i] : "?";
}

ModelParams make_model(const ParameterSet& p, IodideRegime regime, double gT_multiplier, TrhMode trh) {
  ModelParams m;
  m.thyroid = apply_condition(p.thyroid, gT_multiplier);
  m.sigmoid = p.sigmoid(regime);
  m.pk = p.pk;
  m.pdt2 = p.pdt2;
  m.trh = trh;
  return m;
}

double trh_forcing(double t, const ThyroidParams& p) {
  return p.TRH * (1.0 + 0.3 * std::cos(2.0 * std::numbers::pi * (t / 86400.0 - 5.0 / 24.0)));
}

double trh_value(double t, const ModelParams& m) {
  return m.trh == TrhMode::Frozen ? m.thyroid.TRH : trh_forcing(t, m.thyroid);
}

AlgebraicOutputs algebraic_outputs(double t, const HormoneState& x, const ModelParams& m) {
  const ThyroidParams& p = m.thyroid;
  AlgebraicOutputs o;
  o.FT3 = x(T3) / (1.0 + p.K_30 * p.TBG);
  o.FT4 = x(T4) / (1.0 + p.K_41 * p.TBG + p.K_42 * p.TBPA);
  o.T3N = x(T3c) / (1.0 + p.K_31 * p.IBS);
  o.SSF = (100.0 * x(TSH) - p.R * x(TSH)) / (178.2 + x(TSH));
  const double body = 1.97 + 0.21 * p.weight + 0.06 * p.age;
  o.scale = (p.V_measured - 0.17 * body) / body;
  o.TPO = p.V_TPO_SSF * o.SSF / (p.K_TPO_SSF + o.SSF) * (p.V_colloid_nom / p.V_colloid) *
          (p.alpha_TPO_Tg / (p.K_TPO_Tg + p.T_g)) * o.scale;
  o.Tg_eff = 1.0 - x(ITg) / p.T_g;
  o.MMI_th = intrathyroidal_output<double>(x(MMI1), x(MMI2), m.pdt2);
  o.TPO_a = tpo_activity_clamped<double>(o.MMI_th, m.sigmoid);
  o.TRH_t = trh_value(t, m);
  return o;
}

HormoneState rhs_plasma(double t, const HormoneState& x, double plasma, const ModelParams& m) {
  return rhs_core<double>(trh_value(t, m), x, plasma, m);
}

HormoneState rhs(double t, const HormoneState& x, const DoseSchedule& schedule, const ModelParams& m) {
  return rhs_plasma(t, x, plasma_from_schedule(schedule, t, m.pk), m);
}

Eigen::Matrix<double, kStateSize, kStateSize> rhs_jacobian(double t, const HormoneState& x, double plasma,
                                                           const ModelParams& m) {
  StateT<Ad> xa;
  for (int i = 0; i < kStateSize; ++i) xa(i) = Ad(x(i), kStateSize, i);
  StateT<Ad> fa = rhs_core<Ad>(trh_value(t, m), xa, plasma, m);
  Eigen::Matrix<double, kStateSize, kStateSize> J;
  for (int i = 0; i < kStateSize; ++i) J.row(i) = fa(i).derivatives().transpose();
  return J;
}

ThyroidParams apply_condition(const ThyroidParams& p, double gT_multiplier) {
  if (!(gT_multiplier >= 1.0)) throw std::domain_error("G_T multiplier must be >= 1");
  ThyroidParams q = p;
  q.G_T = p.G_T * gT_multiplier;
  return q;
}

HormoneState typical_magnitudes() {
  HormoneState s;
  s << 1e-11, 1e-7, 1e-9, 1e-8, 1.0, 1.0, 1e-5, 1e2, 1e-2;
  return s;
}

double steady_state_residual(const HormoneState& x, const ModelParams& m, double constant_plasma) {
  ModelParams frozen = m;
  frozen.trh = TrhMode::Frozen;
  const HormoneState f = rhs_plasma(0.0, x, constant_plasma, frozen);
  const HormoneState floor = typical_magnitudes() * 1e-6;
  return (f.array().abs() / (x.array().abs() + floor.array())).maxCoeff();
}

namespace {

HormoneState relax(const ModelParams& frozen, double plasma, const HormoneState& x0, double duration) {
  ode::BdfOptions opts;
  opts.rtol = 1e-10;
  opts.atol = typical_magnitudes() * 1e-12;
  ode::BdfSolver solver(
      [&](double t, const Eigen::VectorXd& y, Eigen::VectorXd& f) {
        f = rhs_plasma(t, HormoneState(y), plasma, frozen);
      },
      [&](double t, const Eigen::VectorXd& y, Eigen::MatrixXd& J) {
        J = rhs_jacobian(t, HormoneState(y), plasma, frozen);
      },
      opts);
  solver.initialize(0.0, x0, duration);
  while (solver.step()) {
  }
  return solver.y();
}

bool newton(const ModelParams& frozen, double plasma, HormoneState& x, int& iterations, double& best) {
  const HormoneState floor = typical_magnitudes() * 1e-6;
  for (int it = 0; it < 50; ++it) {
    ++iterations;
    const HormoneState f = rhs_plasma(0.0, x, plasma, frozen);
    double res = (f.array().abs() / (x.array().abs() + floor.array())).maxCoeff();
    best = std::min(best, res);
    if (res < 1e-13) return true;
    const auto J = rhs_jacobian(0.0, x, plasma, frozen);
    HormoneState dx = J.fullPivLu().solve(-f);
    if (!dx.allFinite()) return false;
    // damping with positivity projection on the hormone components
    double lambda = 1.0;
    for (int k = 0; k < 30; ++k) {
      HormoneState xn = x + lambda * dx;
      for (int i = 0; i < ITg + 1; ++i) xn(i) = std::max(xn(i), 0.1 * x(i));
      const HormoneState fn = rhs_plasma(0.0, xn, plasma, frozen);
      double rn = (fn.array().abs() / (xn.array().abs() + floor.array())).maxCoeff();
      if (rn < res || k == 29) {
        x = xn;
        break;
      }
      lambda *= 0.5;
    }
  }
  return false;
}

}  // namespace

SteadyStateResult solve_steady_state(const ModelParams& m, double constant_plasma) {
  HormoneState guess;
  guess << 5e-12, 1.2e-7, 4e-9, 1.2e-8, 2.5, 2.6, 0.5 * m.thyroid.T_g, 0.0, 0.0;
  return solve_steady_state(m, constant_plasma, guess);
}

SteadyStateResult solve_steady_state(const ModelParams& m, double constant_plasma, const HormoneState& guess) {
  if (!(constant_plasma >= 0.0)) throw std::domain_error("constant plasma must be >= 0");
  ModelParams frozen = m;
  frozen.trh = TrhMode::Frozen;
  SteadyStateResult out;
  double best = std::numeric_limits<double>::infinity();
  HormoneState x = guess;
  x(MMI1) = constant_plasma / m.pdt2.a0;
  x(MMI2) = 0.0;
  double duration = 200.0 * 86400.0;
  for (int attempt = 0; attempt < 4; ++attempt) {
    x = relax(frozen, constant_plasma, x, duration);
    HormoneState trial = x;
    if (newton(frozen, constant_plasma, trial, out.newton_iterations, best)) {
      out.x = trial;
      out.residual = steady_state_residual(trial, m, constant_plasma);
      return out;
    }
    duration *= 2.0;
  }
  throw ConvergenceError("steady-state solve did not converge", best);
}

}  // namespace thyreg
