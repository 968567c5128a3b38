#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "thyreg/params.hpp"
#include "thyreg/pk.hpp"

namespace thyreg {

constexpr int kStateSize = 9;

template <typename Scalar>
using StateT = Eigen::Matrix<Scalar, kStateSize, 1>;
using HormoneState = StateT<double>;

// Component order of HormoneState.
enum StateIndex : int { T4th = 0, T4 = 1, T3 = 2, T3c = 3, TSH = 4, TSHz = 5, ITg = 6, MMI1 = 7, MMI2 = 8 };

const char* state_name(int i);

enum class TrhMode { Circadian, Frozen };

// Everything the right-hand side needs. Immutable once built.
struct ModelParams {
  ThyroidParams thyroid{};
  TpoSigmoidParams sigmoid;
  PkParams pk;
  Pdt2Params pdt2;
  TrhMode trh = TrhMode::Circadian;
};

ModelParams make_model(const ParameterSet& p, IodideRegime regime = IodideRegime::Normal,
                       double gT_multiplier = 1.0, TrhMode trh = TrhMode::Circadian);

struct AlgebraicOutputs {
  double FT4, FT3, T3N;
  double TPO, TPO_a, SSF, Tg_eff, scale;
  double TRH_t, MMI_th;
};

double trh_forcing(double t, const ThyroidParams& p);
double trh_value(double t, const ModelParams& m);

AlgebraicOutputs algebraic_outputs(double t, const HormoneState& x, const ModelParams& m);

// Individual additive terms of the right-hand side, named after the appendix.
template <typename Scalar>
struct RhsTerms {
  Scalar t4_synthesis;      // G_T TSH/(TSH+D_T) K_I I_Tg
  Scalar mct8_export;       // G_MCT8 T4th/(K_MCT8+T4th)
  Scalar d1_thyroidal;      // G_D1 y/(y+K_M1), y = T4th TSH/(TSH+k_Dio)
  Scalar d2_thyroidal;      // G_D2 y/(y+K_M2)
  Scalar t4th_decay;        // beta_th T4th
  Scalar t4_decay;          // beta_T T4
  Scalar d1_peripheral;     // G_D1 FT4/(FT4+K_M1)
  Scalar d2_peripheral;     // G_D2 FT4/(FT4+K_M2)
  Scalar t3_direct;         // G_T3 TSH/(D_T+TSH)
  Scalar t3_decay;          // beta_31 T3
  Scalar t3c_decay;         // beta_32 T3c
  Scalar tsh_release;       // G_H TRH/(TRH+D_H) / ((1+S_S..)(1+L_S G_R..))
  Scalar tsh_decay;         // beta_S TSH
  Scalar tshz_decay;        // beta_S2 TSHz
  Scalar iodination;        // tau TPO TPO_a (H2O2)(I_C)(Tg_eff) factors
  Scalar endocytosis;       // V_apical SSF A alpha_endo I_Tg / ((K+SSF) A_nom)
};

template <typename Scalar>
RhsTerms<Scalar> rhs_terms(double trh, const StateT<Scalar>& x, const ModelParams& m) {
  const ThyroidParams& p = m.thyroid;
  RhsTerms<Scalar> r;
  const Scalar& tsh = x(TSH);
  const Scalar& t4th = x(T4th);

  const Scalar FT4 = x(T4) / (1.0 + p.K_41 * p.TBG + p.K_42 * p.TBPA);
  const Scalar T3N = x(T3c) / (1.0 + p.K_31 * p.IBS);
  const Scalar SSF = (100.0 * tsh - p.R * tsh) / (178.2 + tsh);
  const double body = 1.97 + 0.21 * p.weight + 0.06 * p.age;
  const double scale = (p.V_measured - 0.17 * body) / body;
  const Scalar TPO = p.V_TPO_SSF * SSF / (p.K_TPO_SSF + SSF) * (p.V_colloid_nom / p.V_colloid) *
                     (p.alpha_TPO_Tg / (p.K_TPO_Tg + p.T_g)) * scale;
  const Scalar Tg_eff = 1.0 - x(ITg) / p.T_g;
  Scalar mmi_th = intrathyroidal_output<Scalar>(x(MMI1), x(MMI2), m.pdt2);
  const Scalar TPO_a = tpo_activity_clamped<Scalar>(mmi_th, m.sigmoid);

  const Scalar y = t4th * (tsh / (tsh + p.k_Dio));
  r.t4_synthesis = p.G_T * tsh / (tsh + p.D_T) * p.K_I * x(ITg);
  r.mct8_export = p.G_MCT8 * t4th / (p.K_MCT8 + t4th);
  r.d1_thyroidal = p.G_D1 * y / (y + p.K_M1);
  r.d2_thyroidal = p.G_D2 * y / (y + p.K_M2);
  r.t4th_decay = p.beta_th * t4th;
  r.t4_decay = p.beta_T * x(T4);
  r.d1_peripheral = p.G_D1 * FT4 / (FT4 + p.K_M1);
  r.d2_peripheral = p.G_D2 * FT4 / (FT4 + p.K_M2);
  r.t3_direct = p.G_T3 * tsh / (p.D_T + tsh);
  r.t3_decay = p.beta_31 * x(T3);
  r.t3c_decay = p.beta_32 * x(T3c);
  r.tsh_release = p.G_H * trh / (trh + p.D_H) /
                  ((1.0 + p.S_S * x(TSHz) / (x(TSHz) + p.D_S)) * (1.0 + p.L_S * p.G_R * T3N / (T3N + p.D_R)));
  r.tsh_decay = p.beta_S * tsh;
  r.tshz_decay = p.beta_S2 * x(TSHz);
  r.iodination = p.tau_TPO * TPO * TPO_a * (p.V_org_H2O2 * p.H2O2 / (p.K_org_H2O2 + p.H2O2)) *
                 (p.V_org_IC * p.I_C * p.V_org_Tg * Tg_eff) / ((p.K_org_IC + p.I_C) * (p.K_org_Tg + Tg_eff));
  r.endocytosis = p.V_apical_SSF * SSF * p.A_apical * p.alpha_endo * x(ITg) / ((p.K_apical_SSF + SSF) * p.A_apical_nom);
  return r;
}

// Right-hand side for a given TRH value and plasma MMI concentration.
template <typename Scalar>
StateT<Scalar> rhs_core(double trh, const StateT<Scalar>& x, double plasma, const ModelParams& m) {
  const ThyroidParams& p = m.thyroid;
  const RhsTerms<Scalar> r = rhs_terms<Scalar>(trh, x, m);
  StateT<Scalar> dx;
  dx(T4th) = p.alpha_th * (r.t4_synthesis - r.mct8_export - r.d1_thyroidal - r.d2_thyroidal) - r.t4th_decay;
  dx(T4) = p.alpha_T * r.mct8_export - r.t4_decay;
  dx(T3) = p.alpha_31 * (r.d1_peripheral + r.d2_peripheral + r.d1_thyroidal + r.d2_thyroidal + r.t3_direct) - r.t3_decay;
  dx(T3c) = p.alpha_32 * r.d2_peripheral - r.t3c_decay;
  dx(TSH) = p.alpha_S * r.tsh_release - r.tsh_decay;
  dx(TSHz) = p.alpha_S2 * r.tsh_release - r.tshz_decay;
  dx(ITg) = r.iodination - r.endocytosis;
  Scalar d1, d2;
  intrathyroidal_rhs<Scalar>(x(MMI1), x(MMI2), plasma, m.pdt2, d1, d2);
  dx(MMI1) = d1;
  dx(MMI2) = d2;
  return dx;
}

HormoneState rhs(double t, const HormoneState& x, const DoseSchedule& schedule, const ModelParams& m);
HormoneState rhs_plasma(double t, const HormoneState& x, double plasma, const ModelParams& m);
Eigen::Matrix<double, kStateSize, kStateSize> rhs_jacobian(double t, const HormoneState& x, double plasma,
                                                           const ModelParams& m);

ThyroidParams apply_condition(const ThyroidParams& p, double gT_multiplier);

// Typical magnitudes per component, used for tolerances and residual scaling.
HormoneState typical_magnitudes();

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double best_residual)
      : std::runtime_error(what), best_residual(best_residual) {}
  double best_residual;
};

struct SteadyStateResult {
  HormoneState x;
  double residual = 0.0;  // max |f_i| / (|x_i| + floor_i), 1/s
  int newton_iterations = 0;
};

// Scaled residual of the frozen-TRH right-hand side.
double steady_state_residual(const HormoneState& x, const ModelParams& m, double constant_plasma);

// Equilibrium with TRH at its mean and plasma held at constant_plasma (mol/L).
SteadyStateResult solve_steady_state(const ModelParams& m, double constant_plasma = 0.0);
SteadyStateResult solve_steady_state(const ModelParams& m, double constant_plasma, const HormoneState& guess);

}  // namespace thyreg
