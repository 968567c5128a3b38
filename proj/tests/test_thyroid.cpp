#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "thyreg/params.hpp"
#include "thyreg/sim.hpp"
#include "thyreg/thyroid.hpp"

using namespace thyreg;

namespace {

const ParameterSet& params() {
  static const ParameterSet p = default_parameters();
  return p;
}

// The appendix equations written out once more, term by term, without the
// shared helpers. Returns dx and the sum of absolute terms per row.
std::pair<HormoneState, HormoneState> appendix_rhs(double t, const HormoneState& x, double mmi_pl,
                                                   const ModelParams& m) {
  const ThyroidParams& p = m.thyroid;
  const double T4th_ = x(0), T4_ = x(1), T3_ = x(2), T3c_ = x(3), TSH_ = x(4), TSHz_ = x(5), ITg_ = x(6);
  const double MMI1_ = x(7), MMI2_ = x(8);
  const double FT4 = T4_ / (1.0 + p.K_41 * p.TBG + p.K_42 * p.TBPA);
  const double T3N = T3c_ / (1.0 + p.K_31 * p.IBS);
  const double SSF = (100.0 * TSH_ - p.R * TSH_) / (178.2 + TSH_);
  const double bsa = 1.97 + 0.21 * p.weight + 0.06 * p.age;
  const double scale = (p.V_measured - 0.17 * bsa) / bsa;
  const double TPO = p.V_TPO_SSF * SSF / (p.K_TPO_SSF + SSF) * p.V_colloid_nom / p.V_colloid * p.alpha_TPO_Tg /
                     (p.K_TPO_Tg + p.T_g) * scale;
  const double Tgeff = 1.0 - ITg_ / p.T_g;
  const double mmi_th = m.pdt2.b0 * MMI1_ + m.pdt2.b1 * MMI2_;
  const TpoSigmoidParams& s = m.sigmoid;
  const double TPOa = s.c0 / (1.0 + std::exp(-s.c1 * (s.c3 - std::pow(std::max(mmi_th, 0.0), 1.0 / s.c2))));
  const double trh = m.trh == TrhMode::Frozen
                         ? p.TRH
                         : p.TRH * (1.0 + 0.3 * std::cos(2.0 * std::numbers::pi * (t / 86400.0 - 5.0 / 24.0)));

  const double y = T4th_ * TSH_ / (TSH_ + p.k_Dio);
  const double a1 = p.G_T * TSH_ / (TSH_ + p.D_T) * p.K_I * ITg_;
  const double a2 = p.G_MCT8 * T4th_ / (p.K_MCT8 + T4th_);
  const double a3 = p.G_D1 * y / (y + p.K_M1);
  const double a4 = p.G_D2 * y / (y + p.K_M2);
  const double pit = p.G_H * trh / (trh + p.D_H) /
                     ((1.0 + p.S_S * TSHz_ / (TSHz_ + p.D_S)) * (1.0 + p.L_S * p.G_R * T3N / (T3N + p.D_R)));
  const double d1p = p.G_D1 * FT4 / (FT4 + p.K_M1);
  const double d2p = p.G_D2 * FT4 / (FT4 + p.K_M2);
  const double t3d = p.G_T3 * TSH_ / (p.D_T + TSH_);
  const double iod = p.tau_TPO * TPO * TPOa * p.V_org_H2O2 * p.H2O2 / (p.K_org_H2O2 + p.H2O2) * p.V_org_IC * p.I_C *
                     p.V_org_Tg * Tgeff / ((p.K_org_IC + p.I_C) * (p.K_org_Tg + Tgeff));
  const double endo = p.V_apical_SSF * SSF * p.A_apical * p.alpha_endo * ITg_ / ((p.K_apical_SSF + SSF) * p.A_apical_nom);

  HormoneState dx, mag;
  dx << p.alpha_th * (a1 - a2 - a3 - a4) - p.beta_th * T4th_, p.alpha_T * a2 - p.beta_T * T4_,
      p.alpha_31 * (d1p + d2p + a3 + a4 + t3d) - p.beta_31 * T3_, p.alpha_32 * d2p - p.beta_32 * T3c_,
      p.alpha_S * pit - p.beta_S * TSH_, p.alpha_S2 * pit - p.beta_S2 * TSHz_, iod - endo, MMI2_,
      -m.pdt2.a0 * MMI1_ - m.pdt2.a1 * MMI2_ + mmi_pl;
  mag << p.alpha_th * (a1 + a2 + a3 + a4) + p.beta_th * T4th_, p.alpha_T * a2 + p.beta_T * T4_,
      p.alpha_31 * (d1p + d2p + a3 + a4 + t3d) + p.beta_31 * T3_, p.alpha_32 * d2p + p.beta_32 * T3c_,
      p.alpha_S * pit + p.beta_S * TSH_, p.alpha_S2 * pit + p.beta_S2 * TSHz_, iod + endo, std::fabs(MMI2_),
      std::fabs(m.pdt2.a0 * MMI1_) + std::fabs(m.pdt2.a1 * MMI2_) + mmi_pl;
  return {dx, mag};
}

HormoneState healthy() {
  static const HormoneState x = solve_steady_state(make_model(params(), IodideRegime::Normal, 1.0), 0.0).x;
  return x;
}

}  // namespace

TEST_CASE("circadian TRH") {
  const ThyroidParams& p = params().thyroid;
  CHECK(trh_forcing(5.0 * 3600.0, p) == doctest::Approx(1.3 * p.TRH).epsilon(1e-14));
  CHECK(trh_forcing(17.0 * 3600.0, p) == doctest::Approx(0.7 * p.TRH).epsilon(1e-14));
  CHECK(trh_forcing(5.0 * 3600.0 + 86400.0 * 3, p) == doctest::Approx(1.3 * p.TRH).epsilon(1e-12));
  double mean = 0.0;
  const int n = 2400;
  for (int i = 0; i < n; ++i) mean += trh_forcing(86400.0 * i / n, p) / n;
  CHECK(mean == doctest::Approx(p.TRH).epsilon(1e-12));
  ModelParams frozen = make_model(params(), IodideRegime::Normal, 1.0, TrhMode::Frozen);
  CHECK(trh_value(5.0 * 3600.0, frozen) == p.TRH);
}

TEST_CASE("algebraic outputs") {
  const ModelParams m = make_model(params());
  HormoneState x = healthy();
  AlgebraicOutputs o = algebraic_outputs(0.0, x, m);
  CHECK(o.scale == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(o.FT4 < x(T4));
  CHECK(o.FT3 < x(T3));
  CHECK(o.T3N < x(T3c));
  CHECK(o.MMI_th == 0.0);
  CHECK(o.TPO_a == doctest::Approx(tpo_activity(0.0, m.sigmoid)));

  x(TSH) = 0.0;
  o = algebraic_outputs(0.0, x, m);
  CHECK(o.SSF == 0.0);
  CHECK(o.TPO == 0.0);

  x = healthy();
  x(ITg) = m.thyroid.T_g;
  CHECK(algebraic_outputs(0.0, x, m).Tg_eff == 0.0);

  x = healthy();
  x(MMI1) = 1.0;
  x(MMI2) = 0.0;
  CHECK(algebraic_outputs(0.0, x, m).MMI_th == m.pdt2.b0);
}

TEST_CASE("right-hand side matches the appendix equations term by term") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> factor(0.1, 10.0), time(0.0, 86400.0 * 5), sign(-1.0, 1.0);
  for (IodideRegime regime : {IodideRegime::Normal, IodideRegime::High}) {
    for (TrhMode trh : {TrhMode::Circadian, TrhMode::Frozen}) {
      const ModelParams m = make_model(params(), regime, 10.0, trh);
      for (int trial = 0; trial < 200; ++trial) {
        HormoneState x = healthy();
        for (int i = 0; i <= ITg; ++i) x(i) *= factor(rng);
        x(ITg) = std::min(x(ITg), 0.9 * m.thyroid.T_g);
        x(MMI1) = 1e2 * sign(rng);
        x(MMI2) = 1e-2 * sign(rng);
        const double t = time(rng), plasma = 1e-6 * factor(rng);
        const auto [ref, mag] = appendix_rhs(t, x, plasma, m);
        const HormoneState got = rhs_plasma(t, x, plasma, m);
        for (int i = 0; i < kStateSize; ++i) {
          INFO(state_name(i));
          CHECK(std::fabs(got(i) - ref(i)) <= 1e-14 * mag(i) + 1e-300);
        }
      }
    }
  }
}

TEST_CASE("no TSH, no synthesis") {
  const ModelParams m = make_model(params(), IodideRegime::Normal, 10.0);
  HormoneState x = healthy();
  x(TSH) = 0.0;
  const RhsTerms<double> r = rhs_terms<double>(m.thyroid.TRH, x, m);
  CHECK(r.t4_synthesis == 0.0);
  CHECK(r.t3_direct == 0.0);
  CHECK(r.d1_thyroidal == 0.0);
  CHECK(r.endocytosis == 0.0);
  CHECK(r.iodination == 0.0);
}

TEST_CASE("disease condition scales only G_T") {
  const ThyroidParams& p = params().thyroid;
  const ThyroidParams one = apply_condition(p, 1.0);
  for (const auto& [name, field] : ThyroidParams::fields()) CHECK(one.*field == p.*field);
  CHECK(apply_condition(p, 10.0).G_T == 10.0 * p.G_T);
  CHECK(apply_condition(p, 15.0).G_T == 15.0 * p.G_T);
  CHECK(apply_condition(p, 15.0).G_T3 == p.G_T3);
  CHECK_THROWS_AS(apply_condition(p, 0.9), std::domain_error);
}

TEST_CASE("steady states") {
  const ModelParams h = make_model(params(), IodideRegime::Normal, 1.0);
  const SteadyStateResult r = solve_steady_state(h, 0.0);
  CHECK(r.residual < 1e-12);
  CHECK(steady_state_residual(r.x, h, 0.0) < 1e-12);
  CHECK(r.x(MMI1) == doctest::Approx(0.0));
  CHECK(r.x(MMI2) == doctest::Approx(0.0));
  CHECK(r.x(ITg) == doctest::Approx(0.1 * h.thyroid.T_g).epsilon(1e-6));
  CHECK(r.x.head<ITg + 1>().minCoeff() > 0.0);

  const HormoneState g10 = solve_steady_state(make_model(params(), IodideRegime::Normal, 10.0), 0.0).x;
  const HormoneState g15 = solve_steady_state(make_model(params(), IodideRegime::Normal, 15.0), 0.0).x;
  CHECK(g10(T4) > r.x(T4));
  CHECK(g15(T4) > g10(T4));
  CHECK(g10(T3) > r.x(T3));
  CHECK(g15(T3) > g10(T3));
  CHECK(g10(TSH) < r.x(TSH));
  CHECK(g15(TSH) < g10(TSH));
  CHECK(g10(T4) / r.x(T4) > 3.0);
}

TEST_CASE("more plasma MMI, less hormone") {
  const ModelParams m = make_model(params(), IodideRegime::Normal, 10.0);
  HormoneState guess = solve_steady_state(m, 0.0).x;
  double prev_t4 = guess(T4), prev_tsh = guess(TSH);
  for (int i = 1; i <= 20; ++i) {
    const double c = 1e-6 * i / 20.0;
    const SteadyStateResult r = solve_steady_state(m, c, guess);
    INFO("plasma " << c);
    CHECK(r.residual < 1e-10);
    CHECK(r.x(MMI1) == doctest::Approx(c / m.pdt2.a0).epsilon(1e-8));
    CHECK(r.x(T4) <= prev_t4 * (1.0 + 1e-12));
    CHECK(r.x(TSH) >= prev_tsh * (1.0 - 1e-12));
    prev_t4 = r.x(T4);
    prev_tsh = r.x(TSH);
    guess = r.x;
  }
}

TEST_CASE("AutoDiff Jacobian against central differences") {
  const ModelParams m = make_model(params(), IodideRegime::Normal, 10.0);
  HormoneState x = solve_steady_state(m, 2e-7).x;
  const double t = 30000.0, plasma = 3e-7;
  const auto J = rhs_jacobian(t, x, plasma, m);
  const HormoneState typ = typical_magnitudes();
  for (int j = 0; j < kStateSize; ++j) {
    const double h = 1e-6 * std::max(std::fabs(x(j)), typ(j));
    HormoneState xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    const HormoneState col = (rhs_plasma(t, xp, plasma, m) - rhs_plasma(t, xm, plasma, m)) / (2.0 * h);
    for (int i = 0; i < kStateSize; ++i) {
      INFO("d f_" << state_name(i) << " / d " << state_name(j));
      const double scale = col.cwiseAbs().maxCoeff() + std::fabs(J(i, j));
      CHECK(std::fabs(J(i, j) - col(i)) <= 1e-5 * std::fabs(col(i)) + 1e-7 * scale + 1e-300);
    }
  }
}

TEST_CASE("forward sensitivities against finite differences") {
  const ModelParams m = make_model(params(), IodideRegime::Normal, 10.0);
  IntegratorConfig cfg;
  cfg.rtol = 1e-11;
  cfg.atol = typical_magnitudes() * 1e-13;
  DoseSchedule first({{0.0, 10.0, Route::Oral}});
  const HormoneState x_ss = solve_steady_state(m, 0.0).x;
  const HormoneState x0 = integrate(x_ss, 0.0, 6 * 3600.0, first, m, cfg).final_state();
  REQUIRE(x0(MMI1) > 0.0);

  const double t0 = 6 * 3600.0, t1 = 18 * 3600.0, amount = 10.0;
  auto run = [&](const HormoneState& start, double dose) {
    DoseSchedule s = first;
    s.add({t0, dose, Route::Oral});
    return integrate(start, t0, t1, s, m, cfg).final_state();
  };
  DoseSchedule sched = first;
  sched.add({t0, amount, Route::Oral});
  // state sensitivities from S0 = I; dose sensitivity from a separate request
  SensitivityRequest req_x;
  req_x.S0 = Eigen::MatrixXd::Identity(kStateSize, kStateSize);
  SensitivityRequest req_u;
  req_u.S0 = Eigen::MatrixXd::Zero(kStateSize, 1);
  req_u.unit_doses = {{t0, 1.0, Route::Oral}};
  const StepResult rx = integrate_steps(x0, t0, t1, sched, m, cfg, nullptr, &req_x);
  const StepResult ru = integrate_steps(x0, t0, t1, sched, m, cfg, nullptr, &req_u);
  REQUIRE(rx.S.cols() == kStateSize);
  REQUIRE(ru.S.cols() == 1);
  CHECK((rx.x - run(x0, amount)).cwiseQuotient(typical_magnitudes()).cwiseAbs().maxCoeff() < 1e-9);
  Eigen::MatrixXd S(kStateSize, kStateSize + 1);
  S << rx.S, ru.S;

  const HormoneState typ = typical_magnitudes();
  for (int j = 0; j <= kStateSize; ++j) {
    Eigen::VectorXd fd;
    double hj;
    if (j < kStateSize) {
      hj = 1e-4 * std::max(std::fabs(x0(j)), 1e-2 * typ(j));
      HormoneState xp = x0, xm = x0;
      xp(j) += hj;
      xm(j) -= hj;
      fd = (run(xp, amount) - run(xm, amount)) / (2.0 * hj);
    } else {
      hj = 1e-3;
      fd = (run(x0, amount + hj) - run(x0, amount - hj)) / (2.0 * hj);
    }
    // compare in units of typical magnitude per typical input (1 mg for the dose);
    // the floor absorbs integration noise in columns whose effect has decayed away
    const double in = j < kStateSize ? typ(j) : 1.0;
    const Eigen::VectorXd got = S.col(j).cwiseQuotient(typ) * in;
    const Eigen::VectorXd ref = fd.cwiseQuotient(typ) * in;
    INFO("column " << j);
    CHECK((got - ref).lpNorm<Eigen::Infinity>() <= 1e-4 * ref.lpNorm<Eigen::Infinity>() + 1e-6);
  }
}
