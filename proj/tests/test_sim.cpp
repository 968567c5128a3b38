#include <doctest.h>

#include <cmath>
#include <sstream>

#include "thyreg/params.hpp"
#include "thyreg/sim.hpp"
#include "thyreg/thyroid.hpp"

using namespace thyreg;

namespace {

const ParameterSet& params() {
  static const ParameterSet p = default_parameters();
  return p;
}

HormoneState tol_scale(const HormoneState& x, const IntegratorConfig& c) {
  return (c.rtol * x.cwiseAbs() + c.atol).eval();
}

// Prescribes a fixed sequence of doses, cycling; optionally throws at a given call.
class FixedController : public DoseController {
 public:
  explicit FixedController(std::vector<double> doses, int throw_at = -1) : doses_(std::move(doses)), throw_at_(throw_at) {}
  ControlDecision decide(double, const HormoneState&) override {
    if (calls_ == throw_at_) throw std::runtime_error("planned failure");
    ControlDecision d;
    d.dose_mg = doses_[static_cast<std::size_t>(calls_++) % doses_.size()];
    d.iterations = 1;
    return d;
  }

 private:
  std::vector<double> doses_;
  int throw_at_;
  int calls_ = 0;
};

ClosedLoopSetup loop_setup(bool noisy, std::vector<int> missed = {}) {
  ClosedLoopSetup s;
  s.plant = make_model(params(), IodideRegime::Normal, 10.0);
  s.x0 = solve_steady_state(s.plant, 0.0).x;
  s.route = Route::Oral;
  s.delta = 86400.0;
  s.duration = 6 * 86400.0;
  s.noisy = noisy;
  s.missed_dose_days = std::move(missed);
  s.seed = 3;
  s.integrator = IntegratorConfig::from(params().integrator);
  s.scenario = "ordinary";
  s.mode = noisy ? "realistic" : "nominal";
  return s;
}

}  // namespace

TEST_CASE("equilibrium stays put under frozen TRH") {
  const ModelParams m = make_model(params(), IodideRegime::Normal, 1.0, TrhMode::Frozen);
  const HormoneState x0 = solve_steady_state(m, 0.0).x;
  const IntegratorConfig cfg = IntegratorConfig::from(params().integrator);
  const Trajectory tr = integrate(x0, 0.0, 5 * 86400.0, DoseSchedule(), m, cfg);
  const HormoneState err = (tr.final_state() - x0).cwiseAbs();
  for (int i = 0; i < kStateSize; ++i) {
    INFO(state_name(i));
    CHECK(err(i) <= 10.0 * tol_scale(x0, cfg)(i));
  }
  CHECK((tr.at(2.5 * 86400.0) - x0).cwiseAbs().cwiseQuotient(tol_scale(x0, cfg)).maxCoeff() <= 10.0);
}

TEST_CASE("tighter tolerances converge to the same trajectory") {
  const ModelParams m = make_model(params(), IodideRegime::Normal, 10.0);
  const HormoneState x0 = solve_steady_state(m, 0.0).x;
  DoseSchedule s({{0.0, 15.0, Route::Oral}, {86400.0, 15.0, Route::Oral}, {2 * 86400.0, 15.0, Route::Oral}});
  IntegratorConfig loose = IntegratorConfig::from(params().integrator);
  IntegratorConfig tight = loose, tighter = loose;
  tight.rtol /= 2.0;
  tight.atol /= 2.0;
  tighter.rtol = 1e-12;
  tighter.atol = typical_magnitudes() * 1e-13;
  const HormoneState ref = integrate(x0, 0.0, 3 * 86400.0, s, m, tighter).final_state();
  const HormoneState a = integrate(x0, 0.0, 3 * 86400.0, s, m, loose).final_state();
  const HormoneState b = integrate(x0, 0.0, 3 * 86400.0, s, m, tight).final_state();
  const double ea = (a - ref).cwiseAbs().cwiseQuotient(tol_scale(ref, loose)).maxCoeff();
  const double eb = (b - ref).cwiseAbs().cwiseQuotient(tol_scale(ref, loose)).maxCoeff();
  MESSAGE("global error in tolerance units: rtol " << loose.rtol << " -> " << ea << ", halved -> " << eb);
  CHECK(ea < 100.0);
  CHECK(eb < ea);
}

TEST_CASE("restarting at doses agrees with integrating straight through") {
  const ModelParams m = make_model(params(), IodideRegime::Normal, 15.0);
  const HormoneState x0 = solve_steady_state(m, 0.0).x;
  DoseSchedule s({{0.0, 40.0, Route::Intravenous}, {8 * 3600.0, 20.0, Route::Intravenous},
                  {16 * 3600.0, 30.0, Route::Intravenous}});
  IntegratorConfig split;
  split.rtol = 1e-11;
  split.atol = typical_magnitudes() * 1e-13;
  IntegratorConfig straight = split;
  straight.split_at_doses = false;
  const Trajectory a = integrate(x0, 0.0, 86400.0, s, m, split);
  const Trajectory b = integrate(x0, 0.0, 86400.0, s, m, straight);
  CHECK(a.segment_count() == 3);
  CHECK(b.segment_count() == 1);
  for (double t : {4 * 3600.0, 12 * 3600.0, 86400.0}) {
    const HormoneState xa = a.at(t), xb = b.at(t);
    for (int i = 0; i < kStateSize; ++i) {
      INFO(state_name(i) << " at " << t);
      CHECK(std::fabs(xa(i) - xb(i)) <= 1e-8 * std::fabs(xa(i)) + 1e-8 * typical_magnitudes()(i));
    }
  }
}

TEST_CASE("trajectory interpolation") {
  const ModelParams m = make_model(params(), IodideRegime::Normal, 10.0);
  const HormoneState x0 = solve_steady_state(m, 0.0).x;
  const IntegratorConfig cfg = IntegratorConfig::from(params().integrator);
  DoseSchedule s({{0.0, 15.0, Route::Oral}});
  const Trajectory tr = integrate(x0, 0.0, 86400.0, s, m, cfg);
  CHECK(tr.at(0.0) == x0);
  CHECK((tr.at(86400.0) - tr.final_state()).norm() == doctest::Approx(0.0));
  CHECK(tr.step_count() > 0);
  CHECK_THROWS(tr.at(86400.0 * 2));
  CHECK_THROWS_AS(integrate(x0, 10.0, 10.0, s, m, cfg), IntegrationError);
}

TEST_CASE("hormones decay monotonically without synthesis") {
  ModelParams m = make_model(params(), IodideRegime::Normal, 1.0, TrhMode::Frozen);
  const HormoneState x0 = solve_steady_state(m, 0.0).x;
  m.thyroid.G_T = 0.0;
  m.thyroid.G_T3 = 0.0;
  IntegratorConfig cfg = IntegratorConfig::from(params().integrator);
  const Trajectory tr = integrate(x0, 0.0, 20 * 86400.0, DoseSchedule(), m, cfg);
  HormoneState prev = x0;
  for (int h = 1; h <= 480; ++h) {
    const HormoneState x = tr.at(h * 3600.0);
    for (int c : {T4th, T4, T3, T3c}) {
      INFO(state_name(c) << " at hour " << h);
      CHECK(x(c) <= prev(c) + cfg.atol(c));
      CHECK(x(c) >= -cfg.atol(c) * 10.0);
    }
    prev = x;
  }
  CHECK(prev(T4) < 0.2 * x0(T4));
}

TEST_CASE("measurement noise") {
  std::mt19937_64 rng(5);
  const HormoneState x = HormoneState::Constant(2.0);
  CHECK(measure(x, NoiseConfig{0.0, 0.3}, rng) == x);

  NoiseConfig n{0.05, 0.3};
  double sum = 0.0, sq = 0.0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const double v = truncated_normal(n.std, n.truncation, rng);
    CHECK(std::fabs(v) <= 0.3);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / draws;
  CHECK(std::fabs(mean) < 1e-3);
  CHECK(std::sqrt(sq / draws - mean * mean) == doctest::Approx(0.05).epsilon(0.02));

  NoiseConfig wide{1.0, 0.3};
  for (int i = 0; i < 1000; ++i) {
    const HormoneState y = measure(x, wide, rng);
    CHECK(((y.array() / x.array()) - 1.0).abs().maxCoeff() <= 0.3 + 1e-15);
  }

  std::mt19937_64 a(9), b(9);
  CHECK(measure(x, n, a) == measure(x, n, b));
}

TEST_CASE("model-plant mismatch") {
  const ThyroidParams& p = params().thyroid;
  const ThyroidParams q = apply_mismatch(p, {{"G_D1", 0.1}, {"G_T3", 0.1}});
  CHECK(q.G_D1 == doctest::Approx(1.1 * p.G_D1).epsilon(1e-15));
  CHECK(q.G_T3 == doctest::Approx(1.1 * p.G_T3).epsilon(1e-15));
  CHECK(q.G_D2 == p.G_D2);
  const ThyroidParams qq = apply_mismatch(q, {{"G_D1", 0.1}});
  CHECK(qq.G_D1 == doctest::Approx(1.21 * p.G_D1).epsilon(1e-15));
  CHECK_THROWS_AS(apply_mismatch(p, {{"G_X", 0.1}}), ConfigError);
}

TEST_CASE("closed loop bookkeeping") {
  ClosedLoopSetup s = loop_setup(false);
  FixedController c({10.0, 0.0, 15.0});
  const SimulationRecord r = run_closed_loop(s, c);
  REQUIRE(!r.aborted);
  REQUIRE(r.samples.size() == 6);
  CHECK(r.grid.size() == 6 * 24 + 1);
  for (std::size_t k = 0; k < r.samples.size(); ++k) {
    CHECK(r.samples[k].time == doctest::Approx(k * 86400.0));
    CHECK(r.samples[k].administered_mg == r.samples[k].commanded_mg);
    CHECK(r.samples[k].measured == r.grid[k * 24].x);
  }
  for (std::size_t i = 0; i < r.grid.size(); ++i) {
    CHECK(r.grid[i].time == doctest::Approx(i * 3600.0));
    CHECK(r.grid[i].commanded_mg.has_value() == (i % 24 == 0 && i < r.grid.size() - 1));
  }
  CHECK(r.grid[0].x == s.x0);
  CHECK(*r.grid[48].commanded_mg == 15.0);
  CHECK(r.grid.back().x(MMI1) > 0.0);
}

TEST_CASE("missed doses and determinism") {
  ClosedLoopSetup s = loop_setup(true, {1, 4});
  FixedController c1({10.0}), c2({10.0});
  const SimulationRecord a = run_closed_loop(s, c1);
  const SimulationRecord b = run_closed_loop(s, c2);
  for (std::size_t k = 0; k < a.samples.size(); ++k) {
    CHECK(a.samples[k].commanded_mg == 10.0);
    CHECK(a.samples[k].administered_mg == ((k == 1 || k == 4) ? 0.0 : 10.0));
  }
  CHECK(a.samples[2].measured != a.grid[48].x);
  std::ostringstream sa, sb;
  write_csv(a, sa);
  write_csv(b, sb);
  CHECK(sa.str() == sb.str());
  for (std::size_t k = 0; k < a.samples.size(); ++k) CHECK(a.samples[k].measured == b.samples[k].measured);

  // intravenous doses are never skipped
  s.route = Route::Intravenous;
  FixedController c3({10.0});
  const SimulationRecord iv = run_closed_loop(s, c3);
  for (const auto& smp : iv.samples) CHECK(smp.administered_mg == 10.0);
}

TEST_CASE("controller failure aborts with a partial record") {
  ClosedLoopSetup s = loop_setup(false);
  FixedController c({10.0}, 3);
  const SimulationRecord r = run_closed_loop(s, c);
  CHECK(r.aborted);
  CHECK(r.diagnostic.find("planned failure") != std::string::npos);
  CHECK(r.samples.size() == 3);
  CHECK(r.grid.size() == 3 * 24 + 1);
}

TEST_CASE("CSV layout and round trip") {
  CHECK(csv_header() ==
        "time_s,T4th,T4,T3,T3c,TSH,TSHz,I_Tg,MMI1,MMI2,FT4,FT3,TPO_a,commanded_dose_mg,administered_dose_mg");
  ClosedLoopSetup s = loop_setup(false, {2});
  s.duration = 3 * 86400.0;
  FixedController c({12.5});
  const SimulationRecord r = run_closed_loop(s, c);
  std::ostringstream out;
  write_csv(r, out);
  const std::string text = out.str();
  std::istringstream lines(text);
  std::string header, first, second;
  std::getline(lines, header);
  std::getline(lines, first);
  std::getline(lines, second);
  CHECK(header == csv_header());
  CHECK(first.substr(first.size() - 10) == ",12.5,12.5");
  CHECK(second.substr(second.size() - 2) == ",,");

  std::istringstream in(text);
  const SimulationRecord back = read_csv(in);
  REQUIRE(back.grid.size() == r.grid.size());
  for (std::size_t i = 0; i < r.grid.size(); ++i) {
    CHECK(back.grid[i].time == r.grid[i].time);
    CHECK(back.grid[i].x == r.grid[i].x);
    CHECK(back.grid[i].TPO_a == r.grid[i].TPO_a);
    CHECK(back.grid[i].commanded_mg == r.grid[i].commanded_mg);
    CHECK(back.grid[i].administered_mg == r.grid[i].administered_mg);
  }
  REQUIRE(back.samples.size() == 3);
  CHECK(back.samples[2].administered_mg == 0.0);
  CHECK(back.delta == 86400.0);
  std::ostringstream again;
  write_csv(back, again);
  CHECK(again.str() == text);

  std::istringstream bad("time_s,foo\n");
  CHECK_THROWS(read_csv(bad));
}
