#include "thyreg/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace thyreg {

IntegratorConfig IntegratorConfig::from(const IntegratorSettings& s) {
  IntegratorConfig c;
  c.rtol = s.rtol;
  c.atol = typical_magnitudes() * s.atol_factor;
  c.max_step = s.max_step;
  return c;
}

HormoneState Trajectory::at(double t) const {
  if (steps_.empty()) return x0_;
  const double span = t1() - t0();
  if (t < t0() - 1e-9 * span || t > t1() + 1e-9 * span)
    throw std::out_of_range("Trajectory::at outside integrated interval");
  auto it = std::lower_bound(steps_.begin(), steps_.end(), t,
                             [](const ode::DenseStep& s, double tq) { return s.t < tq; });
  if (it == steps_.end()) --it;
  Eigen::VectorXd y(kStateSize);
  it->eval(t, y);
  return y;
}

StepResult integrate_steps(const HormoneState& x0, double t0, double t1, const DoseSchedule& schedule,
                           const ModelParams& m, const IntegratorConfig& cfg,
                           const std::function<void(const ode::BdfSolver&)>& on_step,
                           const SensitivityRequest* sens) {
  if (!(t1 > t0)) throw IntegrationError("integrate: t1 must exceed t0", t0);
  std::vector<double> cuts{t0};
  if (cfg.split_at_doses) {
    for (const auto& e : schedule.events())
      if (e.time > t0 && e.time < t1) cuts.push_back(e.time);
    if (sens)
      for (const auto& e : sens->unit_doses)
        if (e.time > t0 && e.time < t1) cuts.push_back(e.time);
  }
  cuts.push_back(t1);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  ode::BdfOptions opts;
  opts.rtol = cfg.rtol;
  opts.atol = cfg.atol;
  opts.max_step = cfg.max_step;

  double seg_start = t0;
  auto plasma_at = [&](double t) {
    return cfg.split_at_doses ? plasma_before(schedule, seg_start, t, m.pk) : plasma_from_schedule(schedule, t, m.pk);
  };
  ode::BdfSolver solver(
      [&](double t, const Eigen::VectorXd& y, Eigen::VectorXd& f) { f = rhs_plasma(t, HormoneState(y), plasma_at(t), m); },
      [&](double t, const Eigen::VectorXd& y, Eigen::MatrixXd& J) {
        J = rhs_jacobian(t, HormoneState(y), plasma_at(t), m);
      },
      opts);

  ode::BdfSolver::SensForcing forcing;
  if (sens && !sens->unit_doses.empty()) {
    forcing = [&](double t, Eigen::MatrixXd& B) {
      B.setZero();
      for (std::size_t k = 0; k < sens->unit_doses.size(); ++k) {
        const DoseEvent& e = sens->unit_doses[k];
        if (cfg.split_at_doses ? e.time <= seg_start : true) B(MMI2, static_cast<Eigen::Index>(k)) = plasma_single(e, t, m.pk);
      }
    };
  }

  StepResult out;
  Eigen::VectorXd y = x0;
  Eigen::MatrixXd S;
  if (sens) S = sens->S0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    seg_start = cuts[i];
    if (sens)
      solver.initialize(cuts[i], y, cuts[i + 1], S, forcing);
    else
      solver.initialize(cuts[i], y, cuts[i + 1]);
    bool more = true;
    while (more) {
      more = solver.step();
      const Eigen::VectorXd& ys = solver.y();
      if (!ys.allFinite()) throw IntegrationError("integrate: non-finite state", solver.t_old());
      if (cfg.check_nonnegative) {
        for (int c = 0; c <= ITg; ++c)
          if (ys(c) < -10.0 * cfg.atol(c))
            throw IntegrationError(std::string("integrate: negative ") + state_name(c), solver.t_old());
      }
      ++out.steps;
      if (on_step) on_step(solver);
    }
    y = solver.y();
    if (sens) S = solver.S();
  }
  out.x = y;
  out.S = S;
  out.segments = cuts.size() - 1;
  return out;
}

Trajectory integrate(const HormoneState& x0, double t0, double t1, const DoseSchedule& schedule, const ModelParams& m,
                     const IntegratorConfig& cfg) {
  Trajectory traj;
  traj.t_start_ = t0;
  traj.x0_ = x0;
  StepResult r = integrate_steps(x0, t0, t1, schedule, m, cfg,
                                 [&](const ode::BdfSolver& s) { traj.steps_.push_back(s.dense_step()); });
  traj.x1_ = r.x;
  traj.segments_ = r.segments;
  return traj;
}

double truncated_normal(double std, double truncation, std::mt19937_64& rng) {
  if (std == 0.0) return 0.0;
  std::normal_distribution<double> dist(0.0, std);
  for (;;) {
    double v = dist(rng);
    if (std::fabs(v) <= truncation) return v;
  }
}

HormoneState measure(const HormoneState& x, const NoiseConfig& n, std::mt19937_64& rng) {
  if (n.std == 0.0) return x;
  HormoneState y;
  for (int i = 0; i < kStateSize; ++i) y(i) = x(i) * (1.0 + truncated_normal(n.std, n.truncation, rng));
  return y;
}

ThyroidParams apply_mismatch(const ThyroidParams& p, const std::map<std::string, double>& mismatch) {
  ThyroidParams q = p;
  for (const auto& [name, change] : mismatch) q.at(name) *= 1.0 + change;
  return q;
}

SimulationRecord run_closed_loop(const ClosedLoopSetup& setup, DoseController& controller) {
  SimulationRecord rec;
  rec.scenario = setup.scenario;
  rec.mode = setup.mode;
  rec.seed = setup.seed;
  rec.delta = setup.delta;
  rec.route = setup.route;

  std::mt19937_64 rng(setup.seed);
  const long n_steps = std::lround(setup.duration / setup.delta);
  const long grid_per_step = std::lround(setup.delta / setup.grid_step);
  DoseSchedule schedule;
  HormoneState x = setup.x0;

  auto make_row = [&](double t, const HormoneState& xs) {
    GridRow row;
    row.time = t;
    row.x = xs;
    AlgebraicOutputs o = algebraic_outputs(t, xs, setup.plant);
    row.FT4 = o.FT4;
    row.FT3 = o.FT3;
    row.TPO_a = o.TPO_a;
    return row;
  };

  for (long k = 0; k < n_steps; ++k) {
    const double t = static_cast<double>(k) * setup.delta;
    SampleRecord sample;
    sample.time = t;
    sample.measured = setup.noisy ? measure(x, setup.noise, rng) : x;
    try {
      ControlDecision d = controller.decide(t, sample.measured);
      sample.commanded_mg = d.dose_mg;
      sample.degraded = d.degraded;
      sample.iterations = d.iterations;
      sample.stationarity = d.stationarity;
    } catch (const std::exception& e) {
      rec.aborted = true;
      rec.diagnostic = std::string("controller failure at t=") + std::to_string(t) + " s: " + e.what();
      rec.grid.push_back(make_row(t, x));
      break;
    }
    const int day = static_cast<int>(std::floor(t / 86400.0));
    const bool missed = setup.route == Route::Oral &&
                        std::find(setup.missed_dose_days.begin(), setup.missed_dose_days.end(), day) !=
                            setup.missed_dose_days.end();
    sample.administered_mg = missed ? 0.0 : sample.commanded_mg;
    if (sample.administered_mg > 0.0) schedule.add({t, sample.administered_mg, setup.route});
    rec.samples.push_back(sample);

    try {
      Trajectory traj = integrate(x, t, t + setup.delta, schedule, setup.plant, setup.integrator);
      for (long j = 0; j < grid_per_step; ++j) {
        const double tg = static_cast<double>(k * grid_per_step + j) * setup.grid_step;
        GridRow row = make_row(tg, j == 0 ? x : traj.at(tg));
        if (j == 0) {
          row.commanded_mg = sample.commanded_mg;
          row.administered_mg = sample.administered_mg;
        }
        rec.grid.push_back(row);
      }
      x = traj.final_state();
    } catch (const std::exception& e) {
      rec.aborted = true;
      rec.diagnostic = std::string("integration failure after t=") + std::to_string(t) + " s: " + e.what();
      break;
    }
  }
  if (!rec.aborted) rec.grid.push_back(make_row(static_cast<double>(n_steps) * setup.delta, x));
  return rec;
}

std::string csv_header() {
  return "time_s,T4th,T4,T3,T3c,TSH,TSHz,I_Tg,MMI1,MMI2,FT4,FT3,TPO_a,commanded_dose_mg,administered_dose_mg";
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_csv(const SimulationRecord& r, std::ostream& out) {
  out << csv_header() << '\n';
  for (const auto& row : r.grid) {
    out << num(row.time);
    for (int i = 0; i < kStateSize; ++i) out << ',' << num(row.x(i));
    out << ',' << num(row.FT4) << ',' << num(row.FT3) << ',' << num(row.TPO_a) << ',';
    if (row.commanded_mg) out << num(*row.commanded_mg);
    out << ',';
    if (row.administered_mg) out << num(*row.administered_mg);
    out << '\n';
  }
}

SimulationRecord read_csv(std::istream& in) {
  SimulationRecord r;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("CSV: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != csv_header()) throw std::runtime_error("CSV: unexpected header");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 15) throw std::runtime_error("CSV: line " + std::to_string(lineno) + " has wrong column count");
    auto parse = [&](const std::string& s) {
      std::size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::runtime_error("CSV: bad number on line " + std::to_string(lineno));
      return v;
    };
    GridRow row;
    row.time = parse(cells[0]);
    for (int i = 0; i < kStateSize; ++i) row.x(i) = parse(cells[1 + i]);
    row.FT4 = parse(cells[10]);
    row.FT3 = parse(cells[11]);
    row.TPO_a = parse(cells[12]);
    if (!cells[13].empty()) row.commanded_mg = parse(cells[13]);
    if (!cells[14].empty()) row.administered_mg = parse(cells[14]);
    if (row.commanded_mg) {
      SampleRecord s;
      s.time = row.time;
      s.measured = row.x;
      s.commanded_mg = *row.commanded_mg;
      s.administered_mg = row.administered_mg.value_or(0.0);
      r.samples.push_back(s);
    }
    r.grid.push_back(row);
  }
  if (r.samples.size() >= 2) r.delta = r.samples[1].time - r.samples[0].time;
  return r;
}

}  // namespace thyreg
