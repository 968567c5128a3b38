#pragma once

#include <cmath>
#include <vector>

#include "thyreg/params.hpp"

namespace thyreg {

struct DoseEvent {
  double time = 0.0;    // s
  double amount = 0.0;  // mg
  Route route = Route::Oral;
};

// Sorted by time, no duplicate instants.
class DoseSchedule {
 public:
  DoseSchedule() = default;
  explicit DoseSchedule(std::vector<DoseEvent> events);

  void add(const DoseEvent& e);
  const std::vector<DoseEvent>& events() const { return events_; }
  bool empty() const { return events_.empty(); }
  std::size_t size() const { return events_.size(); }

  // Union of two schedules; events at identical instants are rejected.
  static DoseSchedule merge(const DoseSchedule& a, const DoseSchedule& b);

 private:
  std::vector<DoseEvent> events_;
};

double oral_plasma_single(const DoseEvent& dose, double t, const PkParams& pk);
double iv_plasma_single(const DoseEvent& dose, double t, const PkParams& pk);
double plasma_single(const DoseEvent& dose, double t, const PkParams& pk);
double plasma_from_schedule(const DoseSchedule& schedule, double t, const PkParams& pk);

// Plasma from the doses given at or before `cutoff`, evaluated at t >= cutoff.
// Used by the integrator inside a segment so the next bolus does not leak in.
double plasma_before(const DoseSchedule& schedule, double cutoff, double t, const PkParams& pk);

template <typename Scalar>
void intrathyroidal_rhs(const Scalar& mmi1, const Scalar& mmi2, double plasma, const Pdt2Params& p,
                        Scalar& d_mmi1, Scalar& d_mmi2) {
  d_mmi1 = mmi2;
  d_mmi2 = -p.a0 * mmi1 - p.a1 * mmi2 + plasma;
}

template <typename Scalar>
Scalar intrathyroidal_output(const Scalar& mmi1, const Scalar& mmi2, const Pdt2Params& p) {
  return p.b0 * mmi1 + p.b1 * mmi2;
}

// Throws std::domain_error for negative concentrations.
double tpo_activity(double mmi_th, const TpoSigmoidParams& s);

// Below this the sigmoid is replaced by its secant from 0 (mol/L).
inline constexpr double kTpoSecantWidth = 1e-12;

// Same sigmoid for use inside the ODE. Negative inputs are clamped to 0. The
// slope at 0+ is infinite for c2 > 1; on [0, kTpoSecantWidth] the secant is
// used instead, so zero dosing is not a false stationary point of the dose
// optimisation. The value changes by less than 1e-5 relative there.
template <typename Scalar>
Scalar tpo_activity_clamped(const Scalar& mmi_th, const TpoSigmoidParams& s) {
  using std::exp;
  using std::pow;
  const double a0 = s.c0 / (1.0 + std::exp(-s.c1 * s.c3));
  if (mmi_th < 0.0) return Scalar(a0);
  if (mmi_th < kTpoSecantWidth) {
    const double a1 = tpo_activity(kTpoSecantWidth, s);
    return Scalar(a0 + (a1 - a0) / kTpoSecantWidth * mmi_th);
  }
  const Scalar z = s.c1 * (s.c3 - pow(mmi_th, 1.0 / s.c2));
  if (z >= 0.0) return Scalar(s.c0 / (1.0 + exp(-z)));
  const Scalar e = exp(z);
  return Scalar(s.c0 * e / (1.0 + e));
}

}  // namespace thyreg
