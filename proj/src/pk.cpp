#include "thyreg/pk.hpp"

#include <algorithm>
#include <stdexcept>

namespace thyreg {

DoseSchedule::DoseSchedule(std::vector<DoseEvent> events) {
  for (const auto& e : events) add(e);
}

void DoseSchedule::add(const DoseEvent& e) {
  if (!(e.amount >= 0.0) || !std::isfinite(e.amount)) throw std::domain_error("dose amount must be >= 0");
  if (!std::isfinite(e.time)) throw std::domain_error("dose time must be finite");
  auto it = std::lower_bound(events_.begin(), events_.end(), e.time,
                             [](const DoseEvent& a, double t) { return a.time < t; });
  if (it != events_.end() && it->time == e.time) throw std::invalid_argument("duplicate dose time");
  events_.insert(it, e);
}

DoseSchedule DoseSchedule::merge(const DoseSchedule& a, const DoseSchedule& b) {
  DoseSchedule out = a;
  for (const auto& e : b.events()) out.add(e);
  return out;
}

double oral_plasma_single(const DoseEvent& dose, double t, const PkParams& pk) {
  if (t <= dose.time) return 0.0;
  const double u = mg_to_moles(dose.amount, pk);
  const double ke = pk.ke_per_second(), ka = pk.ka_per_second();
  const double dt = t - dose.time;
  const double c = pk.f * u * ka / (pk.V * (ka - ke)) * (std::exp(-ke * dt) - std::exp(-ka * dt));
  return std::max(c, 0.0);
}

double iv_plasma_single(const DoseEvent& dose, double t, const PkParams& pk) {
  if (t < dose.time) return 0.0;
  const double u = mg_to_moles(dose.amount, pk);
  return u / pk.V * std::exp(-pk.ke_per_second() * (t - dose.time));
}

double plasma_single(const DoseEvent& dose, double t, const PkParams& pk) {
  return dose.route == Route::Oral ? oral_plasma_single(dose, t, pk) : iv_plasma_single(dose, t, pk);
}

double plasma_from_schedule(const DoseSchedule& schedule, double t, const PkParams& pk) {
  double sum = 0.0;
  for (const auto& e : schedule.events()) sum += plasma_single(e, t, pk);
  return sum;
}

double plasma_before(const DoseSchedule& schedule, double cutoff, double t, const PkParams& pk) {
  double sum = 0.0;
  for (const auto& e : schedule.events()) {
    if (e.time > cutoff) break;
    sum += plasma_single(e, t, pk);
  }
  return sum;
}

double tpo_activity(double mmi_th, const TpoSigmoidParams& s) {
  if (mmi_th < 0.0 || std::isnan(mmi_th)) throw std::domain_error("tpo_activity: negative MMI concentration");
  const double z = s.c1 * (s.c3 - std::pow(mmi_th, 1.0 / s.c2));
  if (z >= 0.0) return s.c0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return s.c0 * e / (1.0 + e);
}

}  // namespace thyreg
