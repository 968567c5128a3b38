#include "thyreg/params.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace thyreg {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& section, const std::string& key, const std::string& text) {
  const char* begin = text.c_str();
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || errno == ERANGE || !std::isfinite(v))
    throw ConfigError("[" + section + "] " + key + ": not a finite number: '" + text + "'");
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void require_positive(double v, const char* name, std::vector<std::string>& bad) {
  if (!(v > 0.0)) bad.push_back(name);
}

void throw_if_bad(const std::string& record, const std::vector<std::string>& bad) {
  if (bad.empty()) return;
  std::string msg = record + " invariant violated:";
  for (const auto& b : bad) msg += " " + b;
  throw ConfigError(msg);
}

class SectionReader {
 public:
  SectionReader(const ConfigDocument& doc, const std::string& name, ParameterSet& out)
      : name_(name), out_(out) {
    sec_ = doc.find(name);
    if (!sec_) throw ConfigError("missing section [" + name + "]");
  }

  const ConfigEntry& entry(const std::string& key) const {
    const ConfigEntry* e = sec_->find(key);
    if (!e) throw ConfigError("missing key '" + key + "' in section [" + name_ + "]");
    out_.provenance[name_ + "." + key] = e->provenance;
    return *e;
  }
  bool has(const std::string& key) const { return sec_->find(key) != nullptr; }
  double number(const std::string& key) const { return to_double(name_, key, entry(key).value); }
  std::string text(const std::string& key) const { return entry(key).value; }

 private:
  std::string name_;
  ParameterSet& out_;
  const ConfigSection* sec_ = nullptr;
};

TpoSigmoidParams read_sigmoid(const SectionReader& r, IodideRegime regime) {
  TpoSigmoidParams s;
  s.c0 = r.number("c0");
  s.c1 = r.number("c1");
  s.c2 = r.number("c2");
  s.c3 = r.number("c3");
  s.regime = regime;
  s.validate();
  return s;
}

Route parse_route(const std::string& s) {
  if (s == "oral") return Route::Oral;
  if (s == "iv" || s == "intravenous") return Route::Intravenous;
  throw ConfigError("unknown route '" + s + "'");
}

IodideRegime parse_regime(const std::string& s) {
  if (s == "normal") return IodideRegime::Normal;
  if (s == "high") return IodideRegime::High;
  throw ConfigError("unknown sigmoid regime '" + s + "'");
}

ScenarioConfig read_scenario(const SectionReader& r, const std::string& key) {
  ScenarioConfig sc;
  sc.name = parse_scenario_name(key);
  sc.route = parse_route(r.text("route"));
  sc.delta = r.number("delta_h") * 3600.0;
  sc.u_max = r.number("u_max_mg");
  sc.horizon = r.number("horizon_days") * 86400.0;
  sc.sim_duration = r.number("duration_days") * 86400.0;
  sc.gT_multiplier = r.number("gT_multiplier");
  sc.sigmoid = parse_regime(r.text("sigmoid"));
  sc.noise.std = r.number("noise_std");
  sc.noise.truncation = r.number("noise_truncation");
  for (const auto& item : split(r.text("mismatch"), ',')) {
    auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("mismatch entry needs name:change, got '" + item + "'");
    std::string name = trim(item.substr(0, colon));
    sc.mismatch[name] = to_double("scenario." + key, "mismatch", trim(item.substr(colon + 1)));
  }
  for (const auto& d : split(r.text("missed_dose_days"), ','))
    sc.missed_dose_days.push_back(static_cast<int>(to_double("scenario." + key, "missed_dose_days", d)));
  sc.rng_seed = static_cast<unsigned long long>(r.number("seed"));
  sc.validate();
  return sc;
}

}  // namespace

void PkParams::validate() const {
  std::vector<std::string> bad;
  if (!(f > 0.0 && f <= 1.0)) bad.push_back("f");
  require_positive(V, "V", bad);
  require_positive(k_e, "k_e", bad);
  if (!(k_a > k_e)) bad.push_back("k_a (must exceed k_e)");
  require_positive(molar_mass, "molar_mass", bad);
  throw_if_bad("PkParams", bad);
}

void Pdt2Params::validate() const {
  std::vector<std::string> bad;
  require_positive(a1, "a1", bad);
  require_positive(a0, "a0", bad);
  require_positive(b0, "b0", bad);
  if (!std::isfinite(b1)) bad.push_back("b1");
  throw_if_bad("Pdt2Params", bad);
}

void TpoSigmoidParams::validate() const {
  std::vector<std::string> bad;
  if (!(c0 > 0.0 && c0 <= 1.0)) bad.push_back("c0");
  require_positive(c1, "c1", bad);
  require_positive(c2, "c2", bad);
  require_positive(c3, "c3", bad);
  throw_if_bad("TpoSigmoidParams", bad);
}

const std::vector<std::pair<std::string, ThyroidParams::Field>>& ThyroidParams::fields() {
  using P = ThyroidParams;
  static const std::vector<std::pair<std::string, Field>> table = {
      {"alpha_th", &P::alpha_th}, {"beta_th", &P::beta_th}, {"G_T", &P::G_T},
      {"D_T", &P::D_T}, {"K_I", &P::K_I}, {"G_MCT8", &P::G_MCT8},
      {"K_MCT8", &P::K_MCT8}, {"G_D1", &P::G_D1}, {"K_M1", &P::K_M1},
      {"G_D2", &P::G_D2}, {"K_M2", &P::K_M2}, {"k_Dio", &P::k_Dio},
      {"alpha_T", &P::alpha_T}, {"beta_T", &P::beta_T}, {"alpha_31", &P::alpha_31},
      {"beta_31", &P::beta_31}, {"G_T3", &P::G_T3}, {"alpha_32", &P::alpha_32},
      {"beta_32", &P::beta_32}, {"alpha_S", &P::alpha_S}, {"alpha_S2", &P::alpha_S2},
      {"G_H", &P::G_H}, {"TRH", &P::TRH}, {"D_H", &P::D_H},
      {"S_S", &P::S_S}, {"D_S", &P::D_S}, {"L_S", &P::L_S},
      {"G_R", &P::G_R}, {"D_R", &P::D_R}, {"beta_S", &P::beta_S},
      {"beta_S2", &P::beta_S2}, {"K_30", &P::K_30}, {"TBG", &P::TBG},
      {"K_41", &P::K_41}, {"K_42", &P::K_42}, {"TBPA", &P::TBPA},
      {"K_31", &P::K_31}, {"IBS", &P::IBS}, {"tau_TPO", &P::tau_TPO},
      {"V_org_H2O2", &P::V_org_H2O2}, {"K_org_H2O2", &P::K_org_H2O2}, {"H2O2", &P::H2O2},
      {"V_org_IC", &P::V_org_IC}, {"K_org_IC", &P::K_org_IC}, {"I_C", &P::I_C},
      {"V_org_Tg", &P::V_org_Tg}, {"K_org_Tg", &P::K_org_Tg}, {"V_apical_SSF", &P::V_apical_SSF},
      {"K_apical_SSF", &P::K_apical_SSF}, {"A_apical", &P::A_apical},
      {"A_apical_nom", &P::A_apical_nom}, {"alpha_endo", &P::alpha_endo},
      {"V_TPO_SSF", &P::V_TPO_SSF}, {"K_TPO_SSF", &P::K_TPO_SSF}, {"V_colloid", &P::V_colloid},
      {"V_colloid_nom", &P::V_colloid_nom}, {"alpha_TPO_Tg", &P::alpha_TPO_Tg},
      {"K_TPO_Tg", &P::K_TPO_Tg}, {"T_g", &P::T_g}, {"R", &P::R},
      {"V_measured", &P::V_measured}, {"weight", &P::weight}, {"age", &P::age},
  };
  return table;
}

double& ThyroidParams::at(const std::string& name) {
  for (const auto& [n, f] : fields())
    if (n == name) return this->*f;
  throw ConfigError("unknown thyroid parameter '" + name + "'");
}

double ThyroidParams::at(const std::string& name) const {
  return const_cast<ThyroidParams*>(this)->at(name);
}

void ThyroidParams::validate() const {
  std::vector<std::string> bad;
  for (const auto& [n, f] : fields()) {
    double v = this->*f;
    if (n == "R") {
      if (!(v >= 0.0 && v < 100.0)) bad.push_back(n);
    } else if (!(v > 0.0) || !std::isfinite(v)) {
      bad.push_back(n);
    }
  }
  throw_if_bad("ThyroidParams", bad);
}

int ScenarioConfig::steps_per_horizon() const {
  return static_cast<int>(std::lround(horizon / delta));
}

void ScenarioConfig::validate() const {
  std::vector<std::string> bad;
  require_positive(delta, "delta", bad);
  require_positive(u_max, "u_max", bad);
  require_positive(horizon, "horizon", bad);
  require_positive(sim_duration, "sim_duration", bad);
  if (delta > 0.0 && std::fabs(horizon / delta - std::round(horizon / delta)) > 1e-9)
    bad.push_back("horizon (not a multiple of delta)");
  if (!(gT_multiplier >= 1.0)) bad.push_back("gT_multiplier");
  if (!(noise.std >= 0.0)) bad.push_back("noise_std");
  if (!(noise.truncation >= 0.0)) bad.push_back("noise_truncation");
  for (int d : missed_dose_days)
    if (d < 0) bad.push_back("missed_dose_days");
  throw_if_bad("ScenarioConfig", bad);
  ThyroidParams probe{};
  for (const auto& [n, v] : mismatch) probe.at(n);
}

const ConfigEntry* ConfigSection::find(const std::string& key) const {
  for (const auto& e : entries)
    if (e.key == key) return &e;
  return nullptr;
}

const ConfigSection* ConfigDocument::find(const std::string& name) const {
  for (const auto& s : sections)
    if (s.name == name) return &s;
  return nullptr;
}

ConfigSection& ConfigDocument::section(const std::string& name) {
  for (auto& s : sections)
    if (s.name == name) return s;
  sections.push_back({name, {}});
  return sections.back();
}

void ConfigDocument::set(const std::string& sec, const std::string& key, const std::string& value,
                         const std::string& provenance) {
  auto& s = section(sec);
  for (auto& e : s.entries) {
    if (e.key == key) {
      e.value = value;
      if (!provenance.empty()) e.provenance = provenance;
      return;
    }
  }
  s.entries.push_back({key, value, provenance});
}

ConfigDocument parse_config(const std::string& text) {
  ConfigDocument doc;
  ConfigSection* current = nullptr;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string provenance;
    auto hash = line.find('#');
    if (hash != std::string::npos) {
      provenance = trim(line.substr(hash + 1));
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": bad section header");
      std::string name = trim(line.substr(1, line.size() - 2));
      if (doc.find(name)) throw ConfigError("line " + std::to_string(lineno) + ": duplicate section [" + name + "]");
      current = &doc.section(name);
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    if (!current) throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (current->find(key))
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    current->entries.push_back({key, trim(line.substr(eq + 1)), provenance});
  }
  return doc;
}

std::string format_config(const ConfigDocument& doc) {
  std::ostringstream out;
  bool first = true;
  for (const auto& s : doc.sections) {
    if (!first) out << '\n';
    first = false;
    out << '[' << s.name << "]\n";
    for (const auto& e : s.entries) {
      out << e.key << " = " << e.value;
      if (!e.provenance.empty()) out << "  # " << e.provenance;
      out << '\n';
    }
  }
  return out.str();
}

const ScenarioConfig& ParameterSet::scenario(const std::string& key) const {
  auto it = scenarios.find(key);
  if (it == scenarios.end()) throw ConfigError("no scenario section [scenario." + key + "]");
  return it->second;
}

ParameterSet load_parameters(const std::string& config_text) {
  ConfigDocument doc = parse_config(config_text);
  ParameterSet p;

  {
    SectionReader r(doc, "pk", p);
    p.pk.f = r.number("f");
    p.pk.V = r.number("V");
    p.pk.k_e = r.number("k_e");
    p.pk.k_a = r.number("k_a");
    p.pk.molar_mass = r.number("molar_mass");
    p.pk.validate();
  }
  {
    SectionReader r(doc, "pdt2", p);
    p.pdt2.b1 = r.number("b1");
    p.pdt2.b0 = r.number("b0");
    p.pdt2.a1 = r.number("a1");
    p.pdt2.a0 = r.number("a0");
    p.pdt2.validate();
  }
  p.tpo_normal = read_sigmoid(SectionReader(doc, "tpo.normal", p), IodideRegime::Normal);
  p.tpo_high = read_sigmoid(SectionReader(doc, "tpo.high", p), IodideRegime::High);
  {
    SectionReader r(doc, "thyroid", p);
    for (const auto& [name, field] : ThyroidParams::fields()) p.thyroid.*field = r.number(name);
    p.thyroid.validate();
  }
  if (doc.find("mpc")) {
    SectionReader r(doc, "mpc", p);
    p.mpc.q_T4 = r.number("q_T4");
    p.mpc.q_T3 = r.number("q_T3");
    p.mpc.q_TSH = r.number("q_TSH");
    p.mpc.R1 = r.number("R1");
    p.mpc.R2 = r.number("R2");
    p.mpc.quadrature_step = r.number("quadrature_step_h") * 3600.0;
    p.mpc.tolerance = r.number("tolerance");
    p.mpc.max_iterations = static_cast<int>(r.number("max_iterations"));
    std::string g = r.text("gradient");
    if (g != "sensitivity" && g != "finite-difference") throw ConfigError("[mpc] gradient: unknown mode '" + g + "'");
    p.mpc.finite_difference_gradient = g == "finite-difference";
    if (p.mpc.q_T4 < 0 || p.mpc.q_T3 < 0 || p.mpc.q_TSH < 0 || p.mpc.R1 < 0 || p.mpc.R2 < 0 ||
        !(p.mpc.quadrature_step > 0) || !(p.mpc.tolerance > 0) || p.mpc.max_iterations < 1)
      throw ConfigError("[mpc] invariant violated");
  }
  if (doc.find("integrator")) {
    SectionReader r(doc, "integrator", p);
    p.integrator.rtol = r.number("rtol");
    p.integrator.atol_factor = r.number("atol_factor");
    p.integrator.max_step = r.number("max_step_h") * 3600.0;
    if (!(p.integrator.rtol > 0) || !(p.integrator.atol_factor > 0) || p.integrator.max_step < 0)
      throw ConfigError("[integrator] tolerances must be positive");
  }
  for (const auto& s : doc.sections) {
    const std::string prefix = "scenario.";
    if (s.name.rfind(prefix, 0) != 0) continue;
    std::string key = s.name.substr(prefix.size());
    p.scenarios[key] = read_scenario(SectionReader(doc, s.name, p), key);
  }
  return p;
}

ParameterSet load_parameters_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return load_parameters(buf.str());
}

std::string serialize_parameters(const ParameterSet& p) {
  ConfigDocument doc;
  auto put = [&](const std::string& sec, const std::string& key, const std::string& value) {
    auto it = p.provenance.find(sec + "." + key);
    doc.set(sec, key, value, it == p.provenance.end() ? std::string{} : it->second);
  };
  put("pk", "f", fmt(p.pk.f));
  put("pk", "V", fmt(p.pk.V));
  put("pk", "k_e", fmt(p.pk.k_e));
  put("pk", "k_a", fmt(p.pk.k_a));
  put("pk", "molar_mass", fmt(p.pk.molar_mass));
  put("pdt2", "b1", fmt(p.pdt2.b1));
  put("pdt2", "b0", fmt(p.pdt2.b0));
  put("pdt2", "a1", fmt(p.pdt2.a1));
  put("pdt2", "a0", fmt(p.pdt2.a0));
  for (const auto* s : {&p.tpo_normal, &p.tpo_high}) {
    std::string sec = s->regime == IodideRegime::High ? "tpo.high" : "tpo.normal";
    put(sec, "c0", fmt(s->c0));
    put(sec, "c1", fmt(s->c1));
    put(sec, "c2", fmt(s->c2));
    put(sec, "c3", fmt(s->c3));
  }
  for (const auto& [name, field] : ThyroidParams::fields()) put("thyroid", name, fmt(p.thyroid.*field));
  put("mpc", "q_T4", fmt(p.mpc.q_T4));
  put("mpc", "q_T3", fmt(p.mpc.q_T3));
  put("mpc", "q_TSH", fmt(p.mpc.q_TSH));
  put("mpc", "R1", fmt(p.mpc.R1));
  put("mpc", "R2", fmt(p.mpc.R2));
  put("mpc", "quadrature_step_h", fmt(p.mpc.quadrature_step / 3600.0));
  put("mpc", "tolerance", fmt(p.mpc.tolerance));
  put("mpc", "max_iterations", std::to_string(p.mpc.max_iterations));
  put("mpc", "gradient", p.mpc.finite_difference_gradient ? "finite-difference" : "sensitivity");
  put("integrator", "rtol", fmt(p.integrator.rtol));
  put("integrator", "atol_factor", fmt(p.integrator.atol_factor));
  put("integrator", "max_step_h", fmt(p.integrator.max_step / 3600.0));
  for (const auto& [key, sc] : p.scenarios) {
    std::string sec = "scenario." + key;
    put(sec, "route", sc.route == Route::Oral ? "oral" : "iv");
    put(sec, "delta_h", fmt(sc.delta / 3600.0));
    put(sec, "u_max_mg", fmt(sc.u_max));
    put(sec, "horizon_days", fmt(sc.horizon / 86400.0));
    put(sec, "duration_days", fmt(sc.sim_duration / 86400.0));
    put(sec, "gT_multiplier", fmt(sc.gT_multiplier));
    put(sec, "sigmoid", to_string(sc.sigmoid));
    put(sec, "noise_std", fmt(sc.noise.std));
    put(sec, "noise_truncation", fmt(sc.noise.truncation));
    std::string mm;
    for (const auto& [n, v] : sc.mismatch) mm += (mm.empty() ? "" : ",") + n + ":" + fmt(v);
    put(sec, "mismatch", mm);
    std::string days;
    for (int d : sc.missed_dose_days) days += (days.empty() ? "" : ",") + std::to_string(d);
    put(sec, "missed_dose_days", days);
    put(sec, "seed", std::to_string(sc.rng_seed));
  }
  return format_config(doc);
}

ParameterSet default_parameters() { return load_parameters(default_config_text()); }

double mg_to_moles(double dose_mg, const PkParams& pk) {
  if (dose_mg < 0.0 || !std::isfinite(dose_mg)) throw std::domain_error("dose must be a non-negative amount in mg");
  return dose_mg / 1000.0 / pk.molar_mass;
}

std::string to_string(Route r) { return r == Route::Oral ? "oral" : "iv"; }

std::string to_string(IodideRegime r) { return r == IodideRegime::High ? "high" : "normal"; }

std::string to_string(ScenarioName s) {
  switch (s) {
    case ScenarioName::Ordinary: return "Ordinary";
    case ScenarioName::HighIodide: return "HighIodide";
    case ScenarioName::Thyrotoxicosis: return "Thyrotoxicosis";
  }
  return "?";
}

std::string scenario_key(ScenarioName s) {
  switch (s) {
    case ScenarioName::Ordinary: return "ordinary";
    case ScenarioName::HighIodide: return "high-iodide";
    case ScenarioName::Thyrotoxicosis: return "thyrotoxicosis";
  }
  return "?";
}

ScenarioName parse_scenario_name(const std::string& s) {
  if (s == "ordinary") return ScenarioName::Ordinary;
  if (s == "high-iodide") return ScenarioName::HighIodide;
  if (s == "thyrotoxicosis") return ScenarioName::Thyrotoxicosis;
  throw ConfigError("unknown scenario '" + s + "'");
}

}  // namespace thyreg
