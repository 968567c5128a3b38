#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace thyreg {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rates are stored per hour exactly as written in the config; pk converts at use.
struct PkParams {
  double f = 0.0;
  double V = 0.0;
  double k_e = 0.0;
  double k_a = 0.0;
  double molar_mass = 0.0;

  double ke_per_second() const { return k_e / 3600.0; }
  double ka_per_second() const { return k_a / 3600.0; }
  void validate() const;
};

struct Pdt2Params {
  double b1 = 0.0;
  double b0 = 0.0;
  double a1 = 0.0;
  double a0 = 0.0;

  double dc_gain() const { return b0 / a0; }
  void validate() const;
};

enum class IodideRegime { Normal, High };

struct TpoSigmoidParams {
  double c0 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
  IodideRegime regime = IodideRegime::Normal;

  void validate() const;
};

struct ThyroidParams {
  // thyroidal T4 compartment
  double alpha_th, beta_th, G_T, D_T, K_I, G_MCT8, K_MCT8;
  double G_D1, K_M1, G_D2, K_M2, k_Dio;
  // peripheral hormones
  double alpha_T, beta_T, alpha_31, beta_31, G_T3, alpha_32, beta_32;
  // pituitary
  double alpha_S, alpha_S2, G_H, TRH, D_H, S_S, D_S, L_S, G_R, D_R, beta_S, beta_S2;
  // binding
  double K_30, TBG, K_41, K_42, TBPA, K_31, IBS;
  // iodination and endocytosis
  double tau_TPO, V_org_H2O2, K_org_H2O2, H2O2, V_org_IC, K_org_IC, I_C;
  double V_org_Tg, K_org_Tg, V_apical_SSF, K_apical_SSF, A_apical, A_apical_nom, alpha_endo;
  double V_TPO_SSF, K_TPO_SSF, V_colloid, V_colloid_nom, alpha_TPO_Tg, K_TPO_Tg, T_g, R;
  double V_measured, weight, age;

  using Field = double ThyroidParams::*;
  static const std::vector<std::pair<std::string, Field>>& fields();

  double& at(const std::string& name);
  double at(const std::string& name) const;
  void validate() const;
};

enum class Route { Oral, Intravenous };
enum class ScenarioName { Ordinary, HighIodide, Thyrotoxicosis };

struct NoiseConfig {
  double std = 0.05;
  double truncation = 0.3;
};

struct ScenarioConfig {
  ScenarioName name = ScenarioName::Ordinary;
  double gT_multiplier = 1.0;
  Route route = Route::Oral;
  IodideRegime sigmoid = IodideRegime::Normal;
  double delta = 86400.0;       // s
  double u_max = 15.0;          // mg
  double horizon = 864000.0;    // s
  double sim_duration = 0.0;    // s
  NoiseConfig noise;
  std::map<std::string, double> mismatch;  // relative change, 0.1 = +10 %
  std::vector<int> missed_dose_days;
  unsigned long long rng_seed = 0;

  int steps_per_horizon() const;
  void validate() const;
};

struct MpcSettings {
  double q_T4 = 1e3;
  double q_T3 = 1e3;
  double q_TSH = 1e3;
  double R1 = 5e-3;
  double R2 = 1e-2;
  double quadrature_step = 3600.0;  // s
  double tolerance = 1e-6;
  int max_iterations = 100;
  bool finite_difference_gradient = false;
};

struct IntegratorSettings {
  double rtol = 1e-8;
  double atol_factor = 1e-8;  // atol_i = atol_factor * typical magnitude of component i
  double max_step = 0.0;      // 0: unbounded
};

// One parsed config entry; provenance is the trailing "# ..." comment.
struct ConfigEntry {
  std::string key;
  std::string value;
  std::string provenance;
};

struct ConfigSection {
  std::string name;
  std::vector<ConfigEntry> entries;

  const ConfigEntry* find(const std::string& key) const;
};

struct ConfigDocument {
  std::vector<ConfigSection> sections;

  const ConfigSection* find(const std::string& name) const;
  ConfigSection& section(const std::string& name);
  void set(const std::string& section, const std::string& key, const std::string& value,
           const std::string& provenance = {});
};

ConfigDocument parse_config(const std::string& text);
std::string format_config(const ConfigDocument& doc);

struct ParameterSet {
  PkParams pk;
  Pdt2Params pdt2;
  TpoSigmoidParams tpo_normal;
  TpoSigmoidParams tpo_high;
  ThyroidParams thyroid{};
  MpcSettings mpc;
  IntegratorSettings integrator;
  std::map<std::string, ScenarioConfig> scenarios;  // keyed by section suffix
  std::map<std::string, std::string> provenance;    // "section.key" -> source

  const TpoSigmoidParams& sigmoid(IodideRegime r) const {
    return r == IodideRegime::High ? tpo_high : tpo_normal;
  }
  const ScenarioConfig& scenario(const std::string& key) const;
};

ParameterSet load_parameters(const std::string& config_text);
ParameterSet load_parameters_file(const std::string& path);
std::string serialize_parameters(const ParameterSet& p);

// Shipped default config, identical to config/default.cfg.
const std::string& default_config_text();
ParameterSet default_parameters();

double mg_to_moles(double dose_mg, const PkParams& pk);

std::string to_string(Route r);
std::string to_string(ScenarioName s);
std::string to_string(IodideRegime r);
std::string scenario_key(ScenarioName s);  // "ordinary", "high-iodide", "thyrotoxicosis"
ScenarioName parse_scenario_name(const std::string& s);

}  // namespace thyreg
