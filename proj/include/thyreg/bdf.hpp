#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace thyreg::ode {

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, double last_good_time)
      : std::runtime_error(what), last_good_time(last_good_time) {}
  double last_good_time;
};

struct BdfOptions {
  double rtol = 1e-8;
  Eigen::VectorXd atol;  // per component
  double max_step = 0.0;  // 0: unbounded
  double first_step = 0.0;  // 0: automatic
};

// Interpolating polynomial of one accepted step.
struct DenseStep {
  double t_old = 0.0, t = 0.0, h = 0.0;
  int order = 1;
  Eigen::MatrixXd D;                 // n x (order+1) backward differences
  std::vector<Eigen::MatrixXd> DS;   // sensitivity differences, same layout per level

  void eval(double tq, Eigen::Ref<Eigen::VectorXd> y) const;
  void eval_sens(double tq, Eigen::MatrixXd& S) const;
};

// Variable-order (1..5) quasi-constant step NDF integrator for stiff systems,
// with optional forward sensitivities S' = J S + B(t) solved by the staggered
// direct method on the same step sequence.
class BdfSolver {
 public:
  using Fun = std::function<void(double, const Eigen::VectorXd&, Eigen::VectorXd&)>;
  using Jac = std::function<void(double, const Eigen::VectorXd&, Eigen::MatrixXd&)>;
  using SensForcing = std::function<void(double, Eigen::MatrixXd&)>;

  static constexpr int kMaxOrder = 5;

  BdfSolver(Fun fun, Jac jac, BdfOptions opts);

  void initialize(double t0, const Eigen::VectorXd& y0, double t_bound);
  void initialize(double t0, const Eigen::VectorXd& y0, double t_bound, const Eigen::MatrixXd& S0,
                  SensForcing forcing);

  // Advance one accepted step. Returns false once t_bound is reached.
  bool step();
  bool finished() const { return t_ == t_bound_; }

  double t() const { return t_; }
  double t_old() const { return t_old_; }
  const Eigen::VectorXd& y() const { return y_; }
  const Eigen::MatrixXd& S() const { return S_; }
  bool has_sensitivities() const { return nsens_ > 0; }
  int order() const { return order_; }

  // Polynomial of the last accepted step, valid on [t_old, t].
  void eval(double tq, Eigen::Ref<Eigen::VectorXd> y) const;
  void eval_sens(double tq, Eigen::MatrixXd& S) const;
  DenseStep dense_step() const;

  struct Stats {
    long steps = 0, rejected = 0, fevals = 0, jevals = 0, lu = 0;
  };
  const Stats& stats() const { return stats_; }

 private:
  double rms(const Eigen::VectorXd& v) const { return std::sqrt(v.squaredNorm() / static_cast<double>(v.size())); }
  double select_initial_step(const Eigen::VectorXd& f0);
  void change_D(int order, double factor);
  bool solve_system(double t_new, const Eigen::VectorXd& y_predict, double c, const Eigen::VectorXd& psi,
                    const Eigen::VectorXd& scale, Eigen::VectorXd& y, Eigen::VectorXd& d, int& n_iter);
  void step_sensitivities(double t_new, double c);
  void evalf(double t, const Eigen::VectorXd& y, Eigen::VectorXd& f);

  Fun fun_;
  Jac jac_;
  BdfOptions opts_;
  int n_ = 0;
  int nsens_ = 0;
  SensForcing forcing_;

  double t_ = 0.0, t_old_ = 0.0, t_bound_ = 0.0, h_abs_ = 0.0, newton_tol_ = 0.0;
  int order_ = 1;
  int n_equal_steps_ = 0;
  Eigen::VectorXd y_;
  Eigen::MatrixXd S_;
  Eigen::MatrixXd D_;                // n x (kMaxOrder+3)
  std::vector<Eigen::MatrixXd> DS_;  // kMaxOrder+3 levels of n x nsens
  Eigen::MatrixXd J_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  bool lu_valid_ = false;
  bool jac_current_ = false;
  Stats stats_;

  Eigen::VectorXd gamma_, alpha_, error_const_;
};

}  // namespace thyreg::ode
