#include "thyreg/bdf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace thyreg::ode {

namespace {

constexpr int kNewtonMaxIter = 4;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 10.0;

Eigen::MatrixXd compute_R(int order, double factor) {
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(order + 1, order + 1);
  for (int i = 1; i <= order; ++i)
    for (int j = 1; j <= order; ++j) M(i, j) = (i - 1 - factor * j) / static_cast<double>(i);
  M.row(0).setOnes();
  for (int i = 1; i <= order; ++i) M.row(i) = M.row(i).cwiseProduct(M.row(i - 1));
  return M;
}

}  // namespace

void DenseStep::eval(double tq, Eigen::Ref<Eigen::VectorXd> y) const {
  y = D.col(0);
  double p = 1.0;
  for (int i = 0; i < order; ++i) {
    p *= (tq - (t - h * i)) / (h * (1 + i));
    y += D.col(i + 1) * p;
  }
}

void DenseStep::eval_sens(double tq, Eigen::MatrixXd& S) const {
  S = DS[0];
  double p = 1.0;
  for (int i = 0; i < order; ++i) {
    p *= (tq - (t - h * i)) / (h * (1 + i));
    S += DS[i + 1] * p;
  }
}

BdfSolver::BdfSolver(Fun fun, Jac jac, BdfOptions opts)
    : fun_(std::move(fun)), jac_(std::move(jac)), opts_(std::move(opts)) {
  const double kappa[kMaxOrder + 1] = {0.0, -0.1850, -1.0 / 9.0, -0.0823, -0.0415, 0.0};
  gamma_ = Eigen::VectorXd::Zero(kMaxOrder + 1);
  for (int k = 1; k <= kMaxOrder; ++k) gamma_(k) = gamma_(k - 1) + 1.0 / k;
  alpha_.resize(kMaxOrder + 1);
  error_const_.resize(kMaxOrder + 1);
  for (int k = 0; k <= kMaxOrder; ++k) {
    alpha_(k) = (1.0 - kappa[k]) * gamma_(k);
    error_const_(k) = kappa[k] * gamma_(k) + 1.0 / (k + 1);
  }
}

void BdfSolver::evalf(double t, const Eigen::VectorXd& y, Eigen::VectorXd& f) {
  fun_(t, y, f);
  ++stats_.fevals;
}

void BdfSolver::initialize(double t0, const Eigen::VectorXd& y0, double t_bound) {
  initialize(t0, y0, t_bound, Eigen::MatrixXd(), {});
}

void BdfSolver::initialize(double t0, const Eigen::VectorXd& y0, double t_bound, const Eigen::MatrixXd& S0,
                           SensForcing forcing) {
  if (!(t_bound > t0)) throw IntegrationError("BDF: t_bound must exceed t0", t0);
  n_ = static_cast<int>(y0.size());
  if (opts_.atol.size() != n_) throw std::invalid_argument("BDF: atol size mismatch");
  if (!(opts_.rtol > 0.0) || (opts_.atol.array() <= 0.0).any()) throw std::invalid_argument("BDF: tolerances must be positive");
  t_ = t_old_ = t0;
  t_bound_ = t_bound;
  y_ = y0;
  newton_tol_ = std::max(10.0 * std::numeric_limits<double>::epsilon() / opts_.rtol, std::min(0.03, std::sqrt(opts_.rtol)));

  Eigen::VectorXd f(n_);
  evalf(t0, y0, f);
  if (!f.allFinite()) throw IntegrationError("BDF: non-finite derivative at initial point", t0);
  h_abs_ = opts_.first_step > 0.0 ? std::min(opts_.first_step, t_bound - t0) : select_initial_step(f);

  D_ = Eigen::MatrixXd::Zero(n_, kMaxOrder + 3);
  D_.col(0) = y0;
  D_.col(1) = f * h_abs_;
  order_ = 1;
  n_equal_steps_ = 0;

  J_.resize(n_, n_);
  jac_(t0, y0, J_);
  ++stats_.jevals;
  lu_valid_ = false;

  nsens_ = static_cast<int>(S0.cols());
  forcing_ = std::move(forcing);
  DS_.clear();
  S_ = S0;
  if (nsens_ > 0) {
    if (S0.rows() != n_) throw std::invalid_argument("BDF: sensitivity rows mismatch");
    DS_.assign(kMaxOrder + 3, Eigen::MatrixXd::Zero(n_, nsens_));
    DS_[0] = S0;
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n_, nsens_);
    if (forcing_) forcing_(t0, B);
    DS_[1] = (J_ * S0 + B) * h_abs_;
  }
}

double BdfSolver::select_initial_step(const Eigen::VectorXd& f0) {
  const double interval = t_bound_ - t_;
  Eigen::VectorXd scale = opts_.atol.array() + y_.array().abs() * opts_.rtol;
  double d0 = rms(y_.cwiseQuotient(scale));
  double d1 = rms(f0.cwiseQuotient(scale));
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, interval);
  Eigen::VectorXd y1 = y_ + h0 * f0;
  Eigen::VectorXd f1(n_);
  evalf(t_ + h0, y1, f1);
  double d2 = rms((f1 - f0).cwiseQuotient(scale)) / h0;
  double h1 = (d1 <= 1e-15 && d2 <= 1e-15) ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / std::max(d1, d2), 0.5);
  double h = std::min({100.0 * h0, h1, interval});
  if (opts_.max_step > 0.0) h = std::min(h, opts_.max_step);
  return h;
}

void BdfSolver::change_D(int order, double factor) {
  Eigen::MatrixXd RU = compute_R(order, factor) * compute_R(order, 1.0);
  D_.leftCols(order + 1) = D_.leftCols(order + 1) * RU;
  if (nsens_ > 0) {
    std::vector<Eigen::MatrixXd> old(DS_.begin(), DS_.begin() + order + 1);
    for (int i = 0; i <= order; ++i) {
      DS_[i].setZero();
      for (int j = 0; j <= order; ++j) DS_[i] += RU(j, i) * old[j];
    }
  }
}

bool BdfSolver::solve_system(double t_new, const Eigen::VectorXd& y_predict, double c, const Eigen::VectorXd& psi,
                             const Eigen::VectorXd& scale, Eigen::VectorXd& y, Eigen::VectorXd& d, int& n_iter) {
  d.setZero(n_);
  y = y_predict;
  Eigen::VectorXd f(n_), dy(n_);
  double dy_norm_old = -1.0;
  for (int k = 0; k < kNewtonMaxIter; ++k) {
    n_iter = k + 1;
    evalf(t_new, y, f);
    if (!f.allFinite()) return false;
    dy = lu_.solve(c * f - psi - d);
    double dy_norm = rms(dy.cwiseQuotient(scale));
    double rate = dy_norm_old >= 0.0 ? dy_norm / dy_norm_old : -1.0;
    if (rate >= 0.0 && (rate >= 1.0 || std::pow(rate, kNewtonMaxIter - k) / (1.0 - rate) * dy_norm > newton_tol_))
      return false;
    y += dy;
    d += dy;
    if (dy_norm == 0.0 || (rate >= 0.0 && rate / (1.0 - rate) * dy_norm < newton_tol_)) return true;
    dy_norm_old = dy_norm;
  }
  return false;
}

void BdfSolver::step_sensitivities(double t_new, double c) {
  Eigen::MatrixXd S_pred = DS_[0];
  Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(n_, nsens_);
  for (int j = 1; j <= order_; ++j) {
    S_pred += DS_[j];
    psi += gamma_(j) * DS_[j];
  }
  psi /= alpha_(order_);
  Eigen::MatrixXd Jn(n_, n_);
  jac_(t_new, y_, Jn);
  ++stats_.jevals;
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n_, nsens_);
  if (forcing_) forcing_(t_new, B);
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n_, n_) - c * Jn;
  Eigen::MatrixXd dS = A.partialPivLu().solve(c * (Jn * S_pred + B) - psi);
  S_ = S_pred + dS;
  DS_[order_ + 2] = dS - DS_[order_ + 1];
  DS_[order_ + 1] = dS;
  for (int i = order_; i >= 0; --i) DS_[i] += DS_[i + 1];
}

bool BdfSolver::step() {
  if (finished()) return false;
  const double t = t_;
  const double min_step = 10.0 * std::fabs(std::nextafter(t, std::numeric_limits<double>::infinity()) - t);
  double h_abs = h_abs_;
  if (opts_.max_step > 0.0 && h_abs > opts_.max_step) {
    change_D(order_, opts_.max_step / h_abs);
    h_abs = opts_.max_step;
    n_equal_steps_ = 0;
  } else if (h_abs < min_step) {
    change_D(order_, min_step / h_abs);
    h_abs = min_step;
    n_equal_steps_ = 0;
  }

  bool jac_current = false;
  Eigen::VectorXd y_predict(n_), psi(n_), scale(n_), y_new(n_), d(n_);
  double t_new = t, error_norm = 0.0, safety = 0.0;
  int n_iter = 0;
  bool accepted = false;
  while (!accepted) {
    if (h_abs < min_step) throw IntegrationError("BDF: step size underflow", t);
    t_new = t + h_abs;
    if (t_new - t_bound_ > 0.0) {
      t_new = t_bound_;
      change_D(order_, std::fabs(t_new - t) / h_abs);
      n_equal_steps_ = 0;
      lu_valid_ = false;
    }
    const double h = t_new - t;
    h_abs = std::fabs(h);

    y_predict = D_.leftCols(order_ + 1).rowwise().sum();
    scale = opts_.atol.array() + opts_.rtol * y_predict.array().abs();
    psi = D_.middleCols(1, order_) * gamma_.segment(1, order_) / alpha_(order_);

    const double c = h / alpha_(order_);
    bool converged = false;
    for (;;) {
      if (!lu_valid_) {
        lu_.compute(Eigen::MatrixXd::Identity(n_, n_) - c * J_);
        lu_valid_ = true;
        ++stats_.lu;
      }
      converged = solve_system(t_new, y_predict, c, psi, scale, y_new, d, n_iter);
      if (converged || jac_current) break;
      jac_(t_new, y_predict, J_);
      ++stats_.jevals;
      lu_valid_ = false;
      jac_current = true;
    }
    if (!converged) {
      h_abs *= 0.5;
      change_D(order_, 0.5);
      n_equal_steps_ = 0;
      lu_valid_ = false;
      ++stats_.rejected;
      continue;
    }
    safety = 0.9 * (2 * kNewtonMaxIter + 1) / static_cast<double>(2 * kNewtonMaxIter + n_iter);
    scale = opts_.atol.array() + opts_.rtol * y_new.array().abs();
    error_norm = rms((error_const_(order_) * d).cwiseQuotient(scale));
    if (error_norm > 1.0) {
      double factor = std::max(kMinFactor, safety * std::pow(error_norm, -1.0 / (order_ + 1)));
      h_abs *= factor;
      change_D(order_, factor);
      n_equal_steps_ = 0;
      ++stats_.rejected;
    } else {
      accepted = true;
    }
  }

  ++stats_.steps;
  ++n_equal_steps_;
  t_old_ = t;
  t_ = t_new;
  y_ = y_new;
  h_abs_ = h_abs;
  if (nsens_ > 0) step_sensitivities(t_new, (t_new - t) / alpha_(order_));

  D_.col(order_ + 2) = d - D_.col(order_ + 1);
  D_.col(order_ + 1) = d;
  for (int i = order_; i >= 0; --i) D_.col(i) += D_.col(i + 1);

  if (n_equal_steps_ < order_ + 1) return !finished();

  const double inf = std::numeric_limits<double>::infinity();
  double error_m_norm = inf, error_p_norm = inf;
  if (order_ > 1) error_m_norm = rms((error_const_(order_ - 1) * D_.col(order_)).cwiseQuotient(scale));
  if (order_ < kMaxOrder) error_p_norm = rms((error_const_(order_ + 1) * D_.col(order_ + 2)).cwiseQuotient(scale));
  const double norms[3] = {error_m_norm, error_norm, error_p_norm};
  double best = -1.0;
  int delta_order = 0;
  for (int k = 0; k < 3; ++k) {
    double fac = norms[k] == 0.0 ? inf : std::pow(norms[k], -1.0 / (order_ + k));
    if (fac > best) {
      best = fac;
      delta_order = k - 1;
    }
  }
  order_ += delta_order;
  const double factor = std::min(kMaxFactor, safety * best);
  h_abs_ *= factor;
  change_D(order_, factor);
  n_equal_steps_ = 0;
  lu_valid_ = false;
  return !finished();
}

void BdfSolver::eval(double tq, Eigen::Ref<Eigen::VectorXd> y) const {
  y = D_.col(0);
  const double h = h_abs_;
  double p = 1.0;
  for (int i = 0; i < order_; ++i) {
    p *= (tq - (t_ - h * i)) / (h * (1 + i));
    y += D_.col(i + 1) * p;
  }
}

void BdfSolver::eval_sens(double tq, Eigen::MatrixXd& S) const {
  S = DS_[0];
  const double h = h_abs_;
  double p = 1.0;
  for (int i = 0; i < order_; ++i) {
    p *= (tq - (t_ - h * i)) / (h * (1 + i));
    S += DS_[i + 1] * p;
  }
}

DenseStep BdfSolver::dense_step() const {
  DenseStep s;
  s.t_old = t_old_;
  s.t = t_;
  s.h = h_abs_;
  s.order = order_;
  s.D = D_.leftCols(order_ + 1);
  if (nsens_ > 0) s.DS.assign(DS_.begin(), DS_.begin() + order_ + 1);
  return s;
}

}  // namespace thyreg::ode
