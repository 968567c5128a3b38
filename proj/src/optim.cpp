#include "thyreg/optim.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace thyreg::optim {

Eigen::VectorXd project(const Eigen::VectorXd& x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

Eigen::VectorXd projected_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
                                   const Eigen::VectorXd& hi) {
  Eigen::VectorXd pg = g;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x(i) <= lo(i) && g(i) > 0.0) pg(i) = 0.0;
    if (x(i) >= hi(i) && g(i) < 0.0) pg(i) = 0.0;
  }
  return pg;
}

double stationarity(const Eigen::VectorXd& x, const Eigen::VectorXd& g, double f, const Eigen::VectorXd& lo,
                    const Eigen::VectorXd& hi) {
  if (x.size() == 0) return 0.0;
  const double width = (hi - lo).maxCoeff();
  return projected_gradient(x, g, lo, hi).lpNorm<Eigen::Infinity>() * width / std::max(std::fabs(f), 1.0);
}

namespace {

// Solves (B_FF + mu diag(B_FF)) d_F = -g_F on the free coordinates; zero elsewhere.
Eigen::VectorXd newton_direction(const Eigen::MatrixXd& B, const Eigen::VectorXd& g, const Eigen::VectorXd& free,
                                 double mu) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < g.size(); ++i)
    if (free(i) > 0.0) idx.push_back(i);
  const auto m = static_cast<Eigen::Index>(idx.size());
  Eigen::VectorXd d = Eigen::VectorXd::Zero(g.size());
  if (m == 0) return d;
  Eigen::MatrixXd BF(m, m);
  Eigen::VectorXd gF(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    gF(a) = g(idx[a]);
    for (Eigen::Index b = 0; b < m; ++b) BF(a, b) = B(idx[a], idx[b]);
  }
  const double floor = 1e-14 * std::max(BF.diagonal().maxCoeff(), 1e-300);
  for (Eigen::Index a = 0; a < m; ++a) BF(a, a) = BF(a, a) * (1.0 + mu) + floor;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(BF);
  const Eigen::VectorXd dF = ldlt.solve(-gF);
  if (ldlt.info() != Eigen::Success || !dF.allFinite()) return d;
  for (Eigen::Index a = 0; a < m; ++a) d(idx[a]) = dF(a);
  return d;
}

}  // namespace

BoxQnResult minimize_box(const Objective& fg, const Eigen::VectorXd& x0, const Eigen::VectorXd& lo,
                         const Eigen::VectorXd& hi, const BoxQnOptions& opts) {
  const Eigen::Index n = x0.size();
  const double width = (hi - lo).maxCoeff();
  const double bound_tol = 1e-12 * width;

  BoxQnResult r;
  r.x = project(x0, lo, hi);
  r.g.resize(n);
  Eigen::MatrixXd B;
  r.f = fg(r.x, r.g, B);
  r.evaluations = 1;
  if (!std::isfinite(r.f)) throw std::runtime_error("minimize_box: objective not finite at the initial point");

  Eigen::MatrixXd H;  // BFGS inverse Hessian, empty until the first update
  Eigen::MatrixXd B_new;
  Eigen::VectorXd g_new(n), x_new(n);
  double mu = 0.0;
  int stalls = 0;
  double last_rel = std::numeric_limits<double>::infinity();
  std::vector<double> f_hist{r.f};

  auto accept = [&](double f_new) {
    const double rel = (r.f - f_new) / std::max(std::fabs(r.f), 1.0);
    last_rel = rel;
    stalls = rel < opts.stall_relative_decrease ? stalls + 1 : 0;
    r.x = x_new;
    r.g = g_new;
    r.f = f_new;
    B = B_new;
  };

  for (r.iterations = 0; r.iterations < opts.max_iterations; ++r.iterations) {
    r.stationarity = stationarity(r.x, r.g, r.f, lo, hi);
    if (r.stationarity == 0.0 || (r.stationarity <= opts.tolerance && last_rel < opts.min_relative_decrease)) {
      r.converged = true;
      return r;
    }
    // components held at a bound because the gradient pushes outward
    Eigen::VectorXd free = Eigen::VectorXd::Ones(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if ((r.x(i) <= lo(i) + bound_tol && r.g(i) > 0.0) || (r.x(i) >= hi(i) - bound_tol && r.g(i) < 0.0)) free(i) = 0.0;
    }
    const Eigen::VectorXd gF = r.g.cwiseProduct(free);
    const Eigen::VectorXd steepest = -gF * (0.25 * width / gF.lpNorm<Eigen::Infinity>());
    bool accepted = false;

    if (B.rows() == n && B.cols() == n) {
      for (int k = 0; k < opts.max_backtracks && !accepted; ++k) {
        Eigen::VectorXd d = newton_direction(B, r.g, free, mu);
        if (gF.dot(d) >= 0.0) d = steepest / std::pow(2.0, k);
        x_new = project(r.x + d, lo, hi);
        const Eigen::VectorXd s = x_new - r.x;
        const double pred = -(r.g.dot(s) + 0.5 * s.dot(B * s));
        if (!(pred > 0.0)) {
          mu = std::max(4.0 * mu, 1e-3);
          continue;
        }
        B_new.resize(0, 0);
        const double f_new = fg(x_new, g_new, B_new);
        ++r.evaluations;
        const double rho = std::isfinite(f_new) ? (r.f - f_new) / pred : -1.0;
        if (rho > opts.armijo) {
          accept(f_new);
          accepted = true;
          if (rho > 0.75) mu /= 3.0;
          if (mu < 1e-12) mu = 0.0;
        }
        if (rho < 0.25) mu = std::max(4.0 * mu, 1e-3);
      }
    } else {
      for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
        Eigen::VectorXd d = H.size() != 0 ? Eigen::VectorXd(-(free.asDiagonal() * H * free.asDiagonal()) * r.g)
                                          : steepest;
        if (gF.dot(d) >= 0.0) {
          H.resize(0, 0);
          d = steepest;
        }
        double alpha = 1.0;
        for (int k = 0; k < opts.max_backtracks; ++k) {
          x_new = project(r.x + alpha * d, lo, hi);
          const double decrease = r.g.dot(x_new - r.x);
          if (decrease >= 0.0) {
            alpha *= 0.5;
            continue;
          }
          B_new.resize(0, 0);
          const double f_new = fg(x_new, g_new, B_new);
          ++r.evaluations;
          if (std::isfinite(f_new) && f_new <= r.f + opts.armijo * decrease) {
            const Eigen::VectorXd s = x_new - r.x;
            const Eigen::VectorXd y = (g_new - r.g).cwiseProduct(free);
            const double sy = s.dot(y);
            if (sy > 1e-12 * s.norm() * y.norm()) {
              if (H.size() == 0) H = Eigen::MatrixXd::Identity(n, n) * (sy / y.squaredNorm());
              const double rho = 1.0 / sy;
              const Eigen::MatrixXd V = Eigen::MatrixXd::Identity(n, n) - rho * y * s.transpose();
              H = V.transpose() * H * V + rho * s * s.transpose();
            }
            accept(f_new);
            accepted = true;
            break;
          }
          alpha *= 0.5;
        }
        if (!accepted) H.resize(0, 0);
      }
    }
    if (!accepted || stalls >= opts.max_stalls) break;
    f_hist.push_back(r.f);
    const auto w = static_cast<std::size_t>(opts.window);
    if (w > 0 && f_hist.size() > w &&
        (f_hist[f_hist.size() - 1 - w] - r.f) / std::max(std::fabs(r.f), 1.0) < opts.window_relative_decrease)
      break;
  }
  r.stationarity = stationarity(r.x, r.g, r.f, lo, hi);
  r.converged = r.stationarity <= opts.tolerance;
  return r;
}

}  // namespace thyreg::optim
