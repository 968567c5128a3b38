#pragma once

#include <Eigen/Dense>
#include <functional>

namespace thyreg::optim {

struct BoxQnOptions {
  int max_iterations = 100;
  double tolerance = 1e-6;  // on stationarity(), see below
  // Stationarity alone is not enough to stop: the last step must also have
  // stopped paying off. Small dose penalties riding on a large, locally flat
  // tracking cost would otherwise be ignored.
  double min_relative_decrease = 1e-12;
  // Give up after this many consecutive steps gaining less than
  // stall_relative_decrease: below the shooting noise floor, more steps only
  // burn evaluations. The result keeps its stationarity and may be unconverged.
  double stall_relative_decrease = 1e-9;
  int max_stalls = 3;
  // Same idea over a window: stop when the last `window` iterations together
  // gained less than window_relative_decrease (crawling on a kinked cost).
  int window = 10;
  double window_relative_decrease = 1e-7;
  double armijo = 1e-4;
  int max_backtracks = 30;
};

struct BoxQnResult {
  Eigen::VectorXd x;
  Eigen::VectorXd g;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  double stationarity = 0.0;
  bool converged = false;
};

// Returns f(x) and writes the gradient; return +inf for an infeasible point.
// The objective may also fill `curvature` with a positive semidefinite Hessian
// model (Gauss-Newton for least squares); leaving it empty selects BFGS.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& gradient, Eigen::MatrixXd& curvature)>;

Eigen::VectorXd project(const Eigen::VectorXd& x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi);

// Gradient with components that point out of the box at active bounds removed.
Eigen::VectorXd projected_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
                                   const Eigen::VectorXd& hi);

// ||projected gradient||_inf * max box width / max(|f|, 1): the first-order
// change available across the box, relative to the cost.
double stationarity(const Eigen::VectorXd& x, const Eigen::VectorXd& g, double f, const Eigen::VectorXd& lo,
                    const Eigen::VectorXd& hi);

// Projected Newton on a box. With a curvature model the step is
// Levenberg-Marquardt damped by the ratio of actual to predicted decrease;
// without one, BFGS with Armijo backtracking along the projection arc.
// Iterates are monotone in f, so the result is the best point seen.
BoxQnResult minimize_box(const Objective& fg, const Eigen::VectorXd& x0, const Eigen::VectorXd& lo,
                         const Eigen::VectorXd& hi, const BoxQnOptions& opts = {});

}  // namespace thyreg::optim
