#pragma once

#include <functional>

#include "risloc/types.hpp"

namespace risloc {

struct BoxOptions {
  double tol = 1e-12;       ///< relative change in f that ends the iteration
  int max_evals = 200;
  double fd_step = 1e-5;    ///< finite-difference step as a fraction of each box width
};

struct BoxResult {
  RVector x;
  double f = 0.0;
  int evals = 0;
  bool converged = false;
};

/// Projected BFGS on lo <= x <= hi with central-difference gradients and an Armijo
/// backtracking line search. Variables are rescaled to the unit box internally, so
/// widths may differ by many orders of magnitude. Never returns a point worse than x0.
BoxResult minimize_box(const std::function<double(const RVector&)>& f, const RVector& x0, const RVector& lo,
                       const RVector& hi, const BoxOptions& opt = {});

/// Golden-section search for the minimum of a unimodal f on [a, b].
double golden_section(const std::function<double(double)>& f, double a, double b, double tol);

}  // namespace risloc
