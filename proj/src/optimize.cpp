#include "risloc/optimize.hpp"

#include <algorithm>
#include <cmath>

namespace risloc {

namespace {

RVector clamp_unit(RVector u) {
  for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = std::clamp(u(i), 0.0, 1.0);
  return u;
}

}  // namespace

BoxResult minimize_box(const std::function<double(const RVector&)>& f, const RVector& x0, const RVector& lo,
                       const RVector& hi, const BoxOptions& opt) {
  const Eigen::Index n = x0.size();
  if (lo.size() != n || hi.size() != n) throw ConfigError("minimize_box: dimension mismatch");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(hi(i) > lo(i))) throw ConfigError("minimize_box: empty box");

  const RVector width = hi - lo;
  int evals = 0;
  // Objectives are rescaled by |f(x0)| so the tolerances and the first step are scale free.
  double scale = 1.0;
  auto fu = [&](const RVector& u) {
    ++evals;
    return f(lo + width.cwiseProduct(u)) / scale;
  };

  RVector u = clamp_unit((x0 - lo).cwiseQuotient(width));
  double fval = fu(u);
  if (std::isfinite(fval) && std::abs(fval) > 0.0) {
    scale = std::abs(fval);
    fval = fval > 0.0 ? 1.0 : -1.0;
  }
  const double f_start = fval;
  const RVector u_start = u;

  auto gradient = [&](const RVector& at) {
    RVector g(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      RVector a = at, b = at;
      a(i) = std::min(1.0, at(i) + opt.fd_step);
      b(i) = std::max(0.0, at(i) - opt.fd_step);
      g(i) = (fu(a) - fu(b)) / (a(i) - b(i));
    }
    return g;
  };

  RVector g = gradient(u);
  // First trial step moves a quarter of the box along the steepest descent direction.
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n) * (0.25 / std::max(g.norm(), 1e-300));
  bool first_update = true;
  bool converged = false;

  while (evals + 2 * n + 1 < opt.max_evals) {
    // Variables pinned at a bound with the gradient pushing outward are frozen.
    std::vector<bool> active(n, false);
    for (Eigen::Index i = 0; i < n; ++i)
      active[i] = (u(i) <= 0.0 && g(i) > 0.0) || (u(i) >= 1.0 && g(i) < 0.0);
    RVector gf = g;
    Eigen::MatrixXd Hf = H;
    for (Eigen::Index i = 0; i < n; ++i)
      if (active[i]) {
        gf(i) = 0.0;
        Hf.row(i).setZero();
        Hf.col(i).setZero();
      }
    if (gf.norm() < 1e-14) {
      converged = true;
      break;
    }
    RVector p = -Hf * gf;
    if (p.dot(gf) >= 0.0) {
      H = Eigen::MatrixXd::Identity(n, n) * (0.25 / std::max(gf.norm(), 1e-300));
      p = -H * gf;
    }

    double t = std::min(1.0, 0.5 / std::max(p.cwiseAbs().maxCoeff(), 1e-300));
    RVector u_new;
    double f_new = fval;
    bool accepted = false;
    for (int k = 0; k < 40 && evals < opt.max_evals; ++k, t *= 0.5) {
      u_new = clamp_unit(u + t * p);
      f_new = fu(u_new);
      if (f_new <= fval + 1e-4 * g.dot(u_new - u)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;

    const RVector s = u_new - u;
    const double df = std::abs(fval - f_new);
    u = u_new;
    const double f_old = fval;
    fval = f_new;
    if (s.norm() < 1e-13 || df <= opt.tol * std::max(std::abs(f_old), 1e-300)) {
      converged = true;
      break;
    }
    const RVector g_new = gradient(u);
    const RVector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-16 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      if (first_update) {
        H = Eigen::MatrixXd::Identity(n, n) * (sy / y.squaredNorm());
        first_update = false;
      }
      H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    g = g_new;
  }

  BoxResult res;
  if (fval > f_start) {
    u = u_start;
    fval = f_start;
  }
  res.x = lo + width.cwiseProduct(u);
  res.f = fval * scale;
  res.evals = evals;
  res.converged = converged;
  return res;
}

double golden_section(const std::function<double(double)>& f, double a, double b, double tol) {
  if (!(b > a)) throw ConfigError("golden_section: empty interval");
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - ratio * (b - a);
  double d = a + ratio * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - ratio * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + ratio * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace risloc
