#pragma once

#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace risloc {

using cplx = std::complex<double>;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;
using Vec10 = Eigen::Matrix<double, 10, 1>;
using Mat10 = Eigen::Matrix<double, 10, 10>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr cplx kJ{0.0, 1.0};
inline constexpr double kSpeedOfLight = 3e8;

/// Azimuth/elevation pair in radians. Elevation is measured from the local +z axis.
struct AnglePair {
  double az = 0.0;
  double el = 0.0;
};

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Degenerate geometry: coincident points, pole-axis singularities, UE behind the RIS.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration or mismatched dimensions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A Fisher information matrix or linear system that cannot be inverted reliably.
class SingularError : public Error {
 public:
  SingularError(const std::string& what, double condition)
      : Error(what), condition_(condition) {}
  double condition() const { return condition_; }

 private:
  double condition_;
};

}  // namespace risloc
