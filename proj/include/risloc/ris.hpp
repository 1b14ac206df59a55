#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "risloc/channel.hpp"
#include "risloc/config.hpp"
#include "risloc/geometry.hpp"
#include "risloc/profiles.hpp"

namespace risloc {

/// Beams with iid uniform phases on [0, 2 pi).
RisProfileSet random_profiles(const SystemConfig& cfg, std::uint64_t seed);

/// Beams focused on L/2 points drawn uniformly from the ball |x - xi| < sigma.
RisProfileSet directional_profiles(const SystemConfig& cfg, const Anchors& anchors, const Vec3& xi,
                                   double sigma, std::uint64_t seed);

/// Beam that concentrates the reflected energy toward point x.
CVector focus_beam(const Vec3& x, const Anchors& anchors, const SystemConfig& cfg);

/// Column k of the result is w_1 Y[:, 2k] + w_2 Y[:, 2k+1].
CMatrix match(const CMatrix& Y, const std::pair<cplx, cplx>& w);

inline constexpr std::pair<cplx, cplx> kDirectCode{1.0, 1.0};
inline constexpr std::pair<cplx, cplx> kReflectedCode{1.0, -1.0};

/// Pair-matching leakage factor 1 - exp(j 2 pi T_sym v / lambda).
cplx leakage_epsilon(double v, const SystemConfig& cfg);

enum class GridKind { Prior, Full };

/// Candidate AoDs for the joint angle/velocity search.
struct AodGrid {
  GridKind kind = GridKind::Prior;
  std::vector<AnglePair> angles;
  /// FULL grids: the (n1, n2) IFFT bin of each retained angle.
  std::vector<std::pair<int, int>> bins;
  int n_phi1 = 0;
  int n_phi2 = 0;
  /// PRIOR grids: angular spacing of the candidate cloud (radians), used to bound
  /// the angle refinement.
  double cell = 0.0;

  std::size_t size() const { return angles.size(); }
};

/// N_phi candidates drawn uniformly from the ball around xi and mapped to AoDs.
AodGrid prior_aod_grid(const Anchors& anchors, const Vec3& xi, double sigma, int n_phi, std::uint64_t seed);

/// Direction-cosine grid matched to an n_phi1 x n_phi2 2-D IFFT; invisible bins removed.
AodGrid full_aod_grid(const SystemConfig& cfg, int n_phi1, int n_phi2);

/// Wraps a direction-cosine value into the alias window [-lambda/(2d), lambda/(2d)).
double wrap_direction_cosine(double x, double period);

/// Row s holds [z_s]_k = a(theta)^T diag(b_k) a(phi_s), k = 0..L/2-1.
/// With use_fft2 and a FULL grid the rows come from 2-D IFFTs of the beam patterns.
CMatrix grid_correlations(const RisProfileSet& profiles, const AodGrid& grid, const AnglePair& theta,
                          const SystemConfig& cfg, bool use_fft2);

/// JSON container for profile sets: M1, M2, L, kind, optional prior, and each
/// beam as interleaved float64 (re, im) pairs.
std::string profiles_to_json(const RisProfileSet& profiles, int m1, int m2);
RisProfileSet profiles_from_json(const std::string& text);

}  // namespace risloc
