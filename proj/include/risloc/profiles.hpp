#pragma once

#include <optional>

#include "risloc/types.hpp"

namespace risloc {

enum class ProfileKind { Random, Directional };

struct DirectionalPrior {
  Vec3 xi = Vec3::Zero();  ///< prior UE position, meters
  double sigma = 1.0;      ///< uncertainty radius, meters
};

/// Temporally orthogonal RIS phase profiles. Column k of `beams` is b_k; the
/// per-symbol profiles are gamma_{2k} = b_k and gamma_{2k+1} = -b_k.
struct RisProfileSet {
  CMatrix beams;  ///< M x L/2, unit-modulus entries
  ProfileKind kind = ProfileKind::Random;
  std::optional<DirectionalPrior> prior;

  int M() const { return static_cast<int>(beams.rows()); }
  int L() const { return 2 * static_cast<int>(beams.cols()); }

  /// Profile applied during symbol l.
  CVector gamma(int l) const { return (l % 2 == 0) ? CVector(beams.col(l / 2)) : CVector(-beams.col(l / 2)); }
  /// All L profiles as an M x L matrix.
  CMatrix gammas() const;
};

}  // namespace risloc
