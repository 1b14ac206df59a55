#pragma once

#include <optional>
#include <utility>

#include "risloc/config.hpp"
#include "risloc/geometry.hpp"
#include "risloc/profiles.hpp"

namespace risloc {

enum class ChannelModel { StaticNb, DynamicNb, DynamicWb };

/// Frequency/slow-time observation, N x L.
struct RxSignal {
  CMatrix Y;
};

/// [D]_{n,l} = exp(-j 2 pi n delta_f tau), identical columns.
CMatrix delay_matrix(double tau, const SystemConfig& cfg);
/// One column of delay_matrix.
CVector delay_vector(double tau, const SystemConfig& cfg);

/// Wavenumber vector k(psi) for wavelength lambda.
Vec3 wavenumber(const AnglePair& psi, double lambda);

/// RIS steering vector [a]_m = exp(j k^T q_m); wideband when a subcarrier index is given.
CVector steering_vector(const AnglePair& psi, std::optional<int> subcarrier, const SystemConfig& cfg);

/// [A]_{n,l} = a_n(theta)^T diag(gamma_l) a_n(phi). Rows are identical when wideband is false.
CMatrix ris_response_matrix(const AnglePair& phi, const AnglePair& theta, const RisProfileSet& profiles,
                            const SystemConfig& cfg, bool wideband);

struct DopplerMatrices {
  CMatrix C;  ///< slow-time steering, N x L
  CVector E;  ///< diagonal of the fast-time ICI matrix, length N
};

/// Slow-time matrix uses lambda_n when wideband, lambda otherwise; E always uses lambda.
DopplerMatrices doppler_matrices(double v, const SystemConfig& cfg, bool wideband);

/// Noiseless direct and reflected components.
struct PathSignals {
  CMatrix direct;
  CMatrix reflected;
};

PathSignals synthesize_paths(const ChannelParams& params, const AnglePair& theta,
                             const RisProfileSet& profiles, const SystemConfig& cfg, ChannelModel model);

/// Noiseless received signal Y_b + Y_r.
RxSignal synthesize(const ChannelParams& params, const AnglePair& theta, const RisProfileSet& profiles,
                    const SystemConfig& cfg, ChannelModel model);

/// Adds iid CN(0, variance) noise.
RxSignal add_noise(const RxSignal& clean, double variance, std::uint64_t seed);

/// Free-space gain magnitudes with seeded uniform phases (direct, reflected).
std::pair<cplx, cplx> path_gains(const UeState& state, const Anchors& anchors, const SystemConfig& cfg,
                                 std::uint64_t seed);

/// cos of the angle between the RIS normal (local +y) and direction psi.
double normal_cosine(const AnglePair& psi);

struct NarrowbandValidity {
  double mobility_ratio;  ///< max|v| L N / c
  double aperture_ratio;  ///< max(M1, M2) d sin(alpha) B / c
};

NarrowbandValidity nb_validity(const SystemConfig& cfg, const ChannelParams& params, const Anchors& anchors);

}  // namespace risloc
