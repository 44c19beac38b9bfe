#pragma once

#include <cstdint>

#include "rio/kernels.hpp"
#include "rio/types.hpp"

namespace rio {

struct EgoVelocityParams {
    int ransac_iters = 120;
    double inlier_threshold = 0.25;  // m/s
    double sigma_doppler = 0.1;      // m/s, used for the covariance
    /// Smallest-to-largest eigenvalue ratio of the bearing Gram matrix below
    /// which the velocity is declared unobservable.
    double min_eigen_ratio = 1e-6;
    std::uint64_t seed = 0x5eed;
    Exec exec = Exec::Serial;
};

/// Instantaneous ego-velocity from a single scan.
///
/// Static scatterers satisfy doppler_i = -(b_i . v) with b_i the unit bearing
/// from the sensor origin. RANSAC over minimal 3-point samples picks the
/// consensus set, which is then refit by least squares until the inlier mask
/// is stable. covariance = sigma_d^2 (A^T A)^-1 over the inliers.
///
/// Throws InsufficientPoints (< 3 usable points or inliers) and
/// DegenerateGeometry (inlier bearings rank deficient).
EgoVelocity estimate_ego_velocity(const RadarScan& scan, const EgoVelocityParams& params = {});

/// Doppler of a static point at `position` seen from a sensor moving with body velocity `v`.
double static_doppler(const Vec3& position, const Vec3& v);

}  // namespace rio
