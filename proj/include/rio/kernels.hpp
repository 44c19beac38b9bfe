#pragma once

// Data-parallel inner loops shared by the estimators. Every kernel has a
// serial reference path (Exec::Serial) and an OpenMP path (Exec::Parallel)
// that must produce identical results; tests compare the two.

#include <span>
#include <vector>

#include "rio/geometry.hpp"

namespace rio {

enum class Exec { Serial, Parallel };

/// Brute-force nearest neighbour of every query among `targets`.
/// Ties resolve to the lowest target index.
void nearest_neighbors(Exec exec, std::span<const Vec3> targets, std::span<const Vec3> queries,
                       std::span<int> index_out, std::span<double> sq_dist_out);

/// Indices of all points within `eps` (inclusive) of each point, itself included, ascending.
std::vector<std::vector<int>> radius_neighbors(Exec exec, std::span<const Vec3> points, double eps);

/// Number of points whose Doppler residual |d_i + b_i . v| is <= threshold, for each hypothesis v.
void count_doppler_inliers(Exec exec, std::span<const Vec3> bearings, std::span<const double> dopplers,
                           std::span<const Vec3> hypotheses, double threshold, std::span<int> counts_out);

/// Squared Mahalanobis point-to-plane distances (n.p + d)^2 / (n^T S n).
void plane_mahalanobis_sq(Exec exec, std::span<const Vec3> points, std::span<const Mat3> covariances,
                          const Vec3& normal, double offset, std::span<double> out);

}  // namespace rio
