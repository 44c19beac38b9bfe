#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rio/kernels.hpp"
#include "rio/types.hpp"

namespace rio {

/// Measurement noise of a radar detection in spherical coordinates.
struct SensorNoise {
    double sigma_range = 0.1;       // m
    double sigma_azimuth = 0.005;   // rad
    double sigma_elevation = 0.005; // rad
};

/// Cartesian covariance of a detection: J diag(sr^2, saz^2, sel^2) J^T with J
/// the spherical-to-Cartesian Jacobian at p.
Mat3 point_covariance(const Vec3& p, const SensorNoise& noise);

/// Keeps points with min_r <= |p| <= max_r.
RadarScan radius_filter(const RadarScan& scan, double min_r, double max_r);

/// Plane {p : n.p + d = 0} with upward normal.
struct PlaneModel {
    Vec3 normal = Vec3::UnitZ();
    double offset = 0.0;
    double flatness = 0.0;  // n^T C n
    Mat3 scatter = Mat3::Zero();  // C, sample covariance of the fitted points
    int iterations = 0;
    bool converged = false;

    double signed_distance(const Vec3& p) const { return normal.dot(p) + offset; }
};

struct PlaneFitOptions {
    int max_iterations = 50;
    double step_tolerance = 1e-8;
};

/// Total least squares plane (smallest eigenvector of the scatter matrix).
/// Throws DegenerateFit on fewer than 3 points or collinear points.
PlaneModel fit_plane_pca(std::span<const Vec3> points);

/// Plane minimising sum_i (n.p_i + d)^2 / (n^T S_i n), which is the squared
/// Mahalanobis distance from p_i (covariance S_i) to the plane. Gauss-Newton on
/// two tangent angles of the normal and the offset, seeded from fit_plane_pca.
PlaneModel fit_plane_mahalanobis(std::span<const Vec3> points, std::span<const Mat3> covariances,
                                 const PlaneFitOptions& options = {});

/// Same objective, seeded from an explicit plane instead of PCA.
PlaneModel fit_plane_mahalanobis(std::span<const Vec3> points, std::span<const Mat3> covariances,
                                 const Vec3& normal0, double offset0, const PlaneFitOptions& options = {});

/// Whitened residuals f_i = (n.p_i + d) / sqrt(n^T S_i n) at the plane (n, d)
/// and, when J is given, their Jacobian with respect to (alpha, beta, delta_d)
/// for n(alpha, beta) = Exp(alpha u + beta w) n, where u, w = plane_tangent_basis(n).
void plane_residuals(std::span<const Vec3> points, std::span<const Mat3> covariances, const Vec3& normal,
                     double offset, Eigen::VectorXd& f, Eigen::MatrixX3d* J = nullptr);

/// Orthonormal u, w with u x w = n.
void plane_tangent_basis(const Vec3& n, Vec3& u, Vec3& w);

double mahalanobis_to_plane(const Vec3& p, const Mat3& cov, const Vec3& normal, double offset);

/// Concentric zone model plus the thresholds of the segmentation loop.
struct CzmConfig {
    /// num_zones + 1 increasing horizontal ranges; zone z covers [edges[z], edges[z+1]).
    std::vector<double> zone_edges{2.0, 5.0, 13.0, 29.0, 61.0};
    std::vector<int> rings{1, 2, 2, 2};
    std::vector<int> sectors{2, 3, 6, 4};
    /// Azimuth span covered by the sectors, centred on +x. 360 covers the full circle.
    double fov_deg = 120.0;
    double max_range = 80.0;
    double sensor_height = 2.0;    // h_s, m
    double eps_distance = 3.0;     // Mahalanobis merge threshold
    double eps_flatness = 0.05;    // m^2
    int max_iterations = 5;
    int min_points = 20;           // patches need strictly more points than this
    double below_margin_sigma = 1.0;
    Exec exec = Exec::Serial;

    int num_zones() const { return static_cast<int>(rings.size()); }
    /// Throws ConfigError when an invariant is violated.
    void validate() const;
};

enum class PointLabel : std::uint8_t { Ground, Static, Noise, Dynamic };

struct PatchReport {
    int zone = 0, ring = 0, sector = 0;
    std::size_t size = 0;
    bool fitted = false;
    /// flatness < eps_f reached before the iteration cap
    bool converged = false;
    int iterations = 0;
    PlaneModel plane;
    /// |G_i| after every refinement iteration
    std::vector<std::size_t> ground_size_history;
};

struct GroundSegmentation {
    std::vector<std::size_t> ground;
    std::vector<std::size_t> static_points;
    std::vector<std::size_t> noise;
    std::vector<PointLabel> labels;  // per input point
    /// Per input point: index into `patches`, or -1 when outside every zone.
    std::vector<int> patch_of_point;
    std::vector<PatchReport> patches;
    /// Heights of ground points after Doppler refinement, parallel to `ground`.
    std::vector<double> refined_ground_z;
};

/// Zone-based uncertainty-aware ground segmentation.
///
/// Per patch holding more than min_points points: seeds are points with
/// z < -h_s/2, screened against a robust initial plane; then repeatedly fit the
/// Mahalanobis plane, merge remaining points with D_M < eps_d, and update the
/// scatter until its flatness drops under eps_f or max_iterations is reached.
/// Remaining points further than below_margin_sigma standard deviations under
/// the plane become noise. When `ego` is given, ground heights are refined
/// from Doppler.
GroundSegmentation segment_ground(const RadarScan& scan, const EgoVelocity* ego, const CzmConfig& cfg);

enum class HeightStatus : std::uint8_t { Refined, NegativeDiscriminant, NearSingularDenominator };

struct HeightRefinement {
    double z = 0.0;
    HeightStatus status = HeightStatus::Refined;
    /// The other root of the quadratic lies closer to the measured z.
    bool plus_root_closer = false;
};

/// Height of a static point recovered from its horizontal position, Doppler
/// and the ego velocity, taking the minus root of
/// (vd^2 - vz^2) z^2 - 2 Vxy vz z + vd^2 (x^2 + y^2) - Vxy^2 = 0, Vxy = vx x + vy y.
/// On failure the measured z is returned with a non-Refined status.
HeightRefinement refine_height(const Vec3& point, double doppler, const Vec3& ego_velocity);

}  // namespace rio
