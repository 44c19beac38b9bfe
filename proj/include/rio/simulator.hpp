#pragma once

#include <cstdint>
#include <vector>

#include "rio/ground.hpp"
#include "rio/types.hpp"

namespace rio {

enum class GroundProfile { Flat, Slope, Hill };

/// Terrain height field z = height(x, y) in the world frame.
struct Terrain {
    GroundProfile profile = GroundProfile::Slope;
    double slope_deg = 5.0;
    /// The slope rises along +x between ramp_start and ramp_end and is level elsewhere.
    double ramp_start = 0.0;
    double ramp_end = 6.0;
    double ramp_softness = 1.0;  // m
    double hill_amplitude = 1.0;  // m
    double hill_wavelength = 40.0;  // m

    double height(double x, double y) const;
    /// Upward unit normal.
    Vec3 normal(double x, double y) const;
};

struct SyntheticWorldConfig {
    double path_length = 100.0;  // m, figure-eight
    double speed = 3.0;          // m/s, 0 keeps the vehicle parked at the start
    double duration = 0.0;       // s, 0 means one lap (required when speed is 0)
    Terrain terrain;
    double sensor_height = 2.0;  // m above ground
    double radar_rate = 15.0;    // Hz
    double imu_rate = 200.0;     // Hz
    double jitter = 0.002;       // s, uniform +-jitter on every timestamp

    double sigma_range = 0.1;
    double sigma_azimuth = 0.005;
    double sigma_elevation = 0.005;
    double sigma_doppler = 0.05;
    double sigma_gyro = 0.005;

    double multipath_fraction = 0.0;  // ghost probability per non-ground true point
    int dynamic_objects = 0;

    int landmarks = 90;
    double scatterer_min_height = 1.0;  // m above ground
    int ground_points = 1500;  // per scan
    double detection_probability = 0.9;
    double fov_azimuth_deg = 120.0;
    double fov_elevation_deg = 40.0;
    double min_range = 1.0;
    double max_range = 60.0;

    /// Throws ConfigError on an invariant violation.
    void validate() const;
};

/// Continuous ground-truth motion of the figure-eight path.
class FigureEightMotion {
public:
    FigureEightMotion(const SyntheticWorldConfig& cfg);

    double duration() const { return cfg_.duration > 0.0 ? cfg_.duration : cfg_.path_length / cfg_.speed; }
    /// World-from-body pose.
    Pose pose(double t) const;
    /// Body-frame angular and linear velocity (central differences of pose()).
    Vec3 angular_velocity(double t) const;
    Vec3 body_velocity(double t) const;
    Vec3 world_velocity(double t) const;
    /// Planar path point and unit tangent at arc length s.
    void path_point(double s, Eigen::Vector2d& xy, Eigen::Vector2d& tangent) const;

private:
    SyntheticWorldConfig cfg_;
    double scale_ = 1.0;
    std::vector<double> u_table_, s_table_;
};

struct SyntheticSequence {
    std::vector<RadarScan> scans;
    std::vector<ImuSample> imu;
    Trajectory ground_truth;  // one pose per radar scan
    std::vector<std::vector<PointLabel>> labels;  // per scan, per point
    /// True body velocity at each scan time.
    std::vector<Vec3> true_velocity;
    /// Point lies on the sloped part of the terrain (ground points only).
    std::vector<std::vector<bool>> on_slope;
};

/// Deterministic in (cfg, seed). Radar and IMU clocks have independent random
/// phases plus uniform jitter. Static Doppler is -(p_hat . v_body) plus noise.
/// Ghosts mirror a true point through the local ground tangent plane.
SyntheticSequence generate_synthetic(const SyntheticWorldConfig& cfg, std::uint64_t seed);

}  // namespace rio
