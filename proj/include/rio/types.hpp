#pragma once

#include <cstdint>
#include <vector>

#include "rio/geometry.hpp"

namespace rio {

struct RadarPoint {
    Vec3 position = Vec3::Zero();  // m, sensor frame
    double doppler = 0.0;          // m/s, positive = receding
    double power = 0.0;            // dB
    Mat3 covariance = Mat3::Identity();
};

struct RadarScan {
    double timestamp = 0.0;
    std::vector<RadarPoint> points;
    /// Sensor origin in the body frame; bearings are measured from here.
    Vec3 sensor_origin = Vec3::Zero();
};

struct ImuSample {
    double timestamp = 0.0;
    Vec3 angular_velocity = Vec3::Zero();     // rad/s
    Vec3 linear_acceleration = Vec3::Zero();  // m/s^2, carried but not used by the estimator
};

/// Body linear velocity of one scan, estimated from Doppler.
struct EgoVelocity {
    double timestamp = 0.0;
    Vec3 velocity = Vec3::Zero();
    Mat3 covariance = Mat3::Identity();
    std::vector<bool> inlier_mask;
};

enum class IncrementSource : std::uint8_t { Integration, Registration };

/// Relative transform between two times; covariance in [translation; rotation] order.
struct MotionIncrement {
    Pose transform;
    Mat6 covariance = Mat6::Identity();
    IncrementSource source = IncrementSource::Integration;
    double t_begin = 0.0;
    double t_end = 0.0;
    /// True when the GP fit did not converge and discrete integration was substituted.
    bool fallback = false;
};

struct StampedPose {
    double timestamp = 0.0;
    Pose pose;
};

using Trajectory = std::vector<StampedPose>;

}  // namespace rio
