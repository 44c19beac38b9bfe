#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "rio/types.hpp"

namespace rio {

/// Squared-exponential kernel k(t, s) = variance * exp(-(t - s)^2 / (2 lengthscale^2)).
struct KernelSpec {
    double lengthscale = 0.1;  // s
    double variance = 1.0;

    void validate() const;
};

double kernel_value(const KernelSpec& k, double t, double s);
Eigen::RowVectorXd kernel_vector(const KernelSpec& k, double t, std::span<const double> ts);
Eigen::MatrixXd kernel_matrix(const KernelSpec& k, std::span<const double> ts);
/// Integral over tau in [t0, t] of k(tau, ts[j]) for every j, in closed form through erf.
Eigen::RowVectorXd kernel_integral(const KernelSpec& k, double t0, double t, std::span<const double> ts);

struct GpParams {
    double lengthscale_rot = 0.1;   // s
    double lengthscale_vel = 0.15;  // s
    double gyro_noise = 0.005;      // rad/s
    /// Velocity noise used when an ego-velocity carries no usable covariance.
    double velocity_noise = 0.05;   // m/s
    /// Lower bound on the signal variance estimated from a window.
    double min_signal_variance = 0.01;
    double min_noise_std = 1e-4;
    int max_iters = 25;
    double max_window = 0.5;  // s; longer spans are split and composed
    int grid_nodes = 10;
};

/// Rotation-vector rate GP of one window. Times are stored relative to `origin`.
struct GpRotationModel {
    double origin = 0.0;
    std::vector<double> times;  // relative
    std::array<KernelSpec, 3> kernels;
    double noise_std = 0.0;
    Eigen::MatrixXd rho;                   // N x 3 inducing rates
    std::array<Eigen::VectorXd, 3> alpha;  // (K + s^2 I)^-1 rho per axis
    Eigen::MatrixXd rho_covariance;        // 3N x 3N, time-major
    bool converged = false;
    int iterations = 0;
    double final_cost = 0.0;
};

struct RotationState {
    Vec3 theta = Vec3::Zero();
    Vec3 theta_dot = Vec3::Zero();
};

/// Gauss-Newton on the inducing rates so that J_r(theta(t_n)) theta_dot(t_n)
/// reproduces each gyro sample, with a GP-consistency term on the rates.
/// Throws InsufficientPoints for fewer than 2 samples.
GpRotationModel fit_rotation_gp(std::span<const ImuSample> imu, double origin, const GpParams& params = {});

/// Throws ExtrapolationTooFar more than one lengthscale outside the samples.
RotationState infer_rotation(const GpRotationModel& m, double t);

/// Covariance of theta(t): propagated inducing-value covariance plus the GP
/// posterior variance of the rate integrated over a grid on [origin, t].
Mat3 rotation_covariance(const GpRotationModel& m, double t, int grid_nodes = 10);

/// Velocity GP in the window frame (body frame at `origin`) with a linear-trend prior mean.
struct GpVelocityModel {
    double origin = 0.0;
    std::vector<double> times;  // relative
    std::array<KernelSpec, 3> kernels;
    Vec3 noise_std = Vec3::Zero();
    Vec3 mean_offset = Vec3::Zero();  // mu(t) = mean_offset + mean_slope * (t - origin)
    Vec3 mean_slope = Vec3::Zero();
    Eigen::MatrixXd zeta;  // N x 3 inducing velocities
    std::array<Eigen::VectorXd, 3> alpha;  // (K + e^2 I)^-1 (zeta - mu(t))
    Eigen::MatrixXd zeta_covariance;       // 3N x 3N, time-major
    bool converged = false;
    int iterations = 0;
    double final_cost = 0.0;
};

/// Gauss-Newton on the inducing velocities so that R(t_n)^T v(t_n) reproduces each
/// body-frame ego-velocity, R(t_n) = exp(theta(t_n)) from the rotation model.
GpVelocityModel fit_velocity_gp(std::span<const EgoVelocity> vels, const GpRotationModel& rot,
                                const GpParams& params = {});

Vec3 infer_velocity(const GpVelocityModel& m, double t);
/// Position relative to the origin: the integral of the inferred velocity.
Vec3 infer_position(const GpVelocityModel& m, double t);
Mat3 position_covariance(const GpVelocityModel& m, double t, int grid_nodes = 10);

// Residual stacks of the two fits, exposed for derivative checks. The unknown
// vector is time-major: x = [x_1; ...; x_N] with x_n in R^3.
struct RotationProblem {
    std::vector<double> times;  // relative to origin
    std::vector<Vec3> gyro;
    std::array<KernelSpec, 3> kernels;
    double noise_std = 0.0;
    std::array<Eigen::MatrixXd, 3> A;  // rate operator K S^-1
    std::array<Eigen::MatrixXd, 3> B;  // integral operator Kint S^-1

    RotationProblem(std::span<const ImuSample> imu, double origin, const GpParams& params);
    /// Whitened residuals [e_meas_1; ...; e_meas_N; e_gp_1; ...; e_gp_N].
    Eigen::VectorXd residuals(const Eigen::VectorXd& x) const;
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const;
};

struct VelocityProblem {
    std::vector<double> times;
    std::vector<Vec3> measured;     // body frame
    std::vector<Mat3> sqrt_info;    // whitening of each measurement
    std::vector<Mat3> rotation;     // R(t_n)
    std::array<KernelSpec, 3> kernels;
    Vec3 noise_std = Vec3::Zero();
    Vec3 mean_offset = Vec3::Zero(), mean_slope = Vec3::Zero();
    std::array<Eigen::MatrixXd, 3> A;

    VelocityProblem(std::span<const EgoVelocity> vels, const GpRotationModel& rot, const GpParams& params);
    Eigen::VectorXd residuals(const Eigen::VectorXd& x) const;
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const;
};

enum class IntegrationMode { Gp, Discrete };

/// Motion increment between t_a and t_b from every sample of the two streams.
/// Samples inside the span plus one margin sample on each side are used; spans
/// longer than max_window are split into equal pieces and composed. When a GP
/// fit fails to converge the zero-order-hold result is returned with
/// `fallback` set.
MotionIncrement preintegrate(std::span<const ImuSample> imu, std::span<const EgoVelocity> vels, double t_a,
                             double t_b, const GpParams& params = {}, IntegrationMode mode = IntegrationMode::Gp);

/// Zero-order-hold integration: each gyro and velocity sample is held until the next one.
MotionIncrement discrete_preintegrate(std::span<const ImuSample> imu, std::span<const EgoVelocity> vels,
                                      double t_a, double t_b, const GpParams& params = {});

/// Covariance of a * b from independent covariances of a and b (same tangent convention as retract).
Mat6 compose_covariance(const Mat6& cov_a, const Pose& b, const Mat6& cov_b);

}  // namespace rio
