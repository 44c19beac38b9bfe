#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace rio {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Quat = Eigen::Quaterniond;

/// Angles below this switch SO(3) maps to their Taylor expansions.
inline constexpr double kSmallAngle = 1e-6;

Mat3 skew(const Vec3& v);

/// Exponential map so(3) -> SO(3).
Mat3 so3_exp(const Vec3& theta);
Quat so3_exp_quat(const Vec3& theta);

/// Logarithm SO(3) -> so(3); always returns the branch with |theta| <= pi.
Vec3 so3_log(const Mat3& R);
Vec3 so3_log(const Quat& q);

/// Right Jacobian of SO(3): exp(theta + d) ~= exp(theta) exp(J_r(theta) d).
/// Body angular velocity relates to rotation-vector rate by omega = J_r(theta) theta_dot.
Mat3 right_jacobian(const Vec3& theta);
Mat3 right_jacobian_inverse(const Vec3& theta);

/// d/d(theta) of J_r(theta) * v, for fixed v.
Mat3 right_jacobian_times_vector_derivative(const Vec3& theta, const Vec3& v);

/// Rigid transform stored as a unit quaternion and a translation.
class Pose {
public:
    Pose() : q_(Quat::Identity()), t_(Vec3::Zero()) {}
    Pose(const Quat& q, const Vec3& t) : q_(q.normalized()), t_(t) {}
    Pose(const Mat3& R, const Vec3& t) : q_(Quat(R).normalized()), t_(t) {}

    static Pose identity() { return {}; }

    const Quat& rotation() const { return q_; }
    Mat3 rotation_matrix() const { return q_.toRotationMatrix(); }
    const Vec3& translation() const { return t_; }
    Eigen::Matrix4d matrix() const;

    Pose operator*(const Pose& other) const;
    Vec3 operator*(const Vec3& p) const { return q_ * p + t_; }
    Pose inverse() const;

private:
    Quat q_;
    Vec3 t_;
};

inline Pose se3_compose(const Pose& a, const Pose& b) { return a * b; }
inline Pose se3_inverse(const Pose& a) { return a.inverse(); }

/// Tangent-space convention used by every estimator in this library:
/// delta = [rho; phi], applied as R <- R exp(phi), t <- t + R rho.
Pose retract(const Pose& x, const Vec6& delta);

/// Chart of a pose on SO(3) x R^3 in the same [translation; rotation] order.
Vec6 pose_log(const Pose& x);

/// Rotation angle of the pose in radians, in [0, pi].
double rotation_angle(const Pose& x);

/// Translation distance and rotation angle between two poses.
double translation_distance(const Pose& a, const Pose& b);
double rotation_distance(const Pose& a, const Pose& b);

/// Symmetric (to sym_tol) with eigenvalues >= -eig_tol.
bool is_symmetric_psd(const Eigen::MatrixXd& M, double sym_tol = 1e-12, double eig_tol = 1e-10);

}  // namespace rio
