#include "rio/geometry.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

namespace rio {

namespace {

// Coefficients of J_r = I - a [t]x + b [t]x^2 and their radial derivatives
// divided by the angle. Series below 0.1 rad avoid cancellation.
struct JrCoeffs {
    double a, b, da_over_x, db_over_x;
};

JrCoeffs jr_coeffs(double x) {
    JrCoeffs c{};
    if (x < 0.1) {
        const double x2 = x * x, x4 = x2 * x2, x6 = x4 * x2, x8 = x4 * x4;
        c.a = 0.5 - x2 / 24.0 + x4 / 720.0 - x6 / 40320.0 + x8 / 3628800.0;
        c.b = 1.0 / 6.0 - x2 / 120.0 + x4 / 5040.0 - x6 / 362880.0 + x8 / 39916800.0;
        c.da_over_x = -1.0 / 12.0 + x2 / 180.0 - 6.0 * x4 / 40320.0 + 8.0 * x6 / 3628800.0;
        c.db_over_x = -1.0 / 60.0 + 4.0 * x2 / 5040.0 - 6.0 * x4 / 362880.0 + 8.0 * x6 / 39916800.0;
        return c;
    }
    const double s = std::sin(x);
    const double x2 = x * x, x3 = x2 * x, x4 = x2 * x2, x5 = x4 * x;
    const double one_minus_cos = 2.0 * std::sin(0.5 * x) * std::sin(0.5 * x);
    c.a = one_minus_cos / x2;
    c.b = (x - s) / x3;
    c.da_over_x = s / x3 - 2.0 * one_minus_cos / x4;
    c.db_over_x = one_minus_cos / x4 - 3.0 * (x - s) / x5;
    return c;
}

}  // namespace

Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
        -v.y(), v.x(), 0.0;
    return m;
}

Quat so3_exp_quat(const Vec3& theta) {
    const double x = theta.norm();
    double half_sinc;  // sin(x/2)/x
    if (x < kSmallAngle) {
        half_sinc = 0.5 - x * x / 48.0;
    } else {
        half_sinc = std::sin(0.5 * x) / x;
    }
    Quat q(std::cos(0.5 * x), half_sinc * theta.x(), half_sinc * theta.y(), half_sinc * theta.z());
    return q.normalized();
}

Mat3 so3_exp(const Vec3& theta) {
    const double x = theta.norm();
    const Mat3 K = skew(theta);
    if (x < kSmallAngle) {
        return Mat3::Identity() + K + 0.5 * K * K;
    }
    const double s = std::sin(x);
    const double one_minus_cos = 2.0 * std::sin(0.5 * x) * std::sin(0.5 * x);
    return Mat3::Identity() + (s / x) * K + (one_minus_cos / (x * x)) * K * K;
}

Vec3 so3_log(const Quat& q_in) {
    Quat q = q_in.normalized();
    if (q.w() < 0.0) {
        q.coeffs() = -q.coeffs();
    }
    const Vec3 v = q.vec();
    const double vn = v.norm();
    if (vn < kSmallAngle) {
        // 2 atan(vn / w) / vn ~ 2 / w (1 - vn^2 / (3 w^2))
        const double w = q.w();
        return (2.0 / w) * (1.0 - vn * vn / (3.0 * w * w)) * v;
    }
    const double angle = 2.0 * std::atan2(vn, q.w());
    return (angle / vn) * v;
}

Vec3 so3_log(const Mat3& R) { return so3_log(Quat(R)); }

Mat3 right_jacobian(const Vec3& theta) {
    const double x = theta.norm();
    const Mat3 K = skew(theta);
    if (x < kSmallAngle) {
        return Mat3::Identity() - 0.5 * K + (1.0 / 6.0) * K * K;
    }
    const JrCoeffs c = jr_coeffs(x);
    return Mat3::Identity() - c.a * K + c.b * K * K;
}

Mat3 right_jacobian_inverse(const Vec3& theta) {
    const double x = theta.norm();
    const Mat3 K = skew(theta);
    double c;
    if (x < 0.1) {
        const double x2 = x * x;
        c = 1.0 / 12.0 + x2 / 720.0 + x2 * x2 / 30240.0;
    } else {
        const double s = std::sin(x);
        if (std::abs(s) < 1e-12) {
            c = 1.0 / (x * x);
        } else {
            c = 1.0 / (x * x) - (1.0 + std::cos(x)) / (2.0 * x * s);
        }
    }
    return Mat3::Identity() + 0.5 * K + c * K * K;
}

Mat3 right_jacobian_times_vector_derivative(const Vec3& theta, const Vec3& v) {
    const double x = theta.norm();
    const JrCoeffs c = jr_coeffs(x);
    const Vec3 txv = theta.cross(v);
    const Vec3 txtxv = theta.cross(txv);
    // J_r v = v - a (t x v) + b t x (t x v)
    Mat3 d = c.a * skew(v) - txv * (c.da_over_x * theta.transpose());
    d += c.b * (theta.dot(v) * Mat3::Identity() + theta * v.transpose() - 2.0 * v * theta.transpose());
    d += txtxv * (c.db_over_x * theta.transpose());
    return d;
}

Eigen::Matrix4d Pose::matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation_matrix();
    m.topRightCorner<3, 1>() = t_;
    return m;
}

Pose Pose::operator*(const Pose& other) const {
    return Pose(q_ * other.q_, q_ * other.t_ + t_);
}

Pose Pose::inverse() const {
    const Quat qi = q_.conjugate();
    return Pose(qi, -(qi * t_));
}

Pose retract(const Pose& x, const Vec6& delta) {
    const Vec3 rho = delta.head<3>();
    const Vec3 phi = delta.tail<3>();
    return Pose(x.rotation() * so3_exp_quat(phi), x.translation() + x.rotation() * rho);
}

Vec6 pose_log(const Pose& x) {
    Vec6 out;
    out.head<3>() = x.translation();
    out.tail<3>() = so3_log(x.rotation());
    return out;
}

double rotation_angle(const Pose& x) { return so3_log(x.rotation()).norm(); }

double translation_distance(const Pose& a, const Pose& b) {
    return (a.translation() - b.translation()).norm();
}

double rotation_distance(const Pose& a, const Pose& b) {
    return so3_log(a.rotation().conjugate() * b.rotation()).norm();
}

bool is_symmetric_psd(const Eigen::MatrixXd& M, double sym_tol, double eig_tol) {
    if (M.rows() != M.cols()) return false;
    if (!M.allFinite()) return false;
    if ((M - M.transpose()).cwiseAbs().maxCoeff() > sym_tol) return false;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() >= -eig_tol;
}

}  // namespace rio
