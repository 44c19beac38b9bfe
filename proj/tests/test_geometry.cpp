#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "rio/geometry.hpp"
#include "rio/rng.hpp"
#include "support.hpp"

namespace rio {
namespace {

constexpr double kPi = std::numbers::pi;

Vec3 random_vector(Rng& rng, double max_norm) {
    Vec3 v(rng.normal(), rng.normal(), rng.normal());
    return v.normalized() * rng.uniform(0.0, max_norm);
}

Pose random_pose(Rng& rng) {
    return Pose(so3_exp_quat(random_vector(rng, 3.0)), Vec3(rng.normal(), rng.normal(), rng.normal()) * 5.0);
}

double pose_gap(const Pose& a, const Pose& b) {
    return std::max(translation_distance(a, b), rotation_distance(a, b));
}

// Right Jacobian by central differences: column j = log(exp(t)^T exp(t + h e_j)) / h.
Mat3 numeric_right_jacobian(const Vec3& theta, double h = 1e-6) {
    Mat3 J;
    const Mat3 R = so3_exp(theta);
    for (int j = 0; j < 3; ++j) {
        Vec3 dp = theta, dm = theta;
        dp(j) += h;
        dm(j) -= h;
        J.col(j) = (so3_log(Mat3(R.transpose() * so3_exp(dp))) - so3_log(Mat3(R.transpose() * so3_exp(dm)))) /
                   (2.0 * h);
    }
    return J;
}

TEST(So3, ExpOfQuarterTurnAboutZ) {
    const Mat3 R = so3_exp(Vec3(0, 0, kPi / 2));
    EXPECT_LT((R * Vec3::UnitX() - Vec3::UnitY()).norm(), 1e-15);
    EXPECT_NEAR(R.determinant(), 1.0, 1e-12);
}

TEST(So3, LogInvertsExp) {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 theta = random_vector(rng, std::min(3.0, kPi - 1e-3));
        EXPECT_LT((so3_log(so3_exp(theta)) - theta).norm(), 1e-9);
        EXPECT_LT((so3_log(so3_exp_quat(theta)) - theta).norm(), 1e-9);
    }
}

TEST(So3, SmallAnglesUseStableBranch) {
    for (double a : {0.0, 1e-12, 1e-9, 5e-7, 2e-6, 1e-4}) {
        const Vec3 theta = Vec3(1.0, -2.0, 0.5).normalized() * a;
        EXPECT_LT((so3_log(so3_exp(theta)) - theta).norm(), 1e-15 + 1e-9 * a);
        const Mat3 expected = Mat3::Identity() + skew(theta) + 0.5 * skew(theta) * skew(theta);
        EXPECT_LT((so3_exp(theta) - expected).norm(), 1e-12);
    }
}

TEST(So3, LogNearPiStaysOnPrincipalBranch) {
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
        const Vec3 axis = random_vector(rng, 1.0).normalized();
        const double angle = kPi - rng.uniform(0.0, 1e-6);
        const Vec3 w = so3_log(so3_exp(axis * angle));
        EXPECT_LE(w.norm(), kPi + 1e-12);
        EXPECT_LT((so3_exp(w) - so3_exp(axis * angle)).norm(), 1e-9);
    }
}

TEST(So3, RightJacobianAtZeroIsIdentity) {
    EXPECT_EQ(right_jacobian(Vec3::Zero()), Mat3::Identity());
    EXPECT_EQ(right_jacobian_inverse(Vec3::Zero()), Mat3::Identity());
}

TEST(So3, RightJacobianQuarterTurnMatchesFiniteDifferences) {
    const Vec3 theta(0, 0, kPi / 2);
    EXPECT_LT((right_jacobian(theta) - numeric_right_jacobian(theta)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(So3, RightJacobianMatchesFiniteDifferencesOnRandomAngles) {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 theta = random_vector(rng, 3.0);
        EXPECT_LT((right_jacobian(theta) - numeric_right_jacobian(theta)).cwiseAbs().maxCoeff(), 1e-6) << i;
        EXPECT_LT((right_jacobian_inverse(theta) * right_jacobian(theta) - Mat3::Identity()).norm(), 1e-9);
    }
}

TEST(So3, RightJacobianTaylorBranchIsContinuous) {
    const Vec3 dir = Vec3(0.3, -0.4, 0.2).normalized();
    const Mat3 below = right_jacobian(dir * 0.999e-6);
    const Mat3 above = right_jacobian(dir * 1.001e-6);
    EXPECT_LT((below - above).norm(), 1e-8);
    const Vec3 t = dir * 1e-7;
    const Mat3 taylor = Mat3::Identity() - 0.5 * skew(t) + skew(t) * skew(t) / 6.0;
    EXPECT_LT((right_jacobian(t) - taylor).norm(), 1e-18);
}

TEST(So3, RightJacobianMapsRotationVectorRateToBodyRate) {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const Mat3 R0 = so3_exp(random_vector(rng, 2.0));
        const Vec3 omega = random_vector(rng, 3.0);
        const double t = rng.uniform(0.0, 0.4);
        auto theta_at = [&](double s) { return so3_log(Mat3(R0 * so3_exp(omega * s))); };
        const double h = 1e-5;
        const Vec3 theta = theta_at(t);
        if (theta.norm() > kPi - 0.05) continue;
        const Vec3 theta_dot = (theta_at(t + h) - theta_at(t - h)) / (2.0 * h);
        EXPECT_LT((right_jacobian(theta) * theta_dot - omega).norm(), 1e-6) << trial;
    }
}

TEST(So3, RightJacobianVectorDerivativeMatchesFiniteDifferences) {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const Vec3 theta = random_vector(rng, 3.0);
        const Vec3 v = random_vector(rng, 2.0);
        auto f = [&](const Eigen::VectorXd& x) { return Eigen::VectorXd(right_jacobian(Vec3(x)) * v); };
        const Eigen::MatrixXd Jn = testing::numeric_jacobian(f, Eigen::VectorXd(theta));
        EXPECT_LT(testing::relative_jacobian_error(right_jacobian_times_vector_derivative(theta, v), Jn), 1e-5);
    }
}

TEST(Se3, IdentityComposition) {
    Rng rng(6);
    const Pose p = random_pose(rng);
    EXPECT_LT(pose_gap(se3_compose(Pose::identity(), p), p), 1e-15);
    EXPECT_LT(pose_gap(se3_compose(p, Pose::identity()), p), 1e-15);
}

TEST(Se3, InverseComposesToIdentity) {
    Rng rng(7);
    for (int i = 0; i < 100; ++i) {
        const Pose p = random_pose(rng);
        EXPECT_LT(pose_gap(se3_compose(p, se3_inverse(p)), Pose::identity()), 1e-12);
        EXPECT_LT(pose_gap(se3_compose(se3_inverse(p), p), Pose::identity()), 1e-12);
    }
}

TEST(Se3, CompositionIsAssociative) {
    Rng rng(8);
    for (int i = 0; i < 1000; ++i) {
        const Pose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
        EXPECT_LT(pose_gap((a * b) * c, a * (b * c)), 1e-12);
    }
}

TEST(Se3, ActsLikeHomogeneousMatrix) {
    Rng rng(9);
    const Pose a = random_pose(rng), b = random_pose(rng);
    EXPECT_LT(((a * b).matrix() - a.matrix() * b.matrix()).norm(), 1e-12);
    const Vec3 p(1.0, -2.0, 3.0);
    EXPECT_LT(((a * p) - (a.matrix() * p.homogeneous()).head<3>()).norm(), 1e-12);
    EXPECT_NEAR(a.rotation().norm(), 1.0, 1e-12);
    EXPECT_NEAR(a.rotation_matrix().determinant(), 1.0, 1e-9);
}

TEST(Se3, RetractAndLogRoundTrip) {
    Rng rng(10);
    for (int i = 0; i < 200; ++i) {
        Vec6 delta;
        delta << Vec3(rng.normal(), rng.normal(), rng.normal()), random_vector(rng, 3.0);
        const Pose x = retract(Pose::identity(), delta);
        EXPECT_LT((pose_log(x) - delta).norm(), 1e-9);
        // Rotation applies on the right, translation in the rotated frame.
        const Pose base = random_pose(rng);
        const Pose moved = retract(base, delta);
        EXPECT_LT(pose_gap(moved, base * Pose(so3_exp_quat(Vec3::Zero()), delta.head<3>()) *
                                      Pose(so3_exp_quat(delta.tail<3>()), Vec3::Zero())),
                  1e-12);
    }
}

TEST(Se3, DistancesAndAngles) {
    const Pose a(so3_exp_quat(Vec3(0, 0, 0.3)), Vec3(1, 2, 3));
    const Pose b(so3_exp_quat(Vec3(0, 0, -0.2)), Vec3(1, 2, 5));
    EXPECT_NEAR(translation_distance(a, b), 2.0, 1e-15);
    EXPECT_NEAR(rotation_distance(a, b), 0.5, 1e-12);
    EXPECT_NEAR(rotation_angle(a), 0.3, 1e-12);
}

TEST(Covariance, SymmetricPsdCheck) {
    Mat3 M = Mat3::Identity();
    EXPECT_TRUE(is_symmetric_psd(M));
    M(0, 1) = 1e-9;
    EXPECT_FALSE(is_symmetric_psd(M));
    M = Mat3::Identity();
    M(2, 2) = -1e-9;
    EXPECT_FALSE(is_symmetric_psd(M));
    M(2, 2) = -1e-11;
    EXPECT_TRUE(is_symmetric_psd(M));
}

}  // namespace
}  // namespace rio
