#pragma once

// Shared fixtures for the unit and acceptance tests: smooth analytic motion,
// asynchronous sampling, and independent reference integrators.

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "rio/geometry.hpp"
#include "rio/rng.hpp"
#include "rio/types.hpp"

namespace rio::testing {

/// Body angular velocity and body linear velocity as sums of sinusoids.
struct SmoothMotion {
    struct Term {
        Vec3 amplitude;
        double freq;   // Hz
        double phase;  // rad
    };
    Vec3 omega_bias = Vec3::Zero();
    std::vector<Term> omega_terms;
    Vec3 velocity_bias = Vec3::Zero();
    std::vector<Term> velocity_terms;

    static Vec3 eval(const Vec3& bias, const std::vector<Term>& terms, double t) {
        Vec3 out = bias;
        for (const auto& term : terms) out += term.amplitude * std::sin(2.0 * std::numbers::pi * term.freq * t + term.phase);
        return out;
    }
    Vec3 omega(double t) const { return eval(omega_bias, omega_terms, t); }
    Vec3 velocity(double t) const { return eval(velocity_bias, velocity_terms, t); }

    /// Random smooth motion whose angular-rate magnitude peaks near `peak_rate`.
    static SmoothMotion random(Rng& rng, double peak_rate, double max_freq = 1.5) {
        SmoothMotion m;
        for (int k = 0; k < 2; ++k) {
            Vec3 a(rng.normal(), rng.normal(), rng.normal());
            a.head<2>() *= 0.3;  // yaw dominated, like a ground vehicle
            m.omega_terms.push_back({a, rng.uniform(0.3, max_freq), rng.uniform(0.0, 2.0 * std::numbers::pi)});
        }
        // Scale to the requested peak over a coarse scan.
        double peak = 0.0;
        for (int i = 0; i < 400; ++i) peak = std::max(peak, m.omega(i * 0.01).norm());
        for (auto& term : m.omega_terms) term.amplitude *= peak_rate / peak;
        m.velocity_bias = Vec3(rng.uniform(2.0, 6.0), 0.0, 0.0);
        for (int k = 0; k < 2; ++k) {
            const Vec3 a(rng.normal(0.0, 0.8), rng.normal(0.0, 0.2), rng.normal(0.0, 0.1));
            m.velocity_terms.push_back({a, rng.uniform(0.2, max_freq), rng.uniform(0.0, 2.0 * std::numbers::pi)});
        }
        return m;
    }
};

/// Fine-step RK4 of q' = q (0, omega) / 2, p' = R(q) v from t_a to t_b.
inline Pose rk4_relative_pose(const SmoothMotion& m, double t_a, double t_b, double rate_hz = 10000.0) {
    const int steps = std::max(1, static_cast<int>(std::ceil((t_b - t_a) * rate_hz)));
    const double h = (t_b - t_a) / steps;
    Eigen::Vector4d q(1, 0, 0, 0);  // w x y z
    Vec3 p = Vec3::Zero();
    auto deriv = [&](double t, const Eigen::Vector4d& qq, Eigen::Vector4d& dq, Vec3& dp) {
        const Vec3 w = m.omega(t);
        // q * (0, w)
        dq(0) = -0.5 * (qq(1) * w.x() + qq(2) * w.y() + qq(3) * w.z());
        dq(1) = 0.5 * (qq(0) * w.x() + qq(2) * w.z() - qq(3) * w.y());
        dq(2) = 0.5 * (qq(0) * w.y() + qq(3) * w.x() - qq(1) * w.z());
        dq(3) = 0.5 * (qq(0) * w.z() + qq(1) * w.y() - qq(2) * w.x());
        const Quat qn(qq(0), qq(1), qq(2), qq(3));
        dp = qn.normalized() * m.velocity(t);
    };
    for (int i = 0; i < steps; ++i) {
        const double t = t_a + i * h;
        Eigen::Vector4d k1, k2, k3, k4;
        Vec3 l1, l2, l3, l4;
        deriv(t, q, k1, l1);
        deriv(t + 0.5 * h, q + 0.5 * h * k1, k2, l2);
        deriv(t + 0.5 * h, q + 0.5 * h * k2, k3, l3);
        deriv(t + h, q + h * k3, k4, l4);
        q += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        p += h / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
        q.normalize();
    }
    return Pose(Quat(q(0), q(1), q(2), q(3)), p);
}

/// Timestamps of a clock with a random phase and uniform jitter covering [lo, hi].
inline std::vector<double> async_stamps(Rng& rng, double rate, double lo, double hi, double jitter) {
    std::vector<double> out;
    const double phase = rng.uniform(0.0, 1.0 / rate);
    for (double k = std::floor(lo * rate) - 1;; k += 1.0) {
        const double t = k / rate + phase + rng.uniform(-jitter, jitter);
        if (t > hi) break;
        if (t >= lo) out.push_back(t);
    }
    return out;
}

struct Window {
    SmoothMotion motion;
    std::vector<ImuSample> imu;
    std::vector<EgoVelocity> vels;
    double t_a = 0.0, t_b = 0.0;
};

/// One preintegration window with 200 Hz gyro and 15 Hz radar velocity on
/// independent jittered clocks. Noise standard deviations may be zero.
inline Window make_window(Rng& rng, double peak_rate, double gyro_noise = 0.0, double vel_noise = 0.0,
                          double min_len = 0.2, double max_len = 0.5, double pad = 0.3) {
    Window w;
    w.motion = SmoothMotion::random(rng, peak_rate);
    w.t_a = rng.uniform(0.5, 2.0);
    w.t_b = w.t_a + rng.uniform(min_len, max_len);
    for (double t : async_stamps(rng, 200.0, w.t_a - pad, w.t_b + pad, 0.002)) {
        ImuSample s;
        s.timestamp = t;
        s.angular_velocity = w.motion.omega(t);
        for (int a = 0; a < 3; ++a) s.angular_velocity(a) += rng.normal(0.0, gyro_noise);
        w.imu.push_back(s);
    }
    const double sv = std::max(vel_noise, 0.01);
    for (double t : async_stamps(rng, 15.0, w.t_a - pad, w.t_b + pad, 0.002)) {
        EgoVelocity e;
        e.timestamp = t;
        e.velocity = w.motion.velocity(t);
        for (int a = 0; a < 3; ++a) e.velocity(a) += rng.normal(0.0, vel_noise);
        e.covariance = sv * sv * Mat3::Identity();
        w.vels.push_back(e);
    }
    return w;
}

/// Central finite-difference Jacobian of f at x.
template <typename F>
Eigen::MatrixXd numeric_jacobian(F&& f, const Eigen::VectorXd& x, double h = 1e-6) {
    const Eigen::VectorXd f0 = f(x);
    Eigen::MatrixXd J(f0.size(), x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        J.col(i) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return J;
}

/// Max entrywise error relative to the Jacobian's largest entry.
inline double relative_jacobian_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
    const double scale = std::max(1.0, numeric.cwiseAbs().maxCoeff());
    return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

/// Adaptive Simpson quadrature.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol,
                               int depth = 50) {
    auto simpson = [&](double lo, double hi, double flo, double fmid, double fhi) {
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
    };
    std::function<double(double, double, double, double, double, double, double, int)> rec =
        [&](double lo, double hi, double flo, double fmid, double fhi, double whole, double eps, int d) {
            const double mid = 0.5 * (lo + hi);
            const double lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
            const double flm = f(lm), frm = f(rm);
            const double left = simpson(lo, mid, flo, flm, fmid);
            const double right = simpson(mid, hi, fmid, frm, fhi);
            if (d <= 0 || std::abs(left + right - whole) <= 15.0 * eps) {
                return left + right + (left + right - whole) / 15.0;
            }
            return rec(lo, mid, flo, flm, fmid, left, 0.5 * eps, d - 1) +
                   rec(mid, hi, fmid, frm, fhi, right, 0.5 * eps, d - 1);
        };
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    return rec(a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol, depth);
}

}  // namespace rio::testing
