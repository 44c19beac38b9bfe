#include "rio/gp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Cholesky>

#include "rio/error.hpp"

namespace rio {

void KernelSpec::validate() const {
    if (!(lengthscale > 0.0) || !(variance > 0.0) || !std::isfinite(lengthscale) || !std::isfinite(variance)) {
        throw ConfigError("kernel lengthscale and variance must be positive");
    }
}

double kernel_value(const KernelSpec& k, double t, double s) {
    const double u = (t - s) / k.lengthscale;
    return k.variance * std::exp(-0.5 * u * u);
}

Eigen::RowVectorXd kernel_vector(const KernelSpec& k, double t, std::span<const double> ts) {
    k.validate();
    Eigen::RowVectorXd out(static_cast<Eigen::Index>(ts.size()));
    for (std::size_t j = 0; j < ts.size(); ++j) out(static_cast<Eigen::Index>(j)) = kernel_value(k, t, ts[j]);
    return out;
}

Eigen::MatrixXd kernel_matrix(const KernelSpec& k, std::span<const double> ts) {
    k.validate();
    const auto n = static_cast<Eigen::Index>(ts.size());
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        K(i, i) = k.variance;
        for (Eigen::Index j = 0; j < i; ++j) K(i, j) = K(j, i) = kernel_value(k, ts[i], ts[j]);
    }
    return K;
}

Eigen::RowVectorXd kernel_integral(const KernelSpec& k, double t0, double t, std::span<const double> ts) {
    k.validate();
    const double c = k.variance * k.lengthscale * std::sqrt(0.5 * std::numbers::pi);
    const double inv = 1.0 / (std::numbers::sqrt2 * k.lengthscale);
    Eigen::RowVectorXd out(static_cast<Eigen::Index>(ts.size()));
    for (std::size_t j = 0; j < ts.size(); ++j) {
        out(static_cast<Eigen::Index>(j)) = c * (std::erf((t - ts[j]) * inv) - std::erf((t0 - ts[j]) * inv));
    }
    return out;
}

namespace {

Eigen::VectorXd axis_of(const Eigen::VectorXd& x, int axis) {
    const Eigen::Index n = x.size() / 3;
    Eigen::VectorXd out(n);
    for (Eigen::Index j = 0; j < n; ++j) out(j) = x(3 * j + axis);
    return out;
}

Eigen::MatrixXd noisy_kernel(const KernelSpec& k, std::span<const double> ts, double noise_var) {
    Eigen::MatrixXd S = kernel_matrix(k, ts);
    S.diagonal().array() += noise_var;
    return S;
}

// K S^-1 for symmetric K, S.
Eigen::MatrixXd smoother(const Eigen::MatrixXd& K, const Eigen::LDLT<Eigen::MatrixXd>& S) {
    return S.solve(K).transpose();
}

struct GnResult {
    Eigen::VectorXd x;
    Eigen::MatrixXd covariance;
    bool converged = false;
    int iterations = 0;
    double cost = 0.0;
};

template <typename Problem>
GnResult gauss_newton(const Problem& prob, Eigen::VectorXd x, int max_iters) {
    GnResult out;
    Eigen::VectorXd r = prob.residuals(x);
    double cost = 0.5 * r.squaredNorm();
    Eigen::MatrixXd J = prob.jacobian(x);
    for (int it = 0; it < max_iters; ++it) {
        const Eigen::MatrixXd H = J.transpose() * J;
        const Eigen::VectorXd g = J.transpose() * r;
        const Eigen::VectorXd dx = -H.ldlt().solve(g);
        if (!dx.allFinite()) break;
        double scale = 1.0;
        bool accepted = false;
        Eigen::VectorXd x_new, r_new;
        double cost_new = cost;
        for (int k = 0; k < 20; ++k) {
            x_new = x + scale * dx;
            r_new = prob.residuals(x_new);
            cost_new = 0.5 * r_new.squaredNorm();
            if (cost_new <= cost) {
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        out.iterations = it + 1;
        if (!accepted) {
            out.converged = true;
            break;
        }
        const double decrease = cost - cost_new;
        x = std::move(x_new);
        r = std::move(r_new);
        cost = cost_new;
        J = prob.jacobian(x);
        if (decrease < 1e-10 * (1.0 + cost) || (scale * dx).norm() < 1e-12 * (1.0 + x.norm())) {
            out.converged = true;
            break;
        }
    }
    const Eigen::MatrixXd H = J.transpose() * J;
    const auto n = H.rows();
    out.covariance = H.ldlt().solve(Eigen::MatrixXd::Identity(n, n));
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
    out.x = std::move(x);
    out.cost = cost;
    return out;
}

// Samples in [lo, hi] plus the nearest one on each side.
template <typename T>
std::vector<T> select_window(std::span<const T> samples, double lo, double hi) {
    std::vector<T> out;
    std::ptrdiff_t first = -1, last = -1;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].timestamp >= lo && samples[i].timestamp <= hi) {
            if (first < 0) first = static_cast<std::ptrdiff_t>(i);
            last = static_cast<std::ptrdiff_t>(i);
        }
    }
    std::ptrdiff_t a, b;
    if (first < 0) {
        // No sample inside: take the neighbours that bracket the span.
        const auto it = std::lower_bound(samples.begin(), samples.end(), lo,
                                         [](const T& s, double t) { return s.timestamp < t; });
        b = it - samples.begin();
        a = b - 1;
    } else {
        a = first - 1;
        b = last + 1;
    }
    a = std::max<std::ptrdiff_t>(a, 0);
    b = std::min<std::ptrdiff_t>(b, static_cast<std::ptrdiff_t>(samples.size()) - 1);
    for (std::ptrdiff_t i = a; i <= b; ++i) out.push_back(samples[static_cast<std::size_t>(i)]);
    return out;
}

// Integrated posterior standard deviation of a rate GP over [0, tau], squared.
double integrated_posterior_variance(const KernelSpec& k, std::span<const double> ts,
                                     const Eigen::LDLT<Eigen::MatrixXd>& S, double tau, int nodes) {
    if (nodes < 2 || tau == 0.0) return 0.0;
    const double h = tau / (nodes - 1);
    double acc = 0.0;
    for (int i = 0; i < nodes; ++i) {
        const double t = h * i;
        const Eigen::RowVectorXd kv = kernel_vector(k, t, ts);
        const double var = std::max(0.0, k.variance - kv.dot(S.solve(kv.transpose())));
        const double w = (i == 0 || i == nodes - 1) ? 0.5 : 1.0;
        acc += w * std::sqrt(var);
    }
    acc *= std::abs(h);
    return acc * acc;
}

Mat3 propagate_axes(const std::array<KernelSpec, 3>& kernels, std::span<const double> ts, double noise_var_x,
                    double noise_var_y, double noise_var_z, double tau, const Eigen::MatrixXd& x_cov,
                    int grid_nodes) {
    const std::array<double, 3> noise{noise_var_x, noise_var_y, noise_var_z};
    const auto n = static_cast<Eigen::Index>(ts.size());
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(3, 3 * n);
    Vec3 grid = Vec3::Zero();
    for (int i = 0; i < 3; ++i) {
        const Eigen::LDLT<Eigen::MatrixXd> S(noisy_kernel(kernels[i], ts, noise[i]));
        const Eigen::RowVectorXd row = S.solve(kernel_integral(kernels[i], 0.0, tau, ts).transpose()).transpose();
        for (Eigen::Index j = 0; j < n; ++j) G(i, 3 * j + i) = row(j);
        grid(i) = integrated_posterior_variance(kernels[i], ts, S, tau, grid_nodes);
    }
    Mat3 C = G * x_cov * G.transpose();
    C += grid.asDiagonal();
    return 0.5 * (C + C.transpose());
}

void check_extrapolation(std::span<const double> times, const std::array<KernelSpec, 3>& kernels, double tau) {
    const double l = std::max({kernels[0].lengthscale, kernels[1].lengthscale, kernels[2].lengthscale});
    if (tau < times.front() - l || tau > times.back() + l) {
        throw ExtrapolationTooFar("query time lies more than one lengthscale outside the window samples");
    }
}

}  // namespace

RotationProblem::RotationProblem(std::span<const ImuSample> imu, double origin, const GpParams& params) {
    if (imu.size() < 2) throw InsufficientPoints("rotation GP needs at least 2 gyro samples");
    for (std::size_t i = 0; i < imu.size(); ++i) {
        if (i > 0 && !(imu[i].timestamp > imu[i - 1].timestamp)) {
            throw SequenceOrderError("gyro timestamps must increase strictly");
        }
        times.push_back(imu[i].timestamp - origin);
        gyro.push_back(imu[i].angular_velocity);
    }
    noise_std = std::max(params.gyro_noise, params.min_noise_std);
    const auto n = static_cast<Eigen::Index>(times.size());
    for (int a = 0; a < 3; ++a) {
        double second_moment = 0.0;
        for (const auto& w : gyro) second_moment += w(a) * w(a);
        second_moment /= static_cast<double>(gyro.size());
        kernels[a] = {params.lengthscale_rot, std::max(second_moment, params.min_signal_variance)};
        const Eigen::MatrixXd K = kernel_matrix(kernels[a], times);
        Eigen::MatrixXd S = K;
        S.diagonal().array() += noise_std * noise_std;
        const Eigen::LDLT<Eigen::MatrixXd> S_ldlt(S);
        A[a] = smoother(K, S_ldlt);
        Eigen::MatrixXd Kint(n, n);
        for (Eigen::Index i = 0; i < n; ++i) Kint.row(i) = kernel_integral(kernels[a], 0.0, times[i], times);
        B[a] = S_ldlt.solve(Kint.transpose()).transpose();
    }
}

Eigen::VectorXd RotationProblem::residuals(const Eigen::VectorXd& x) const {
    const auto n = static_cast<Eigen::Index>(times.size());
    Eigen::MatrixXd theta(n, 3), rate(n, 3);
    for (int a = 0; a < 3; ++a) {
        const Eigen::VectorXd r = axis_of(x, a);
        theta.col(a) = B[a] * r;
        rate.col(a) = A[a] * r;
    }
    Eigen::VectorXd out(6 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3 th = theta.row(i).transpose();
        const Vec3 td = rate.row(i).transpose();
        out.segment<3>(3 * i) = (right_jacobian(th) * td - gyro[static_cast<std::size_t>(i)]) / noise_std;
        for (int a = 0; a < 3; ++a) {
            out(3 * n + 3 * i + a) = (td(a) - x(3 * i + a)) / std::sqrt(kernels[a].variance);
        }
    }
    return out;
}

Eigen::MatrixXd RotationProblem::jacobian(const Eigen::VectorXd& x) const {
    const auto n = static_cast<Eigen::Index>(times.size());
    Eigen::MatrixXd theta(n, 3), rate(n, 3);
    for (int a = 0; a < 3; ++a) {
        const Eigen::VectorXd r = axis_of(x, a);
        theta.col(a) = B[a] * r;
        rate.col(a) = A[a] * r;
    }
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(6 * n, 3 * n);
    const double inv_s = 1.0 / noise_std;
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3 th = theta.row(i).transpose();
        const Vec3 td = rate.row(i).transpose();
        const Mat3 Jr = right_jacobian(th) * inv_s;
        const Mat3 D = right_jacobian_times_vector_derivative(th, td) * inv_s;
        for (Eigen::Index j = 0; j < n; ++j) {
            for (int c = 0; c < 3; ++c) {
                J.block<3, 1>(3 * i, 3 * j + c) = Jr.col(c) * A[c](i, j) + D.col(c) * B[c](i, j);
            }
        }
        for (int a = 0; a < 3; ++a) {
            const double w = 1.0 / std::sqrt(kernels[a].variance);
            for (Eigen::Index j = 0; j < n; ++j) J(3 * n + 3 * i + a, 3 * j + a) = w * A[a](i, j);
            J(3 * n + 3 * i + a, 3 * i + a) -= w;
        }
    }
    return J;
}

GpRotationModel fit_rotation_gp(std::span<const ImuSample> imu, double origin, const GpParams& params) {
    const RotationProblem prob(imu, origin, params);
    const auto n = static_cast<Eigen::Index>(prob.times.size());
    Eigen::VectorXd x0(3 * n);
    for (Eigen::Index i = 0; i < n; ++i) x0.segment<3>(3 * i) = prob.gyro[static_cast<std::size_t>(i)];
    const GnResult gn = gauss_newton(prob, x0, params.max_iters);

    GpRotationModel m;
    m.origin = origin;
    m.times = prob.times;
    m.kernels = prob.kernels;
    m.noise_std = prob.noise_std;
    m.rho.resize(n, 3);
    for (int a = 0; a < 3; ++a) {
        m.rho.col(a) = axis_of(gn.x, a);
        const Eigen::LDLT<Eigen::MatrixXd> S(noisy_kernel(m.kernels[a], m.times, m.noise_std * m.noise_std));
        m.alpha[a] = S.solve(m.rho.col(a));
    }
    m.rho_covariance = gn.covariance;
    m.converged = gn.converged;
    m.iterations = gn.iterations;
    m.final_cost = gn.cost;
    return m;
}

RotationState infer_rotation(const GpRotationModel& m, double t) {
    const double tau = t - m.origin;
    check_extrapolation(m.times, m.kernels, tau);
    RotationState s;
    for (int a = 0; a < 3; ++a) {
        s.theta_dot(a) = kernel_vector(m.kernels[a], tau, m.times).dot(m.alpha[a]);
        s.theta(a) = kernel_integral(m.kernels[a], 0.0, tau, m.times).dot(m.alpha[a]);
    }
    return s;
}

Mat3 rotation_covariance(const GpRotationModel& m, double t, int grid_nodes) {
    const double v = m.noise_std * m.noise_std;
    return propagate_axes(m.kernels, m.times, v, v, v, t - m.origin, m.rho_covariance, grid_nodes);
}

VelocityProblem::VelocityProblem(std::span<const EgoVelocity> vels, const GpRotationModel& rot,
                                 const GpParams& params) {
    if (vels.size() < 2) throw InsufficientPoints("velocity GP needs at least 2 ego-velocity samples");
    Vec3 var_sum = Vec3::Zero();
    std::vector<Vec3> world;
    for (std::size_t i = 0; i < vels.size(); ++i) {
        if (i > 0 && !(vels[i].timestamp > vels[i - 1].timestamp)) {
            throw SequenceOrderError("ego-velocity timestamps must increase strictly");
        }
        times.push_back(vels[i].timestamp - rot.origin);
        measured.push_back(vels[i].velocity);
        Mat3 cov = vels[i].covariance;
        Eigen::LLT<Mat3> llt(cov);
        if (!cov.allFinite() || llt.info() != Eigen::Success || cov.diagonal().minCoeff() <= 0.0) {
            cov = params.velocity_noise * params.velocity_noise * Mat3::Identity();
            llt.compute(cov);
        }
        const Mat3 L = llt.matrixL();
        sqrt_info.push_back(L.inverse());
        const Mat3 R = so3_exp(infer_rotation(rot, vels[i].timestamp).theta);
        rotation.push_back(R);
        world.push_back(R * vels[i].velocity);
        var_sum += (R * cov * R.transpose()).diagonal();
    }
    const auto n = static_cast<Eigen::Index>(times.size());

    // Least-squares linear trend of the window-frame velocities.
    Eigen::MatrixXd T(n, 2);
    Eigen::MatrixXd W(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        T(i, 0) = 1.0;
        T(i, 1) = times[static_cast<std::size_t>(i)];
        W.row(i) = world[static_cast<std::size_t>(i)].transpose();
    }
    const Eigen::MatrixXd coef = T.colPivHouseholderQr().solve(W);
    mean_offset = coef.row(0).transpose();
    mean_slope = coef.row(1).transpose();

    for (int a = 0; a < 3; ++a) {
        double var = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d = W(i, a) - (mean_offset(a) + mean_slope(a) * T(i, 1));
            var += d * d;
        }
        var /= static_cast<double>(n);
        kernels[a] = {params.lengthscale_vel, std::max(var, params.min_signal_variance)};
        noise_std(a) = std::max(std::sqrt(var_sum(a) / static_cast<double>(n)), params.min_noise_std);
        const Eigen::MatrixXd K = kernel_matrix(kernels[a], times);
        Eigen::MatrixXd S = K;
        S.diagonal().array() += noise_std(a) * noise_std(a);
        A[a] = smoother(K, Eigen::LDLT<Eigen::MatrixXd>(S));
    }
}

Eigen::VectorXd VelocityProblem::residuals(const Eigen::VectorXd& x) const {
    const auto n = static_cast<Eigen::Index>(times.size());
    Eigen::MatrixXd v(n, 3);
    for (int a = 0; a < 3; ++a) {
        Eigen::VectorXd mu(n);
        for (Eigen::Index i = 0; i < n; ++i) mu(i) = mean_offset(a) + mean_slope(a) * times[static_cast<std::size_t>(i)];
        v.col(a) = mu + A[a] * (axis_of(x, a) - mu);
    }
    Eigen::VectorXd out(6 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const Vec3 vi = v.row(i).transpose();
        out.segment<3>(3 * i) = sqrt_info[k] * (rotation[k].transpose() * vi - measured[k]);
        for (int a = 0; a < 3; ++a) {
            out(3 * n + 3 * i + a) = (vi(a) - x(3 * i + a)) / std::sqrt(kernels[a].variance);
        }
    }
    return out;
}

Eigen::MatrixXd VelocityProblem::jacobian(const Eigen::VectorXd&) const {
    const auto n = static_cast<Eigen::Index>(times.size());
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(6 * n, 3 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const Mat3 M = sqrt_info[k] * rotation[k].transpose();
        for (Eigen::Index j = 0; j < n; ++j) {
            for (int c = 0; c < 3; ++c) J.block<3, 1>(3 * i, 3 * j + c) = M.col(c) * A[c](i, j);
        }
        for (int a = 0; a < 3; ++a) {
            const double w = 1.0 / std::sqrt(kernels[a].variance);
            for (Eigen::Index j = 0; j < n; ++j) J(3 * n + 3 * i + a, 3 * j + a) = w * A[a](i, j);
            J(3 * n + 3 * i + a, 3 * i + a) -= w;
        }
    }
    return J;
}

GpVelocityModel fit_velocity_gp(std::span<const EgoVelocity> vels, const GpRotationModel& rot,
                                const GpParams& params) {
    const VelocityProblem prob(vels, rot, params);
    const auto n = static_cast<Eigen::Index>(prob.times.size());
    Eigen::VectorXd x0(3 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        x0.segment<3>(3 * i) = prob.rotation[k] * prob.measured[k];
    }
    const GnResult gn = gauss_newton(prob, x0, params.max_iters);

    GpVelocityModel m;
    m.origin = rot.origin;
    m.times = prob.times;
    m.kernels = prob.kernels;
    m.noise_std = prob.noise_std;
    m.mean_offset = prob.mean_offset;
    m.mean_slope = prob.mean_slope;
    m.zeta.resize(n, 3);
    for (int a = 0; a < 3; ++a) {
        m.zeta.col(a) = axis_of(gn.x, a);
        Eigen::VectorXd mu(n);
        for (Eigen::Index i = 0; i < n; ++i) mu(i) = m.mean_offset(a) + m.mean_slope(a) * m.times[static_cast<std::size_t>(i)];
        const Eigen::LDLT<Eigen::MatrixXd> S(noisy_kernel(m.kernels[a], m.times, m.noise_std(a) * m.noise_std(a)));
        m.alpha[a] = S.solve(m.zeta.col(a) - mu);
    }
    m.zeta_covariance = gn.covariance;
    m.converged = gn.converged;
    m.iterations = gn.iterations;
    m.final_cost = gn.cost;
    return m;
}

Vec3 infer_velocity(const GpVelocityModel& m, double t) {
    const double tau = t - m.origin;
    check_extrapolation(m.times, m.kernels, tau);
    Vec3 v;
    for (int a = 0; a < 3; ++a) {
        v(a) = m.mean_offset(a) + m.mean_slope(a) * tau + kernel_vector(m.kernels[a], tau, m.times).dot(m.alpha[a]);
    }
    return v;
}

Vec3 infer_position(const GpVelocityModel& m, double t) {
    const double tau = t - m.origin;
    check_extrapolation(m.times, m.kernels, tau);
    Vec3 p;
    for (int a = 0; a < 3; ++a) {
        p(a) = m.mean_offset(a) * tau + 0.5 * m.mean_slope(a) * tau * tau +
               kernel_integral(m.kernels[a], 0.0, tau, m.times).dot(m.alpha[a]);
    }
    return p;
}

Mat3 position_covariance(const GpVelocityModel& m, double t, int grid_nodes) {
    const Vec3 v = m.noise_std.cwiseProduct(m.noise_std);
    return propagate_axes(m.kernels, m.times, v(0), v(1), v(2), t - m.origin, m.zeta_covariance, grid_nodes);
}

Mat6 compose_covariance(const Mat6& cov_a, const Pose& b, const Mat6& cov_b) {
    const Mat3 Rt = b.rotation_matrix().transpose();
    Mat6 M = Mat6::Zero();
    M.topLeftCorner<3, 3>() = Rt;
    M.topRightCorner<3, 3>() = -Rt * skew(b.translation());
    M.bottomRightCorner<3, 3>() = Rt;
    Mat6 out = M * cov_a * M.transpose() + cov_b;
    return 0.5 * (out + out.transpose());
}

namespace {

constexpr double kCovarianceFloor = 1e-10;

MotionIncrement identity_increment(double t_a, double t_b) {
    MotionIncrement inc;
    inc.covariance = kCovarianceFloor * Mat6::Identity();
    inc.t_begin = t_a;
    inc.t_end = t_b;
    return inc;
}

MotionIncrement gp_window(std::span<const ImuSample> imu, std::span<const EgoVelocity> vels, double t_a, double t_b,
                          const GpParams& params) {
    const auto v_win = select_window(vels, t_a, t_b);
    if (v_win.size() < 2) throw InsufficientPoints("window holds fewer than 2 ego-velocity samples");
    const double lo = std::min(t_a, v_win.front().timestamp);
    const double hi = std::max(t_b, v_win.back().timestamp);
    const auto g_win = select_window(imu, lo, hi);
    if (g_win.size() < 2) throw InsufficientPoints("window holds fewer than 2 gyro samples");

    const GpRotationModel rot = fit_rotation_gp(g_win, t_a, params);
    const GpVelocityModel vel = fit_velocity_gp(v_win, rot, params);

    MotionIncrement inc;
    inc.t_begin = t_a;
    inc.t_end = t_b;
    inc.source = IncrementSource::Integration;
    inc.fallback = !(rot.converged && vel.converged);
    const RotationState rs = infer_rotation(rot, t_b);
    const Vec3 p = infer_position(vel, t_b);
    inc.transform = Pose(so3_exp_quat(rs.theta), p);

    const Mat3 Jr = right_jacobian(rs.theta);
    const Mat3 cov_phi = Jr * rotation_covariance(rot, t_b, params.grid_nodes) * Jr.transpose();
    Mat3 cov_p = position_covariance(vel, t_b, params.grid_nodes);
    const Mat3 P = skew(p);
    cov_p += 0.25 * P * cov_phi * P.transpose();
    const Mat3 R = inc.transform.rotation_matrix();
    Mat6 C = Mat6::Zero();
    C.topLeftCorner<3, 3>() = R.transpose() * cov_p * R;
    C.bottomRightCorner<3, 3>() = cov_phi;
    C = 0.5 * (C + C.transpose());
    C.diagonal().array() += kCovarianceFloor;
    inc.covariance = C;
    return inc;
}

}  // namespace

MotionIncrement discrete_preintegrate(std::span<const ImuSample> imu, std::span<const EgoVelocity> vels,
                                      double t_a, double t_b, const GpParams& params) {
    if (t_b < t_a) throw SequenceOrderError("preintegration span ends before it begins");
    if (imu.empty() || vels.empty()) throw InsufficientPoints("discrete integration needs gyro and velocity samples");
    if (t_b == t_a) return identity_increment(t_a, t_b);

    // Held sample at time t: the latest one at or before t, else the first one.
    auto held = [](auto samples, double t) {
        std::size_t k = 0;
        while (k + 1 < samples.size() && samples[k + 1].timestamp <= t) ++k;
        return k;
    };
    std::vector<double> breaks{t_a, t_b};
    for (const auto& s : imu) {
        if (s.timestamp > t_a && s.timestamp < t_b) breaks.push_back(s.timestamp);
    }
    for (const auto& s : vels) {
        if (s.timestamp > t_a && s.timestamp < t_b) breaks.push_back(s.timestamp);
    }
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

    Mat3 R = Mat3::Identity();
    Vec3 p = Vec3::Zero();
    // Errors of one held sample are fully correlated over its hold time.
    std::vector<double> gyro_hold(imu.size(), 0.0);
    std::vector<double> vel_hold(vels.size(), 0.0);
    std::vector<Mat3> vel_rot(vels.size(), Mat3::Identity());
    for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
        const double t = breaks[k];
        const double dt = breaks[k + 1] - t;
        const std::size_t gi = held(imu, t);
        const std::size_t vi = held(vels, t);
        p += R * vels[vi].velocity * dt;
        vel_rot[vi] = R;
        vel_hold[vi] += dt;
        gyro_hold[gi] += dt;
        R = R * so3_exp(imu[gi].angular_velocity * dt);
    }
    const double gv = std::max(params.gyro_noise, params.min_noise_std);
    Mat3 cov_phi = Mat3::Zero();
    for (double h : gyro_hold) cov_phi += gv * gv * h * h * Mat3::Identity();
    Mat3 cov_p = Mat3::Zero();
    for (std::size_t i = 0; i < vels.size(); ++i) {
        if (vel_hold[i] == 0.0) continue;
        Mat3 cov = vels[i].covariance;
        if (!cov.allFinite() || cov.diagonal().minCoeff() <= 0.0) {
            cov = params.velocity_noise * params.velocity_noise * Mat3::Identity();
        }
        cov_p += vel_hold[i] * vel_hold[i] * vel_rot[i] * cov * vel_rot[i].transpose();
    }
    const Mat3 P = skew(p);
    cov_p += 0.25 * P * cov_phi * P.transpose();

    MotionIncrement inc;
    inc.transform = Pose(R, p);
    inc.t_begin = t_a;
    inc.t_end = t_b;
    inc.source = IncrementSource::Integration;
    const Mat3 Rm = inc.transform.rotation_matrix();
    Mat6 C = Mat6::Zero();
    C.topLeftCorner<3, 3>() = Rm.transpose() * cov_p * Rm;
    C.bottomRightCorner<3, 3>() = cov_phi;
    C = 0.5 * (C + C.transpose());
    C.diagonal().array() += kCovarianceFloor;
    inc.covariance = C;
    return inc;
}

MotionIncrement preintegrate(std::span<const ImuSample> imu, std::span<const EgoVelocity> vels, double t_a,
                             double t_b, const GpParams& params, IntegrationMode mode) {
    if (t_b < t_a) throw SequenceOrderError("preintegration span ends before it begins");
    if (mode == IntegrationMode::Discrete) return discrete_preintegrate(imu, vels, t_a, t_b, params);
    if (t_b == t_a) return identity_increment(t_a, t_b);

    const double span = t_b - t_a;
    const int pieces = std::max(1, static_cast<int>(std::ceil(span / params.max_window - 1e-12)));
    MotionIncrement total = identity_increment(t_a, t_a);
    total.covariance.setZero();
    for (int k = 0; k < pieces; ++k) {
        const double lo = t_a + span * k / pieces;
        const double hi = (k + 1 == pieces) ? t_b : t_a + span * (k + 1) / pieces;
        MotionIncrement piece;
        try {
            piece = gp_window(imu, vels, lo, hi, params);
        } catch (const InsufficientPoints&) {
            piece = discrete_preintegrate(imu, vels, lo, hi, params);
            piece.fallback = true;
        }
        if (piece.fallback) {
            const MotionIncrement zoh = discrete_preintegrate(imu, vels, lo, hi, params);
            piece.transform = zoh.transform;
            piece.covariance = zoh.covariance;
        }
        total.covariance = compose_covariance(total.covariance, piece.transform, piece.covariance);
        total.transform = total.transform * piece.transform;
        total.fallback = total.fallback || piece.fallback;
    }
    total.t_begin = t_a;
    total.t_end = t_b;
    total.source = IncrementSource::Integration;
    return total;
}

}  // namespace rio
