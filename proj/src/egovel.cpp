#include "rio/egovel.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "rio/error.hpp"
#include "rio/rng.hpp"

namespace rio {

double static_doppler(const Vec3& position, const Vec3& v) { return -position.normalized().dot(v); }

namespace {

struct Fit {
    Vec3 v;
    Mat3 gram;  // A^T A
};

Fit least_squares(const std::vector<Vec3>& b, const std::vector<double>& d, const std::vector<bool>& mask) {
    Mat3 AtA = Mat3::Zero();
    Vec3 Atd = Vec3::Zero();
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (!mask[i]) continue;
        AtA += b[i] * b[i].transpose();
        Atd -= b[i] * d[i];
    }
    return {AtA.ldlt().solve(Atd), AtA};
}

}  // namespace

EgoVelocity estimate_ego_velocity(const RadarScan& scan, const EgoVelocityParams& params) {
    std::vector<Vec3> bearings;
    std::vector<double> dopplers;
    std::vector<std::size_t> source_index;
    bearings.reserve(scan.points.size());
    for (std::size_t i = 0; i < scan.points.size(); ++i) {
        const Vec3 rel = scan.points[i].position - scan.sensor_origin;
        const double r = rel.norm();
        if (!(r > 0.0) || !std::isfinite(scan.points[i].doppler)) continue;
        bearings.push_back(rel / r);
        dopplers.push_back(scan.points[i].doppler);
        source_index.push_back(i);
    }
    const std::size_t n = bearings.size();
    if (n < 3) {
        throw InsufficientPoints("ego-velocity needs at least 3 points, scan has " + std::to_string(n));
    }

    // Hypotheses are drawn serially so the result does not depend on the execution policy.
    Rng rng(params.seed);
    std::vector<Vec3> hypotheses;
    hypotheses.reserve(static_cast<std::size_t>(params.ransac_iters));
    for (int it = 0; it < params.ransac_iters; ++it) {
        std::array<std::size_t, 3> s{};
        s[0] = rng.uniform_index(n);
        do { s[1] = rng.uniform_index(n); } while (s[1] == s[0]);
        do { s[2] = rng.uniform_index(n); } while (s[2] == s[0] || s[2] == s[1]);
        Mat3 A;
        Vec3 rhs;
        for (int k = 0; k < 3; ++k) {
            A.row(k) = bearings[s[k]].transpose();
            rhs(k) = -dopplers[s[k]];
        }
        const Eigen::FullPivLU<Mat3> lu(A);
        if (std::abs(A.determinant()) < 1e-9 || !lu.isInvertible()) continue;
        hypotheses.push_back(lu.solve(rhs));
    }

    std::vector<bool> mask(n, false);
    if (!hypotheses.empty()) {
        std::vector<int> counts(hypotheses.size());
        count_doppler_inliers(params.exec, bearings, dopplers, hypotheses, params.inlier_threshold, counts);
        const auto best = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        for (std::size_t i = 0; i < n; ++i) {
            mask[i] = std::abs(dopplers[i] + bearings[i].dot(hypotheses[best])) <= params.inlier_threshold;
        }
    } else {
        std::fill(mask.begin(), mask.end(), true);
    }

    auto inlier_count = [&] { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true)); };
    if (inlier_count() < 3) {
        throw InsufficientPoints("ego-velocity consensus has fewer than 3 inliers");
    }

    Fit fit = least_squares(bearings, dopplers, mask);
    for (int round = 0; round < 5; ++round) {
        std::vector<bool> next(n);
        for (std::size_t i = 0; i < n; ++i) {
            next[i] = std::abs(dopplers[i] + bearings[i].dot(fit.v)) <= params.inlier_threshold;
        }
        if (next == mask) break;
        if (std::count(next.begin(), next.end(), true) < 3) break;
        mask = std::move(next);
        fit = least_squares(bearings, dopplers, mask);
    }

    const Eigen::SelfAdjointEigenSolver<Mat3> es(fit.gram, Eigen::EigenvaluesOnly);
    const double lmax = es.eigenvalues()(2);
    if (lmax <= 0.0 || es.eigenvalues()(0) < params.min_eigen_ratio * lmax) {
        throw DegenerateGeometry("inlier bearings do not span 3D; velocity unobservable along one axis");
    }

    EgoVelocity out;
    out.timestamp = scan.timestamp;
    out.velocity = fit.v;
    const Mat3 cov = params.sigma_doppler * params.sigma_doppler * fit.gram.inverse();
    out.covariance = 0.5 * (cov + cov.transpose());
    out.inlier_mask.assign(scan.points.size(), false);
    for (std::size_t i = 0; i < n; ++i) out.inlier_mask[source_index[i]] = mask[i];
    return out;
}

}  // namespace rio
