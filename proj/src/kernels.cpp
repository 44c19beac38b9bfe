#include "rio/kernels.hpp"

#include <cassert>
#include <cmath>
#include <limits>

namespace rio {

namespace {

void nearest_one(std::span<const Vec3> targets, const Vec3& q, int& best_idx, double& best_d2) {
    best_idx = -1;
    best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < targets.size(); ++j) {
        const double d2 = (targets[j] - q).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            best_idx = static_cast<int>(j);
        }
    }
}

}  // namespace

void nearest_neighbors(Exec exec, std::span<const Vec3> targets, std::span<const Vec3> queries,
                       std::span<int> index_out, std::span<double> sq_dist_out) {
    assert(index_out.size() == queries.size() && sq_dist_out.size() == queries.size());
    const auto n = static_cast<std::ptrdiff_t>(queries.size());
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            nearest_one(targets, queries[i], index_out[i], sq_dist_out[i]);
        }
    } else {
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            nearest_one(targets, queries[i], index_out[i], sq_dist_out[i]);
        }
    }
}

std::vector<std::vector<int>> radius_neighbors(Exec exec, std::span<const Vec3> points, double eps) {
    const auto n = static_cast<std::ptrdiff_t>(points.size());
    const double eps2 = eps * eps;
    std::vector<std::vector<int>> out(points.size());
    auto one = [&](std::ptrdiff_t i) {
        auto& nb = out[i];
        for (std::ptrdiff_t j = 0; j < n; ++j) {
            if ((points[i] - points[j]).squaredNorm() <= eps2) nb.push_back(static_cast<int>(j));
        }
    };
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic, 16)
        for (std::ptrdiff_t i = 0; i < n; ++i) one(i);
    } else {
        for (std::ptrdiff_t i = 0; i < n; ++i) one(i);
    }
    return out;
}

void count_doppler_inliers(Exec exec, std::span<const Vec3> bearings, std::span<const double> dopplers,
                           std::span<const Vec3> hypotheses, double threshold, std::span<int> counts_out) {
    assert(counts_out.size() == hypotheses.size());
    const auto nh = static_cast<std::ptrdiff_t>(hypotheses.size());
    auto one = [&](std::ptrdiff_t h) {
        int c = 0;
        const Vec3& v = hypotheses[h];
        for (std::size_t i = 0; i < bearings.size(); ++i) {
            if (std::abs(dopplers[i] + bearings[i].dot(v)) <= threshold) ++c;
        }
        counts_out[h] = c;
    };
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t h = 0; h < nh; ++h) one(h);
    } else {
        for (std::ptrdiff_t h = 0; h < nh; ++h) one(h);
    }
}

void plane_mahalanobis_sq(Exec exec, std::span<const Vec3> points, std::span<const Mat3> covariances,
                          const Vec3& normal, double offset, std::span<double> out) {
    assert(points.size() == covariances.size() && out.size() == points.size());
    const auto n = static_cast<std::ptrdiff_t>(points.size());
    auto one = [&](std::ptrdiff_t i) {
        const double r = normal.dot(points[i]) + offset;
        out[i] = r * r / normal.dot(covariances[i] * normal);
    };
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) one(i);
    } else {
        for (std::ptrdiff_t i = 0; i < n; ++i) one(i);
    }
}

}  // namespace rio
