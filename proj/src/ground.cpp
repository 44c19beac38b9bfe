#include "rio/ground.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "rio/error.hpp"

namespace rio {

Mat3 point_covariance(const Vec3& p, const SensorNoise& noise) {
    const double r = p.norm();
    const double rho = std::hypot(p.x(), p.y());
    const double az = std::atan2(p.y(), p.x());
    const double el = std::atan2(p.z(), rho);
    const double ca = std::cos(az), sa = std::sin(az), ce = std::cos(el), se = std::sin(el);
    Mat3 J;
    // columns: d/dr, d/daz, d/del of (r ce ca, r ce sa, r se)
    J << ce * ca, -r * ce * sa, -r * se * ca,
         ce * sa,  r * ce * ca, -r * se * sa,
         se,       0.0,          r * ce;
    const Vec3 var(noise.sigma_range * noise.sigma_range, noise.sigma_azimuth * noise.sigma_azimuth,
                   noise.sigma_elevation * noise.sigma_elevation);
    const Mat3 S = J * var.asDiagonal() * J.transpose();
    return 0.5 * (S + S.transpose());
}

RadarScan radius_filter(const RadarScan& scan, double min_r, double max_r) {
    RadarScan out;
    out.timestamp = scan.timestamp;
    out.sensor_origin = scan.sensor_origin;
    out.points.reserve(scan.points.size());
    for (const auto& pt : scan.points) {
        const double r = pt.position.norm();
        if (r >= min_r && r <= max_r) out.points.push_back(pt);
    }
    return out;
}

double mahalanobis_to_plane(const Vec3& p, const Mat3& cov, const Vec3& normal, double offset) {
    const double r = normal.dot(p) + offset;
    return std::abs(r) / std::sqrt(normal.dot(cov * normal));
}

namespace {

struct Scatter {
    Vec3 mean;
    Mat3 cov;
};

Scatter scatter_of(std::span<const Vec3> pts) {
    Vec3 mean = Vec3::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    Mat3 C = Mat3::Zero();
    for (const auto& p : pts) C += (p - mean) * (p - mean).transpose();
    C /= static_cast<double>(pts.size());
    return {mean, C};
}

void orient_up(PlaneModel& m) {
    if (m.normal.z() < 0.0) {
        m.normal = -m.normal;
        m.offset = -m.offset;
    }
}

double plane_cost(std::span<const Vec3> pts, std::span<const Mat3> covs, const Vec3& n, double d) {
    double c = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double r = n.dot(pts[i]) + d;
        c += r * r / n.dot(covs[i] * n);
    }
    return c;
}

}  // namespace

void plane_tangent_basis(const Vec3& n, Vec3& u, Vec3& w) {
    const Vec3 a = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    u = a.cross(n).normalized();
    w = n.cross(u);
}

void plane_residuals(std::span<const Vec3> points, std::span<const Mat3> covariances, const Vec3& n,
                     double d, Eigen::VectorXd& f, Eigen::MatrixX3d* J) {
    const auto m = static_cast<Eigen::Index>(points.size());
    f.resize(m);
    Vec3 u, w;
    if (J) {
        J->resize(m, 3);
        plane_tangent_basis(n, u, w);
    }
    for (Eigen::Index i = 0; i < m; ++i) {
        const Vec3& p = points[i];
        const Vec3 Sn = covariances[i] * n;
        const double inv_sqrt = 1.0 / std::sqrt(n.dot(Sn));
        const double r = n.dot(p) + d;
        f(i) = r * inv_sqrt;
        if (J) {
            const Vec3 df_dn = p * inv_sqrt - r * inv_sqrt * inv_sqrt * inv_sqrt * Sn;
            J->row(i) << df_dn.dot(-w), df_dn.dot(u), inv_sqrt;
        }
    }
}

PlaneModel fit_plane_pca(std::span<const Vec3> points) {
    if (points.size() < 3) throw DegenerateFit("plane fit needs at least 3 points");
    const Scatter s = scatter_of(points);
    const Eigen::SelfAdjointEigenSolver<Mat3> es(s.cov);
    const Vec3 ev = es.eigenvalues();
    if (ev(2) <= 0.0 || ev(1) <= 1e-12 * ev(2)) throw DegenerateFit("points are collinear or coincident");
    PlaneModel m;
    m.normal = es.eigenvectors().col(0).normalized();
    m.offset = -m.normal.dot(s.mean);
    m.scatter = s.cov;
    orient_up(m);
    m.flatness = m.normal.dot(s.cov * m.normal);
    m.converged = true;
    return m;
}

PlaneModel fit_plane_mahalanobis(std::span<const Vec3> points, std::span<const Mat3> covariances,
                                 const PlaneFitOptions& options) {
    const PlaneModel seed = fit_plane_pca(points);
    return fit_plane_mahalanobis(points, covariances, seed.normal, seed.offset, options);
}

PlaneModel fit_plane_mahalanobis(std::span<const Vec3> points, std::span<const Mat3> covariances,
                                 const Vec3& normal0, double offset0, const PlaneFitOptions& options) {
    if (points.size() != covariances.size()) throw DegenerateFit("points and covariances differ in length");
    if (points.size() < 3) throw DegenerateFit("plane fit needs at least 3 points");
    const Scatter s = scatter_of(points);
    {
        const Eigen::SelfAdjointEigenSolver<Mat3> es(s.cov, Eigen::EigenvaluesOnly);
        const Vec3 ev = es.eigenvalues();
        if (ev(2) <= 0.0 || ev(1) <= 1e-12 * ev(2)) throw DegenerateFit("points are collinear or coincident");
    }

    Vec3 n = normal0.normalized();
    double d = offset0;
    double cost = plane_cost(points, covariances, n, d);
    PlaneModel m;
    int it = 0;
    for (; it < options.max_iterations; ++it) {
        Vec3 u, w;
        plane_tangent_basis(n, u, w);
        Eigen::VectorXd f;
        Eigen::MatrixX3d J;
        plane_residuals(points, covariances, n, d, f, &J);
        const Eigen::Matrix3d H = J.transpose() * J;
        const Eigen::Vector3d g = J.transpose() * f;
        const Eigen::Vector3d step = -H.ldlt().solve(g);
        if (!step.allFinite()) break;

        // Step halving keeps the objective non-increasing.
        double scale = 1.0;
        bool accepted = false;
        Vec3 n_new = n;
        double d_new = d;
        for (int k = 0; k < 30; ++k) {
            const Vec3 axis = scale * (step(0) * u + step(1) * w);
            n_new = (so3_exp(axis) * n).normalized();
            d_new = d + scale * step(2);
            const double c_new = plane_cost(points, covariances, n_new, d_new);
            if (c_new <= cost) {
                cost = c_new;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if (!accepted) {
            m.converged = true;
            break;
        }
        n = n_new;
        d = d_new;
        if ((scale * step).norm() < options.step_tolerance) {
            m.converged = true;
            ++it;
            break;
        }
    }
    m.normal = n;
    m.offset = d;
    m.scatter = s.cov;
    m.iterations = it;
    orient_up(m);
    m.flatness = std::max(0.0, m.normal.dot(s.cov * m.normal));
    return m;
}

void CzmConfig::validate() const {
    const auto nz = rings.size();
    if (nz == 0) throw ConfigError("ground: at least one zone required");
    if (sectors.size() != nz || zone_edges.size() != nz + 1) {
        throw ConfigError("ground: zone_edges must have num_zones+1 entries and rings/sectors num_zones entries");
    }
    double prev_width = 0.0;
    for (std::size_t z = 0; z < nz; ++z) {
        if (rings[z] <= 0 || sectors[z] <= 0) throw ConfigError("ground: ring and sector counts must be positive");
        const double width = (zone_edges[z + 1] - zone_edges[z]) / rings[z];
        if (!(width > prev_width)) throw ConfigError("ground: ring widths must strictly increase with distance");
        prev_width = width;
    }
    if (!(zone_edges.front() >= 0.0)) throw ConfigError("ground: zone edges must be non-negative");
    if (!(sensor_height > 0.0) || !(eps_distance > 0.0) || !(eps_flatness > 0.0)) {
        throw ConfigError("ground: sensor_height, eps_distance and eps_flatness must be positive");
    }
    if (max_iterations <= 0) throw ConfigError("ground: max_iterations must be positive");
    if (!(fov_deg > 0.0 && fov_deg <= 360.0)) throw ConfigError("ground: fov_deg must lie in (0, 360]");
    if (!(max_range > 0.0)) throw ConfigError("ground: max_range must be positive");
    if (below_margin_sigma < 0.0) throw ConfigError("ground: below_margin_sigma must be >= 0");
}

namespace {

struct PatchWork {
    std::vector<std::size_t> members;
    PatchReport report;
    std::vector<std::size_t> ground, rest, noise;
};

void process_patch(const RadarScan& scan, const CzmConfig& cfg, PatchWork& w) {
    auto& rep = w.report;
    rep.size = w.members.size();
    if (static_cast<int>(w.members.size()) <= cfg.min_points) {
        w.rest = w.members;
        return;
    }

    std::vector<std::size_t> seeds, others;
    for (auto i : w.members) {
        (scan.points[i].position.z() < -0.5 * cfg.sensor_height ? seeds : others).push_back(i);
    }
    if (seeds.size() < 3) {
        w.rest = w.members;
        return;
    }

    auto gather = [&](const std::vector<std::size_t>& idx, std::vector<Vec3>& pts, std::vector<Mat3>& covs) {
        pts.clear();
        covs.clear();
        for (auto i : idx) {
            pts.push_back(scan.points[i].position);
            covs.push_back(scan.points[i].covariance);
        }
    };
    auto dm = [&](std::size_t i, const PlaneModel& pl) {
        return mahalanobis_to_plane(scan.points[i].position, scan.points[i].covariance, pl.normal, pl.offset);
    };

    // Seed screening: start from a level plane through the median seed height
    // and keep the seeds that agree with the fitted plane.
    std::vector<double> zs;
    for (auto i : seeds) zs.push_back(scan.points[i].position.z());
    std::nth_element(zs.begin(), zs.begin() + static_cast<std::ptrdiff_t>(zs.size() / 2), zs.end());
    PlaneModel plane;
    plane.normal = Vec3::UnitZ();
    plane.offset = -zs[zs.size() / 2];

    std::vector<Vec3> pts;
    std::vector<Mat3> covs;
    std::vector<std::size_t> ground;
    bool have_plane = false;
    for (int round = 0; round < 10; ++round) {
        std::vector<std::size_t> kept;
        for (auto i : seeds) {
            if (dm(i, plane) < cfg.eps_distance) kept.push_back(i);
        }
        if (kept.size() < 3) break;
        if (have_plane && kept == ground) break;
        gather(kept, pts, covs);
        try {
            plane = fit_plane_mahalanobis(pts, covs, plane.normal, plane.offset);
        } catch (const DegenerateFit&) {
            break;
        }
        ground = std::move(kept);
        have_plane = true;
    }
    if (!have_plane) {
        w.rest = w.members;
        return;
    }
    std::vector<std::size_t> rest;
    for (auto i : w.members) {
        if (!std::binary_search(ground.begin(), ground.end(), i)) rest.push_back(i);
    }

    rep.fitted = true;
    for (int it = 0; it < cfg.max_iterations; ++it) {
        gather(ground, pts, covs);
        try {
            plane = fit_plane_mahalanobis(pts, covs, plane.normal, plane.offset);
        } catch (const DegenerateFit&) {
            break;
        }
        std::vector<std::size_t> still;
        for (auto i : rest) {
            if (dm(i, plane) < cfg.eps_distance) {
                ground.push_back(i);
            } else {
                still.push_back(i);
            }
        }
        rest = std::move(still);
        std::sort(ground.begin(), ground.end());
        gather(ground, pts, covs);
        const Scatter s = scatter_of(pts);
        plane.scatter = s.cov;
        plane.flatness = std::max(0.0, plane.normal.dot(s.cov * plane.normal));
        rep.iterations = it + 1;
        rep.ground_size_history.push_back(ground.size());
        if (plane.flatness < cfg.eps_flatness) {
            rep.converged = true;
            break;
        }
    }

    // Points that drifted away from the final plane leave the ground set.
    std::vector<std::size_t> final_ground;
    for (auto i : ground) {
        if (dm(i, plane) <= cfg.eps_distance) {
            final_ground.push_back(i);
        } else {
            rest.push_back(i);
        }
    }
    std::sort(rest.begin(), rest.end());
    rep.plane = plane;
    w.ground = std::move(final_ground);
    for (auto i : rest) {
        const auto& pt = scan.points[i];
        const double sd = plane.signed_distance(pt.position);
        const double sigma = std::sqrt(plane.normal.dot(pt.covariance * plane.normal));
        if (sd < -cfg.below_margin_sigma * sigma && sd < 0.0) {
            w.noise.push_back(i);
        } else {
            w.rest.push_back(i);
        }
    }
}

}  // namespace

GroundSegmentation segment_ground(const RadarScan& scan, const EgoVelocity* ego, const CzmConfig& cfg) {
    cfg.validate();
    const int nz = cfg.num_zones();
    std::vector<int> zone_offset(static_cast<std::size_t>(nz) + 1, 0);
    for (int z = 0; z < nz; ++z) zone_offset[z + 1] = zone_offset[z] + cfg.rings[z] * cfg.sectors[z];
    std::vector<PatchWork> work(static_cast<std::size_t>(zone_offset[nz]));
    for (int z = 0; z < nz; ++z) {
        for (int r = 0; r < cfg.rings[z]; ++r) {
            for (int s = 0; s < cfg.sectors[z]; ++s) {
                auto& rep = work[zone_offset[z] + r * cfg.sectors[z] + s].report;
                rep.zone = z;
                rep.ring = r;
                rep.sector = s;
            }
        }
    }

    GroundSegmentation out;
    const std::size_t n = scan.points.size();
    out.labels.assign(n, PointLabel::Static);
    out.patch_of_point.assign(n, -1);
    const double fov = cfg.fov_deg * std::numbers::pi / 180.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& p = scan.points[i].position;
        const double rho = std::hypot(p.x(), p.y());
        if (rho < cfg.zone_edges.front() || rho >= cfg.zone_edges.back() || p.norm() > cfg.max_range) continue;
        const int z = static_cast<int>(std::upper_bound(cfg.zone_edges.begin(), cfg.zone_edges.end(), rho) -
                                       cfg.zone_edges.begin()) - 1;
        const double width = (cfg.zone_edges[z + 1] - cfg.zone_edges[z]) / cfg.rings[z];
        const int ring = std::min(cfg.rings[z] - 1, static_cast<int>((rho - cfg.zone_edges[z]) / width));
        double az = std::atan2(p.y(), p.x());
        double frac;
        if (cfg.fov_deg >= 360.0) {
            if (az < 0.0) az += 2.0 * std::numbers::pi;
            frac = az / (2.0 * std::numbers::pi);
        } else {
            frac = (az + 0.5 * fov) / fov;
            if (frac < 0.0 || frac >= 1.0) continue;
        }
        const int sector = std::min(cfg.sectors[z] - 1, static_cast<int>(frac * cfg.sectors[z]));
        const int patch = zone_offset[z] + ring * cfg.sectors[z] + sector;
        work[patch].members.push_back(i);
        out.patch_of_point[i] = patch;
    }

    const auto np = static_cast<std::ptrdiff_t>(work.size());
    if (cfg.exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic, 1)
        for (std::ptrdiff_t k = 0; k < np; ++k) process_patch(scan, cfg, work[k]);
    } else {
        for (std::ptrdiff_t k = 0; k < np; ++k) process_patch(scan, cfg, work[k]);
    }

    for (auto& w : work) {
        for (auto i : w.ground) out.labels[i] = PointLabel::Ground;
        for (auto i : w.noise) out.labels[i] = PointLabel::Noise;
        out.patches.push_back(std::move(w.report));
    }
    for (std::size_t i = 0; i < n; ++i) {
        switch (out.labels[i]) {
            case PointLabel::Ground: out.ground.push_back(i); break;
            case PointLabel::Noise: out.noise.push_back(i); break;
            default: out.static_points.push_back(i); break;
        }
    }

    out.refined_ground_z.reserve(out.ground.size());
    for (auto i : out.ground) {
        const auto& pt = scan.points[i];
        if (ego != nullptr) {
            out.refined_ground_z.push_back(refine_height(pt.position, pt.doppler, ego->velocity).z);
        } else {
            out.refined_ground_z.push_back(pt.position.z());
        }
    }
    return out;
}

HeightRefinement refine_height(const Vec3& point, double doppler, const Vec3& v) {
    HeightRefinement out;
    out.z = point.z();
    const double x = point.x(), y = point.y();
    const double vd2 = doppler * doppler;
    const double vz = v.z();
    const double den = vd2 - vz * vz;
    const double vxy = v.x() * x + v.y() * y;
    const double rho2 = x * x + y * y;
    const double scale = std::max(vd2, vz * vz);
    if (!(std::abs(den) > 1e-9 * std::max(scale, 1e-12)) || scale < 1e-12) {
        out.status = HeightStatus::NearSingularDenominator;
        return out;
    }
    const double disc = vxy * vxy * vd2 - den * rho2 * vd2;
    if (disc < 0.0) {
        out.status = HeightStatus::NegativeDiscriminant;
        return out;
    }
    const double sq = std::sqrt(disc);
    const double z_minus = (vxy * vz - sq) / den;
    const double z_plus = (vxy * vz + sq) / den;
    out.plus_root_closer = std::abs(z_plus - point.z()) < std::abs(z_minus - point.z());
    out.z = z_minus;
    return out;
}

}  // namespace rio
