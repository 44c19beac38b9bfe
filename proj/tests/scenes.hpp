#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "ransac_baseline.hpp"
#include "rio/ground.hpp"
#include "rio/posegraph.hpp"
#include "rio/registration.hpp"
#include "rio/rng.hpp"
#include "rio/simulator.hpp"

namespace rio::testing {

inline RadarPoint make_point(const Vec3& p, double sigma) {
    RadarPoint out;
    out.position = p;
    out.covariance = sigma * sigma * Mat3::Identity();
    return out;
}

inline Pose random_transform(Rng& rng, double max_angle_deg, double max_shift) {
    const Vec3 axis = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    const double angle = rng.uniform(0.0, max_angle_deg * std::numbers::pi / 180.0);
    const Vec3 dir = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    return Pose(so3_exp_quat(axis * angle), dir * rng.uniform(0.0, max_shift));
}

inline double pose_error(const Pose& a, const Pose& b) {
    return std::max(translation_distance(a, b), rotation_distance(a, b));
}

/// Structures a few metres apart: vertical poles, a wall and compact blobs.
std::vector<Vec3> structured_scene(Rng& rng, int n_structures = 10, double extent = 15.0) {
    std::vector<Vec3> pts;
    for (int s = 0; s < n_structures; ++s) {
        const Vec3 c(rng.uniform(-extent, extent), rng.uniform(-extent, extent), 0.0);
        const int kind = s % 3;
        for (int i = 0; i < 14; ++i) {
            Vec3 p;
            if (kind == 0) p = c + Vec3(rng.normal(0.0, 0.1), rng.normal(0.0, 0.1), rng.uniform(0.0, 3.0));
            else if (kind == 1) p = c + Vec3(rng.uniform(-2.0, 2.0), rng.normal(0.0, 0.02), rng.uniform(0.0, 2.0));
            else p = c + 0.4 * Vec3(rng.normal(), rng.normal(), rng.normal());
            pts.push_back(p);
        }
    }
    return pts;
}

std::vector<Vec3> positions(const std::vector<RadarPoint>& cloud) {
    std::vector<Vec3> out;
    for (const auto& p : cloud) out.push_back(p.position);
    return out;
}

std::vector<RadarPoint> transformed(const std::vector<RadarPoint>& cloud, const Pose& G) {
    std::vector<RadarPoint> out = cloud;
    const Mat3 R = G.rotation_matrix();
    for (auto& p : out) {
        p.position = G * p.position;
        p.covariance = R * p.covariance * R.transpose();
    }
    return out;
}

std::vector<RadarPoint> cloud_of(const std::vector<Vec3>& pts, double sigma) {
    std::vector<RadarPoint> out;
    for (const auto& p : pts) out.push_back(make_point(p, sigma));
    return out;
}

struct NoisyPair {
    std::vector<RadarPoint> source, target;
    Pose truth;
};

// Structures plus sparse target reflectors. 30% of the source points are
// off-structure returns next to those reflectors, all displaced the same way.
inline NoisyPair corrupted_pair(Rng& rng) {
    NoisyPair out;
    const auto structure = structured_scene(rng, 8);
    std::vector<Vec3> sparse;
    while (sparse.size() < 60) {
        const Vec3 c(rng.uniform(-18, 18), rng.uniform(-18, 18), rng.uniform(0.0, 3.0));
        bool far = true;
        for (const auto& p : structure) far = far && (p - c).norm() > 3.0;
        for (const auto& p : sparse) far = far && (p - c).norm() > 3.0;
        if (far) sparse.push_back(c);
    }
    out.truth = random_transform(rng, 10.0, 1.0);
    const Pose inv = se3_inverse(out.truth);
    for (const auto& p : structure) out.target.push_back(make_point(p, 0.1));
    for (const auto& p : sparse) out.target.push_back(make_point(p, 0.1));
    const double jitter = 0.03;
    for (const auto& p : structure) {
        out.source.push_back(make_point(inv * (p + jitter * Vec3(rng.normal(), rng.normal(), rng.normal())), 0.1));
    }
    const Vec3 bias(0.18, 0.08, 0.0);
    const std::size_t n_noise = structure.size() * 3 / 7;  // 30% of the final source cloud
    for (std::size_t i = 0; i < n_noise; ++i) {
        const Vec3& anchor = sparse[i % sparse.size()];
        out.source.push_back(make_point(inv * (anchor + bias + jitter * Vec3(rng.normal(), rng.normal(), 0.0)), 0.1));
    }
    return out;
}

inline constexpr double kDeg = std::numbers::pi / 180.0;

inline MotionIncrement increment(const Pose& T, double sigma_t = 0.05, double sigma_r = 0.01,
                          IncrementSource src = IncrementSource::Integration) {
    MotionIncrement m;
    m.transform = T;
    m.source = src;
    m.covariance.setZero();
    m.covariance.topLeftCorner<3, 3>() = sigma_t * sigma_t * Mat3::Identity();
    m.covariance.bottomRightCorner<3, 3>() = sigma_r * sigma_r * Mat3::Identity();
    return m;
}

inline Vec6 random_delta(Rng& rng, double st, double sr) {
    Vec6 d;
    for (int i = 0; i < 3; ++i) d(i) = rng.normal(0.0, st);
    for (int i = 3; i < 6; ++i) d(i) = rng.normal(0.0, sr);
    return d;
}

inline Pose random_pose(Rng& rng, double shift, double angle) {
    const Vec3 axis = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    return Pose(so3_exp_quat(axis * rng.uniform(0.0, angle)),
                Vec3(rng.normal(), rng.normal(), rng.normal()) * shift);
}

/// Ground-truth chain: forward motion with gentle yaw and pitch.
std::vector<Pose> truth_chain(Rng& rng, int n) {
    std::vector<Pose> out{Pose::identity()};
    for (int k = 1; k < n; ++k) {
        const Pose step(so3_exp_quat(Vec3(rng.normal(0, 0.01), rng.normal(0, 0.02), rng.normal(0, 0.1))),
                        Vec3(1.0, rng.normal(0, 0.05), rng.normal(0, 0.02)));
        out.push_back(out.back() * step);
    }
    return out;
}

inline double max_pose_gap(const PoseGraph& g, const std::vector<Pose>& ref) {
    double worst = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
        worst = std::max({worst, translation_distance(g.keyframes()[k].pose, ref[k]),
                          rotation_distance(g.keyframes()[k].pose, ref[k])});
    }
    return worst;
}

inline double position_rmse(const PoseGraph& g, const std::vector<Pose>& ref) {
    double s = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
        s += (g.keyframes()[k].pose.translation() - ref[k].translation()).squaredNorm();
    }
    return std::sqrt(s / static_cast<double>(ref.size()));
}

struct NoisyGraph {
    PoseGraph graph;
    std::vector<Pose> truth;
};

inline NoisyGraph noisy_chain(Rng& rng, int n, bool with_registration, double info_scale = 1.0) {
    NoisyGraph out;
    out.truth = truth_chain(rng, n);
    out.graph.add_keyframe(0.0, 0);
    const double st = 0.05, sr = 0.01, st_icp = 0.03, sr_icp = 0.005;
    auto scaled = [&](MotionIncrement m) {
        m.covariance /= info_scale;
        return m;
    };
    for (int k = 1; k < n; ++k) {
        const Pose rel = out.truth[static_cast<std::size_t>(k - 1)].inverse() * out.truth[static_cast<std::size_t>(k)];
        const auto a = scaled(increment(retract(rel, random_delta(rng, st, sr)), st, sr));
        const auto b = scaled(increment(retract(rel, random_delta(rng, st_icp, sr_icp)), st_icp, sr_icp,
                                        IncrementSource::Registration));
        out.graph.add_keyframe(static_cast<double>(k), static_cast<std::size_t>(k), &a,
                               with_registration ? &b : nullptr);
        if (with_registration && k >= 2) {
            const Pose rel2 = out.truth[static_cast<std::size_t>(k - 2)].inverse() * out.truth[static_cast<std::size_t>(k)];
            GraphEdge e = make_edge(k - 2, k, scaled(increment(retract(rel2, random_delta(rng, st_icp, sr_icp)),
                                                               st_icp, sr_icp, IncrementSource::Registration)));
            out.graph.add_edge(e);
        }
    }
    return out;
}

inline Vec3 sample_gaussian(Rng& rng, const Mat3& cov) {
    const Eigen::LLT<Mat3> llt(cov);
    return llt.matrixL() * Vec3(rng.normal(), rng.normal(), rng.normal());
}

inline double normal_angle(const Vec3& a, const Vec3& b) {
    return std::acos(std::clamp(std::abs(a.dot(b)), 0.0, 1.0));
}

inline Vec3 random_tilted_normal(Rng& rng, double max_tilt) {
    const double tilt = rng.uniform(0.0, max_tilt);
    const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return Vec3(std::sin(tilt) * std::cos(dir), std::sin(tilt) * std::sin(dir), std::cos(tilt));
}

// Ground-like plane seen from the origin: points ahead of the sensor on
// n.p + d = 0, offset so the plane passes ~2 m below the sensor.
std::vector<Vec3> plane_points(Rng& rng, const Vec3& n, double d, int count, double max_x = 40.0) {
    std::vector<Vec3> out;
    for (int i = 0; i < count; ++i) {
        const double x = rng.uniform(3.0, max_x);
        const double y = rng.uniform(-0.5 * x, 0.5 * x);
        out.emplace_back(x, y, -(n.x() * x + n.y() * y + d) / n.z());
    }
    return out;
}

struct Scores {
    double precision = 0.0, recall = 0.0, ghost_noise = 0.0, slope_recall = 0.0, baseline_slope_recall = 0.0;
};

inline Scores score_slope_world(const SyntheticSequence& seq, std::size_t stride, bool with_baseline) {
    const CzmConfig cfg;
    std::size_t tp = 0, fp = 0, fn = 0, ghosts = 0, ghost_hit = 0, slope = 0, slope_hit = 0, base_hit = 0;
    Rng rng(97);
    for (std::size_t k = 0; k < seq.scans.size(); k += stride) {
        const auto seg = segment_ground(seq.scans[k], nullptr, cfg);
        std::vector<bool> base;
        if (with_baseline) base = testing::ransac_ground(seq.scans[k], cfg.eps_distance, rng);
        for (std::size_t i = 0; i < seg.labels.size(); ++i) {
            const PointLabel truth = seq.labels[k][i];
            const bool pred = seg.labels[i] == PointLabel::Ground;
            tp += pred && truth == PointLabel::Ground;
            fp += pred && truth != PointLabel::Ground;
            fn += !pred && truth == PointLabel::Ground;
            if (truth == PointLabel::Noise) {
                ++ghosts;
                ghost_hit += seg.labels[i] == PointLabel::Noise;
            }
            if (seq.on_slope[k][i]) {
                ++slope;
                slope_hit += pred;
                if (with_baseline) base_hit += base[i];
            }
        }
    }
    Scores s;
    s.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    s.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    s.ghost_noise = ghosts ? static_cast<double>(ghost_hit) / static_cast<double>(ghosts) : 1.0;
    s.slope_recall = slope ? static_cast<double>(slope_hit) / static_cast<double>(slope) : 1.0;
    s.baseline_slope_recall = slope ? static_cast<double>(base_hit) / static_cast<double>(slope) : 1.0;
    return s;
}

inline double forward_doppler(const Vec3& p, const Vec3& v) { return -p.normalized().dot(v); }

// Random ground point and ego velocity for which the minus root is the true
// height. With |vd| > |vz| that root is the lower intersection of the Doppler
// cone with the vertical through (x, y), which is the ground point whenever its
// depression angle exceeds the descent angle of the velocity.
inline void random_ground_case(Rng& rng, Vec3& p, Vec3& v) {
    for (;;) {
        const double rho = rng.uniform(3.0, 60.0);
        const double az = rng.uniform(-1.0, 1.0);
        p = Vec3(rho * std::cos(az), rho * std::sin(az), -rng.uniform(1.0, 3.0));
        v = Vec3(rng.uniform(1.0, 10.0), rng.normal(0.0, 0.5), rng.normal(0.0, 0.2));
        const double vd = forward_doppler(p, v);
        const double den = vd * vd - v.z() * v.z();
        const double midpoint = (v.x() * p.x() + v.y() * p.y()) * v.z() / den;
        if ((den > 0.0) == (p.z() < midpoint)) return;
    }
}

}  // namespace rio::testing
