#include "rio/simulator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "rio/error.hpp"
#include "rio/egovel.hpp"
#include "rio/rng.hpp"

namespace rio {

namespace {

constexpr double kPi = std::numbers::pi;

double softplus(double u) { return u > 30.0 ? u : std::log1p(std::exp(u)); }

double deg2rad(double d) { return d * kPi / 180.0; }

// Gerono lemniscate (sin u, sin u cos u) and its derivative.
Eigen::Vector2d lemniscate(double u) { return {std::sin(u), std::sin(u) * std::cos(u)}; }
Eigen::Vector2d lemniscate_d(double u) { return {std::cos(u), std::cos(2.0 * u)}; }

// Five-point Gauss-Legendre arc length of the unit curve on [a, b].
double arc_length(double a, double b) {
    static constexpr std::array<double, 5> x{0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640,
                                             0.9061798459386640};
    static constexpr std::array<double, 5> w{0.5688888888888889, 0.4786286704993665, 0.4786286704993665,
                                             0.2369268850561891, 0.2369268850561891};
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    double s = 0.0;
    for (int i = 0; i < 5; ++i) s += w[i] * lemniscate_d(c + h * x[i]).norm();
    return s * h;
}

constexpr int kTableSize = 4096;

}  // namespace

double Terrain::height(double x, double y) const {
    switch (profile) {
        case GroundProfile::Flat:
            return 0.0;
        case GroundProfile::Slope: {
            const double w = ramp_softness;
            return std::tan(deg2rad(slope_deg)) * w *
                   (softplus((x - ramp_start) / w) - softplus((x - ramp_end) / w));
        }
        case GroundProfile::Hill: {
            const double k = 2.0 * kPi / hill_wavelength;
            return hill_amplitude * std::sin(k * x) * std::cos(k * y);
        }
    }
    return 0.0;
}

Vec3 Terrain::normal(double x, double y) const {
    constexpr double h = 1e-5;
    const double gx = (height(x + h, y) - height(x - h, y)) / (2.0 * h);
    const double gy = (height(x, y + h) - height(x, y - h)) / (2.0 * h);
    return Vec3(-gx, -gy, 1.0).normalized();
}

void SyntheticWorldConfig::validate() const {
    if (!(path_length > 0.0)) throw ConfigError("sim: path_length must be positive");
    if (!(speed >= 0.0)) throw ConfigError("sim: speed must be >= 0");
    if (!(duration >= 0.0)) throw ConfigError("sim: duration must be >= 0");
    if (speed == 0.0 && duration == 0.0) throw ConfigError("sim: a stationary run needs an explicit duration");
    if (!(radar_rate > 0.0) || !(imu_rate > 0.0)) throw ConfigError("sim: rates must be positive");
    if (!(jitter >= 0.0)) throw ConfigError("sim: jitter must be >= 0");
    if (!(jitter < 0.5 / std::max(radar_rate, imu_rate))) {
        throw ConfigError("sim: jitter must stay below half the fastest sample period");
    }
    if (!(multipath_fraction >= 0.0 && multipath_fraction <= 1.0)) {
        throw ConfigError("sim: multipath_fraction must lie in [0, 1]");
    }
    if (!(detection_probability >= 0.0 && detection_probability <= 1.0)) {
        throw ConfigError("sim: detection_probability must lie in [0, 1]");
    }
    for (double s : {sigma_range, sigma_azimuth, sigma_elevation, sigma_doppler, sigma_gyro}) {
        if (!(s >= 0.0)) throw ConfigError("sim: noise standard deviations must be >= 0");
    }
    if (dynamic_objects < 0 || landmarks < 0 || ground_points < 0) throw ConfigError("sim: counts must be >= 0");
    if (!(min_range > 0.0 && max_range > min_range)) throw ConfigError("sim: need 0 < min_range < max_range");
    if (!(scatterer_min_height >= 0.0)) throw ConfigError("sim: scatterer_min_height must be >= 0");
    if (!(sensor_height > 0.0)) throw ConfigError("sim: sensor_height must be positive");
    if (!(fov_azimuth_deg > 0.0 && fov_azimuth_deg <= 360.0) || !(fov_elevation_deg > 0.0 && fov_elevation_deg < 180.0)) {
        throw ConfigError("sim: invalid field of view");
    }
}

FigureEightMotion::FigureEightMotion(const SyntheticWorldConfig& cfg) : cfg_(cfg) {
    u_table_.resize(kTableSize + 1);
    s_table_.resize(kTableSize + 1);
    s_table_[0] = 0.0;
    for (int i = 0; i <= kTableSize; ++i) u_table_[i] = 2.0 * kPi * i / kTableSize;
    for (int i = 1; i <= kTableSize; ++i) s_table_[i] = s_table_[i - 1] + arc_length(u_table_[i - 1], u_table_[i]);
    scale_ = cfg.path_length / s_table_.back();
}

void FigureEightMotion::path_point(double s, Eigen::Vector2d& xy, Eigen::Vector2d& tangent) const {
    const double total = s_table_.back();
    double su = std::fmod(s / scale_, total);
    if (su < 0.0) su += total;
    auto it = std::upper_bound(s_table_.begin(), s_table_.end(), su);
    const auto k = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(it - s_table_.begin() - 1, 0, kTableSize - 1));
    // Newton on the exact arc length from the table node.
    double u = u_table_[k] + (su - s_table_[k]) / std::max(lemniscate_d(u_table_[k]).norm(), 1e-9);
    for (int i = 0; i < 4; ++i) {
        const double f = s_table_[k] + arc_length(u_table_[k], u) - su;
        u -= f / lemniscate_d(u).norm();
    }
    xy = scale_ * lemniscate(u);
    tangent = lemniscate_d(u).normalized();
}

Pose FigureEightMotion::pose(double t) const {
    Eigen::Vector2d xy, tan;
    path_point(cfg_.speed * t, xy, tan);
    const Vec3 n = cfg_.terrain.normal(xy.x(), xy.y());
    const Vec3 fwd(tan.x(), tan.y(), 0.0);
    const Vec3 xb = (fwd - fwd.dot(n) * n).normalized();
    const Vec3 yb = n.cross(xb);
    Mat3 R;
    R.col(0) = xb;
    R.col(1) = yb;
    R.col(2) = n;
    const Vec3 p = Vec3(xy.x(), xy.y(), cfg_.terrain.height(xy.x(), xy.y())) + cfg_.sensor_height * n;
    return Pose(R, p);
}

Vec3 FigureEightMotion::angular_velocity(double t) const {
    constexpr double h = 1e-4;
    const Pose a = pose(t - h), b = pose(t + h);
    return so3_log(a.rotation().conjugate() * b.rotation()) / (2.0 * h);
}

Vec3 FigureEightMotion::world_velocity(double t) const {
    constexpr double h = 1e-4;
    return (pose(t + h).translation() - pose(t - h).translation()) / (2.0 * h);
}

Vec3 FigureEightMotion::body_velocity(double t) const {
    return pose(t).rotation().conjugate() * world_velocity(t);
}

namespace {

struct DynamicObject {
    Eigen::Vector2d center;
    Eigen::Vector2d dir;
    double amplitude, period, phase;
    std::vector<Vec3> offsets;  // relative to the object origin on the ground

    Eigen::Vector2d position(double t) const {
        return center + dir * amplitude * std::sin(2.0 * kPi * t / period + phase);
    }
    Eigen::Vector2d velocity(double t) const {
        return dir * amplitude * (2.0 * kPi / period) * std::cos(2.0 * kPi * t / period + phase);
    }
};

struct Sensor {
    const SyntheticWorldConfig& cfg;
    SensorNoise model;

    bool in_fov(const Vec3& p) const {
        const double r = p.norm();
        if (r < cfg.min_range || r > cfg.max_range) return false;
        const double az = std::atan2(p.y(), p.x());
        const double el = std::atan2(p.z(), std::hypot(p.x(), p.y()));
        return std::abs(az) <= 0.5 * deg2rad(cfg.fov_azimuth_deg) && std::abs(el) <= 0.5 * deg2rad(cfg.fov_elevation_deg);
    }

    RadarPoint measure(const Vec3& p_true, double doppler_true, Rng& rng) const {
        const double r = p_true.norm();
        const double az = std::atan2(p_true.y(), p_true.x());
        const double el = std::atan2(p_true.z(), std::hypot(p_true.x(), p_true.y()));
        const double rn = r + rng.normal(0.0, cfg.sigma_range);
        const double azn = az + rng.normal(0.0, cfg.sigma_azimuth);
        const double eln = el + rng.normal(0.0, cfg.sigma_elevation);
        RadarPoint pt;
        pt.position = rn * Vec3(std::cos(eln) * std::cos(azn), std::cos(eln) * std::sin(azn), std::sin(eln));
        pt.doppler = doppler_true + rng.normal(0.0, cfg.sigma_doppler);
        pt.power = 10.0 + 30.0 * rng.uniform();
        pt.covariance = point_covariance(pt.position, model);
        return pt;
    }
};

}  // namespace

SyntheticSequence generate_synthetic(const SyntheticWorldConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const FigureEightMotion motion(cfg);
    const double T = motion.duration();
    const Terrain& terrain = cfg.terrain;

    // Path samples for keeping landmarks off the road.
    std::vector<Eigen::Vector2d> path;
    for (int i = 0; i < 400; ++i) {
        Eigen::Vector2d xy, tan;
        motion.path_point(cfg.path_length * i / 400.0, xy, tan);
        path.push_back(xy);
    }
    auto clearance = [&](const Eigen::Vector2d& q) {
        double best = 1e300;
        for (const auto& p : path) best = std::min(best, (p - q).norm());
        return best;
    };
    auto ground_at = [&](const Eigen::Vector2d& q) { return terrain.height(q.x(), q.y()); };

    // Persistent scatterers of static landmarks.
    std::vector<Vec3> scatterers;
    for (int l = 0; l < cfg.landmarks; ++l) {
        Eigen::Vector2d c;
        for (int attempt = 0; attempt < 50; ++attempt) {
            Eigen::Vector2d xy, tan;
            motion.path_point(rng.uniform(0.0, cfg.path_length), xy, tan);
            const Eigen::Vector2d side(-tan.y(), tan.x());
            const double offset = rng.uniform(4.0, 18.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
            c = xy + offset * side;
            if (clearance(c) >= 3.0) break;
        }
        const double kind = rng.uniform();
        const double height = rng.uniform(1.5, 4.0);
        if (kind < 0.4) {  // pole
            const int n = 8 + static_cast<int>(rng.uniform_index(5));
            for (int k = 0; k < n; ++k) {
                const Eigen::Vector2d q = c + Eigen::Vector2d(rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15));
                scatterers.emplace_back(q.x(), q.y(), ground_at(c) + rng.uniform(cfg.scatterer_min_height, height));
            }
        } else if (kind < 0.75) {  // box
            const double a = rng.uniform(1.5, 3.0), b = rng.uniform(1.5, 3.0);
            const double yaw = rng.uniform(0.0, kPi);
            const Eigen::Vector2d ex(std::cos(yaw), std::sin(yaw)), ey(-std::sin(yaw), std::cos(yaw));
            const int n = 15 + static_cast<int>(rng.uniform_index(11));
            for (int k = 0; k < n; ++k) {
                const int face = static_cast<int>(rng.uniform_index(4));
                const double u = rng.uniform(-0.5, 0.5);
                Eigen::Vector2d local = face < 2 ? Eigen::Vector2d(u * a, (face == 0 ? 0.5 : -0.5) * b)
                                                 : Eigen::Vector2d((face == 2 ? 0.5 : -0.5) * a, u * b);
                const Eigen::Vector2d q = c + local.x() * ex + local.y() * ey;
                scatterers.emplace_back(q.x(), q.y(), ground_at(c) + rng.uniform(cfg.scatterer_min_height, height));
            }
        } else {  // wall
            const double len = rng.uniform(5.0, 10.0);
            const double yaw = rng.uniform(0.0, kPi);
            const Eigen::Vector2d ex(std::cos(yaw), std::sin(yaw));
            const int n = 20 + static_cast<int>(rng.uniform_index(11));
            for (int k = 0; k < n; ++k) {
                const Eigen::Vector2d q = c + rng.uniform(-0.5, 0.5) * len * ex;
                scatterers.emplace_back(q.x(), q.y(), ground_at(q) + rng.uniform(cfg.scatterer_min_height, height));
            }
        }
    }

    std::vector<DynamicObject> objects;
    for (int d = 0; d < cfg.dynamic_objects; ++d) {
        DynamicObject o;
        Eigen::Vector2d xy, tan;
        motion.path_point(rng.uniform(0.0, cfg.path_length), xy, tan);
        const Eigen::Vector2d side(-tan.y(), tan.x());
        o.center = xy + rng.uniform(3.0, 10.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0) * side;
        const double heading = rng.uniform(0.0, 2.0 * kPi);
        o.dir = Eigen::Vector2d(std::cos(heading), std::sin(heading));
        o.amplitude = rng.uniform(5.0, 10.0);
        o.period = rng.uniform(6.0, 12.0);
        o.phase = rng.uniform(0.0, 2.0 * kPi);
        for (int k = 0; k < 12; ++k) {
            o.offsets.emplace_back(rng.uniform(-1.0, 1.0), rng.uniform(-0.75, 0.75), rng.uniform(0.3, 1.5));
        }
        objects.push_back(std::move(o));
    }

    SyntheticSequence seq;

    // Independent clock phases.
    const double radar_phase = rng.uniform(0.0, 1.0 / cfg.radar_rate);
    const double imu_phase = rng.uniform(0.0, 1.0 / cfg.imu_rate);
    std::vector<double> radar_times;
    for (int k = 0;; ++k) {
        const double t = radar_phase + k / cfg.radar_rate + rng.uniform(-cfg.jitter, cfg.jitter);
        if (t > T) break;
        radar_times.push_back(std::max(t, 0.0));
    }
    const double imu_lead = 0.05;
    const int lead = static_cast<int>(std::ceil(imu_lead * cfg.imu_rate));
    for (int m = -lead;; ++m) {
        const double t = imu_phase + m / cfg.imu_rate + rng.uniform(-cfg.jitter, cfg.jitter);
        if (t > T + imu_lead) break;
        const Pose P = motion.pose(t);
        constexpr double h = 1e-3;
        const Vec3 acc = (motion.world_velocity(t + h) - motion.world_velocity(t - h)) / (2.0 * h);
        ImuSample s;
        s.timestamp = t;
        s.angular_velocity = motion.angular_velocity(t);
        for (int a = 0; a < 3; ++a) s.angular_velocity(a) += rng.normal(0.0, cfg.sigma_gyro);
        s.linear_acceleration = P.rotation().conjugate() * (acc + Vec3(0.0, 0.0, 9.81));
        seq.imu.push_back(s);
    }

    // Covariances follow the configured noise, floored so noise-free runs stay well posed.
    const Sensor sensor{cfg, SensorNoise{std::max(cfg.sigma_range, 0.01), std::max(cfg.sigma_azimuth, 1e-3),
                                         std::max(cfg.sigma_elevation, 1e-3)}};
    const double tan_slope = std::tan(deg2rad(terrain.slope_deg));
    const double half_az = 0.5 * deg2rad(cfg.fov_azimuth_deg);

    for (double t : radar_times) {
        const Pose P = motion.pose(t);
        const Pose Pinv = P.inverse();
        const Mat3 Rt = P.rotation_matrix().transpose();
        const Vec3 v = motion.body_velocity(t);
        RadarScan scan;
        scan.timestamp = t;
        std::vector<PointLabel> labels;
        std::vector<bool> slope;

        auto add_ghost = [&](const Vec3& world, double doppler) {
            if (!rng.bernoulli(cfg.multipath_fraction)) return;
            const Vec3 g(world.x(), world.y(), terrain.height(world.x(), world.y()));
            const Vec3 n = terrain.normal(world.x(), world.y());
            Vec3 mirrored = world - 2.0 * (world - g).dot(n) * n;
            for (int a = 0; a < 3; ++a) mirrored(a) += rng.normal(0.0, 0.05);
            // The apparent bearing of a ground-bounce ghost is that of the bounce
            // point, so it is only reported inside the field of view.
            const Vec3 pb = Pinv * mirrored;
            if (!sensor.in_fov(pb)) return;
            scan.points.push_back(sensor.measure(pb, doppler, rng));
            labels.push_back(PointLabel::Noise);
            slope.push_back(false);
        };

        int accepted = 0;
        for (int attempt = 0; attempt < 4 * cfg.ground_points && accepted < cfg.ground_points; ++attempt) {
            const double az = rng.uniform(-half_az, half_az);
            const double rho = rng.uniform(2.0, cfg.max_range);
            const Vec3 dw = P.rotation() * Vec3(std::cos(az), std::sin(az), 0.0);
            const Eigen::Vector2d dh = Eigen::Vector2d(dw.x(), dw.y()).normalized();
            const Eigen::Vector2d q = P.translation().head<2>() + rho * dh;
            const Vec3 world(q.x(), q.y(), ground_at(q));
            const Vec3 pb = Pinv * world;
            if (!sensor.in_fov(pb)) continue;
            ++accepted;
            scan.points.push_back(sensor.measure(pb, static_doppler(pb, v), rng));
            labels.push_back(PointLabel::Ground);
            const Vec3 n = terrain.normal(q.x(), q.y());
            slope.push_back(terrain.profile == GroundProfile::Slope && std::sqrt(1.0 - n.z() * n.z()) / n.z() > 0.5 * tan_slope);
        }

        for (const auto& s : scatterers) {
            const Vec3 pb = Pinv * s;
            if (!sensor.in_fov(pb)) continue;
            if (!rng.bernoulli(cfg.detection_probability)) continue;
            const double d = static_doppler(pb, v);
            scan.points.push_back(sensor.measure(pb, d, rng));
            labels.push_back(PointLabel::Static);
            slope.push_back(false);
            add_ghost(s, d);
        }

        for (const auto& o : objects) {
            const Eigen::Vector2d c = o.position(t);
            const Eigen::Vector2d vel2 = o.velocity(t);
            const Vec3 vw(vel2.x(), vel2.y(), 0.0);
            const Eigen::Vector2d ex = o.dir, ey(-o.dir.y(), o.dir.x());
            for (const auto& off : o.offsets) {
                const Eigen::Vector2d q = c + off.x() * ex + off.y() * ey;
                const Vec3 world(q.x(), q.y(), ground_at(q) + off.z());
                const Vec3 pb = Pinv * world;
                if (!sensor.in_fov(pb)) continue;
                if (!rng.bernoulli(cfg.detection_probability)) continue;
                const double d = pb.normalized().dot(Rt * vw - v);
                scan.points.push_back(sensor.measure(pb, d, rng));
                labels.push_back(PointLabel::Dynamic);
                slope.push_back(false);
                add_ghost(world, d);
            }
        }

        seq.scans.push_back(std::move(scan));
        seq.labels.push_back(std::move(labels));
        seq.on_slope.push_back(std::move(slope));
        seq.ground_truth.push_back({t, P});
        seq.true_velocity.push_back(v);
    }
    return seq;
}

}  // namespace rio
