#include "rio/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <exception>
#include <optional>
#include <thread>

#include <time.h>

#include "rio/bounded_queue.hpp"
#include "rio/egovel.hpp"
#include "rio/error.hpp"
#include "rio/gp.hpp"
#include "rio/ground.hpp"
#include "rio/io.hpp"
#include "rio/registration.hpp"
#include "rio/simulator.hpp"

namespace rio {

namespace {

enum Stage : std::size_t {
    kRadiusFilter,
    kEgoVelocity,
    kGroundSegmentation,
    kPreintegration,
    kKeyframing,
    kRegistration,
    kGraphOptimization,
    kMapAggregation,
    kStageCount
};

double thread_cpu_seconds() {
    timespec ts{};
    clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
    return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

double process_cpu_seconds() {
    timespec ts{};
    clock_gettime(CLOCK_PROCESS_CPUTIME_ID, &ts);
    return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

struct StageClock {
    std::array<double, kStageCount> seconds{};
    std::array<std::size_t, kStageCount> calls{};

    /// Runs f under the stage's clock. Library errors other than StageError
    /// are rethrown as StageError naming the stage.
    template <typename F>
    auto run(Stage s, F&& f) -> decltype(f()) {
        const double t0 = thread_cpu_seconds();
        struct Stop {
            StageClock& c;
            Stage s;
            double t0;
            ~Stop() {
                c.seconds[s] += thread_cpu_seconds() - t0;
                ++c.calls[s];
            }
        } stop{*this, s, t0};
        return f();
    }
};

[[noreturn]] void fail(Stage s, const std::exception& e) { throw StageError(pipeline_stages()[s], e.what()); }

struct FrontEndItem {
    std::size_t index = 0;
    double timestamp = 0.0;
    bool ok = false;
    std::string reason;
    EgoVelocity ego;
    std::vector<RadarPoint> static_points;  // body frame
};

template <typename T>
std::span<const T> time_window(const std::vector<T>& v, double t0, double t1, double margin) {
    auto by_time = [](const T& s, double t) { return s.timestamp < t; };
    const auto lo = std::lower_bound(v.begin(), v.end(), t0 - margin, by_time);
    const auto hi = std::lower_bound(lo, v.end(), t1 + margin, by_time);
    return {v.data() + (lo - v.begin()), static_cast<std::size_t>(hi - lo)};
}

class FrontEnd {
public:
    explicit FrontEnd(const RunConfig& cfg) : cfg_(cfg) {
        egovel_ = cfg.egovel;
        ground_ = cfg.ground;
        if (cfg.parallel) {
            egovel_.exec = Exec::Parallel;
            ground_.exec = Exec::Parallel;
        }
    }

    FrontEndItem process(std::size_t index, const RadarScan& raw, StageClock& clock) const {
        FrontEndItem item;
        item.index = index;
        item.timestamp = raw.timestamp;
        const RadarScan scan = clock.run(kRadiusFilter, [&] { return radius_filter(raw, cfg_.min_range, cfg_.max_range); });
        try {
            item.ego = clock.run(kEgoVelocity, [&] { return estimate_ego_velocity(scan, egovel_); });
        } catch (const InsufficientPoints& e) {
            item.reason = std::string("ego_velocity: ") + e.what();
            return item;
        } catch (const DegenerateGeometry& e) {
            item.reason = std::string("ego_velocity: ") + e.what();
            return item;
        } catch (const Error& e) {
            fail(kEgoVelocity, e);
        }

        std::vector<bool> keep = item.ego.inlier_mask;
        if (cfg_.ground_filter) {
            try {
                const GroundSegmentation seg =
                    clock.run(kGroundSegmentation, [&] { return segment_ground(scan, &item.ego, ground_); });
                // Below-ground ghosts carry the Doppler of their source point and bias the
                // vertical velocity, so the velocity is refit without them.
                if (!seg.noise.empty()) {
                    RadarScan clean;
                    clean.timestamp = scan.timestamp;
                    clean.sensor_origin = scan.sensor_origin;
                    std::vector<std::size_t> kept;
                    for (std::size_t i = 0; i < scan.points.size(); ++i) {
                        if (seg.labels[i] != PointLabel::Noise) {
                            clean.points.push_back(scan.points[i]);
                            kept.push_back(i);
                        }
                    }
                    const EgoVelocity refit = clock.run(kEgoVelocity, [&] { return estimate_ego_velocity(clean, egovel_); });
                    item.ego.velocity = refit.velocity;
                    item.ego.covariance = refit.covariance;
                    std::fill(item.ego.inlier_mask.begin(), item.ego.inlier_mask.end(), false);
                    for (std::size_t k = 0; k < kept.size(); ++k) item.ego.inlier_mask[kept[k]] = refit.inlier_mask[k];
                    keep = item.ego.inlier_mask;
                }
                for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = keep[i] && seg.labels[i] == PointLabel::Static;
            } catch (const DegenerateFit& e) {
                item.reason = std::string("ground_segmentation: ") + e.what();
                return item;
            } catch (const Error& e) {
                fail(kGroundSegmentation, e);
            }
        }
        for (std::size_t i = 0; i < keep.size(); ++i) {
            if (keep[i]) item.static_points.push_back(scan.points[i]);
        }
        item.ok = true;
        return item;
    }

private:
    const RunConfig& cfg_;
    EgoVelocityParams egovel_;
    CzmConfig ground_;
};

struct KeyframeState {
    double timestamp = 0.0;
    std::vector<RadarPoint> points;
    Clustering clusters;
};

class BackEnd {
public:
    BackEnd(const SensorData& data, const RunConfig& cfg, OdometryResult& out) : data_(data), cfg_(cfg), out_(out) {
        dbscan_ = cfg.dbscan;
        icp_ = cfg.icp;
        if (cfg.parallel) {
            dbscan_.exec = Exec::Parallel;
            icp_.exec = Exec::Parallel;
        }
    }

    void consume(FrontEndItem item, StageClock& clock) {
        ++out_.stats.scans;
        if (!item.ok) {
            ++out_.stats.scans_skipped;
            out_.log.push_back("scan " + std::to_string(item.index) + " skipped: " + item.reason);
            return;
        }
        vels_.push_back(item.ego);
        // A keyframe is committed one scan late so the velocity after it is available.
        if (pending_) {
            commit(std::move(*pending_), clock);
            pending_.reset();
        }
        if (keyframes_.empty()) {
            start(std::move(item), clock);
            return;
        }
        const KeyframeState& last = keyframes_.back();
        const bool create = clock.run(kKeyframing, [&] {
            try {
                const MotionIncrement since =
                    discrete_preintegrate(time_window(data_.imu, last.timestamp, item.timestamp, 1.0),
                                          time_window(vels_, last.timestamp, item.timestamp, 1.0), last.timestamp,
                                          item.timestamp, cfg_.gp);
                return should_create_keyframe(since, cfg_.keyframe);
            } catch (const Error& e) {
                fail(kKeyframing, e);
            }
        });
        if (create) {
            pending_ = std::move(item);
        } else {
            tail_ = std::move(item);
        }
    }

    void finish(StageClock& clock) {
        if (pending_) {
            commit(std::move(*pending_), clock);
            pending_.reset();
        } else if (tail_ && !keyframes_.empty() && tail_->timestamp > keyframes_.back().timestamp) {
            commit(std::move(*tail_), clock);
        }
        tail_.reset();
        clock.run(kMapAggregation, [&] {
            const auto& nodes = out_.graph.keyframes();
            out_.trajectory.clear();
            out_.map.clear();
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                out_.trajectory.push_back({nodes[k].timestamp, nodes[k].pose});
                for (const auto& p : keyframes_[k].points) out_.map.push_back(nodes[k].pose * p.position);
            }
        });
        out_.stats.keyframes = out_.graph.size();
    }

private:
    Pose anchor(double t) const {
        if (!cfg_.anchor_to_ground_truth || data_.ground_truth.empty()) return Pose::identity();
        const auto& gt = data_.ground_truth;
        auto it = std::lower_bound(gt.begin(), gt.end(), t,
                                   [](const StampedPose& s, double v) { return s.timestamp < v; });
        if (it == gt.end() || (it != gt.begin() && t - std::prev(it)->timestamp < it->timestamp - t)) --it;
        return std::abs(it->timestamp - t) <= 0.05 ? it->pose : Pose::identity();
    }

    void start(FrontEndItem item, StageClock& clock) {
        out_.graph = PoseGraph(anchor(item.timestamp));
        out_.graph.add_keyframe(item.timestamp, item.index);
        KeyframeState kf;
        kf.timestamp = item.timestamp;
        kf.points = std::move(item.static_points);
        if (cfg_.icp_enabled) kf.clusters = clock.run(kRegistration, [&] { return cluster_points(kf.points); });
        keyframes_.push_back(std::move(kf));
    }

    Clustering cluster_points(const std::vector<RadarPoint>& pts) const {
        std::vector<Vec3> xyz;
        xyz.reserve(pts.size());
        for (const auto& p : pts) xyz.push_back(p.position);
        return cluster_scan(xyz, dbscan_);
    }

    void commit(FrontEndItem item, StageClock& clock) {
        const KeyframeState& prev = keyframes_.back();
        const double t0 = prev.timestamp;
        const double t1 = item.timestamp;
        const MotionIncrement integration = clock.run(kPreintegration, [&] {
            try {
                return preintegrate(time_window(data_.imu, t0, t1, 1.0), time_window(vels_, t0, t1, 1.0), t0, t1,
                                    cfg_.gp, cfg_.integration);
            } catch (const Error& e) {
                fail(kPreintegration, e);
            }
        });
        if (integration.fallback) ++out_.stats.gp_fallbacks;

        KeyframeState kf;
        kf.timestamp = t1;
        kf.points = std::move(item.static_points);
        std::optional<MotionIncrement> registration;
        if (cfg_.icp_enabled) {
            registration = clock.run(kRegistration, [&]() -> std::optional<MotionIncrement> {
                kf.clusters = cluster_points(kf.points);
                ClusterContext ctx;
                ctx.source = &kf.clusters;
                ctx.target = &prev.clusters;
                ctx.matches = associate_clusters(prev.clusters.clusters, kf.clusters.clusters, integration.transform,
                                                 cfg_.cluster_gate);
                try {
                    const IcpResult icp = weighted_icp(kf.points, prev.points, &ctx, integration.transform, icp_);
                    if (!icp.converged) {
                        out_.log.push_back("keyframe at scan " + std::to_string(item.index) +
                                           ": registration did not converge");
                        return std::nullopt;
                    }
                    MotionIncrement m;
                    m.transform = icp.transform;
                    m.covariance = icp.covariance;
                    m.source = IncrementSource::Registration;
                    m.t_begin = t0;
                    m.t_end = t1;
                    return m;
                } catch (const InsufficientCorrespondences& e) {
                    out_.log.push_back("keyframe at scan " + std::to_string(item.index) + ": " + e.what());
                    return std::nullopt;
                } catch (const Error& e) {
                    fail(kRegistration, e);
                }
            });
            if (registration) {
                ++out_.stats.icp_edges;
            } else {
                ++out_.stats.icp_rejected;
            }
        }
        clock.run(kGraphOptimization, [&] {
            try {
                out_.graph.add_keyframe(t1, item.index, &integration, registration ? &*registration : nullptr);
                out_.graph.optimize(cfg_.lm);
            } catch (const Error& e) {
                fail(kGraphOptimization, e);
            }
        });
        keyframes_.push_back(std::move(kf));
    }

    const SensorData& data_;
    const RunConfig& cfg_;
    OdometryResult& out_;
    DbscanParams dbscan_;
    IcpParams icp_;
    std::vector<EgoVelocity> vels_;
    std::vector<KeyframeState> keyframes_;
    std::optional<FrontEndItem> pending_;
    std::optional<FrontEndItem> tail_;
};

}  // namespace

const std::vector<std::string>& pipeline_stages() {
    static const std::vector<std::string> names{"radius_filter",  "ego_velocity", "ground_segmentation",
                                                "preintegration", "keyframing",   "registration",
                                                "graph_optimization", "map_aggregation"};
    return names;
}

double TimingReport::stage_total() const {
    double s = 0.0;
    for (const auto& st : stages) s += st.seconds;
    return s;
}

SensorData load_inputs(const RunConfig& cfg) {
    SensorData data;
    if (cfg.source == InputSource::Synthetic) {
        SyntheticSequence seq = generate_synthetic(cfg.world, cfg.seed);
        data.scans = std::move(seq.scans);
        data.imu = std::move(seq.imu);
        data.ground_truth = std::move(seq.ground_truth);
        return data;
    }
    IngestOptions opt = cfg.ingest;
    opt.extrinsic = cfg.extrinsic_pose();
    data.scans = load_radar_sequence(cfg.radar_path, opt);
    data.imu = load_imu_sequence(cfg.imu_path);
    if (!cfg.ground_truth_path.empty()) data.ground_truth = load_tum(cfg.ground_truth_path);
    return data;
}

OdometryResult run_odometry(const SensorData& data, const RunConfig& cfg) {
    cfg.validate();
    for (std::size_t k = 1; k < data.scans.size(); ++k) {
        if (!(data.scans[k].timestamp > data.scans[k - 1].timestamp)) {
            throw SequenceOrderError("radar scans are not in increasing time order at scan " + std::to_string(k));
        }
    }
    const auto wall0 = std::chrono::steady_clock::now();
    const double cpu0 = process_cpu_seconds();

    OdometryResult out;
    BoundedQueue<FrontEndItem> queue(cfg.queue_capacity);
    StageClock front_clock, back_clock;
    std::exception_ptr front_error, back_error;

    std::thread front([&] {
        try {
            const FrontEnd fe(cfg);
            for (std::size_t k = 0; k < data.scans.size(); ++k) {
                if (!queue.push(fe.process(k, data.scans[k], front_clock))) break;
            }
        } catch (...) {
            front_error = std::current_exception();
        }
        queue.close();
    });
    std::thread back([&] {
        try {
            BackEnd be(data, cfg, out);
            while (auto item = queue.pop()) be.consume(std::move(*item), back_clock);
            if (!front_error) be.finish(back_clock);
        } catch (...) {
            back_error = std::current_exception();
            queue.close();
        }
    });
    front.join();
    back.join();
    if (front_error) std::rethrow_exception(front_error);
    if (back_error) std::rethrow_exception(back_error);

    out.timing.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    out.timing.cpu_seconds = process_cpu_seconds() - cpu0;
    for (std::size_t s = 0; s < kStageCount; ++s) {
        out.timing.stages.push_back({pipeline_stages()[s], front_clock.seconds[s] + back_clock.seconds[s],
                                     front_clock.calls[s] + back_clock.calls[s]});
    }
    out.stats.queue_high_water = queue.high_water();
    return out;
}

}  // namespace rio
