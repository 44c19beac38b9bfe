#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rio/config.hpp"
#include "rio/error.hpp"
#include "rio/posegraph.hpp"
#include "rio/types.hpp"

namespace rio {

/// Fatal failure inside run_odometry, tagged with the stage that raised it.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct SensorData {
    std::vector<RadarScan> scans;
    std::vector<ImuSample> imu;
    Trajectory ground_truth;  // empty when unavailable
};

/// Synthetic world from (cfg.world, cfg.seed), or the configured files.
/// Throws ParseError / SequenceOrderError for malformed inputs.
SensorData load_inputs(const RunConfig& cfg);

struct StageTiming {
    std::string name;
    double seconds = 0.0;  // CPU time of the thread running the stage
    std::size_t calls = 0;
};

struct TimingReport {
    std::vector<StageTiming> stages;  // pipeline order
    double wall_seconds = 0.0;
    double cpu_seconds = 0.0;  // process CPU time over the run
    double stage_total() const;
};

struct RunStats {
    std::size_t scans = 0;
    std::size_t scans_skipped = 0;
    std::size_t keyframes = 0;
    std::size_t icp_edges = 0;
    std::size_t icp_rejected = 0;
    std::size_t gp_fallbacks = 0;
    std::size_t queue_high_water = 0;
};

struct OdometryResult {
    /// Optimised keyframe poses.
    Trajectory trajectory;
    /// Static points of every keyframe in the world frame.
    std::vector<Vec3> map;
    TimingReport timing;
    RunStats stats;
    /// One line per recoverable problem (skipped scan, rejected registration).
    std::vector<std::string> log;
    PoseGraph graph;
};

/// Radius filter, ego-velocity and ground segmentation run per scan on a
/// front-end thread; preintegration, keyframing, registration and graph
/// optimisation run on a back-end thread fed through a bounded queue.
///
/// Scans whose ego-velocity or ground segmentation fails are skipped and
/// logged. Any other failure aborts the run with a StageError.
OdometryResult run_odometry(const SensorData& data, const RunConfig& cfg);

/// Stage names in report order.
const std::vector<std::string>& pipeline_stages();

}  // namespace rio
