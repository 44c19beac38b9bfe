#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "rio/egovel.hpp"
#include "rio/gp.hpp"
#include "rio/ground.hpp"
#include "rio/io.hpp"
#include "rio/posegraph.hpp"
#include "rio/registration.hpp"
#include "rio/simulator.hpp"

namespace rio {

enum class InputSource { Synthetic, Files };

/// Everything `run` needs. Every field has a config key; write_config lists them.
struct RunConfig {
    InputSource source = InputSource::Synthetic;
    std::filesystem::path radar_path;
    std::filesystem::path imu_path;
    std::filesystem::path ground_truth_path;
    /// Format and noise model; the extrinsic is filled from `extrinsic` at load time.
    IngestOptions ingest;
    /// Radar in body frame: tx ty tz qx qy qz qw.
    std::array<double, 7> extrinsic{0, 0, 0, 0, 0, 0, 1};

    SyntheticWorldConfig world;
    std::uint64_t seed = 1;

    double min_range = 1.0;  // radius filter, m
    double max_range = 80.0;

    EgoVelocityParams egovel;
    bool ground_filter = true;
    CzmConfig ground;
    GpParams gp;
    IntegrationMode integration = IntegrationMode::Gp;
    KeyframeThresholds keyframe;
    bool icp_enabled = true;
    DbscanParams dbscan;
    IcpParams icp;
    double cluster_gate = 1.5;  // m
    LmParams lm;
    std::size_t queue_capacity = 16;
    /// Start the first keyframe at the ground-truth pose of its scan when ground truth is loaded.
    bool anchor_to_ground_truth = true;
    bool parallel = false;  // OpenMP kernels in every stage

    Pose extrinsic_pose() const;
    /// Throws ConfigError on an invariant violation.
    void validate() const;
};

/// Parses `key = value` lines; '#' starts a comment. Unknown keys and
/// malformed values throw ConfigError naming the source and line.
RunConfig parse_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

/// Applies one setting on top of an existing config.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Every key with its current value, one `key = value` line each, sorted.
void write_config(std::ostream& os, const RunConfig& cfg);

}  // namespace rio
