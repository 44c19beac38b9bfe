#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "rio/ground.hpp"
#include "rio/types.hpp"

namespace rio {

enum class RadarFormat {
    Auto,               // directory -> manifest, regular file -> single log
    ManifestDirectory,  // <dir>/manifest.txt with `timestamp filepath` lines
    SingleLog,          // `t x y z doppler power` lines, one scan per distinct t
};

struct IngestOptions {
    RadarFormat format = RadarFormat::Auto;
    /// Radar pose in the body frame; points and covariances are mapped through it.
    Pose extrinsic = Pose::identity();
    /// Noise model for the per-point covariance (scan files carry none).
    SensorNoise noise;
};

/// Text records are whitespace or comma separated; blank lines and lines
/// starting with '#' are skipped; extra trailing fields are ignored.
/// Throws ParseError naming the file, line and field of a malformed record,
/// and SequenceOrderError when timestamps do not strictly increase.
std::vector<RadarScan> load_radar_sequence(const std::filesystem::path& path, const IngestOptions& options = {});

/// One scan file of `x y z doppler power` rows; the timestamp is left at 0.
RadarScan load_radar_scan(const std::filesystem::path& path, const IngestOptions& options = {});

/// `t wx wy wz ax ay az` per line.
std::vector<ImuSample> load_imu_sequence(const std::filesystem::path& path);

/// TUM `t tx ty tz qx qy qz qw` per line.
Trajectory load_tum(const std::filesystem::path& path);

void write_tum(std::ostream& os, const Trajectory& traj);
void save_tum(const std::filesystem::path& path, const Trajectory& traj);

/// Writes <dir>/manifest.txt plus one scan file per scan (sensor-frame points).
void save_radar_sequence(const std::filesystem::path& dir, const std::vector<RadarScan>& scans);
void save_imu_sequence(const std::filesystem::path& path, const std::vector<ImuSample>& imu);

}  // namespace rio
