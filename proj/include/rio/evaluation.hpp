#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rio/types.hpp"

namespace rio {

enum class Alignment { None, Se3Umeyama };

struct EvalReport {
    std::size_t matched = 0;
    Alignment alignment = Alignment::None;
    /// Applied to the estimate before computing errors.
    Pose align_transform;
    /// (estimate index, ground-truth index) per associated pose.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;

    double ate_rmse = 0.0;   // m
    double rpe_trans = 0.0;  // percent of travelled distance
    double rpe_rot = 0.0;    // deg/m
    double path_length = 0.0;  // ground truth, over the associated poses
    double elevation_max_error = 0.0;  // m
    double elevation_percent = 0.0;    // of path_length

    /// Per associated pose: ground-truth time, position error (est - gt) and
    /// rotation error log(R_gt^T R_est) in degrees.
    std::vector<double> times;
    std::vector<Vec3> translation_error;
    std::vector<Vec3> rotation_error_deg;
};

/// Nearest ground-truth pose within max_dt for every estimate pose.
std::vector<std::pair<std::size_t, std::size_t>> associate_by_time(const Trajectory& est, const Trajectory& gt,
                                                                   double max_dt = 0.05);

/// Rigid transform T minimising sum |dst_i - T src_i|^2.
Pose umeyama_se3(const std::vector<Vec3>& src, const std::vector<Vec3>& dst);

/// ATE is the RMSE of aligned positions. RPE compares consecutive associated
/// pairs: translation error summed over segments divided by the summed
/// ground-truth segment length (percent), rotation error in degrees over the
/// same length. Throws NoOverlap when fewer than two poses associate.
EvalReport evaluate(const Trajectory& est, const Trajectory& gt, Alignment align = Alignment::Se3Umeyama,
                    double max_dt = 0.05);

/// Column-named numeric table, written as comma-separated text with a header.
struct PlotTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
    bool operator==(const PlotTable&) const = default;
};

struct PlotData {
    PlotTable xy;         // s, x_est, y_est [, x_gt, y_gt]
    PlotTable elevation;  // s, z_est [, z_gt, z_err]
    PlotTable rotation;   // t, roll/pitch/yaw of the estimate [and ground truth], degrees
    bool operator==(const PlotData&) const = default;
};

/// Without ground truth every estimate pose gives one row and s is the
/// estimate's own path length. With ground truth and its report, rows follow
/// the associated pairs, the estimate is aligned by the report's transform and
/// both series share the ground-truth path length s.
PlotData make_plot_data(const Trajectory& est, const Trajectory* gt = nullptr, const EvalReport* report = nullptr);

/// Writes xy.csv, elevation.csv and rotation.csv into dir.
void write_plot_data(const std::filesystem::path& dir, const PlotData& data);
PlotData read_plot_data(const std::filesystem::path& dir);

PlotData emit_plot_data(const std::filesystem::path& dir, const Trajectory& est, const Trajectory* gt = nullptr,
                        const EvalReport* report = nullptr);

/// Intrinsic Z-Y-X angles (roll, pitch, yaw) in degrees.
Vec3 roll_pitch_yaw_deg(const Pose& x);

}  // namespace rio
