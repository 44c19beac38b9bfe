#include "rio/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>

#include "rio/error.hpp"

namespace rio {

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;

void write_table(const std::filesystem::path& path, const PlotTable& table) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    for (std::size_t c = 0; c < table.columns.size(); ++c) out << (c ? "," : "") << table.columns[c];
    out << '\n';
    char buf[32];
    for (const auto& row : table.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            const auto res = std::to_chars(buf, buf + sizeof(buf), row[c]);
            if (c) out << ',';
            out.write(buf, res.ptr - buf);
        }
        out << '\n';
    }
    if (!out) throw Error("write failed for " + path.string());
}

PlotTable read_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "file", "cannot open");
    PlotTable table;
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string(), 1, "header", "missing");
    std::stringstream header(line);
    for (std::string col; std::getline(header, col, ',');) table.columns.push_back(col);
    for (std::size_t n = 2; std::getline(in, line); ++n) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            const std::size_t end = std::min(line.find(',', pos), line.size());
            double v = 0.0;
            const auto res = std::from_chars(line.data() + pos, line.data() + end, v);
            if (res.ec != std::errc() || res.ptr != line.data() + end) {
                const std::size_t c = row.size();
                throw ParseError(path.string(), n, c < table.columns.size() ? table.columns[c] : "?", "not a number");
            }
            row.push_back(v);
            pos = end + 1;
        }
        if (row.size() != table.columns.size()) {
            throw ParseError(path.string(), n, "row", "expected " + std::to_string(table.columns.size()) + " columns");
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> associate_by_time(const Trajectory& est, const Trajectory& gt,
                                                                   double max_dt) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (gt.empty()) return pairs;
    for (std::size_t i = 0; i < est.size(); ++i) {
        const double t = est[i].timestamp;
        auto it = std::lower_bound(gt.begin(), gt.end(), t,
                                   [](const StampedPose& s, double v) { return s.timestamp < v; });
        std::size_t best = static_cast<std::size_t>(it - gt.begin());
        if (best == gt.size() || (best > 0 && t - gt[best - 1].timestamp <= gt[best].timestamp - t)) --best;
        if (std::abs(gt[best].timestamp - t) <= max_dt) pairs.emplace_back(i, best);
    }
    return pairs;
}

Pose umeyama_se3(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
    if (src.size() != dst.size() || src.empty()) throw Error("umeyama_se3: need equally sized, non-empty sets");
    Eigen::Matrix3Xd a(3, src.size()), b(3, dst.size());
    for (std::size_t k = 0; k < src.size(); ++k) {
        a.col(static_cast<Eigen::Index>(k)) = src[k];
        b.col(static_cast<Eigen::Index>(k)) = dst[k];
    }
    const Eigen::Matrix4d T = Eigen::umeyama(a, b, false);
    return Pose(Mat3(T.topLeftCorner<3, 3>()), Vec3(T.topRightCorner<3, 1>()));
}

EvalReport evaluate(const Trajectory& est, const Trajectory& gt, Alignment align, double max_dt) {
    EvalReport r;
    r.alignment = align;
    r.pairs = associate_by_time(est, gt, max_dt);
    if (r.pairs.empty()) throw NoOverlap("no estimate pose lies within " + std::to_string(max_dt) + " s of ground truth");
    if (r.pairs.size() < 2) throw NoOverlap("only one pose pair associates; at least two are needed");
    r.matched = r.pairs.size();

    if (align == Alignment::Se3Umeyama) {
        std::vector<Vec3> src, dst;
        for (const auto& [i, j] : r.pairs) {
            src.push_back(est[i].pose.translation());
            dst.push_back(gt[j].pose.translation());
        }
        r.align_transform = umeyama_se3(src, dst);
    }

    double sq = 0.0;
    for (const auto& [i, j] : r.pairs) {
        const Pose e = r.align_transform * est[i].pose;
        const Pose& g = gt[j].pose;
        const Vec3 dt = e.translation() - g.translation();
        sq += dt.squaredNorm();
        r.times.push_back(gt[j].timestamp);
        r.translation_error.push_back(dt);
        r.rotation_error_deg.push_back(so3_log(g.rotation().conjugate() * e.rotation()) * kDeg);
        r.elevation_max_error = std::max(r.elevation_max_error, std::abs(dt.z()));
    }
    r.ate_rmse = std::sqrt(sq / static_cast<double>(r.matched));

    double trans_err = 0.0, rot_err = 0.0;
    for (std::size_t k = 0; k + 1 < r.pairs.size(); ++k) {
        const auto [i0, j0] = r.pairs[k];
        const auto [i1, j1] = r.pairs[k + 1];
        const Pose rel_est = est[i0].pose.inverse() * est[i1].pose;
        const Pose rel_gt = gt[j0].pose.inverse() * gt[j1].pose;
        const Pose err = rel_gt.inverse() * rel_est;
        r.path_length += rel_gt.translation().norm();
        trans_err += err.translation().norm();
        rot_err += rotation_angle(err) * kDeg;
    }
    if (r.path_length > 0.0) {
        r.rpe_trans = 100.0 * trans_err / r.path_length;
        r.rpe_rot = rot_err / r.path_length;
        r.elevation_percent = 100.0 * r.elevation_max_error / r.path_length;
    }
    return r;
}

Vec3 roll_pitch_yaw_deg(const Pose& x) {
    const Mat3 R = x.rotation_matrix();
    const double yaw = std::atan2(R(1, 0), R(0, 0));
    const double pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
    const double roll = std::atan2(R(2, 1), R(2, 2));
    return Vec3(roll, pitch, yaw) * kDeg;
}

PlotData make_plot_data(const Trajectory& est, const Trajectory* gt, const EvalReport* report) {
    PlotData d;
    if (gt == nullptr || report == nullptr) {
        d.xy.columns = {"s", "x_est", "y_est"};
        d.elevation.columns = {"s", "z_est"};
        d.rotation.columns = {"t", "roll_est", "pitch_est", "yaw_est"};
        double s = 0.0;
        for (std::size_t k = 0; k < est.size(); ++k) {
            const Vec3& p = est[k].pose.translation();
            if (k > 0) s += (p - est[k - 1].pose.translation()).norm();
            const Vec3 rpy = roll_pitch_yaw_deg(est[k].pose);
            d.xy.rows.push_back({s, p.x(), p.y()});
            d.elevation.rows.push_back({s, p.z()});
            d.rotation.rows.push_back({est[k].timestamp, rpy.x(), rpy.y(), rpy.z()});
        }
        return d;
    }
    d.xy.columns = {"s", "x_est", "y_est", "x_gt", "y_gt"};
    d.elevation.columns = {"s", "z_est", "z_gt", "z_err"};
    d.rotation.columns = {"t", "roll_est", "pitch_est", "yaw_est", "roll_gt", "pitch_gt", "yaw_gt"};
    double s = 0.0;
    for (std::size_t k = 0; k < report->pairs.size(); ++k) {
        const auto [i, j] = report->pairs[k];
        const Pose e = report->align_transform * est.at(i).pose;
        const Pose& g = gt->at(j).pose;
        if (k > 0) s += (g.translation() - gt->at(report->pairs[k - 1].second).pose.translation()).norm();
        const Vec3& pe = e.translation();
        const Vec3& pg = g.translation();
        const Vec3 re = roll_pitch_yaw_deg(e);
        const Vec3 rg = roll_pitch_yaw_deg(g);
        d.xy.rows.push_back({s, pe.x(), pe.y(), pg.x(), pg.y()});
        d.elevation.rows.push_back({s, pe.z(), pg.z(), pe.z() - pg.z()});
        d.rotation.rows.push_back({gt->at(j).timestamp, re.x(), re.y(), re.z(), rg.x(), rg.y(), rg.z()});
    }
    return d;
}

void write_plot_data(const std::filesystem::path& dir, const PlotData& data) {
    std::filesystem::create_directories(dir);
    write_table(dir / "xy.csv", data.xy);
    write_table(dir / "elevation.csv", data.elevation);
    write_table(dir / "rotation.csv", data.rotation);
}

PlotData read_plot_data(const std::filesystem::path& dir) {
    return {read_table(dir / "xy.csv"), read_table(dir / "elevation.csv"), read_table(dir / "rotation.csv")};
}

PlotData emit_plot_data(const std::filesystem::path& dir, const Trajectory& est, const Trajectory* gt,
                        const EvalReport* report) {
    PlotData d = make_plot_data(est, gt, report);
    write_plot_data(dir, d);
    return d;
}

}  // namespace rio
