#include "rio/io.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>

#include "rio/error.hpp"

namespace rio {

namespace {

namespace fs = std::filesystem;

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    auto is_sep = [](char c) { return c == ' ' || c == '\t' || c == ',' || c == '\r'; };
    while (i < line.size()) {
        while (i < line.size() && is_sep(line[i])) ++i;
        const std::size_t start = i;
        while (i < line.size() && !is_sep(line[i])) ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

bool skippable(std::string_view line) {
    const auto pos = line.find_first_not_of(" \t\r");
    return pos == std::string_view::npos || line[pos] == '#';
}

/// Reads the named numeric columns of one record.
template <std::size_t N>
std::array<double, N> parse_record(const std::vector<std::string_view>& fields, const std::array<const char*, N>& names,
                                   const std::string& file, std::size_t line, std::size_t offset = 0) {
    std::array<double, N> out{};
    for (std::size_t k = 0; k < N; ++k) {
        if (offset + k >= fields.size()) throw ParseError(file, line, names[k], "missing column");
        const std::string_view f = fields[offset + k];
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
        if (ec != std::errc() || ptr != f.data() + f.size()) {
            throw ParseError(file, line, names[k], "not a number: '" + std::string(f) + "'");
        }
        if (!std::isfinite(v)) throw ParseError(file, line, names[k], "not finite");
        out[k] = v;
    }
    return out;
}

std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "file", "cannot open");
    return in;
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

void check_increasing(double prev, double t, bool first, const std::string& file, std::size_t line) {
    if (!first && !(t > prev)) {
        throw SequenceOrderError(file + ":" + std::to_string(line) + ": timestamp " + std::to_string(t) +
                                 " does not follow " + std::to_string(prev));
    }
}

RadarPoint make_point(const std::array<double, 5>& rec, const IngestOptions& opt, const std::string& file,
                      std::size_t line) {
    const Vec3 p(rec[0], rec[1], rec[2]);
    if (!(p.norm() > 0.0)) throw ParseError(file, line, "x", "point at the sensor origin");
    const Mat3 R = opt.extrinsic.rotation_matrix();
    RadarPoint out;
    out.position = opt.extrinsic * p;
    out.doppler = rec[3];
    out.power = rec[4];
    out.covariance = R * point_covariance(p, opt.noise) * R.transpose();
    return out;
}

constexpr std::array<const char*, 5> kPointFields{"x", "y", "z", "doppler", "power"};

std::vector<RadarScan> load_manifest(const fs::path& dir, const IngestOptions& opt) {
    const fs::path manifest = dir / "manifest.txt";
    auto in = open_input(manifest);
    const std::string file = manifest.string();
    std::vector<RadarScan> scans;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (skippable(line)) continue;
        const auto fields = split_fields(line);
        const double t = parse_record(fields, std::array<const char*, 1>{"timestamp"}, file, n)[0];
        if (fields.size() < 2) throw ParseError(file, n, "filepath", "missing column");
        check_increasing(scans.empty() ? 0.0 : scans.back().timestamp, t, scans.empty(), file, n);
        fs::path scan_path{std::string(fields[1])};
        if (scan_path.is_relative()) scan_path = dir / scan_path;
        RadarScan scan;
        scan.timestamp = t;
        scan.sensor_origin = opt.extrinsic.translation();
        scan.points = load_radar_scan(scan_path, opt).points;
        scans.push_back(std::move(scan));
    }
    return scans;
}

std::vector<RadarScan> load_single_log(const fs::path& path, const IngestOptions& opt) {
    auto in = open_input(path);
    const std::string file = path.string();
    std::vector<RadarScan> scans;
    std::string line;
    constexpr std::array<const char*, 1> kTime{"t"};
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (skippable(line)) continue;
        const auto fields = split_fields(line);
        const double t = parse_record(fields, kTime, file, n)[0];
        const auto rec = parse_record(fields, kPointFields, file, n, 1);
        if (scans.empty() || t != scans.back().timestamp) {
            check_increasing(scans.empty() ? 0.0 : scans.back().timestamp, t, scans.empty(), file, n);
            RadarScan scan;
            scan.timestamp = t;
            scan.sensor_origin = opt.extrinsic.translation();
            scans.push_back(std::move(scan));
        }
        scans.back().points.push_back(make_point(rec, opt, file, n));
    }
    return scans;
}

void put(std::ostream& os, double v) {
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    os.write(buf.data(), res.ptr - buf.data());
}

template <typename... T>
void put_row(std::ostream& os, T... values) {
    bool first = true;
    ((first ? void() : void(os << ' '), put(os, static_cast<double>(values)), first = false), ...);
    os << '\n';
}

}  // namespace

std::vector<RadarScan> load_radar_sequence(const fs::path& path, const IngestOptions& options) {
    RadarFormat format = options.format;
    if (format == RadarFormat::Auto) {
        if (!fs::exists(path)) throw ParseError(path.string(), 0, "file", "does not exist");
        format = fs::is_directory(path) ? RadarFormat::ManifestDirectory : RadarFormat::SingleLog;
    }
    return format == RadarFormat::ManifestDirectory ? load_manifest(path, options) : load_single_log(path, options);
}

RadarScan load_radar_scan(const fs::path& path, const IngestOptions& opt) {
    auto in = open_input(path);
    const std::string file = path.string();
    RadarScan scan;
    scan.sensor_origin = opt.extrinsic.translation();
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (skippable(line)) continue;
        scan.points.push_back(make_point(parse_record(split_fields(line), kPointFields, file, n), opt, file, n));
    }
    return scan;
}

std::vector<ImuSample> load_imu_sequence(const fs::path& path) {
    auto in = open_input(path);
    const std::string file = path.string();
    constexpr std::array<const char*, 7> kFields{"t", "wx", "wy", "wz", "ax", "ay", "az"};
    std::vector<ImuSample> out;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (skippable(line)) continue;
        const auto r = parse_record(split_fields(line), kFields, file, n);
        check_increasing(out.empty() ? 0.0 : out.back().timestamp, r[0], out.empty(), file, n);
        ImuSample s;
        s.timestamp = r[0];
        s.angular_velocity = Vec3(r[1], r[2], r[3]);
        s.linear_acceleration = Vec3(r[4], r[5], r[6]);
        out.push_back(s);
    }
    return out;
}

Trajectory load_tum(const fs::path& path) {
    auto in = open_input(path);
    const std::string file = path.string();
    constexpr std::array<const char*, 8> kFields{"t", "tx", "ty", "tz", "qx", "qy", "qz", "qw"};
    Trajectory out;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (skippable(line)) continue;
        const auto r = parse_record(split_fields(line), kFields, file, n);
        check_increasing(out.empty() ? 0.0 : out.back().timestamp, r[0], out.empty(), file, n);
        const Quat q(r[7], r[4], r[5], r[6]);
        if (!(q.norm() > 0.5)) throw ParseError(file, n, "qw", "quaternion is not normalisable");
        out.push_back({r[0], Pose(q, Vec3(r[1], r[2], r[3]))});
    }
    return out;
}

void write_tum(std::ostream& os, const Trajectory& traj) {
    for (const auto& sp : traj) {
        const Vec3& t = sp.pose.translation();
        const Quat& q = sp.pose.rotation();
        put_row(os, sp.timestamp, t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w());
    }
}

void save_tum(const fs::path& path, const Trajectory& traj) {
    auto out = open_output(path);
    write_tum(out, traj);
}

void save_radar_sequence(const fs::path& dir, const std::vector<RadarScan>& scans) {
    fs::create_directories(dir / "scans");
    auto manifest = open_output(dir / "manifest.txt");
    for (std::size_t k = 0; k < scans.size(); ++k) {
        std::ostringstream name;
        name << "scans/" << std::setw(6) << std::setfill('0') << k << ".txt";
        put(manifest, scans[k].timestamp);
        manifest << ' ' << name.str() << '\n';
        auto out = open_output(dir / name.str());
        for (const auto& p : scans[k].points) {
            put_row(out, p.position.x(), p.position.y(), p.position.z(), p.doppler, p.power);
        }
    }
}

void save_imu_sequence(const fs::path& path, const std::vector<ImuSample>& imu) {
    auto out = open_output(path);
    for (const auto& s : imu) {
        put_row(out, s.timestamp, s.angular_velocity.x(), s.angular_velocity.y(), s.angular_velocity.z(),
                s.linear_acceleration.x(), s.linear_acceleration.y(), s.linear_acceleration.z());
    }
}

}  // namespace rio
