#include "rio/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <vector>

#include "rio/error.hpp"

namespace rio {

namespace {

struct Entry {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("not a number: '" + v + "'");
    return out;
}

template <typename T>
std::string format_number(T v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError("not a boolean: '" + v + "'");
}

template <typename T>
using Access = std::function<T&(RunConfig&)>;

template <typename T>
Entry number(Access<T> f) {
    return {[f](RunConfig& c, const std::string& v) { f(c) = parse_number<T>(v); },
            [f](const RunConfig& c) { return format_number(f(const_cast<RunConfig&>(c))); }};
}

Entry boolean(Access<bool> f) {
    return {[f](RunConfig& c, const std::string& v) { f(c) = parse_bool(v); },
            [f](const RunConfig& c) { return std::string(f(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

Entry path(Access<std::filesystem::path> f) {
    return {[f](RunConfig& c, const std::string& v) { f(c) = v; },
            [f](const RunConfig& c) { return f(const_cast<RunConfig&>(c)).string(); }};
}

template <typename T>
Entry list(Access<std::vector<T>> f) {
    return {[f](RunConfig& c, const std::string& v) {
                std::vector<T> out;
                std::istringstream is(v);
                for (std::string tok; is >> tok;) out.push_back(parse_number<T>(tok));
                if (out.empty()) throw ConfigError("empty list");
                f(c) = std::move(out);
            },
            [f](const RunConfig& c) {
                std::string s;
                for (const T& x : f(const_cast<RunConfig&>(c))) s += (s.empty() ? "" : " ") + format_number(x);
                return s;
            }};
}

template <typename E>
Entry choice(Access<E> f, std::vector<std::pair<std::string, E>> names) {
    return {[f, names](RunConfig& c, const std::string& v) {
                for (const auto& [n, e] : names) {
                    if (n == v) {
                        f(c) = e;
                        return;
                    }
                }
                std::string allowed;
                for (const auto& [n, e] : names) allowed += (allowed.empty() ? "" : ", ") + n;
                throw ConfigError("'" + v + "' is not one of {" + allowed + "}");
            },
            [f, names](const RunConfig& c) {
                for (const auto& [n, e] : names) {
                    if (e == f(const_cast<RunConfig&>(c))) return n;
                }
                return std::string("?");
            }};
}

#define RIO_REF(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::map<std::string, Entry>& registry() {
    static const std::map<std::string, Entry> table = [] {
        std::map<std::string, Entry> t;
        t["input.source"] = choice<InputSource>(RIO_REF(source),
                                                {{"synthetic", InputSource::Synthetic}, {"files", InputSource::Files}});
        t["input.radar"] = path(RIO_REF(radar_path));
        t["input.imu"] = path(RIO_REF(imu_path));
        t["input.ground_truth"] = path(RIO_REF(ground_truth_path));
        t["input.radar_format"] = choice<RadarFormat>(RIO_REF(ingest.format), {{"auto", RadarFormat::Auto},
                                                                                {"manifest", RadarFormat::ManifestDirectory},
                                                                                {"log", RadarFormat::SingleLog}});
        const char* ext[] = {"extrinsic.tx", "extrinsic.ty", "extrinsic.tz", "extrinsic.qx",
                             "extrinsic.qy", "extrinsic.qz", "extrinsic.qw"};
        for (std::size_t k = 0; k < 7; ++k) {
            t[ext[k]] = number<double>([k](RunConfig& c) -> double& { return c.extrinsic[k]; });
        }
        t["noise.sigma_range"] = number<double>(RIO_REF(ingest.noise.sigma_range));
        t["noise.sigma_azimuth"] = number<double>(RIO_REF(ingest.noise.sigma_azimuth));
        t["noise.sigma_elevation"] = number<double>(RIO_REF(ingest.noise.sigma_elevation));

        t["seed"] = number<std::uint64_t>(RIO_REF(seed));
        t["sim.path_length"] = number<double>(RIO_REF(world.path_length));
        t["sim.speed"] = number<double>(RIO_REF(world.speed));
        t["sim.duration"] = number<double>(RIO_REF(world.duration));
        t["sim.ground_profile"] = choice<GroundProfile>(
            RIO_REF(world.terrain.profile),
            {{"flat", GroundProfile::Flat}, {"slope", GroundProfile::Slope}, {"hill", GroundProfile::Hill}});
        t["sim.slope_deg"] = number<double>(RIO_REF(world.terrain.slope_deg));
        t["sim.ramp_start"] = number<double>(RIO_REF(world.terrain.ramp_start));
        t["sim.ramp_end"] = number<double>(RIO_REF(world.terrain.ramp_end));
        t["sim.ramp_softness"] = number<double>(RIO_REF(world.terrain.ramp_softness));
        t["sim.hill_amplitude"] = number<double>(RIO_REF(world.terrain.hill_amplitude));
        t["sim.hill_wavelength"] = number<double>(RIO_REF(world.terrain.hill_wavelength));
        t["sim.sensor_height"] = number<double>(RIO_REF(world.sensor_height));
        t["sim.radar_rate"] = number<double>(RIO_REF(world.radar_rate));
        t["sim.imu_rate"] = number<double>(RIO_REF(world.imu_rate));
        t["sim.jitter"] = number<double>(RIO_REF(world.jitter));
        t["sim.sigma_range"] = number<double>(RIO_REF(world.sigma_range));
        t["sim.sigma_azimuth"] = number<double>(RIO_REF(world.sigma_azimuth));
        t["sim.sigma_elevation"] = number<double>(RIO_REF(world.sigma_elevation));
        t["sim.sigma_doppler"] = number<double>(RIO_REF(world.sigma_doppler));
        t["sim.sigma_gyro"] = number<double>(RIO_REF(world.sigma_gyro));
        t["sim.multipath_fraction"] = number<double>(RIO_REF(world.multipath_fraction));
        t["sim.dynamic_objects"] = number<int>(RIO_REF(world.dynamic_objects));
        t["sim.landmarks"] = number<int>(RIO_REF(world.landmarks));
        t["sim.scatterer_min_height"] = number<double>(RIO_REF(world.scatterer_min_height));
        t["sim.ground_points"] = number<int>(RIO_REF(world.ground_points));
        t["sim.detection_probability"] = number<double>(RIO_REF(world.detection_probability));
        t["sim.fov_azimuth_deg"] = number<double>(RIO_REF(world.fov_azimuth_deg));
        t["sim.fov_elevation_deg"] = number<double>(RIO_REF(world.fov_elevation_deg));
        t["sim.min_range"] = number<double>(RIO_REF(world.min_range));
        t["sim.max_range"] = number<double>(RIO_REF(world.max_range));

        t["filter.min_range"] = number<double>(RIO_REF(min_range));
        t["filter.max_range"] = number<double>(RIO_REF(max_range));

        t["egovel.ransac_iters"] = number<int>(RIO_REF(egovel.ransac_iters));
        t["egovel.inlier_thresh"] = number<double>(RIO_REF(egovel.inlier_threshold));
        t["egovel.sigma_doppler"] = number<double>(RIO_REF(egovel.sigma_doppler));
        t["egovel.min_eigen_ratio"] = number<double>(RIO_REF(egovel.min_eigen_ratio));
        t["egovel.seed"] = number<std::uint64_t>(RIO_REF(egovel.seed));

        t["ground.enabled"] = boolean(RIO_REF(ground_filter));
        t["ground.zone_edges"] = list<double>(RIO_REF(ground.zone_edges));
        t["ground.rings"] = list<int>(RIO_REF(ground.rings));
        t["ground.sectors"] = list<int>(RIO_REF(ground.sectors));
        t["ground.fov_deg"] = number<double>(RIO_REF(ground.fov_deg));
        t["ground.max_range"] = number<double>(RIO_REF(ground.max_range));
        t["ground.sensor_height"] = number<double>(RIO_REF(ground.sensor_height));
        t["ground.eps_distance"] = number<double>(RIO_REF(ground.eps_distance));
        t["ground.eps_flatness"] = number<double>(RIO_REF(ground.eps_flatness));
        t["ground.max_iterations"] = number<int>(RIO_REF(ground.max_iterations));
        t["ground.min_points"] = number<int>(RIO_REF(ground.min_points));
        t["ground.below_margin_sigma"] = number<double>(RIO_REF(ground.below_margin_sigma));

        t["gp.lengthscale_rot"] = number<double>(RIO_REF(gp.lengthscale_rot));
        t["gp.lengthscale_vel"] = number<double>(RIO_REF(gp.lengthscale_vel));
        t["gp.gyro_noise"] = number<double>(RIO_REF(gp.gyro_noise));
        t["gp.velocity_noise"] = number<double>(RIO_REF(gp.velocity_noise));
        t["gp.max_window_s"] = number<double>(RIO_REF(gp.max_window));
        t["gp.max_iters"] = number<int>(RIO_REF(gp.max_iters));
        t["gp.grid_nodes"] = number<int>(RIO_REF(gp.grid_nodes));
        t["gp.integration"] = choice<IntegrationMode>(RIO_REF(integration),
                                                      {{"gp", IntegrationMode::Gp}, {"discrete", IntegrationMode::Discrete}});

        t["keyframe.translation"] = number<double>(RIO_REF(keyframe.translation));
        t["keyframe.rotation_deg"] = number<double>(RIO_REF(keyframe.rotation_deg));

        t["icp.enabled"] = boolean(RIO_REF(icp_enabled));
        t["icp.eps"] = number<double>(RIO_REF(dbscan.eps));
        t["icp.min_pts"] = number<int>(RIO_REF(dbscan.min_pts));
        t["icp.gate"] = number<double>(RIO_REF(icp.gate));
        t["icp.kappa0"] = number<double>(RIO_REF(icp.kappa0));
        t["icp.base_weight"] = number<double>(RIO_REF(icp.base_weight));
        t["icp.max_iterations"] = number<int>(RIO_REF(icp.max_iterations));
        t["icp.step_tolerance"] = number<double>(RIO_REF(icp.step_tolerance));
        t["icp.min_correspondences"] = number<int>(RIO_REF(icp.min_correspondences));
        t["icp.cluster_gate"] = number<double>(RIO_REF(cluster_gate));

        t["graph.max_iterations"] = number<int>(RIO_REF(lm.max_iterations));
        t["graph.relative_decrease"] = number<double>(RIO_REF(lm.relative_decrease));
        t["graph.huber_delta"] = number<double>(RIO_REF(lm.huber_delta));
        t["graph.batch_limit"] = number<std::size_t>(RIO_REF(lm.batch_limit));
        t["graph.window"] = number<std::size_t>(RIO_REF(lm.window));

        t["pipeline.queue_capacity"] = number<std::size_t>(RIO_REF(queue_capacity));
        t["pipeline.parallel"] = boolean(RIO_REF(parallel));
        t["pipeline.anchor_to_ground_truth"] = boolean(RIO_REF(anchor_to_ground_truth));
        return t;
    }();
    return table;
}

#undef RIO_REF

}  // namespace

void RunConfig::validate() const {
    if (!(min_range >= 0.0) || !(max_range > min_range)) throw ConfigError("filter: need 0 <= min_range < max_range");
    if (queue_capacity == 0) throw ConfigError("pipeline.queue_capacity must be positive");
    if (!(keyframe.translation > 0.0) || !(keyframe.rotation_deg > 0.0)) {
        throw ConfigError("keyframe thresholds must be positive");
    }
    if (!(cluster_gate > 0.0)) throw ConfigError("icp.cluster_gate must be positive");
    if (lm.window == 0 || lm.window > lm.batch_limit) throw ConfigError("graph.window must be in [1, batch_limit]");
    if (!(gp.max_window > 0.0) || gp.max_iters < 1) throw ConfigError("gp: max_window_s and max_iters must be positive");
    if (egovel.ransac_iters < 1 || !(egovel.inlier_threshold > 0.0)) {
        throw ConfigError("egovel: ransac_iters and inlier_thresh must be positive");
    }
    ground.validate();
    const double qn = std::sqrt(extrinsic[3] * extrinsic[3] + extrinsic[4] * extrinsic[4] +
                                extrinsic[5] * extrinsic[5] + extrinsic[6] * extrinsic[6]);
    if (std::abs(qn - 1.0) > 1e-6) throw ConfigError("extrinsic quaternion must have unit norm");
    if (source == InputSource::Synthetic) {
        world.validate();
    } else if (radar_path.empty() || imu_path.empty()) {
        throw ConfigError("input.radar and input.imu are required when input.source = files");
    }
}

Pose RunConfig::extrinsic_pose() const {
    return Pose(Quat(extrinsic[6], extrinsic[3], extrinsic[4], extrinsic[5]),
                Vec3(extrinsic[0], extrinsic[1], extrinsic[2]));
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& table = registry();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown key '" + key + "'");
    try {
        it->second.set(cfg, value);
    } catch (const ConfigError& e) {
        throw ConfigError(key + ": " + e.what());
    }
}

RunConfig parse_config(std::string_view text, const std::string& source) {
    RunConfig cfg;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        try {
            apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    RunConfig cfg = parse_config(buf.str(), path.string());
    // Relative input paths are taken relative to the config file.
    for (auto* p : {&cfg.radar_path, &cfg.imu_path, &cfg.ground_truth_path}) {
        if (!p->empty() && p->is_relative()) *p = path.parent_path() / *p;
    }
    return cfg;
}

void write_config(std::ostream& os, const RunConfig& cfg) {
    for (const auto& [key, entry] : registry()) os << key << " = " << entry.get(cfg) << '\n';
}

}  // namespace rio
