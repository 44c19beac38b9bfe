#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rio/config.hpp"
#include "rio/egovel.hpp"
#include "rio/error.hpp"
#include "rio/evaluation.hpp"
#include "rio/ground.hpp"
#include "rio/io.hpp"
#include "rio/pipeline.hpp"
#include "rio/simulator.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kConfigError = 2, kDataError = 3, kEstimationFailure = 4 };

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string output_dir = "out";
    bool disable_ground_filter = false;
    std::string integration;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config, "key = value config file");
    cmd->add_option("--seed", o.seed, "Seed for the synthetic world");
    cmd->add_option("--output-dir", o.output_dir, "Directory for outputs")->capture_default_str();
    cmd->add_flag("--disable-ground-filter", o.disable_ground_filter, "Skip ground segmentation");
    cmd->add_option("--integration", o.integration, "Preintegration mode")->check(CLI::IsMember({"gp", "discrete"}));
    cmd->add_option("--set", o.overrides, "Extra key=value overrides, applied last");
}

rio::RunConfig resolve_config(const CommonOptions& o) {
    rio::RunConfig cfg = o.config.empty() ? rio::RunConfig{} : rio::load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.disable_ground_filter) cfg.ground_filter = false;
    if (!o.integration.empty()) rio::apply_setting(cfg, "gp.integration", o.integration);
    for (const auto& kv : o.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw rio::ConfigError("--set expects key=value, got '" + kv + "'");
        rio::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream out(p);
    if (!out) throw rio::Error("cannot write " + p.string());
    out << std::setprecision(17);
    return out;
}

void write_points(const fs::path& p, const std::vector<rio::Vec3>& pts) {
    auto out = open_out(p);
    for (const auto& x : pts) out << x.x() << ' ' << x.y() << ' ' << x.z() << '\n';
}

int cmd_run(const CommonOptions& o) {
    const rio::RunConfig cfg = resolve_config(o);
    const rio::SensorData data = rio::load_inputs(cfg);
    const rio::OdometryResult res = rio::run_odometry(data, cfg);

    const fs::path dir = o.output_dir;
    fs::create_directories(dir);
    rio::save_tum(dir / "trajectory.txt", res.trajectory);
    if (!data.ground_truth.empty()) rio::save_tum(dir / "groundtruth.txt", data.ground_truth);
    write_points(dir / "map.txt", res.map);
    {
        auto out = open_out(dir / "graph.g2o");
        res.graph.write_g2o(out);
    }
    {
        auto out = open_out(dir / "config.txt");
        rio::write_config(out, cfg);
    }
    {
        auto out = open_out(dir / "log.txt");
        for (const auto& line : res.log) out << line << '\n';
    }

    json timing = json::array();
    for (const auto& s : res.timing.stages) {
        timing.push_back({{"stage", s.name}, {"seconds", s.seconds}, {"calls", s.calls}});
    }
    const json summary = {
        {"scans", res.stats.scans},
        {"scans_skipped", res.stats.scans_skipped},
        {"keyframes", res.stats.keyframes},
        {"icp_edges", res.stats.icp_edges},
        {"icp_rejected", res.stats.icp_rejected},
        {"gp_fallbacks", res.stats.gp_fallbacks},
        {"map_points", res.map.size()},
        {"queue_high_water", res.stats.queue_high_water},
        {"wall_seconds", res.timing.wall_seconds},
        {"cpu_seconds", res.timing.cpu_seconds},
        {"stage_seconds", res.timing.stage_total()},
        {"timing", timing},
    };
    open_out(dir / "summary.json") << summary.dump(2) << '\n';

    std::printf("%zu scans (%zu skipped), %zu keyframes, %zu registration edges\n", res.stats.scans,
                res.stats.scans_skipped, res.stats.keyframes, res.stats.icp_edges);
    std::printf("%-20s %10s %8s\n", "stage", "cpu [s]", "calls");
    for (const auto& s : res.timing.stages) std::printf("%-20s %10.4f %8zu\n", s.name.c_str(), s.seconds, s.calls);
    std::printf("%-20s %10.4f   (wall %.4f s, process cpu %.4f s)\n", "total", res.timing.stage_total(),
                res.timing.wall_seconds, res.timing.cpu_seconds);
    std::printf("outputs in %s\n", dir.string().c_str());
    return kOk;
}

int cmd_simulate(const CommonOptions& o) {
    rio::RunConfig cfg = resolve_config(o);
    const rio::SyntheticSequence seq = rio::generate_synthetic(cfg.world, cfg.seed);
    const fs::path dir = o.output_dir;
    fs::create_directories(dir);
    rio::save_radar_sequence(dir / "radar", seq.scans);
    rio::save_imu_sequence(dir / "imu.txt", seq.imu);
    rio::save_tum(dir / "groundtruth.txt", seq.ground_truth);
    {
        auto out = open_out(dir / "labels.txt");
        for (std::size_t k = 0; k < seq.labels.size(); ++k) {
            out << seq.scans[k].timestamp;
            for (const auto l : seq.labels[k]) out << ' ' << static_cast<int>(l);
            out << '\n';
        }
    }
    cfg.source = rio::InputSource::Files;
    cfg.radar_path = "radar";
    cfg.imu_path = "imu.txt";
    cfg.ground_truth_path = "groundtruth.txt";
    cfg.ingest.format = rio::RadarFormat::ManifestDirectory;
    cfg.ingest.noise = {cfg.world.sigma_range, cfg.world.sigma_azimuth, cfg.world.sigma_elevation};
    {
        auto out = open_out(dir / "run.cfg");
        rio::write_config(out, cfg);
    }
    std::printf("%zu scans, %zu imu samples written to %s (replay with --config %s)\n", seq.scans.size(),
                seq.imu.size(), dir.string().c_str(), (dir / "run.cfg").string().c_str());
    return kOk;
}

rio::Alignment parse_align(const std::string& s) {
    return s == "none" ? rio::Alignment::None : rio::Alignment::Se3Umeyama;
}

json report_json(const rio::EvalReport& r) {
    return {{"matched", r.matched},
            {"alignment", r.alignment == rio::Alignment::None ? "none" : "se3"},
            {"ate_rmse_m", r.ate_rmse},
            {"rpe_trans_percent", r.rpe_trans},
            {"rpe_rot_deg_per_m", r.rpe_rot},
            {"path_length_m", r.path_length},
            {"elevation_max_error_m", r.elevation_max_error},
            {"elevation_percent", r.elevation_percent}};
}

struct EvalOptions {
    std::string estimate, ground_truth, align = "se3", output_dir;
    double max_dt = 0.05;
};

void add_eval(CLI::App* cmd, EvalOptions& o, bool need_gt) {
    cmd->add_option("--estimate", o.estimate, "Estimated TUM trajectory")->required();
    auto* gt = cmd->add_option("--ground-truth", o.ground_truth, "Reference TUM trajectory");
    if (need_gt) gt->required();
    cmd->add_option("--align", o.align, "Alignment before computing errors")
        ->check(CLI::IsMember({"none", "se3"}))
        ->capture_default_str();
    cmd->add_option("--max-dt", o.max_dt, "Association window in seconds")->capture_default_str();
}

int cmd_evaluate(const EvalOptions& o) {
    const rio::Trajectory est = rio::load_tum(o.estimate);
    const rio::Trajectory gt = rio::load_tum(o.ground_truth);
    const rio::EvalReport r = rio::evaluate(est, gt, parse_align(o.align), o.max_dt);
    const json j = report_json(r);
    std::cout << j.dump(2) << '\n';
    if (!o.output_dir.empty()) {
        fs::create_directories(o.output_dir);
        open_out(fs::path(o.output_dir) / "report.json") << j.dump(2) << '\n';
        rio::emit_plot_data(o.output_dir, est, &gt, &r);
    }
    return kOk;
}

int cmd_plot_data(const EvalOptions& o) {
    const rio::Trajectory est = rio::load_tum(o.estimate);
    const fs::path dir = o.output_dir.empty() ? fs::path("plots") : fs::path(o.output_dir);
    rio::PlotData d;
    if (o.ground_truth.empty()) {
        d = rio::emit_plot_data(dir, est);
    } else {
        const rio::Trajectory gt = rio::load_tum(o.ground_truth);
        const rio::EvalReport r = rio::evaluate(est, gt, parse_align(o.align), o.max_dt);
        d = rio::emit_plot_data(dir, est, &gt, &r);
    }
    std::printf("%zu rows per series written to %s\n", d.elevation.rows.size(), dir.string().c_str());
    return kOk;
}

int cmd_segment_ground(const CommonOptions& o, const std::string& scan_file, std::size_t scan_index) {
    const rio::RunConfig cfg = resolve_config(o);
    rio::RadarScan scan;
    if (!scan_file.empty()) {
        rio::IngestOptions opt = cfg.ingest;
        opt.extrinsic = cfg.extrinsic_pose();
        scan = rio::load_radar_scan(scan_file, opt);
    } else {
        rio::SyntheticWorldConfig world = cfg.world;
        const rio::SyntheticSequence seq = rio::generate_synthetic(world, cfg.seed);
        if (scan_index >= seq.scans.size()) {
            throw rio::ConfigError("--scan-index " + std::to_string(scan_index) + " out of range (" +
                                   std::to_string(seq.scans.size()) + " scans)");
        }
        scan = seq.scans[scan_index];
    }
    scan = rio::radius_filter(scan, cfg.min_range, cfg.max_range);
    std::optional<rio::EgoVelocity> ego;
    try {
        ego = rio::estimate_ego_velocity(scan, cfg.egovel);
    } catch (const rio::Error& e) {
        std::fprintf(stderr, "ego-velocity unavailable (%s); heights not refined\n", e.what());
    }
    const rio::GroundSegmentation seg = rio::segment_ground(scan, ego ? &*ego : nullptr, cfg.ground);
    const fs::path dir = o.output_dir;
    fs::create_directories(dir);
    auto out = open_out(dir / "segmentation.txt");
    static const char* names[] = {"ground", "static", "noise", "dynamic"};
    for (std::size_t i = 0; i < scan.points.size(); ++i) {
        const auto& p = scan.points[i];
        out << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z() << ' ' << p.doppler << ' '
            << names[static_cast<int>(seg.labels[i])] << '\n';
    }
    std::printf("%zu points: %zu ground, %zu static, %zu noise\n", scan.points.size(), seg.ground.size(),
                seg.static_points.size(), seg.noise.size());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"4D radar-inertial odometry"};
    app.require_subcommand(1);

    CommonOptions run_opt, sim_opt, seg_opt;
    EvalOptions eval_opt, plot_opt;
    std::string scan_file;
    std::size_t scan_index = 0;

    auto* run = app.add_subcommand("run", "Run odometry and write trajectory, map and timing");
    add_common(run, run_opt);
    auto* sim = app.add_subcommand("simulate", "Write a synthetic sequence as replayable files");
    add_common(sim, sim_opt);
    auto* evaluate = app.add_subcommand("evaluate", "ATE / RPE / elevation drift against ground truth");
    add_eval(evaluate, eval_opt, true);
    evaluate->add_option("--output-dir", eval_opt.output_dir, "Also write report.json and plot series here");
    auto* seg = app.add_subcommand("segment-ground", "Label the points of one scan");
    add_common(seg, seg_opt);
    seg->add_option("--scan", scan_file, "Scan file with `x y z doppler power` rows");
    seg->add_option("--scan-index", scan_index, "Synthetic scan to segment when --scan is not given");
    auto* plot = app.add_subcommand("plot-data", "Write xy, elevation and rotation series");
    add_eval(plot, plot_opt, false);
    plot->add_option("--output-dir", plot_opt.output_dir, "Directory for the series (default plots)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*run) return cmd_run(run_opt);
        if (*sim) return cmd_simulate(sim_opt);
        if (*evaluate) return cmd_evaluate(eval_opt);
        if (*seg) return cmd_segment_ground(seg_opt, scan_file, scan_index);
        if (*plot) return cmd_plot_data(plot_opt);
    } catch (const rio::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfigError;
    } catch (const rio::StageError& e) {
        std::fprintf(stderr, "estimation failed in %s\n", e.what());
        return kEstimationFailure;
    } catch (const rio::ParseError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kDataError;
    } catch (const rio::SequenceOrderError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kDataError;
    } catch (const rio::NoOverlap& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kDataError;
    } catch (const rio::Error& e) {
        std::fprintf(stderr, "estimation failed: %s\n", e.what());
        return kEstimationFailure;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kEstimationFailure;
    }
    return kOk;
}
