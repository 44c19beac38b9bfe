// Serial reference vs OpenMP path for each kernel and the stages built on them.
// The last benchmark argument selects the path: 0 serial, 1 parallel.

#include <benchmark/benchmark.h>

#include <vector>

#include "rio/egovel.hpp"
#include "rio/ground.hpp"
#include "rio/kernels.hpp"
#include "rio/registration.hpp"
#include "rio/rng.hpp"
#include "rio/simulator.hpp"

namespace {

using namespace rio;

Exec exec_of(const benchmark::State& state) { return state.range(1) ? Exec::Parallel : Exec::Serial; }

std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed, double extent = 30.0) {
    Rng rng(seed);
    std::vector<Vec3> out(n);
    for (auto& p : out) p = Vec3(rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-3.0, 5.0));
    return out;
}

const SyntheticSequence& sequence() {
    static const SyntheticSequence seq = [] {
        SyntheticWorldConfig cfg;
        cfg.path_length = 20.0;
        cfg.multipath_fraction = 0.1;
        return generate_synthetic(cfg, 5);
    }();
    return seq;
}

void BM_NearestNeighbors(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto targets = random_points(n, 1), queries = random_points(n, 2);
    std::vector<int> idx(n);
    std::vector<double> d(n);
    for (auto _ : state) {
        nearest_neighbors(exec_of(state), targets, queries, idx, d);
        benchmark::DoNotOptimize(idx.data());
    }
}
BENCHMARK(BM_NearestNeighbors)->ArgsProduct({{500, 2000}, {0, 1}});

void BM_RadiusNeighbors(benchmark::State& state) {
    const auto pts = random_points(static_cast<std::size_t>(state.range(0)), 3);
    for (auto _ : state) benchmark::DoNotOptimize(radius_neighbors(exec_of(state), pts, 1.0));
}
BENCHMARK(BM_RadiusNeighbors)->ArgsProduct({{500, 2000}, {0, 1}});

void BM_DopplerInliers(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(4);
    std::vector<Vec3> bearings(n), hyps(200);
    std::vector<double> dopplers(n);
    for (std::size_t i = 0; i < n; ++i) {
        bearings[i] = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
        dopplers[i] = rng.normal(0.0, 3.0);
    }
    for (auto& h : hyps) h = Vec3(rng.normal(0, 3), rng.normal(0, 1), rng.normal(0, 0.3));
    std::vector<int> counts(hyps.size());
    for (auto _ : state) {
        count_doppler_inliers(exec_of(state), bearings, dopplers, hyps, 0.1, counts);
        benchmark::DoNotOptimize(counts.data());
    }
}
BENCHMARK(BM_DopplerInliers)->ArgsProduct({{500, 2000}, {0, 1}});

void BM_PlaneMahalanobis(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto pts = random_points(n, 6);
    const SensorNoise noise{0.1, 0.005, 0.005};
    std::vector<Mat3> covs;
    for (const auto& p : pts) covs.push_back(point_covariance(p, noise));
    std::vector<double> out(n);
    for (auto _ : state) {
        plane_mahalanobis_sq(exec_of(state), pts, covs, Vec3::UnitZ(), 2.0, out);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_PlaneMahalanobis)->ArgsProduct({{2000, 20000}, {0, 1}});

void BM_EgoVelocity(benchmark::State& state) {
    const auto& scan = sequence().scans[static_cast<std::size_t>(state.range(0))];
    EgoVelocityParams p;
    p.exec = exec_of(state);
    for (auto _ : state) benchmark::DoNotOptimize(estimate_ego_velocity(scan, p));
}
BENCHMARK(BM_EgoVelocity)->ArgsProduct({{10}, {0, 1}});

void BM_SegmentGround(benchmark::State& state) {
    const auto& scan = sequence().scans[static_cast<std::size_t>(state.range(0))];
    CzmConfig cfg;
    cfg.exec = exec_of(state);
    for (auto _ : state) benchmark::DoNotOptimize(segment_ground(scan, nullptr, cfg));
}
BENCHMARK(BM_SegmentGround)->ArgsProduct({{10}, {0, 1}});

void BM_WeightedIcp(benchmark::State& state) {
    const auto& a = sequence().scans[static_cast<std::size_t>(state.range(0))].points;
    const auto& b = sequence().scans[static_cast<std::size_t>(state.range(0)) + 3].points;
    IcpParams p;
    p.exec = exec_of(state);
    for (auto _ : state) benchmark::DoNotOptimize(weighted_icp(b, a, nullptr, Pose::identity(), p));
}
BENCHMARK(BM_WeightedIcp)->ArgsProduct({{10}, {0, 1}});

}  // namespace

BENCHMARK_MAIN();
