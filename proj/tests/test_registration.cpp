#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "rio/error.hpp"
#include "rio/registration.hpp"
#include "rio/rng.hpp"
#include "scenes.hpp"
#include "support.hpp"

namespace rio {
namespace {

using namespace rio::testing;

// Brute-force density reachability with the same border rule as cluster_scan.
std::vector<int> dbscan_oracle(const std::vector<Vec3>& pts, double eps, int min_pts) {
    const std::size_t n = pts.size();
    auto close = [&](std::size_t i, std::size_t j) { return (pts[i] - pts[j]).norm() <= eps; };
    std::vector<char> core(n);
    for (std::size_t i = 0; i < n; ++i) {
        int count = 0;
        for (std::size_t j = 0; j < n; ++j) count += close(i, j);
        core[i] = count >= min_pts;
    }
    std::vector<int> label(n, -1);
    int next = 0;
    for (std::size_t seed = 0; seed < n; ++seed) {
        if (!core[seed] || label[seed] >= 0) continue;
        std::deque<std::size_t> open{seed};
        label[seed] = next;
        while (!open.empty()) {
            const std::size_t i = open.front();
            open.pop_front();
            for (std::size_t j = 0; j < n; ++j) {
                if (core[j] && label[j] < 0 && close(i, j)) {
                    label[j] = next;
                    open.push_back(j);
                }
            }
        }
        ++next;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (core[j] && close(i, j)) {
                label[i] = label[j];
                break;
            }
        }
    }
    return label;
}

std::vector<Vec3> blobs_and_clutter(Rng& rng, int blobs, int per_blob, int clutter, double extent) {
    std::vector<Vec3> pts;
    for (int b = 0; b < blobs; ++b) {
        const Vec3 c(rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-2, 2));
        for (int i = 0; i < per_blob; ++i) pts.push_back(c + 0.4 * Vec3(rng.normal(), rng.normal(), rng.normal()));
    }
    for (int i = 0; i < clutter; ++i) {
        pts.emplace_back(rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-2, 2));
    }
    // Interleave so cluster membership does not follow index order.
    for (std::size_t i = pts.size(); i > 1; --i) std::swap(pts[i - 1], pts[rng.uniform_index(i)]);
    return pts;
}

TEST(Dbscan, MatchesBruteForceReachability) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto pts = blobs_and_clutter(rng, 6, 12, 60, 10.0);
        const auto serial = cluster_scan(pts);
        DbscanParams par;
        par.exec = Exec::Parallel;
        const auto parallel = cluster_scan(pts, par);
        EXPECT_EQ(serial.label, dbscan_oracle(pts, 1.0, 5));
        EXPECT_EQ(serial.label, parallel.label);
        for (const auto& c : serial.clusters) {
            EXPECT_GE(c.members.size(), 5u);
            EXPECT_TRUE(std::is_sorted(c.members.begin(), c.members.end()));
            EXPECT_GE(c.flatness, 0.0);
            EXPECT_LE(c.flatness, 1.0 / 3.0);
        }
    }
}

TEST(Dbscan, IsolatedPointsStayUnclustered) {
    std::vector<Vec3> pts;
    for (int i = 0; i < 5; ++i) pts.emplace_back(0.1 * i, 0.0, 0.0);
    pts.emplace_back(50.0, 0.0, 0.0);
    pts.emplace_back(0.2, 0.0, 1.0);  // border: within eps of a core point only
    const auto c = cluster_scan(pts);
    ASSERT_EQ(c.clusters.size(), 1u);
    EXPECT_EQ(c.label[5], -1);
    EXPECT_EQ(c.label[6], 0);
    EXPECT_EQ(c.clusters[0].members.size(), 6u);
}

TEST(Dbscan, FlatnessSeparatesPlanesFromBlobs) {
    Rng rng(2);
    std::vector<Vec3> plane, blob;
    for (int i = 0; i < 200; ++i) {
        plane.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0);
        blob.push_back(0.3 * Vec3(rng.normal(), rng.normal(), rng.normal()));
    }
    const auto cp = cluster_scan(plane);
    const auto cb = cluster_scan(blob);
    ASSERT_EQ(cp.clusters.size(), 1u);
    ASSERT_EQ(cb.clusters.size(), 1u);
    EXPECT_LT(cp.clusters[0].flatness, 1e-12);
    EXPECT_GT(cb.clusters[0].flatness, 0.25);
    EXPECT_LT((cp.clusters[0].centroid - Vec3::Zero()).norm(), 0.1);
}

TEST(Dbscan, RigidMotionPreservesClusters) {
    Rng rng(3);
    const auto pts = blobs_and_clutter(rng, 5, 15, 40, 8.0);
    const Pose G = random_transform(rng, 90.0, 10.0);
    std::vector<Vec3> moved;
    for (const auto& p : pts) moved.push_back(G * p);
    const auto a = cluster_scan(pts);
    const auto b = cluster_scan(moved);
    ASSERT_EQ(a.label, b.label);
    for (std::size_t c = 0; c < a.clusters.size(); ++c) {
        EXPECT_NEAR(a.clusters[c].flatness, b.clusters[c].flatness, 1e-9);
        EXPECT_LT((G * a.clusters[c].centroid - b.clusters[c].centroid).norm(), 1e-9);
    }
}

TEST(ClusterAssociation, MutualNearestWithinGate) {
    std::vector<Cluster> prev(3), curr(4);
    const Pose prior(so3_exp_quat(Vec3(0, 0, 0.2)), Vec3(1.0, 0.5, 0.0));
    const std::vector<Vec3> world{Vec3(5, 0, 0), Vec3(0, 6, 1), Vec3(-4, -4, 0)};
    for (int i = 0; i < 3; ++i) {
        prev[i].id = i;
        prev[i].centroid = world[i];
    }
    // Current clusters in reverse order, one offset by 1 m, plus an unmatched one.
    curr[0].id = 0;
    curr[0].centroid = se3_inverse(prior) * world[2];
    curr[1].id = 1;
    curr[1].centroid = se3_inverse(prior) * (world[1] + Vec3(0.0, 1.0, 0.0));
    curr[2].id = 2;
    curr[2].centroid = se3_inverse(prior) * world[0];
    curr[3].id = 3;
    curr[3].centroid = se3_inverse(prior) * Vec3(30, 30, 0);
    auto m = associate_clusters(prev, curr, prior);
    std::sort(m.begin(), m.end());
    const std::vector<std::pair<int, int>> expected{{0, 2}, {1, 1}, {2, 0}};
    EXPECT_EQ(m, expected);
    const auto tight = associate_clusters(prev, curr, prior, 0.5);
    EXPECT_EQ(tight.size(), 2u);
    EXPECT_TRUE(associate_clusters({}, curr, prior).empty());
}

TEST(ClusterAssociation, OnlyMutualPairsSurvive) {
    std::vector<Cluster> prev(2), curr(1);
    prev[0].id = 0;
    prev[0].centroid = Vec3(0, 0, 0);
    prev[1].id = 1;
    prev[1].centroid = Vec3(0.5, 0, 0);
    curr[0].id = 0;
    curr[0].centroid = Vec3(0.6, 0, 0);
    const auto m = associate_clusters(prev, curr, Pose::identity());
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m[0], std::make_pair(1, 0));
}

TEST(WeightedIcp, IdenticalCloudsGiveIdentityImmediately) {
    Rng rng(4);
    const auto cloud = cloud_of(structured_scene(rng), 0.1);
    const auto res = weighted_icp(cloud, cloud, nullptr, Pose::identity());
    EXPECT_TRUE(res.converged);
    EXPECT_EQ(res.iterations, 1);
    EXPECT_EQ(res.transform.matrix(), Pose::identity().matrix());
    EXPECT_EQ(res.final_cost, 0.0);
}

TEST(WeightedIcp, RecoversKnownTransforms) {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const auto target = cloud_of(structured_scene(rng), 0.1);
        const Pose T = random_transform(rng, 15.0, 1.0);
        const auto source = transformed(target, se3_inverse(T));
        // Start inside the basin: a small perturbation of the truth.
        Vec6 kick;
        for (int i = 0; i < 3; ++i) kick(i) = rng.normal(0.0, 0.02);
        for (int i = 3; i < 6; ++i) kick(i) = rng.normal(0.0, 0.003);
        const auto res = weighted_icp(source, target, nullptr, retract(T, kick));
        EXPECT_TRUE(res.converged) << trial;
        EXPECT_LT(pose_error(res.transform, T), 1e-6) << trial;
        EXPECT_TRUE(is_symmetric_psd(Mat3(res.covariance.topLeftCorner<3, 3>())));
    }
}

TEST(WeightedIcp, ClusterWeightingResistsOffStructureNoise) {
    Rng rng(6);
    int wins = 0;
    const int trials = 100;
    for (int trial = 0; trial < trials; ++trial) {
        const NoisyPair pair = corrupted_pair(rng);
        const auto sc = cluster_scan(positions(pair.source));
        const auto tc = cluster_scan(positions(pair.target));
        ClusterContext ctx{&sc, &tc, associate_clusters(tc.clusters, sc.clusters, pair.truth)};
        const auto weighted = weighted_icp(pair.source, pair.target, &ctx, pair.truth);
        const auto uniform = weighted_icp(pair.source, pair.target, nullptr, pair.truth);
        wins += pose_error(weighted.transform, pair.truth) <= pose_error(uniform.transform, pair.truth);
    }
    EXPECT_GE(wins, 80);
}

TEST(WeightedIcp, WeightsFollowClusterMembership) {
    Rng rng(7);
    const NoisyPair pair = corrupted_pair(rng);
    const auto sc = cluster_scan(positions(pair.source));
    const auto tc = cluster_scan(positions(pair.target));
    ClusterContext ctx{&sc, &tc, associate_clusters(tc.clusters, sc.clusters, pair.truth)};
    IcpParams params;
    const auto res = weighted_icp(pair.source, pair.target, &ctx, pair.truth, params);
    ASSERT_FALSE(res.terms.empty());
    for (const auto& term : res.terms) {
        const auto i = static_cast<std::size_t>(term.source);
        const int cs = sc.label[i];
        if (cs < 0) {
            EXPECT_EQ(term.weight, params.base_weight);
            EXPECT_EQ(res.w_clust[i], 0.0);
            continue;
        }
        const double flat = std::exp(-sc.clusters[static_cast<std::size_t>(cs)].flatness / params.kappa0);
        EXPECT_NEAR(res.w_flat[i], flat, 1e-15);
        EXPECT_TRUE(res.w_clust[i] == 0.0 || res.w_clust[i] == 1.0);
        EXPECT_NEAR(term.weight, res.w_clust[i] + res.w_flat[i], 1e-15);
    }
    int matched = 0;
    for (double w : res.w_clust) matched += w == 1.0;
    EXPECT_GT(matched, 50);
}

TEST(WeightedIcp, EquivariantUnderRigidMotion) {
    Rng rng(8);
    IcpParams params;
    params.step_tolerance = 1e-12;
    params.max_iterations = 100;
    for (int trial = 0; trial < 20; ++trial) {
        const NoisyPair pair = corrupted_pair(rng);
        const Pose G = random_transform(rng, 120.0, 20.0);
        const auto a = weighted_icp(pair.source, pair.target, nullptr, pair.truth, params);
        const auto b = weighted_icp(transformed(pair.source, G), transformed(pair.target, G), nullptr,
                                    G * pair.truth * se3_inverse(G), params);
        EXPECT_LT(pose_error(b.transform, G * a.transform * se3_inverse(G)), 1e-6) << trial;
    }
}

TEST(WeightedIcp, CostNeverIncreasesWithinAnIteration) {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const NoisyPair pair = corrupted_pair(rng);
        Vec6 kick;
        for (int i = 0; i < 6; ++i) kick(i) = rng.normal(0.0, i < 3 ? 0.05 : 0.005);
        const auto res = weighted_icp(pair.source, pair.target, nullptr, retract(pair.truth, kick));
        ASSERT_FALSE(res.log.empty());
        for (const auto& it : res.log) EXPECT_LE(it.cost_after, it.cost_before);
    }
}

TEST(WeightedIcp, ResidualJacobianMatchesFiniteDifferences) {
    Rng rng(10);
    const NoisyPair pair = corrupted_pair(rng);
    const auto res = weighted_icp(pair.source, pair.target, nullptr, pair.truth);
    for (int trial = 0; trial < 20; ++trial) {
        const Pose T = random_transform(rng, 60.0, 3.0);
        Eigen::VectorXd f;
        Eigen::Matrix<double, Eigen::Dynamic, 6> J;
        icp_residuals(pair.source, pair.target, res.terms, T, f, &J);
        auto fn = [&](const Eigen::VectorXd& d) {
            Eigen::VectorXd out;
            icp_residuals(pair.source, pair.target, res.terms, retract(T, Vec6(d)), out);
            return out;
        };
        const Eigen::MatrixXd Jn = testing::numeric_jacobian(fn, Eigen::VectorXd::Zero(6));
        EXPECT_LT(testing::relative_jacobian_error(J, Jn), 1e-6);
    }
}

TEST(WeightedIcp, CovarianceIsSymmetricPositiveDefinite) {
    Rng rng(11);
    const NoisyPair pair = corrupted_pair(rng);
    const auto res = weighted_icp(pair.source, pair.target, nullptr, pair.truth);
    EXPECT_LT((res.covariance - res.covariance.transpose()).norm(), 1e-15);
    const Eigen::SelfAdjointEigenSolver<Mat6> eig(res.covariance);
    EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
}

TEST(WeightedIcp, TooFewCorrespondencesThrow) {
    std::vector<RadarPoint> few;
    for (int i = 0; i < 6; ++i) few.push_back(make_point(Vec3(i, i * i, 0.3 * i), 0.1));
    EXPECT_THROW(weighted_icp(few, few, nullptr, Pose::identity()), InsufficientCorrespondences);
    Rng rng(12);
    const auto cloud = cloud_of(structured_scene(rng), 0.1);
    // Far outside the gate: nothing associates.
    EXPECT_THROW(weighted_icp(cloud, cloud, nullptr, Pose(Quat::Identity(), Vec3(200, 0, 0))),
                 InsufficientCorrespondences);
    EXPECT_THROW(weighted_icp({}, cloud, nullptr, Pose::identity()), InsufficientCorrespondences);
}

TEST(WeightedIcp, IterationCapReturnsFlaggedEstimate) {
    Rng rng(13);
    const auto target = cloud_of(structured_scene(rng), 0.1);
    const Pose T = random_transform(rng, 5.0, 0.3);
    const auto source = transformed(target, se3_inverse(T));
    IcpParams params;
    params.max_iterations = 1;
    Vec6 kick;
    kick << 0.05, -0.03, 0.02, 0.004, -0.003, 0.002;
    const auto res = weighted_icp(source, target, nullptr, retract(T, kick), params);
    EXPECT_FALSE(res.converged);
    EXPECT_EQ(res.iterations, 1);
    EXPECT_LT(pose_error(res.transform, T), pose_error(retract(T, kick), T));
}

TEST(WeightedIcp, SerialAndParallelAgree) {
    Rng rng(14);
    const NoisyPair pair = corrupted_pair(rng);
    IcpParams serial, parallel;
    parallel.exec = Exec::Parallel;
    const auto a = weighted_icp(pair.source, pair.target, nullptr, pair.truth, serial);
    const auto b = weighted_icp(pair.source, pair.target, nullptr, pair.truth, parallel);
    EXPECT_EQ(a.transform.matrix(), b.transform.matrix());
    EXPECT_EQ(a.iterations, b.iterations);
}

}  // namespace
}  // namespace rio
