#pragma once

#include <span>
#include <utility>
#include <vector>

#include "rio/kernels.hpp"
#include "rio/types.hpp"

namespace rio {

struct DbscanParams {
    double eps = 1.0;  // m
    int min_pts = 5;   // neighbours within eps, the point itself included
    Exec exec = Exec::Serial;
};

struct Cluster {
    int id = 0;
    std::vector<int> members;  // ascending point indices
    Vec3 centroid = Vec3::Zero();
    Mat3 covariance = Mat3::Zero();
    /// Smallest eigenvalue of the covariance over its trace, in [0, 1/3].
    double flatness = 0.0;
};

struct Clustering {
    std::vector<Cluster> clusters;
    /// Cluster id per point, -1 for unclustered points.
    std::vector<int> label;
};

/// DBSCAN. Core points have at least min_pts neighbours within eps; clusters
/// are the connected components of core points, numbered by their lowest core
/// index. A border point joins the cluster of its lowest-index core neighbour.
Clustering cluster_scan(std::span<const Vec3> points, const DbscanParams& params = {});

/// Mutual nearest-centroid matches (prev id, curr id) after mapping the current
/// centroids into the previous frame with `prior` (pose of curr in prev).
/// Pairs further apart than `gate` are dropped.
std::vector<std::pair<int, int>> associate_clusters(const std::vector<Cluster>& prev, const std::vector<Cluster>& curr,
                                                    const Pose& prior, double gate = 1.5);

struct IcpParams {
    double gate = 2.5;  // Mahalanobis units
    double kappa0 = 0.05;
    double base_weight = 0.2;
    int max_iterations = 40;
    double step_tolerance = 1e-6;
    int min_correspondences = 10;
    Exec exec = Exec::Serial;
};

/// Clusters of both clouds plus their association; enables cluster weighting.
struct ClusterContext {
    const Clustering* source = nullptr;
    const Clustering* target = nullptr;
    /// (target cluster id, source cluster id), as returned by
    /// associate_clusters(target clusters, source clusters, prior).
    std::vector<std::pair<int, int>> matches;
};

/// One gated correspondence p_target ~ T q_source.
struct IcpTerm {
    int source = 0;
    int target = 0;
    double weight = 1.0;
    /// L^-1 with L L^T = Sigma_p + R Sigma_q R^T at association time.
    Mat3 sqrt_info = Mat3::Identity();
};

struct IcpIteration {
    int correspondences = 0;
    double cost_before = 0.0;  // at the start of the iteration, after association
    double cost_after = 0.0;   // after the accepted step, same correspondences
    double step_norm = 0.0;
};

struct IcpResult {
    Pose transform;  // maps source points into the target frame
    Mat6 covariance = Mat6::Identity();  // [translation; rotation]
    int iterations = 0;
    double final_cost = 0.0;
    bool converged = false;
    /// Per source point at the final association; zero for points without a correspondence.
    std::vector<double> w_clust;
    std::vector<double> w_flat;
    std::vector<IcpTerm> terms;
    std::vector<IcpIteration> log;
};

/// Weighted residuals sqrt(w_i) L_i^-1 (p_i - T q_i) and, when J is given,
/// their Jacobian for T <- retract(T, delta), delta = [rho; phi].
void icp_residuals(std::span<const RadarPoint> source, std::span<const RadarPoint> target,
                   std::span<const IcpTerm> terms, const Pose& T, Eigen::VectorXd& f,
                   Eigen::Matrix<double, Eigen::Dynamic, 6>* J = nullptr);

/// Minimises sum_i (w_clust + w_flat) |p_i - T q_i|^2_{Sigma_i} over T by
/// alternating nearest-neighbour association with Gauss-Newton on SE(3).
/// Without a cluster context every correspondence gets weight 1.
///
/// Throws InsufficientCorrespondences when fewer than min_correspondences
/// survive gating. Non-convergence is reported through `converged`.
IcpResult weighted_icp(std::span<const RadarPoint> source, std::span<const RadarPoint> target,
                       const ClusterContext* clusters, const Pose& init, const IcpParams& params = {});

}  // namespace rio
