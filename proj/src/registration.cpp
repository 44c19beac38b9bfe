#include "rio/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "rio/error.hpp"

namespace rio {

namespace {

int find_root(std::vector<int>& parent, int i) {
    while (parent[static_cast<std::size_t>(i)] != i) {
        int& p = parent[static_cast<std::size_t>(i)];
        p = parent[static_cast<std::size_t>(p)];
        i = p;
    }
    return i;
}

void unite(std::vector<int>& parent, int a, int b) {
    a = find_root(parent, a);
    b = find_root(parent, b);
    if (a == b) return;
    // Keep the lowest index as root so cluster numbering is order independent.
    if (a < b) parent[static_cast<std::size_t>(b)] = a;
    else parent[static_cast<std::size_t>(a)] = b;
}

void summarise(Cluster& c, std::span<const Vec3> points) {
    Vec3 mean = Vec3::Zero();
    for (int i : c.members) mean += points[static_cast<std::size_t>(i)];
    mean /= static_cast<double>(c.members.size());
    Mat3 C = Mat3::Zero();
    for (int i : c.members) {
        const Vec3 d = points[static_cast<std::size_t>(i)] - mean;
        C += d * d.transpose();
    }
    C /= static_cast<double>(c.members.size());
    c.centroid = mean;
    c.covariance = C;
    const double trace = C.trace();
    if (trace <= 0.0) {
        c.flatness = 0.0;
        return;
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(C, Eigen::EigenvaluesOnly);
    c.flatness = std::clamp(eig.eigenvalues()(0) / trace, 0.0, 1.0 / 3.0);
}

}  // namespace

Clustering cluster_scan(std::span<const Vec3> points, const DbscanParams& params) {
    if (!(params.eps > 0.0) || params.min_pts < 1) throw ConfigError("cluster_scan: eps must be > 0 and min_pts >= 1");
    const int n = static_cast<int>(points.size());
    const auto nb = radius_neighbors(params.exec, points, params.eps);
    std::vector<char> core(points.size());
    for (int i = 0; i < n; ++i) {
        core[static_cast<std::size_t>(i)] = static_cast<int>(nb[static_cast<std::size_t>(i)].size()) >= params.min_pts;
    }

    std::vector<int> parent(points.size());
    std::iota(parent.begin(), parent.end(), 0);
    for (int i = 0; i < n; ++i) {
        if (!core[static_cast<std::size_t>(i)]) continue;
        for (int j : nb[static_cast<std::size_t>(i)]) {
            if (core[static_cast<std::size_t>(j)]) unite(parent, i, j);
        }
    }

    Clustering out;
    out.label.assign(points.size(), -1);
    std::vector<int> id_of_root(points.size(), -1);
    for (int i = 0; i < n; ++i) {
        if (!core[static_cast<std::size_t>(i)]) continue;
        const auto root = static_cast<std::size_t>(find_root(parent, i));
        if (id_of_root[root] < 0) id_of_root[root] = static_cast<int>(out.clusters.size()), out.clusters.emplace_back();
        out.label[static_cast<std::size_t>(i)] = id_of_root[root];
    }
    for (int i = 0; i < n; ++i) {
        if (core[static_cast<std::size_t>(i)]) continue;
        for (int j : nb[static_cast<std::size_t>(i)]) {
            if (core[static_cast<std::size_t>(j)]) {
                out.label[static_cast<std::size_t>(i)] = out.label[static_cast<std::size_t>(j)];
                break;
            }
        }
    }
    for (int i = 0; i < n; ++i) {
        const int id = out.label[static_cast<std::size_t>(i)];
        if (id >= 0) out.clusters[static_cast<std::size_t>(id)].members.push_back(i);
    }
    for (std::size_t c = 0; c < out.clusters.size(); ++c) {
        out.clusters[c].id = static_cast<int>(c);
        summarise(out.clusters[c], points);
    }
    return out;
}

std::vector<std::pair<int, int>> associate_clusters(const std::vector<Cluster>& prev, const std::vector<Cluster>& curr,
                                                    const Pose& prior, double gate) {
    std::vector<Vec3> a, b;
    for (const auto& c : prev) a.push_back(c.centroid);
    for (const auto& c : curr) b.push_back(prior * c.centroid);
    std::vector<std::pair<int, int>> out;
    if (a.empty() || b.empty()) return out;
    std::vector<int> a_to_b(a.size()), b_to_a(b.size());
    std::vector<double> d_ab(a.size()), d_ba(b.size());
    nearest_neighbors(Exec::Serial, b, a, a_to_b, d_ab);
    nearest_neighbors(Exec::Serial, a, b, b_to_a, d_ba);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const int j = a_to_b[i];
        if (b_to_a[static_cast<std::size_t>(j)] == static_cast<int>(i) && d_ab[i] <= gate * gate) {
            out.emplace_back(prev[i].id, curr[static_cast<std::size_t>(j)].id);
        }
    }
    return out;
}

void icp_residuals(std::span<const RadarPoint> source, std::span<const RadarPoint> target,
                   std::span<const IcpTerm> terms, const Pose& T, Eigen::VectorXd& f,
                   Eigen::Matrix<double, Eigen::Dynamic, 6>* J) {
    const Mat3 R = T.rotation_matrix();
    const auto m = static_cast<Eigen::Index>(terms.size());
    f.resize(3 * m);
    if (J) J->resize(3 * m, 6);
    for (Eigen::Index k = 0; k < m; ++k) {
        const IcpTerm& term = terms[static_cast<std::size_t>(k)];
        const Vec3& q = source[static_cast<std::size_t>(term.source)].position;
        const Vec3& p = target[static_cast<std::size_t>(term.target)].position;
        const Mat3 S = std::sqrt(term.weight) * term.sqrt_info;
        f.segment<3>(3 * k) = S * (p - (R * q + T.translation()));
        if (J) {
            J->block<3, 3>(3 * k, 0) = -S * R;
            J->block<3, 3>(3 * k, 3) = S * R * skew(q);
        }
    }
}

namespace {

struct Associator {
    std::span<const RadarPoint> source;
    std::span<const RadarPoint> target;
    const ClusterContext* clusters;
    const IcpParams& params;
    std::vector<Vec3> target_xyz;
    std::vector<int> match_of_source;  // source cluster id -> target cluster id

    Associator(std::span<const RadarPoint> src, std::span<const RadarPoint> tgt, const ClusterContext* ctx,
               const IcpParams& p)
        : source(src), target(tgt), clusters(ctx), params(p) {
        target_xyz.reserve(tgt.size());
        for (const auto& pt : tgt) target_xyz.push_back(pt.position);
        if (clusters) {
            if (!clusters->source || !clusters->target) throw ConfigError("weighted_icp: cluster context is incomplete");
            if (clusters->source->label.size() != src.size() || clusters->target->label.size() != tgt.size()) {
                throw ConfigError("weighted_icp: cluster labels do not match the clouds");
            }
            match_of_source.assign(clusters->source->clusters.size(), -1);
            for (const auto& [t, s] : clusters->matches) match_of_source.at(static_cast<std::size_t>(s)) = t;
        }
    }

    std::vector<IcpTerm> operator()(const Pose& T, std::vector<double>* w_clust, std::vector<double>* w_flat) const {
        const Mat3 R = T.rotation_matrix();
        std::vector<Vec3> moved;
        moved.reserve(source.size());
        for (const auto& pt : source) moved.push_back(T * pt.position);
        std::vector<int> nn(source.size());
        std::vector<double> d2(source.size());
        nearest_neighbors(params.exec, target_xyz, moved, nn, d2);
        if (w_clust) w_clust->assign(source.size(), 0.0);
        if (w_flat) w_flat->assign(source.size(), 0.0);

        std::vector<IcpTerm> terms;
        for (std::size_t i = 0; i < source.size(); ++i) {
            const auto j = static_cast<std::size_t>(nn[i]);
            Mat3 S = target[j].covariance + R * source[i].covariance * R.transpose();
            S.diagonal().array() += 1e-9;
            const Eigen::LLT<Mat3> llt(S);
            if (llt.info() != Eigen::Success) continue;
            const Mat3 Linv = llt.matrixL().solve(Mat3::Identity());
            if ((Linv * (target[j].position - moved[i])).norm() > params.gate) continue;

            double wc = 0.0, wf = 0.0, w = 1.0;
            if (clusters) {
                const int cs = clusters->source->label[i];
                const int ct = clusters->target->label[j];
                if (cs >= 0) {
                    wc = (ct >= 0 && match_of_source[static_cast<std::size_t>(cs)] == ct) ? 1.0 : 0.0;
                    wf = std::exp(-clusters->source->clusters[static_cast<std::size_t>(cs)].flatness / params.kappa0);
                    w = wc + wf;
                } else {
                    w = params.base_weight;
                }
            }
            if (w_clust) (*w_clust)[i] = wc;
            if (w_flat) (*w_flat)[i] = wf;
            terms.push_back({static_cast<int>(i), static_cast<int>(j), w, Linv});
        }
        if (static_cast<int>(terms.size()) < params.min_correspondences) {
            throw InsufficientCorrespondences("weighted_icp: " + std::to_string(terms.size()) +
                                              " correspondences survive gating, need " +
                                              std::to_string(params.min_correspondences));
        }
        return terms;
    }
};

}  // namespace

IcpResult weighted_icp(std::span<const RadarPoint> source, std::span<const RadarPoint> target,
                       const ClusterContext* clusters, const Pose& init, const IcpParams& params) {
    if (!(params.gate > 0.0) || !(params.kappa0 > 0.0) || params.base_weight < 0.0 || params.max_iterations < 1) {
        throw ConfigError("weighted_icp: invalid parameters");
    }
    if (source.empty() || target.empty()) throw InsufficientCorrespondences("weighted_icp: empty point cloud");
    const Associator associate(source, target, clusters, params);

    IcpResult res;
    Pose T = init;
    Eigen::VectorXd f;
    Eigen::Matrix<double, Eigen::Dynamic, 6> J;
    for (int it = 0; it < params.max_iterations; ++it) {
        const auto terms = associate(T, nullptr, nullptr);
        icp_residuals(source, target, terms, T, f, &J);
        const double cost0 = f.squaredNorm();
        const Mat6 H = J.transpose() * J;
        const Vec6 g = J.transpose() * f;
        const Eigen::LDLT<Mat6> ldlt(H);
        if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) {
            throw SingularSystem("weighted_icp: correspondences do not constrain all six degrees of freedom");
        }
        Vec6 step = -ldlt.solve(g);

        // Step halving keeps the objective non-increasing for fixed correspondences.
        Eigen::VectorXd f_new;
        Pose candidate = retract(T, step);
        icp_residuals(source, target, terms, candidate, f_new);
        double cost1 = f_new.squaredNorm();
        for (int h = 0; h < 30 && cost1 > cost0; ++h) {
            step *= 0.5;
            candidate = retract(T, step);
            icp_residuals(source, target, terms, candidate, f_new);
            cost1 = f_new.squaredNorm();
        }
        if (cost1 > cost0) {
            step.setZero();
            candidate = T;
            cost1 = cost0;
        }
        T = candidate;
        res.iterations = it + 1;
        res.log.push_back({static_cast<int>(terms.size()), cost0, cost1, step.norm()});
        if (step.norm() < params.step_tolerance) {
            res.converged = true;
            break;
        }
    }

    res.transform = T;
    res.terms = associate(T, &res.w_clust, &res.w_flat);
    icp_residuals(source, target, res.terms, T, f, &J);
    res.final_cost = f.squaredNorm();
    const Mat6 H = J.transpose() * J;
    const double mean_residual = res.final_cost / static_cast<double>(res.terms.size());
    const Mat6 cov = H.ldlt().solve(Mat6::Identity()) * std::max(mean_residual, 1e-3);
    res.covariance = 0.5 * (cov + cov.transpose());
    return res;
}

}  // namespace rio
