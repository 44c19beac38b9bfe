#include "rio/posegraph.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <string>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "rio/error.hpp"

namespace rio {

bool should_create_keyframe(const MotionIncrement& since_last, const KeyframeThresholds& th) {
    const double angle_deg = rotation_angle(since_last.transform) * 180.0 / std::numbers::pi;
    return since_last.transform.translation().norm() > th.translation || angle_deg > th.rotation_deg;
}

GraphEdge make_edge(int i, int j, const MotionIncrement& m) {
    GraphEdge e;
    e.i = i;
    e.j = j;
    e.measurement = m.transform;
    e.source = m.source;
    const Mat6 info = m.covariance.ldlt().solve(Mat6::Identity());
    e.information = 0.5 * (info + info.transpose());
    return e;
}

Vec6 edge_residual(const Pose& xi, const Pose& xj, const Pose& measurement, Mat6* Ji, Mat6* Jj) {
    // E = x_j^-1 x_i T: R_E = R_j^T R_i R_T, t_E = R_j^T (R_i t_T + t_i - t_j).
    const Pose E = xj.inverse() * xi * measurement;
    const Vec6 e = pose_log(E);
    if (!Ji && !Jj) return e;
    const Mat3 Ri = xi.rotation_matrix(), Rj = xj.rotation_matrix();
    const Mat3 RE = E.rotation_matrix();
    const Mat3 Jr_inv = right_jacobian_inverse(e.tail<3>());
    if (Ji) {
        Ji->setZero();
        Ji->block<3, 3>(0, 0) = Rj.transpose() * Ri;
        Ji->block<3, 3>(0, 3) = -Rj.transpose() * Ri * skew(measurement.translation());
        Ji->block<3, 3>(3, 3) = Jr_inv * measurement.rotation_matrix().transpose();
    }
    if (Jj) {
        Jj->setZero();
        Jj->block<3, 3>(0, 0) = -Mat3::Identity();
        Jj->block<3, 3>(0, 3) = skew(E.translation());
        Jj->block<3, 3>(3, 3) = -Jr_inv * RE.transpose();
    }
    return e;
}

int PoseGraph::add_keyframe(double timestamp, std::size_t scan_index, const MotionIncrement* integration,
                            const MotionIncrement* registration) {
    Keyframe kf;
    kf.id = static_cast<int>(nodes_.size());
    kf.timestamp = timestamp;
    kf.scan_index = scan_index;
    if (nodes_.empty()) {
        if (integration || registration) throw DanglingReference("add_keyframe: the first keyframe has no predecessor");
        kf.pose = origin_;
        kf.fixed = true;
        nodes_.push_back(kf);
        return kf.id;
    }
    if (!(timestamp > nodes_.back().timestamp)) {
        throw SequenceOrderError("add_keyframe: timestamp " + std::to_string(timestamp) + " does not follow " +
                                 std::to_string(nodes_.back().timestamp));
    }
    if (!integration) throw ConfigError("add_keyframe: an integration increment is required after the first keyframe");
    kf.pose = nodes_.back().pose * integration->transform;
    nodes_.push_back(kf);
    add_edge(make_edge(kf.id - 1, kf.id, *integration));
    if (registration) {
        GraphEdge e = make_edge(kf.id - 1, kf.id, *registration);
        e.source = IncrementSource::Registration;
        add_edge(e);
    }
    return kf.id;
}

void PoseGraph::add_edge(const GraphEdge& edge) {
    const int n = static_cast<int>(nodes_.size());
    if (edge.i < 0 || edge.j < 0 || edge.i >= n || edge.j >= n) {
        throw DanglingReference("add_edge: edge (" + std::to_string(edge.i) + ", " + std::to_string(edge.j) +
                                ") references a missing keyframe");
    }
    if (edge.i >= edge.j) throw ConfigError("add_edge: edges must satisfy i < j");
    if (!is_symmetric_psd(edge.information, 1e-9 * std::max(1.0, edge.information.norm()))) {
        throw ConfigError("add_edge: information matrix is not symmetric positive semi-definite");
    }
    edges_.push_back(edge);
}

void PoseGraph::set_pose(int id, const Pose& pose) { nodes_.at(static_cast<std::size_t>(id)).pose = pose; }

void PoseGraph::set_fixed(int id, bool fixed) { nodes_.at(static_cast<std::size_t>(id)).fixed = fixed; }

namespace {

bool robust(const GraphEdge& e, const LmParams& p) {
    return p.huber_delta > 0.0 && e.source == IncrementSource::Registration;
}

// Huber on the whitened norm: s for |e| <= delta, 2 delta |e| - delta^2 beyond.
double edge_cost(const GraphEdge& e, const Vec6& r, const LmParams& p, double* irls_weight = nullptr) {
    const double s = r.dot(e.information * r);
    if (irls_weight) *irls_weight = 1.0;
    if (!robust(e, p)) return s;
    const double norm = std::sqrt(std::max(s, 0.0));
    if (norm <= p.huber_delta) return s;
    if (irls_weight) *irls_weight = p.huber_delta / norm;
    return 2.0 * p.huber_delta * norm - p.huber_delta * p.huber_delta;
}

double total_cost(const std::vector<Keyframe>& nodes, const std::vector<GraphEdge>& edges, const LmParams& p) {
    double c = 0.0;
    for (const auto& e : edges) {
        const Vec6 r = edge_residual(nodes[static_cast<std::size_t>(e.i)].pose,
                                     nodes[static_cast<std::size_t>(e.j)].pose, e.measurement);
        c += edge_cost(e, r, p);
    }
    return c;
}

}  // namespace

double PoseGraph::cost(const LmParams& params) const { return total_cost(nodes_, edges_, params); }

LmReport PoseGraph::optimize(const LmParams& params) {
    LmReport rep;
    const std::size_t n = nodes_.size();
    std::vector<int> var(n, -1);
    const std::size_t first_free =
        n > params.batch_limit ? n - std::min(params.window, n) : 0;  // fixed-lag beyond the batch limit
    int n_var = 0;
    bool any_fixed = false;
    for (std::size_t k = 0; k < n; ++k) {
        const bool held = nodes_[k].fixed || k < first_free;
        any_fixed = any_fixed || held;
        if (!held) var[k] = n_var++;
    }
    rep.initial_cost = rep.final_cost = cost(params);
    rep.cost_history.push_back(rep.initial_cost);
    if (n_var == 0) {
        rep.converged = true;
        return rep;
    }
    if (!any_fixed) throw SingularSystem("optimize: no keyframe is fixed; the gauge is free");

    const Eigen::Index dim = 6 * n_var;
    Eigen::SparseMatrix<double> H(dim, dim);
    Eigen::VectorXd b(dim);
    auto linearise = [&] {
        std::vector<Eigen::Triplet<double>> trip;
        b.setZero();
        for (const auto& e : edges_) {
            const int vi = var[static_cast<std::size_t>(e.i)], vj = var[static_cast<std::size_t>(e.j)];
            if (vi < 0 && vj < 0) continue;
            Mat6 Ji, Jj;
            const Vec6 r = edge_residual(nodes_[static_cast<std::size_t>(e.i)].pose,
                                         nodes_[static_cast<std::size_t>(e.j)].pose, e.measurement, &Ji, &Jj);
            double w = 1.0;
            edge_cost(e, r, params, &w);
            const Mat6 W = w * e.information;
            const int v[2] = {vi, vj};
            const Mat6* J[2] = {&Ji, &Jj};
            for (int a = 0; a < 2; ++a) {
                if (v[a] < 0) continue;
                b.segment<6>(6 * v[a]) += J[a]->transpose() * W * r;
                for (int c = 0; c < 2; ++c) {
                    if (v[c] < 0) continue;
                    const Mat6 block = J[a]->transpose() * W * *J[c];
                    for (int r0 = 0; r0 < 6; ++r0) {
                        for (int c0 = 0; c0 < 6; ++c0) trip.emplace_back(6 * v[a] + r0, 6 * v[c] + c0, block(r0, c0));
                    }
                }
            }
        }
        H.setFromTriplets(trip.begin(), trip.end());
    };

    linearise();
    {
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> check(H);
        const double scale = std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
        if (check.info() != Eigen::Success || (check.vectorD().array() <= 1e-12 * scale).any()) {
            throw SingularSystem("optimize: free keyframes are not fully constrained");
        }
    }

    double lambda = params.initial_lambda;
    double current = rep.initial_cost;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
    for (int it = 0; it < params.max_iterations && current > 0.0; ++it) {
        rep.iterations = it + 1;
        Eigen::SparseMatrix<double> A = H;
        for (Eigen::Index k = 0; k < dim; ++k) A.coeffRef(k, k) += lambda * std::max(H.coeff(k, k), 1e-12);
        solver.compute(A);
        if (solver.info() != Eigen::Success) throw SingularSystem("optimize: damped system factorisation failed");
        const Eigen::VectorXd step = -solver.solve(b);

        std::vector<Keyframe> trial = nodes_;
        for (std::size_t k = 0; k < n; ++k) {
            if (var[k] >= 0) trial[k].pose = retract(trial[k].pose, step.segment<6>(6 * var[k]));
        }
        const double next = total_cost(trial, edges_, params);
        if (next < current) {
            nodes_ = std::move(trial);
            const double decrease = (current - next) / current;
            current = next;
            rep.cost_history.push_back(current);
            lambda = std::max(lambda * 0.1, 1e-12);
            if (decrease < params.relative_decrease) {
                rep.converged = true;
                break;
            }
            linearise();
        } else {
            lambda *= 10.0;
            if (lambda > 1e12) {
                rep.converged = true;  // no descent direction left at machine precision
                break;
            }
        }
    }
    if (current == 0.0) rep.converged = true;
    rep.final_cost = current;
    return rep;
}

void PoseGraph::write_g2o(std::ostream& os) const {
    const auto old_flags = os.flags();
    const auto old_precision = os.precision();
    os << std::setprecision(17);
    for (const auto& kf : nodes_) {
        const Vec3& t = kf.pose.translation();
        const Quat& q = kf.pose.rotation();
        os << "VERTEX_SE3 " << kf.id << ' ' << kf.timestamp << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' '
           << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
    }
    for (const auto& e : edges_) {
        const Vec3& t = e.measurement.translation();
        const Quat& q = e.measurement.rotation();
        os << "EDGE_SE3 " << e.i << ' ' << e.j << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x() << ' '
           << q.y() << ' ' << q.z() << ' ' << q.w();
        for (int r = 0; r < 6; ++r) {
            for (int c = r; c < 6; ++c) os << ' ' << e.information(r, c);
        }
        os << '\n';
    }
    os.flags(old_flags);
    os.precision(old_precision);
}

}  // namespace rio
