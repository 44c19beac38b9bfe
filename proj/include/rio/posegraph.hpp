#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "rio/types.hpp"

namespace rio {

struct KeyframeThresholds {
    double translation = 0.5;    // m
    double rotation_deg = 10.0;  // deg
};

/// Strict inequality on either threshold.
bool should_create_keyframe(const MotionIncrement& since_last, const KeyframeThresholds& th = {});

struct Keyframe {
    int id = 0;
    double timestamp = 0.0;
    Pose pose;
    std::size_t scan_index = 0;
    bool fixed = false;
};

struct GraphEdge {
    int i = 0;
    int j = 0;
    Pose measurement;  // expected x_i^-1 x_j
    Mat6 information = Mat6::Identity();
    IncrementSource source = IncrementSource::Integration;
};

/// Information = inverse of the increment covariance.
GraphEdge make_edge(int i, int j, const MotionIncrement& m);

/// e = log(h^-1 T) with h = x_i^-1 x_j, in the [translation; rotation] chart,
/// and its Jacobians for x <- retract(x, delta) on either endpoint.
Vec6 edge_residual(const Pose& xi, const Pose& xj, const Pose& measurement, Mat6* Ji = nullptr, Mat6* Jj = nullptr);

struct LmParams {
    int max_iterations = 100;
    double relative_decrease = 1e-9;
    /// Huber threshold on whitened registration residuals; <= 0 disables.
    double huber_delta = 1.0;
    double initial_lambda = 1e-4;
    /// Above this many nodes only the most recent `window` nodes move.
    std::size_t batch_limit = 200;
    std::size_t window = 100;
};

struct LmReport {
    int iterations = 0;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    /// Cost after every accepted step, starting with the initial cost.
    std::vector<double> cost_history;
    bool converged = false;
};

class PoseGraph {
public:
    explicit PoseGraph(const Pose& origin = Pose::identity()) : origin_(origin) {}

    /// The first keyframe is fixed at the origin and takes no edges. Later
    /// keyframes are initialised as previous pose * integration increment and
    /// connected to the previous keyframe by an integration edge and, when
    /// given, a registration edge. Returns the new id.
    int add_keyframe(double timestamp, std::size_t scan_index, const MotionIncrement* integration = nullptr,
                     const MotionIncrement* registration = nullptr);

    /// Throws DanglingReference for unknown nodes and ConfigError unless i < j
    /// and the information matrix is symmetric PSD.
    void add_edge(const GraphEdge& edge);

    void set_pose(int id, const Pose& pose);
    void set_fixed(int id, bool fixed);

    /// Levenberg-Marquardt over all free nodes. Throws SingularSystem when
    /// nothing is fixed or the free nodes are not fully constrained.
    LmReport optimize(const LmParams& params = {});

    double cost(const LmParams& params = {}) const;

    const std::vector<Keyframe>& keyframes() const { return nodes_; }
    const std::vector<GraphEdge>& edges() const { return edges_; }
    std::size_t size() const { return nodes_.size(); }

    /// VERTEX_SE3 / EDGE_SE3 text lines.
    void write_g2o(std::ostream& os) const;

private:
    Pose origin_;
    std::vector<Keyframe> nodes_;
    std::vector<GraphEdge> edges_;
};

}  // namespace rio
