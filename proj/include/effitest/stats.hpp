// Path grouping by correlation threshold, PCA-driven representative path
// selection, and Gaussian conditional prediction of untested path delays.

#ifndef EFFITEST_STATS_HPP
#define EFFITEST_STATS_HPP

#include "effitest/timing_model.hpp"

#include <Eigen/Dense>

#include <map>
#include <stdexcept>
#include <vector>

namespace effitest {

class PredictionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PathGroup {
    int index = 0;
    std::vector<EdgeId> members;  // ascending edge id
    double threshold = 0.0;       // corr_th in force when the group was extracted
};

struct PcaResult {
    Eigen::MatrixXd components;  // one column per PC, descending eigenvalue order
    Eigen::VectorXd eigenvalues;  // descending, clamped at 0
    int pc_count = 0;
};

struct PredictedDelay {
    EdgeId edge = 0;
    double mean = 0.0;
    double stddev = 0.0;
    double prior_stddev = 0.0;

    [[nodiscard]] double lower() const { return mean - 3.0 * stddev; }
    [[nodiscard]] double upper() const { return mean + 3.0 * stddev; }
};

struct StatsConfig {
    double initial_threshold = 0.95;
    double threshold_step = 0.05;
    /// Fraction of eigenvalue mass the retained PCs must capture.
    double variance_capture = 0.95;
    /// Ridge added to the tested covariance: ridge * trace / dim.
    double ridge = 1e-8;
};

/// Threshold-graph component grown from the most correlated pair. With no
/// pair at or above `threshold`, the single largest-variance path.
PathGroup extract_paths(const std::vector<EdgeId>& remaining, const TimingGraph& graph,
                        const DelayModel& model, double threshold, int group_index = 0);

/// Eigen-decomposition of a covariance matrix; pc_count is the smallest
/// number of leading PCs whose eigenvalues reach `variance_capture` of the
/// total (1 for a zero matrix).
PcaResult principal_components(const Eigen::MatrixXd& covariance, double variance_capture);

struct Selection {
    std::vector<EdgeId> paths;  // one per retained PC, in PC order
    PcaResult pca;
};

/// The j-th selected path is the not-yet-selected member with the largest
/// |loading| on PC j (ties to the lower edge id).
Selection select_paths(const PathGroup& group, const TimingGraph& graph, const DelayModel& model,
                       double variance_capture = 0.95);

struct TestPlan {
    std::vector<PathGroup> groups;
    std::vector<std::vector<EdgeId>> selected;  // per group
    std::vector<EdgeId> tested;                 // union of selections, group order

    /// Group index of an edge, -1 when the edge is not in the plan.
    [[nodiscard]] int group_of(EdgeId edge) const;
};

TestPlan plan_test_set(const std::vector<EdgeId>& required, const TimingGraph& graph,
                       const DelayModel& model, const StatsConfig& cfg = {});

/// Conditional Gaussian predictor for the untested members of each group,
/// conditioned on that group's tested members only. Everything that does not
/// depend on measurements is computed once at construction.
class DelayPredictor {
public:
    DelayPredictor(const TimingGraph& graph, const DelayModel& model,
                   const std::vector<PathGroup>& groups, const std::vector<EdgeId>& tested,
                   double ridge = 1e-8);

    [[nodiscard]] const std::vector<EdgeId>& untested() const { return untested_; }
    /// sigma'_k for every untested path (independent of measurements).
    [[nodiscard]] std::map<EdgeId, double> conditional_stddev() const;
    /// measured: tested edge id -> measured value (upper bound of its final range).
    [[nodiscard]] std::vector<PredictedDelay> predict(const std::map<EdgeId, double>& measured) const;

private:
    struct Target {
        EdgeId edge;
        int group;
        double prior_mean;
        double prior_stddev;
        double stddev;
        Eigen::VectorXd weights;  // Sigma_t^-1 Sigma_{t,k}
    };
    struct GroupData {
        std::vector<EdgeId> tested;
        Eigen::VectorXd tested_mean;
    };
    std::vector<GroupData> groups_;
    std::vector<Target> targets_;
    std::vector<EdgeId> untested_;
};

std::vector<PredictedDelay> predict_delays(const TimingGraph& graph, const DelayModel& model,
                                           const std::vector<PathGroup>& groups,
                                           const std::vector<EdgeId>& tested,
                                           const std::map<EdgeId, double>& measured,
                                           double ridge = 1e-8);

}  // namespace effitest

#endif
