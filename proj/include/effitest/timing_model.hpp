// Timing graph with post-silicon tuning buffers, the joint Gaussian delay
// model over every required path, chip sampling and a synthetic benchmark
// generator.

#ifndef EFFITEST_TIMING_MODEL_HPP
#define EFFITEST_TIMING_MODEL_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace effitest {

using NodeId = int;
using EdgeId = int;

class TimingModelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Discrete clock-tuning element. Values live on the grid
/// range_start + k * range_width / (step_count - 1), k = 0..step_count-1, and
/// the buffer stores k so a value can never drift off the grid.
class TuningBuffer {
public:
    TuningBuffer() = default;
    TuningBuffer(double range_start, double range_width, int step_count, int level = 0);

    /// Width `width` centred on zero, level at the grid point nearest 0.
    static TuningBuffer symmetric(double width, int step_count);

    [[nodiscard]] double range_start() const { return start_; }
    [[nodiscard]] double range_width() const { return width_; }
    [[nodiscard]] double range_end() const { return start_ + width_; }
    [[nodiscard]] int step_count() const { return steps_; }
    [[nodiscard]] double step() const { return width_ / (steps_ - 1); }
    [[nodiscard]] int level() const { return level_; }
    [[nodiscard]] double value() const { return value_at(level_); }
    [[nodiscard]] double value_at(int level) const;
    /// Grid level closest to x (ties resolve to the lower level).
    [[nodiscard]] int nearest_level(double x) const;
    [[nodiscard]] int zero_level() const { return nearest_level(0.0); }

    void set_level(int level);

private:
    double start_ = 0.0;
    double width_ = 0.0;
    int steps_ = 2;
    int level_ = 0;
};

struct FlipFlop {
    NodeId id = 0;
    std::optional<TuningBuffer> buffer;
    double setup_time = 0.0;
    double hold_time = 0.0;
};

/// Required path between two flip-flops. `setup_var` indexes D_ij (max delay
/// plus setup time) and `hold_var` indexes d_ij (hold time minus min delay)
/// in the DelayModel.
struct TimingEdge {
    EdgeId id = 0;
    NodeId src = 0;
    NodeId dst = 0;
    int setup_var = 0;
    int hold_var = 0;
};

using Exclusion = std::pair<EdgeId, EdgeId>;

class TimingGraph {
public:
    TimingGraph() = default;
    /// Node and edge ids must equal their positions in the vectors.
    TimingGraph(std::vector<FlipFlop> flip_flops, std::vector<TimingEdge> edges,
                double designated_period, std::vector<Exclusion> exclusions = {},
                bool allow_self_loops = false);

    [[nodiscard]] const std::vector<FlipFlop>& flip_flops() const { return nodes_; }
    [[nodiscard]] const std::vector<TimingEdge>& edges() const { return edges_; }
    [[nodiscard]] const FlipFlop& flip_flop(NodeId id) const;
    [[nodiscard]] const TimingEdge& edge(EdgeId id) const;
    [[nodiscard]] double designated_period() const { return period_; }
    [[nodiscard]] const std::vector<Exclusion>& exclusions() const { return exclusions_; }
    [[nodiscard]] bool excluded(EdgeId a, EdgeId b) const;

    [[nodiscard]] int num_flip_flops() const { return static_cast<int>(nodes_.size()); }
    [[nodiscard]] int num_edges() const { return static_cast<int>(edges_.size()); }
    [[nodiscard]] std::vector<NodeId> buffered_nodes() const;
    [[nodiscard]] int num_buffers() const;
    [[nodiscard]] bool has_buffer(NodeId id) const { return flip_flop(id).buffer.has_value(); }

    /// Current value of the node's buffer, 0 for unbuffered nodes.
    [[nodiscard]] double buffer_value(NodeId id) const;
    /// Clock shift x_src - x_dst seen by an edge under the current levels.
    [[nodiscard]] double edge_shift(EdgeId id) const;

    void set_buffer_level(NodeId id, int level);
    /// Every buffer back to its grid point nearest zero.
    void reset_buffers();

    /// Edge ids in [0, num_edges).
    [[nodiscard]] std::vector<EdgeId> all_edge_ids() const;

private:
    std::vector<FlipFlop> nodes_;
    std::vector<TimingEdge> edges_;
    double period_ = 1.0;
    std::vector<Exclusion> exclusions_;
};

enum class VariableKind { SetupDelay, HoldMargin };

struct VariableLabel {
    EdgeId edge = 0;
    VariableKind kind = VariableKind::SetupDelay;

    bool operator==(const VariableLabel&) const = default;
};

[[nodiscard]] const char* to_string(VariableKind kind);
[[nodiscard]] VariableKind variable_kind_from_string(const std::string& s);

/// Joint Gaussian over all path-delay variables.
class DelayModel {
public:
    DelayModel() = default;
    /// Validates dimensions, symmetry, non-negative diagonal and PSD within
    /// 1e-9 * max diagonal.
    DelayModel(Eigen::VectorXd mean, Eigen::MatrixXd covariance, std::vector<VariableLabel> labels);

    [[nodiscard]] int size() const { return static_cast<int>(mean_.size()); }
    [[nodiscard]] const Eigen::VectorXd& mean() const { return mean_; }
    [[nodiscard]] const Eigen::MatrixXd& covariance() const { return cov_; }
    [[nodiscard]] const std::vector<VariableLabel>& labels() const { return labels_; }
    [[nodiscard]] double mean(int var) const { return mean_(var); }
    [[nodiscard]] double stddev(int var) const;
    [[nodiscard]] double correlation(int a, int b) const;

    /// Standard deviations scaled by `factor`, off-diagonal covariances kept.
    [[nodiscard]] DelayModel with_scaled_stddev(double factor) const;

private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd cov_;
    std::vector<VariableLabel> labels_;
};

/// Nearest PSD matrix by eigenvalue clamping at zero, then symmetrised.
[[nodiscard]] Eigen::MatrixXd repair_psd(const Eigen::MatrixXd& m);
[[nodiscard]] double min_eigenvalue(const Eigen::MatrixXd& m);

struct ChipInstance {
    int chip_id = 0;
    Eigen::VectorXd true_delays;
};

/// Splitmix64 mixing of a base seed with a stream index.
[[nodiscard]] std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Caches the covariance factor so many chips can be drawn from one model.
/// Sampling is a pure function of (seed, chip_id).
class ChipSampler {
public:
    explicit ChipSampler(const DelayModel& model);
    [[nodiscard]] ChipInstance sample(std::uint64_t seed, int chip_id) const;
    [[nodiscard]] const Eigen::MatrixXd& factor() const { return factor_; }

private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd factor_;
};

ChipInstance sample_chip(const DelayModel& model, std::uint64_t seed, int chip_id);

struct GeneratorConfig {
    int flip_flops = 211;
    double buffer_fraction = 0.009;
    int paths = 80;
    int clusters = 2;
    double intra_cluster_corr = 0.9;
    double global_corr = 0.25;
    double mean_delay_low = 6.0;
    double mean_delay_high = 10.0;
    double cv = 0.07;
    std::uint64_t seed = 1;
    /// Gate count carried as metadata only.
    int gate_count = 0;
    /// 0 leaves every edge's mean uniform over the full range; 1 puts the
    /// "heavy" side of each buffered flip-flop in the upper half of the range
    /// and the other side in the lower half.
    double side_imbalance = 1.0;
    /// Hold-margin means are drawn from -[low, high] * buffer range width.
    double hold_margin_low = 0.5;
    double hold_margin_high = 1.5;
    /// Correlation between an edge's setup delay and its own hold margin is
    /// -hold_coupling (scaled by the structural correlation for other pairs).
    double hold_coupling = 0.5;
    int buffer_steps = 20;

    void validate() const;
};

struct Benchmark {
    TimingGraph graph;
    DelayModel model;
    std::optional<GeneratorConfig> generator;
};

[[nodiscard]] int buffer_count_for(int flip_flops, double buffer_fraction);

/// Synthetic circuit: required paths cluster around buffered flip-flops and
/// the covariance follows a two-level (cluster / global) correlation model.
Benchmark generate_benchmark(const GeneratorConfig& cfg);

/// Buffers get width T_d/8 centred on zero with `step_count` levels and a
/// level at the grid point nearest 0.
TimingGraph buffer_defaults(const TimingGraph& graph, double designated_period,
                            int step_count = 20);

}  // namespace effitest

#endif
