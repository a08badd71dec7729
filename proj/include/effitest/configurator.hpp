// Post-test buffer configuration: hold-time lower bounds from sampled
// margins, the minimum-gap configuration MILP and per-chip yield checks.

#ifndef EFFITEST_CONFIGURATOR_HPP
#define EFFITEST_CONFIGURATOR_HPP

#include "effitest/mip.hpp"
#include "effitest/tester.hpp"
#include "effitest/timing_model.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace effitest {

struct HoldConfig {
    int samples = 1000;       // M
    double target = 0.99;     // Y
    std::uint64_t seed = 7;
    /// Largest M solved exactly; above it the greedy drop heuristic runs.
    int exact_limit = 300;
    mip::Limits limits{};

    void validate() const;
};

struct HoldResult {
    HoldBounds lambda;  // indexed by edge id
    int kept = 0;       // samples with y_k = 1
    std::vector<int> dropped;
    bool exact = false;
    double objective = 0.0;  // sum of lambda
};

/// Chooses which samples to drop from `samples` (M rows, one column per
/// edge) so that at least ceil(Y*M) remain and sum_e max_kept(d_e) is
/// minimal.
HoldResult hold_bounds_from_samples(const Eigen::MatrixXd& samples, const HoldConfig& cfg);

/// Draws M joint hold-margin samples from the model and calls
/// hold_bounds_from_samples.
HoldResult compute_hold_bounds(const TimingGraph& graph, const DelayModel& model, const HoldConfig& cfg);

/// Samples used by compute_hold_bounds (M x num_edges).
Eigen::MatrixXd sample_hold_margins(const TimingGraph& graph, const DelayModel& model, int samples,
                                    std::uint64_t seed);

struct ConfigProblem {
    double period = 0.0;  // T_d
    std::map<EdgeId, DelayBound> bounds;
    HoldBounds hold;
};

enum class ConfigForm {
    /// Edges sharing a flip-flop pair collapse into one setup row, one gap
    /// row and one hold row; D' is recovered as min(u, T - shift).
    Aggregated,
    /// One D' variable and three rows per edge.
    Full,
};

struct ConfigOptions {
    ConfigForm form = ConfigForm::Aggregated;
    /// Assume D' = u for every edge.
    bool pessimistic = false;
    mip::Limits limits{};
};

struct BufferConfiguration {
    bool feasible = false;
    /// Level of every buffered flip-flop.
    std::map<NodeId, int> levels;
    std::map<EdgeId, double> assumed;  // D'
    double xi = 0.0;
    /// Rows that cannot hold together when infeasible.
    std::vector<std::string> conflicts;
};

/// Levels applied to a copy of `graph`.
TimingGraph with_levels(const TimingGraph& graph, const std::map<NodeId, int>& levels);

BufferConfiguration configure_buffers(const TimingGraph& graph, const ConfigProblem& problem,
                                      const ConfigOptions& options = {});

/// The MILP behind configure_buffers. Variables: xi, one integer level per
/// entry of `movable`, then D' per edge in the full form.
mip::Model configuration_model(const TimingGraph& graph, const ConfigProblem& problem,
                               const ConfigOptions& options, const std::vector<NodeId>& movable);

struct ChipVerdict {
    int chip_id = 0;
    bool feasible = false;
    bool setup_pass = false;
    bool hold_pass = false;
    double xi = 0.0;
    int iterations = 0;

    [[nodiscard]] bool pass() const { return feasible && setup_pass && hold_pass; }
};

/// True-delay check of every edge: D + x_src - x_dst <= T and
/// x_src - x_dst >= d. `levels == nullptr` means a circuit without buffers.
ChipVerdict check_chip(const ChipInstance& chip, const TimingGraph& graph,
                       const std::map<NodeId, int>* levels, double period);

/// Configuration from exact delays (l = u = true D on every edge).
BufferConfiguration ideal_configuration(const ChipInstance& chip, const TimingGraph& graph, double period,
                                        const HoldBounds& hold, const ConfigOptions& options = {});

struct YieldReport {
    double period = 0.0;
    double y_ideal = 0.0;
    double y_tested = 0.0;
    double y_no_buffer = 0.0;
    std::vector<ChipVerdict> verdicts;  // tested configurations

    [[nodiscard]] double drop() const { return y_ideal - y_tested; }
};

/// `configs[i]` belongs to `chips[i]`; infeasible entries count as failing.
/// The ideal yield re-solves each chip with exact delays.
YieldReport evaluate_yield(const std::vector<ChipInstance>& chips,
                           const std::vector<BufferConfiguration>& configs, const TimingGraph& graph,
                           double period, const HoldBounds& hold, const ConfigOptions& options = {});

/// Largest setup delay over all edges for one chip, with no buffers.
double critical_delay(const ChipInstance& chip, const TimingGraph& graph);

}  // namespace effitest

#endif
