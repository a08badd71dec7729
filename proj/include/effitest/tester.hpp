// Virtual delay tester: per-batch frequency stepping where the clock period
// and the buffer settings of every step come from a delay-alignment MILP.

#ifndef EFFITEST_TESTER_HPP
#define EFFITEST_TESTER_HPP

#include "effitest/mip.hpp"
#include "effitest/scheduler.hpp"
#include "effitest/timing_model.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace effitest {

struct DelayBound {
    EdgeId edge = 0;
    double lower = 0.0;
    double upper = 0.0;

    [[nodiscard]] double center() const { return 0.5 * (lower + upper); }
    [[nodiscard]] double width() const { return upper - lower; }
};

/// mu +- 3 sigma of each edge's setup delay.
std::map<EdgeId, DelayBound> initial_bounds(const TimingGraph& graph, const DelayModel& model,
                                            const std::vector<EdgeId>& edges);

/// Lower hold bounds lambda indexed by edge id; an empty vector means no
/// hold constraints. Each entry demands x_src - x_dst >= lambda.
using HoldBounds = std::vector<double>;

enum class AlignmentForm {
    /// eta >= +-(T - c - shift); exact for a minimization with positive weights.
    Epigraph,
    /// Indicator pairs z^p, z^n with big-M switching rows.
    BigM,
};

struct TesterConfig {
    /// Removal threshold: an edge leaves its batch once u - l <= resolution.
    double resolution = 0.0;
    int max_iterations = 10000;
    double k0 = 1000.0;
    double kd = 1.0;
    /// false keeps every buffer at its current level (no delay alignment).
    bool align = true;
    AlignmentForm form = AlignmentForm::Epigraph;
    /// Alignment MILP optimality gap, in units of k0.
    double gap = 1e-3;
    /// Node cap per alignment solve; the best setting found so far is used
    /// when it is reached.
    mip::Limits limits{.max_nodes = 20000};

    void validate() const;
};

/// 6 * mean setup sigma / 2^8 over the given edges.
double default_resolution(const TimingGraph& graph, const DelayModel& model,
                          const std::vector<EdgeId>& edges, int halvings = 8);

class AlignmentError : public std::runtime_error {
public:
    AlignmentError(const std::string& what, std::vector<std::string> constraints)
        : std::runtime_error(what), constraints_(std::move(constraints)) {}
    [[nodiscard]] const std::vector<std::string>& constraints() const { return constraints_; }

private:
    std::vector<std::string> constraints_;
};

struct FrequencyChoice {
    double period = 0.0;
    /// Levels for every buffer the optimizer was allowed to move.
    std::map<NodeId, int> levels;
    /// x_src - x_dst per batch edge (batch order) under the chosen levels.
    std::vector<double> shifts;
    std::vector<double> weights;
    /// Weighted distance sum at the returned point.
    double objective = 0.0;
    bool solved_by_milp = false;
};

/// Sorted-center weights: the middle center (index (n-1)/2) gets k0 and each
/// step away from it loses kd. Ties in center order go to the lower edge id.
std::vector<double> alignment_weights(const std::vector<DelayBound>& bounds, double k0, double kd);

/// Period and buffer levels minimizing sum k_e |T - (c_e + x_i - x_j)| over
/// the edges in `active` (bounds in the same order). Buffers not touching a
/// batch edge keep their current levels. Hold bounds apply to every graph
/// edge with a movable endpoint.
FrequencyChoice compute_frequency(const std::vector<DelayBound>& active, const TimingGraph& graph,
                                  const HoldBounds& hold, const TesterConfig& cfg);

/// The MILP behind compute_frequency, exposed for inspection and tests.
/// Variables: T, then one integer level per movable buffer (in `movable`
/// order), then eta per edge (and z^p, z^n per edge in the BigM form).
mip::Model alignment_model(const std::vector<DelayBound>& active, const TimingGraph& graph,
                           const HoldBounds& hold, const TesterConfig& cfg,
                           const std::vector<NodeId>& movable);

/// Pass iff true D + shift <= T, per batch edge.
std::vector<bool> apply_frequency_step(const std::vector<EdgeId>& edges, const ChipInstance& chip,
                                       const TimingGraph& graph, double period);

struct EdgeStep {
    EdgeId edge = 0;
    double shift = 0.0;
    /// T - shift: the value of D this step compares against.
    double threshold = 0.0;
    bool pass = false;
    double lower = 0.0;  // after the update
    double upper = 0.0;
    /// The outcome contradicts the current window (the delay lies outside it).
    bool contradicted = false;
};

struct IterationRecord {
    int chip_id = 0;
    int batch_index = 0;
    int iteration = 0;
    double period = 0.0;
    std::vector<std::pair<NodeId, double>> buffers;  // every buffered flip-flop
    std::vector<EdgeStep> edges;
};

/// Append-only record of every frequency step.
class IterationLog {
public:
    void append(IterationRecord record) { records_.push_back(std::move(record)); }
    void append(const IterationLog& other);
    [[nodiscard]] const std::vector<IterationRecord>& records() const { return records_; }
    [[nodiscard]] bool empty() const { return records_.empty(); }

    /// One JSON object per line.
    void write_jsonl(std::ostream& out) const;
    static IterationLog read_jsonl(std::istream& in);

private:
    std::vector<IterationRecord> records_;
};

/// Bound update rule shared by the tester and by log replay. The threshold
/// is clamped into [l, u] before it replaces one side.
void update_bound(DelayBound& bound, double threshold, bool pass, bool* contradicted = nullptr);

struct BatchResult {
    std::map<EdgeId, DelayBound> bounds;
    int iterations = 0;
    /// Edges whose true delay lay outside the initial window.
    std::vector<EdgeId> out_of_window;
    bool guard_tripped = false;
};

/// Frequency stepping on one batch. `graph` supplies and receives buffer
/// levels; it is left at the last applied setting.
BatchResult run_batch_test(const TestBatch& batch, const ChipInstance& chip, const DelayModel& model,
                           TimingGraph& graph, const std::map<EdgeId, DelayBound>& start,
                           const TesterConfig& cfg, const HoldBounds& hold,
                           IterationLog* log = nullptr);

struct ChipTestResult {
    std::map<EdgeId, DelayBound> bounds;
    /// t_a: iterations summed over batches.
    int iterations = 0;
    std::vector<int> batch_iterations;
    std::vector<EdgeId> out_of_window;
    bool guard_tripped = false;
};

/// Batches run in order; buffers return to their defaults before each batch
/// and after the last. Starting windows come from `start` when present,
/// otherwise mu +- 3 sigma.
ChipTestResult run_chip_test(const std::vector<TestBatch>& batches, const ChipInstance& chip,
                             const DelayModel& model, TimingGraph& graph, const TesterConfig& cfg,
                             const HoldBounds& hold, IterationLog* log = nullptr,
                             const std::map<EdgeId, DelayBound>* start = nullptr);

/// Re-derives every bound update in `log` from the starting windows and the
/// logged pass/fail outcomes. Returns the final bounds.
std::map<EdgeId, DelayBound> replay_bounds(const IterationLog& log,
                                           const std::map<EdgeId, DelayBound>& start);

}  // namespace effitest

#endif
