// Grouping of tested paths into batches that share one test clock, and
// filling of leftover batch slots with poorly predicted paths.

#ifndef EFFITEST_SCHEDULER_HPP
#define EFFITEST_SCHEDULER_HPP

#include "effitest/timing_model.hpp"

#include <map>
#include <vector>

namespace effitest {

/// Paths tested under one clock. Within a batch every flip-flop has at most
/// one incoming and one outgoing batch path, so each capture failure names
/// exactly one path.
struct TestBatch {
    int index = 0;
    std::vector<EdgeId> edges;
    /// Most paths a batch can hold on this graph: one outgoing path per flip-flop.
    int capacity = 0;
};

/// True when `edge` can join `batch` without breaking the degree or
/// exclusion rules.
[[nodiscard]] bool can_join(const TestBatch& batch, EdgeId edge, const TimingGraph& graph);
/// Degree, exclusion and distinctness rules for a whole batch.
[[nodiscard]] bool batch_is_valid(const TestBatch& batch, const TimingGraph& graph);

/// max over flip-flops of max(in-degree, out-degree) restricted to `edges`.
[[nodiscard]] int batch_lower_bound(const std::vector<EdgeId>& edges, const TimingGraph& graph);

/// Greedy chain growing: each batch starts a chain from the highest-priority
/// unplaced path, extends it at both ends, then starts further chains until
/// no unplaced path fits.
std::vector<TestBatch> form_batches(const std::vector<EdgeId>& tested, const TimingGraph& graph);

struct FillResult {
    std::vector<TestBatch> batches;
    std::vector<EdgeId> promoted;  // in insertion order
};

/// Inserts candidates in descending order of `stddev` (ties to the lower id)
/// into the first batch that accepts them. Candidates that fit nowhere stay
/// untested; no batch is created.
FillResult fill_empty_slots(std::vector<TestBatch> batches, const std::vector<EdgeId>& untested,
                            const std::map<EdgeId, double>& stddev, const TimingGraph& graph);

}  // namespace effitest

#endif
