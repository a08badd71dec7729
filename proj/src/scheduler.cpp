#include "effitest/scheduler.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace effitest {

namespace {

struct Occupancy {
    std::vector<char> out;
    std::vector<char> in;

    explicit Occupancy(int nodes) : out(static_cast<std::size_t>(nodes), 0), in(static_cast<std::size_t>(nodes), 0) {}

    [[nodiscard]] bool free(const TimingEdge& e) const {
        return !out[static_cast<std::size_t>(e.src)] && !in[static_cast<std::size_t>(e.dst)];
    }
    void take(const TimingEdge& e) {
        out[static_cast<std::size_t>(e.src)] = 1;
        in[static_cast<std::size_t>(e.dst)] = 1;
    }
};

bool excluded_from(const std::vector<EdgeId>& members, EdgeId edge, const TimingGraph& graph) {
    if (graph.exclusions().empty()) return false;
    return std::any_of(members.begin(), members.end(),
                       [&](EdgeId m) { return graph.excluded(m, edge); });
}

}  // namespace

bool can_join(const TestBatch& batch, EdgeId edge, const TimingGraph& graph) {
    const auto& e = graph.edge(edge);
    for (EdgeId m : batch.edges) {
        if (m == edge) return false;
        const auto& o = graph.edge(m);
        if (o.src == e.src || o.dst == e.dst) return false;
    }
    return !excluded_from(batch.edges, edge, graph);
}

bool batch_is_valid(const TestBatch& batch, const TimingGraph& graph) {
    TestBatch partial;
    for (EdgeId e : batch.edges) {
        if (e < 0 || e >= graph.num_edges() || !can_join(partial, e, graph)) return false;
        partial.edges.push_back(e);
    }
    return true;
}

int batch_lower_bound(const std::vector<EdgeId>& edges, const TimingGraph& graph) {
    std::vector<int> in(static_cast<std::size_t>(graph.num_flip_flops()), 0);
    std::vector<int> out(in.size(), 0);
    int bound = 0;
    for (EdgeId id : std::set<EdgeId>(edges.begin(), edges.end())) {
        const auto& e = graph.edge(id);
        bound = std::max(bound, ++out[static_cast<std::size_t>(e.src)]);
        bound = std::max(bound, ++in[static_cast<std::size_t>(e.dst)]);
    }
    return bound;
}

std::vector<TestBatch> form_batches(const std::vector<EdgeId>& tested, const TimingGraph& graph) {
    const std::set<EdgeId> unique(tested.begin(), tested.end());
    std::vector<EdgeId> order(unique.begin(), unique.end());
    for (EdgeId e : order) (void)graph.edge(e);

    // Paths at crowded flip-flops go first so they spread across batches.
    std::vector<int> in(static_cast<std::size_t>(graph.num_flip_flops()), 0);
    std::vector<int> out(in.size(), 0);
    for (EdgeId id : order) {
        ++out[static_cast<std::size_t>(graph.edge(id).src)];
        ++in[static_cast<std::size_t>(graph.edge(id).dst)];
    }
    auto crowd = [&](EdgeId id) {
        const auto& e = graph.edge(id);
        return std::max(out[static_cast<std::size_t>(e.src)], in[static_cast<std::size_t>(e.dst)]);
    };
    std::stable_sort(order.begin(), order.end(), [&](EdgeId a, EdgeId b) { return crowd(a) > crowd(b); });

    std::vector<char> placed(order.size(), 0);
    std::size_t remaining = order.size();
    std::vector<TestBatch> batches;
    while (remaining > 0) {
        TestBatch batch;
        batch.index = static_cast<int>(batches.size());
        batch.capacity = graph.num_flip_flops();
        Occupancy occ(graph.num_flip_flops());

        auto fits = [&](std::size_t k) {
            return !placed[k] && occ.free(graph.edge(order[k])) && !excluded_from(batch.edges, order[k], graph);
        };
        auto place = [&](std::size_t k) {
            placed[k] = 1;
            --remaining;
            occ.take(graph.edge(order[k]));
            batch.edges.push_back(order[k]);
        };
        // First fitting path (in priority order) leaving / entering `node`.
        auto find_next = [&](NodeId node, bool leaving) -> std::ptrdiff_t {
            for (std::size_t k = 0; k < order.size(); ++k) {
                const auto& e = graph.edge(order[k]);
                if ((leaving ? e.src : e.dst) == node && fits(k)) return static_cast<std::ptrdiff_t>(k);
            }
            return -1;
        };

        for (std::size_t start = 0; start < order.size(); ++start) {
            if (!fits(start)) continue;
            place(start);
            NodeId tail = graph.edge(order[start]).dst;
            NodeId head = graph.edge(order[start]).src;
            for (std::ptrdiff_t k; (k = find_next(tail, true)) >= 0;) {
                place(static_cast<std::size_t>(k));
                tail = graph.edge(order[static_cast<std::size_t>(k)]).dst;
            }
            for (std::ptrdiff_t k; (k = find_next(head, false)) >= 0;) {
                place(static_cast<std::size_t>(k));
                head = graph.edge(order[static_cast<std::size_t>(k)]).src;
            }
        }
        if (batch.edges.empty()) throw std::logic_error("form_batches made no progress");
        batches.push_back(std::move(batch));
    }
    return batches;
}

FillResult fill_empty_slots(std::vector<TestBatch> batches, const std::vector<EdgeId>& untested,
                            const std::map<EdgeId, double>& stddev, const TimingGraph& graph) {
    std::vector<EdgeId> candidates;
    std::set<EdgeId> in_batches;
    for (const auto& b : batches) in_batches.insert(b.edges.begin(), b.edges.end());
    for (EdgeId e : std::set<EdgeId>(untested.begin(), untested.end())) {
        if (!in_batches.count(e)) candidates.push_back(e);
    }
    auto sd = [&](EdgeId e) {
        const auto it = stddev.find(e);
        return it == stddev.end() ? 0.0 : it->second;
    };
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](EdgeId a, EdgeId b) { return sd(a) > sd(b); });

    FillResult result;
    for (EdgeId e : candidates) {
        for (auto& b : batches) {
            if (can_join(b, e, graph)) {
                b.edges.push_back(e);
                result.promoted.push_back(e);
                break;
            }
        }
    }
    result.batches = std::move(batches);
    return result;
}

}  // namespace effitest
