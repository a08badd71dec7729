#include "effitest/mip.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <queue>

namespace effitest::mip {

namespace {

struct Node {
    std::vector<double> lower;
    std::vector<double> upper;
    double bound = -kInfinity;  // parent's LP objective
    std::int64_t id = 0;
    std::shared_ptr<const LpBasis> start;  // parent's final tableau
};

struct NodeOrder {
    bool operator()(const Node& a, const Node& b) const {
        if (a.bound != b.bound) return a.bound > b.bound;
        return a.id > b.id;
    }
};

// Most fractional integer variable, ties by lowest index; -1 when integral.
int branching_variable(const Model& model, const std::vector<double>& x, double tol) {
    int best = -1;
    double best_frac = tol;
    for (int j = 0; j < model.num_variables(); ++j) {
        if (!model.variables()[static_cast<std::size_t>(j)].integer) continue;
        const double v = x[static_cast<std::size_t>(j)];
        const double frac = std::abs(v - std::round(v));
        if (frac > best_frac + 1e-12) {
            best_frac = frac;
            best = j;
        }
    }
    return best;
}

}  // namespace

Solution solve(const Model& model, const Limits& limits, const Tolerances& tol) {
    model.validate();
    Solution sol;

    const std::size_t n = static_cast<std::size_t>(model.num_variables());
    Node root;
    root.lower.resize(n);
    root.upper.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto& v = model.variables()[j];
        root.lower[j] = v.integer ? std::ceil(v.lower - tol.integrality) : v.lower;
        root.upper[j] = v.integer ? std::floor(v.upper + tol.integrality) : v.upper;
    }

    // Depth-first dive until the first incumbent, best-bound afterwards.
    std::vector<Node> dive;
    std::priority_queue<Node, std::vector<Node>, NodeOrder> open;
    dive.push_back(std::move(root));
    std::int64_t next_id = 1;

    double incumbent = kInfinity;
    std::vector<double> incumbent_values;
    bool hit_limit = false;
    bool unbounded = false;

    auto prune_threshold = [&](double inc) {
        return inc - std::max(1e-9 * std::max(1.0, std::abs(inc)), tol.absolute_gap);
    };

    while (!dive.empty() || !open.empty()) {
        if (sol.nodes >= limits.max_nodes) {
            hit_limit = true;
            break;
        }
        Node node;
        const bool diving = !dive.empty();
        if (diving) {
            node = std::move(dive.back());
            dive.pop_back();
        } else {
            node = open.top();
            open.pop();
        }
        if (node.bound >= prune_threshold(incumbent)) continue;
        if (!diving) sol.max_global_bound = std::max(sol.max_global_bound, node.bound);
        ++sol.nodes;

        std::shared_ptr<const LpBasis> final;
        LpResult lp = solve_lp_warm(model, node.lower, node.upper, node.start, &final, limits, tol);
        sol.lp_iterations += lp.iterations;
        if (lp.status == Status::Infeasible) continue;
        if (lp.status == Status::Unbounded) {
            unbounded = true;
            break;
        }
        if (lp.status == Status::IterationLimit) {
            hit_limit = true;
            open.push(std::move(node));
            break;
        }
        if (lp.objective >= prune_threshold(incumbent)) continue;

        const int branch = branching_variable(model, lp.values, tol.integrality);
        if (branch < 0) {
            for (std::size_t j = 0; j < n; ++j) {
                if (model.variables()[j].integer) lp.values[j] = std::round(lp.values[j]);
            }
            incumbent = model.evaluate(lp.values);
            incumbent_values = std::move(lp.values);
            for (auto& d : dive) open.push(std::move(d));
            dive.clear();
            continue;
        }

        const std::size_t b = static_cast<std::size_t>(branch);
        const double v = lp.values[b];
        Node down = node;
        down.upper[b] = std::floor(v);
        down.bound = lp.objective;
        down.id = next_id++;
        down.start = final;
        Node up = std::move(node);
        up.lower[b] = std::ceil(v);
        up.bound = lp.objective;
        up.id = next_id++;
        up.start = std::move(final);
        if (incumbent_values.empty()) {
            // The child on the rounding side is explored first.
            const bool up_first = v - std::floor(v) >= 0.5;
            dive.push_back(std::move(up_first ? down : up));
            dive.push_back(std::move(up_first ? up : down));
        } else {
            open.push(std::move(down));
            open.push(std::move(up));
        }
    }

    for (auto& d : dive) open.push(std::move(d));
    double open_bound = kInfinity;
    if (!open.empty()) open_bound = open.top().bound;

    if (unbounded) {
        sol.status = Status::Unbounded;
        return sol;
    }
    if (!incumbent_values.empty()) {
        sol.values = std::move(incumbent_values);
        sol.objective = incumbent;
        sol.best_bound = hit_limit ? std::min(open_bound, incumbent) : incumbent;
        sol.status = hit_limit ? Status::IterationLimit : Status::Optimal;
        return sol;
    }
    sol.status = hit_limit ? Status::IterationLimit : Status::Infeasible;
    sol.best_bound = hit_limit ? open_bound : kInfinity;
    return sol;
}

}  // namespace effitest::mip
