#include "effitest/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace effitest {

namespace {

std::vector<int> setup_vars(const std::vector<EdgeId>& edges, const TimingGraph& graph) {
    std::vector<int> vars;
    vars.reserve(edges.size());
    for (EdgeId e : edges) vars.push_back(graph.edge(e).setup_var);
    return vars;
}

Eigen::MatrixXd sub_covariance(const DelayModel& model, const std::vector<int>& rows,
                               const std::vector<int>& cols) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < cols.size(); ++c) {
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                model.covariance()(rows[r], cols[c]);
        }
    }
    return out;
}

}  // namespace

PathGroup extract_paths(const std::vector<EdgeId>& remaining, const TimingGraph& graph,
                        const DelayModel& model, double threshold, int group_index) {
    if (remaining.empty()) throw std::invalid_argument("extract_paths needs a non-empty set");
    std::vector<EdgeId> pool(remaining);
    std::sort(pool.begin(), pool.end());
    const auto vars = setup_vars(pool, graph);
    const std::size_t n = pool.size();

    PathGroup group;
    group.index = group_index;
    group.threshold = threshold;

    // Seed pair with the highest correlation (first found wins ties).
    int seed_a = -1;
    int seed_b = -1;
    double best = -2.0;
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            const double rho = model.correlation(vars[a], vars[b]);
            if (rho > best) {
                best = rho;
                seed_a = static_cast<int>(a);
                seed_b = static_cast<int>(b);
            }
        }
    }
    if (seed_a < 0 || best < threshold) {
        std::size_t widest = 0;
        for (std::size_t a = 1; a < n; ++a) {
            if (model.covariance()(vars[a], vars[a]) > model.covariance()(vars[widest], vars[widest])) {
                widest = a;
            }
        }
        group.members = {pool[widest]};
        return group;
    }

    std::vector<bool> in(n, false);
    std::vector<std::size_t> frontier{static_cast<std::size_t>(seed_a), static_cast<std::size_t>(seed_b)};
    in[static_cast<std::size_t>(seed_a)] = in[static_cast<std::size_t>(seed_b)] = true;
    while (!frontier.empty()) {
        const std::size_t m = frontier.back();
        frontier.pop_back();
        for (std::size_t c = 0; c < n; ++c) {
            if (in[c]) continue;
            if (model.correlation(vars[m], vars[c]) >= threshold) {
                in[c] = true;
                frontier.push_back(c);
            }
        }
    }
    for (std::size_t c = 0; c < n; ++c) {
        if (in[c]) group.members.push_back(pool[c]);
    }
    return group;
}

PcaResult principal_components(const Eigen::MatrixXd& covariance, double variance_capture) {
    PcaResult out;
    const auto n = covariance.rows();
    if (n == 0) return out;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (covariance + covariance.transpose()));
    // Eigen sorts ascending; flip to descending.
    out.eigenvalues = es.eigenvalues().reverse().cwiseMax(0.0);
    out.components = es.eigenvectors().rowwise().reverse();
    const double total = out.eigenvalues.sum();
    if (total <= 0.0) {
        out.pc_count = 1;
        return out;
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        acc += out.eigenvalues(i);
        if (acc >= variance_capture * total - 1e-12 * total) {
            out.pc_count = static_cast<int>(i) + 1;
            return out;
        }
    }
    out.pc_count = static_cast<int>(n);
    return out;
}

Selection select_paths(const PathGroup& group, const TimingGraph& graph, const DelayModel& model,
                       double variance_capture) {
    if (group.members.empty()) throw std::invalid_argument("select_paths needs a non-empty group");
    std::vector<EdgeId> members(group.members);
    std::sort(members.begin(), members.end());
    const auto vars = setup_vars(members, graph);
    Selection sel;
    sel.pca = principal_components(sub_covariance(model, vars, vars), variance_capture);
    std::vector<bool> taken(members.size(), false);
    for (int pc = 0; pc < sel.pca.pc_count; ++pc) {
        int best = -1;
        double best_load = -1.0;
        for (std::size_t i = 0; i < members.size(); ++i) {
            if (taken[i]) continue;
            const double load = std::abs(sel.pca.components(static_cast<Eigen::Index>(i), pc));
            if (load > best_load + 1e-12) {
                best_load = load;
                best = static_cast<int>(i);
            }
        }
        if (best < 0) break;
        taken[static_cast<std::size_t>(best)] = true;
        sel.paths.push_back(members[static_cast<std::size_t>(best)]);
    }
    return sel;
}

int TestPlan::group_of(EdgeId edge) const {
    for (const auto& g : groups) {
        if (std::binary_search(g.members.begin(), g.members.end(), edge)) return g.index;
    }
    return -1;
}

TestPlan plan_test_set(const std::vector<EdgeId>& required, const TimingGraph& graph,
                       const DelayModel& model, const StatsConfig& cfg) {
    if (required.empty()) throw std::invalid_argument("plan_test_set needs required paths");
    std::set<EdgeId> remaining(required.begin(), required.end());
    TestPlan plan;
    int i = 0;
    while (!remaining.empty()) {
        double th = cfg.initial_threshold - cfg.threshold_step * static_cast<double>(i);
        th = std::max(0.0, std::round(th * 1e9) / 1e9);
        const std::vector<EdgeId> pool(remaining.begin(), remaining.end());
        PathGroup group = extract_paths(pool, graph, model, th, i);
        Selection sel = select_paths(group, graph, model, cfg.variance_capture);
        for (EdgeId e : group.members) remaining.erase(e);
        plan.tested.insert(plan.tested.end(), sel.paths.begin(), sel.paths.end());
        plan.selected.push_back(std::move(sel.paths));
        plan.groups.push_back(std::move(group));
        ++i;
    }
    return plan;
}

DelayPredictor::DelayPredictor(const TimingGraph& graph, const DelayModel& model,
                               const std::vector<PathGroup>& groups,
                               const std::vector<EdgeId>& tested, double ridge) {
    const std::set<EdgeId> tested_set(tested.begin(), tested.end());
    for (const auto& g : groups) {
        GroupData gd;
        std::vector<EdgeId> targets;
        for (EdgeId e : g.members) (tested_set.count(e) ? gd.tested : targets).push_back(e);
        const auto t_vars = setup_vars(gd.tested, graph);
        gd.tested_mean.resize(static_cast<Eigen::Index>(t_vars.size()));
        for (std::size_t i = 0; i < t_vars.size(); ++i) {
            gd.tested_mean(static_cast<Eigen::Index>(i)) = model.mean(t_vars[i]);
        }

        Eigen::MatrixXd sigma_t = sub_covariance(model, t_vars, t_vars);
        const auto dim = sigma_t.rows();
        const double trace = dim > 0 ? sigma_t.trace() : 0.0;
        const bool informative = dim > 0 && trace > 0.0;
        Eigen::LLT<Eigen::MatrixXd> llt;
        if (informative) {
            sigma_t.diagonal().array() += ridge * trace / static_cast<double>(dim);
            llt.compute(sigma_t);
            if (llt.info() != Eigen::Success) {
                throw PredictionError("tested covariance of group " + std::to_string(g.index) +
                                      " is singular beyond ridge repair");
            }
        }

        const int group_slot = static_cast<int>(groups_.size());
        for (EdgeId k : targets) {
            const int kv = graph.edge(k).setup_var;
            Target t;
            t.edge = k;
            t.group = group_slot;
            t.prior_mean = model.mean(kv);
            t.prior_stddev = model.stddev(kv);
            const double prior_var = model.covariance()(kv, kv);
            if (informative) {
                const Eigen::MatrixXd cross = sub_covariance(model, t_vars, {kv});
                t.weights = llt.solve(cross.col(0));
                if (!t.weights.allFinite()) {
                    throw PredictionError("prediction weights are not finite for edge " +
                                          std::to_string(k));
                }
                const double explained = cross.col(0).dot(t.weights);
                t.stddev = std::sqrt(std::max(0.0, prior_var - explained));
            } else {
                t.weights = Eigen::VectorXd::Zero(dim);
                t.stddev = t.prior_stddev;
            }
            targets_.push_back(std::move(t));
            untested_.push_back(k);
        }
        groups_.push_back(std::move(gd));
    }
}

std::map<EdgeId, double> DelayPredictor::conditional_stddev() const {
    std::map<EdgeId, double> out;
    for (const auto& t : targets_) out[t.edge] = t.stddev;
    return out;
}

std::vector<PredictedDelay> DelayPredictor::predict(const std::map<EdgeId, double>& measured) const {
    std::vector<Eigen::VectorXd> residual(groups_.size());
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        const auto& gd = groups_[g];
        residual[g].resize(static_cast<Eigen::Index>(gd.tested.size()));
        for (std::size_t i = 0; i < gd.tested.size(); ++i) {
            const auto it = measured.find(gd.tested[i]);
            if (it == measured.end()) {
                throw PredictionError("no measurement for tested edge " + std::to_string(gd.tested[i]));
            }
            residual[g](static_cast<Eigen::Index>(i)) = it->second - gd.tested_mean(static_cast<Eigen::Index>(i));
        }
    }
    std::vector<PredictedDelay> out;
    out.reserve(targets_.size());
    for (const auto& t : targets_) {
        PredictedDelay p;
        p.edge = t.edge;
        p.mean = t.prior_mean + t.weights.dot(residual[static_cast<std::size_t>(t.group)]);
        p.stddev = t.stddev;
        p.prior_stddev = t.prior_stddev;
        out.push_back(p);
    }
    return out;
}

std::vector<PredictedDelay> predict_delays(const TimingGraph& graph, const DelayModel& model,
                                           const std::vector<PathGroup>& groups,
                                           const std::vector<EdgeId>& tested,
                                           const std::map<EdgeId, double>& measured, double ridge) {
    return DelayPredictor(graph, model, groups, tested, ridge).predict(measured);
}

}  // namespace effitest
