#include "effitest/configurator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace effitest {

namespace {

constexpr double kCheckTol = 1e-9;

struct OffsetTerm {
    int var = -1;
    double step = 0.0;
    double base = 0.0;
};

// x_src - x_dst = sum(coef * level) + constant
struct ShiftExpr {
    std::vector<mip::Term> terms;
    double constant = 0.0;
};

int required_count(int m, double y) {
    return std::min(m, static_cast<int>(std::ceil(y * m - 1e-9)));
}

// Sample indices of column e sorted by value descending, ties to the lower index.
std::vector<int> descending(const Eigen::MatrixXd& s, Eigen::Index e, int keep) {
    std::vector<int> idx(static_cast<std::size_t>(s.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    const auto cmp = [&](int a, int b) {
        if (s(a, e) != s(b, e)) return s(a, e) > s(b, e);
        return a < b;
    };
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(keep), idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), cmp);
    idx.resize(k);
    return idx;
}

HoldResult finish_hold(const Eigen::MatrixXd& s, std::vector<int> dropped, bool exact) {
    std::sort(dropped.begin(), dropped.end());
    std::vector<bool> gone(static_cast<std::size_t>(s.rows()), false);
    for (int k : dropped) gone[static_cast<std::size_t>(k)] = true;
    HoldResult out;
    out.exact = exact;
    out.kept = static_cast<int>(s.rows()) - static_cast<int>(dropped.size());
    out.dropped = std::move(dropped);
    out.lambda.assign(static_cast<std::size_t>(s.cols()), -mip::kInfinity);
    for (Eigen::Index k = 0; k < s.rows(); ++k) {
        if (gone[static_cast<std::size_t>(k)]) continue;
        for (Eigen::Index e = 0; e < s.cols(); ++e) {
            auto& l = out.lambda[static_cast<std::size_t>(e)];
            l = std::max(l, s(k, e));
        }
    }
    for (double l : out.lambda) out.objective += l;
    return out;
}

std::vector<int> greedy_drop(const Eigen::MatrixXd& s, int budget) {
    std::vector<std::vector<int>> order;
    for (Eigen::Index e = 0; e < s.cols(); ++e) order.push_back(descending(s, e, budget + 1));
    std::set<int> dropped;
    for (int round = 0; round < budget; ++round) {
        std::map<int, double> gain;
        for (Eigen::Index e = 0; e < s.cols(); ++e) {
            const auto& o = order[static_cast<std::size_t>(e)];
            int first = -1;
            int second = -1;
            for (int k : o) {
                if (dropped.count(k)) continue;
                if (first < 0) {
                    first = k;
                } else {
                    second = k;
                    break;
                }
            }
            if (first < 0 || second < 0) continue;
            gain[first] += s(first, e) - s(second, e);
        }
        int best = -1;
        double best_gain = 0.0;
        for (const auto& [k, g] : gain) {
            if (g > best_gain) {
                best = k;
                best_gain = g;
            }
        }
        if (best < 0) break;
        dropped.insert(best);
    }
    return {dropped.begin(), dropped.end()};
}

// Only the top budget+1 samples of a column can set its bound, so every
// other sample keeps y_k = 1 and each lambda starts at its (budget+1)-th
// largest value.
std::optional<std::vector<int>> exact_drop(const Eigen::MatrixXd& s, int budget, const mip::Limits& limits) {
    std::vector<std::vector<int>> top;
    std::set<int> cand;
    for (Eigen::Index e = 0; e < s.cols(); ++e) {
        top.push_back(descending(s, e, budget + 1));
        const auto& o = top.back();
        for (std::size_t i = 0; i + 1 < o.size(); ++i) {
            if (s(o[i], e) > s(o.back(), e)) cand.insert(o[i]);
        }
    }
    if (cand.empty()) return std::vector<int>{};

    mip::Model m;
    std::map<int, int> y;
    for (int k : cand) y[k] = m.add_variable("y" + std::to_string(k), 0.0, 1.0, true);
    std::vector<mip::Term> sum;
    for (const auto& [k, v] : y) sum.push_back({v, 1.0});
    m.add_constraint("keep", sum, mip::Sense::GreaterEqual, static_cast<double>(cand.size()) - budget);
    for (Eigen::Index e = 0; e < s.cols(); ++e) {
        const auto& o = top[static_cast<std::size_t>(e)];
        if (o.size() < 2) continue;
        const double floor = s(o.back(), e);
        std::vector<std::pair<int, double>> rows;
        for (std::size_t i = 0; i + 1 < o.size(); ++i) {
            if (s(o[i], e) > floor) rows.emplace_back(o[i], s(o[i], e) - floor);
        }
        if (rows.empty()) continue;
        const int lam = m.add_variable("lambda" + std::to_string(e), floor, mip::kInfinity, false, 1.0);
        for (const auto& [k, big] : rows) {
            // lambda - d_k >= big * (y_k - 1)
            m.add_constraint("h" + std::to_string(e) + "_" + std::to_string(k),
                             {{lam, 1.0}, {y.at(k), -big}}, mip::Sense::GreaterEqual, floor);
        }
    }
    const auto sol = mip::solve(m, limits);
    if (!sol.optimal()) return std::nullopt;
    std::vector<int> dropped;
    for (const auto& [k, v] : y) {
        if (sol.values[static_cast<std::size_t>(v)] < 0.5) dropped.push_back(k);
    }
    return dropped;
}

std::map<NodeId, OffsetTerm> offsets(const TimingGraph& graph, const std::vector<NodeId>& movable, int first_var) {
    std::map<NodeId, OffsetTerm> out;
    for (std::size_t i = 0; i < movable.size(); ++i) {
        const auto& buf = graph.flip_flop(movable[i]).buffer;
        out[movable[i]] = OffsetTerm{first_var + static_cast<int>(i), buf->step(), buf->range_start()};
    }
    return out;
}

ShiftExpr shift_expr(const TimingGraph& graph, const std::map<NodeId, OffsetTerm>& off, NodeId src, NodeId dst) {
    ShiftExpr s;
    if (src == dst) return s;
    auto add = [&](NodeId n, double sign) {
        const auto it = off.find(n);
        if (it == off.end()) {
            s.constant += sign * graph.buffer_value(n);
        } else {
            s.terms.push_back({it->second.var, sign * it->second.step});
            s.constant += sign * it->second.base;
        }
    };
    add(src, 1.0);
    add(dst, -1.0);
    return s;
}

std::vector<mip::Term> with(std::vector<mip::Term> terms, std::initializer_list<mip::Term> extra) {
    terms.insert(terms.end(), extra.begin(), extra.end());
    return terms;
}

std::vector<NodeId> movable_nodes(const TimingGraph& graph, const ConfigProblem& p) {
    std::set<NodeId> nodes;
    auto touch = [&](const TimingEdge& e) {
        if (e.src == e.dst) return;
        if (graph.has_buffer(e.src)) nodes.insert(e.src);
        if (graph.has_buffer(e.dst)) nodes.insert(e.dst);
    };
    for (const auto& [id, b] : p.bounds) touch(graph.edge(id));
    if (!p.hold.empty()) {
        for (const auto& e : graph.edges()) {
            if (std::isfinite(p.hold[static_cast<std::size_t>(e.id)])) touch(e);
        }
    }
    return {nodes.begin(), nodes.end()};
}

struct SignatureRows {
    double setup_rhs = mip::kInfinity;  // sum(terms) <= setup_rhs
    double gap_rhs = -mip::kInfinity;   // xi - sum(terms) >= gap_rhs
    double hold_rhs = -mip::kInfinity;  // sum(terms) >= hold_rhs
};

using Signature = std::vector<std::pair<int, double>>;

Signature signature_of(const ShiftExpr& s) {
    Signature sig;
    for (const auto& t : s.terms) sig.emplace_back(t.var, t.coef);
    std::sort(sig.begin(), sig.end());
    return sig;
}

std::string signature_tag(const Signature& sig, const std::vector<NodeId>& movable) {
    if (sig.empty()) return "[fixed]";
    std::string tag = "[";
    for (const auto& [var, coef] : sig) {
        tag += coef > 0 ? "+" : "-";
        tag += std::to_string(movable[static_cast<std::size_t>(var - 1)]);
    }
    return tag + "]";
}

// Builds the configuration MILP. With `elastic`, setup and hold rows get a
// nonnegative slack and the objective becomes the total slack. Rows whose
// shift is constant and fail are returned in `conflicts`; `crossed` is set
// when single-level rows leave a level with an empty range.
mip::Model build(const TimingGraph& graph, const ConfigProblem& p, const ConfigOptions& opt,
                 const std::vector<NodeId>& movable, bool elastic, std::vector<std::string>* conflicts,
                 bool* crossed = nullptr) {
    using mip::Sense;
    mip::Model m;
    const double t = p.period;
    const auto off = offsets(graph, movable, 1);
    std::vector<double> klo(movable.size(), 0.0);
    std::vector<double> khi;
    for (NodeId n : movable) khi.push_back(graph.flip_flop(n).buffer->step_count() - 1);
    double xi_floor = 0.0;

    struct Row {
        std::string name;
        std::vector<mip::Term> terms;
        Sense sense;
        double rhs;
        bool relaxable;
    };
    std::vector<Row> rows;
    // Constant rows are checked here; single-level rows become bounds.
    auto row = [&](const std::string& name, std::vector<mip::Term> terms, Sense sense, double rhs, bool relaxable) {
        if (terms.empty()) {
            const bool ok = sense == Sense::LessEqual ? 0.0 <= rhs + kCheckTol : 0.0 >= rhs - kCheckTol;
            if (!ok && conflicts) conflicts->push_back(name);
            return;
        }
        if (!elastic && terms.size() == 1 && terms[0].var >= 1 &&
            terms[0].var <= static_cast<int>(movable.size())) {
            const auto i = static_cast<std::size_t>(terms[0].var - 1);
            const double q = rhs / terms[0].coef;
            const bool upper = (sense == Sense::LessEqual) == (terms[0].coef > 0);
            if (upper) {
                khi[i] = std::min(khi[i], std::floor(q + 1e-9));
            } else {
                klo[i] = std::max(klo[i], std::ceil(q - 1e-9));
            }
            return;
        }
        rows.push_back({name, std::move(terms), sense, rhs, relaxable});
    };

    const int xi = 0;
    std::vector<std::pair<int, double>> continuous;  // D' bounds in the full form
    if (opt.form == ConfigForm::Aggregated) {
        std::map<Signature, SignatureRows> groups;
        for (const auto& [id, b] : p.bounds) {
            const auto& e = graph.edge(id);
            const auto s = shift_expr(graph, off, e.src, e.dst);
            auto& g = groups[signature_of(s)];
            // shift <= T - l and xi >= u - T + shift
            g.setup_rhs = std::min(g.setup_rhs, t - (opt.pessimistic ? b.upper : b.lower) - s.constant);
            g.gap_rhs = std::max(g.gap_rhs, b.upper - t + s.constant);
        }
        if (!p.hold.empty()) {
            for (const auto& e : graph.edges()) {
                const double lambda = p.hold[static_cast<std::size_t>(e.id)];
                if (!std::isfinite(lambda)) continue;
                const auto s = shift_expr(graph, off, e.src, e.dst);
                auto& g = groups[signature_of(s)];
                g.hold_rhs = std::max(g.hold_rhs, lambda - s.constant);
            }
        }
        for (const auto& [sig, g] : groups) {
            const std::string tag = signature_tag(sig, movable);
            std::vector<mip::Term> terms;
            for (const auto& [var, coef] : sig) terms.push_back({var, coef});
            if (std::isfinite(g.setup_rhs)) row("setup" + tag, terms, Sense::LessEqual, g.setup_rhs, true);
            if (std::isfinite(g.hold_rhs)) row("hold" + tag, terms, Sense::GreaterEqual, g.hold_rhs, true);
            if (opt.pessimistic || !std::isfinite(g.gap_rhs)) continue;
            if (sig.empty()) {
                xi_floor = std::max(xi_floor, g.gap_rhs);
            } else {
                std::vector<mip::Term> gap{{xi, 1.0}};
                for (const auto& [var, coef] : sig) gap.push_back({var, -coef});
                rows.push_back({"gap" + tag, gap, Sense::GreaterEqual, g.gap_rhs, false});
            }
        }
    } else {
        int next = 1 + static_cast<int>(movable.size());
        for (const auto& [id, b] : p.bounds) {
            const auto& e = graph.edge(id);
            const auto s = shift_expr(graph, off, e.src, e.dst);
            const std::string tag = std::to_string(id);
            const int d = next++;
            continuous.emplace_back(id, opt.pessimistic ? b.upper : b.lower);
            // T >= D' + shift
            rows.push_back({"setup_" + tag, with(s.terms, {{d, 1.0}}), Sense::LessEqual, t - s.constant, true});
            // xi >= u - D'
            rows.push_back({"gap_" + tag, {{xi, 1.0}, {d, 1.0}}, Sense::GreaterEqual, b.upper, false});
        }
        if (!p.hold.empty()) {
            for (const auto& e : graph.edges()) {
                const double lambda = p.hold[static_cast<std::size_t>(e.id)];
                if (!std::isfinite(lambda)) continue;
                const auto s = shift_expr(graph, off, e.src, e.dst);
                row("hold_" + std::to_string(e.id), s.terms, Sense::GreaterEqual, lambda - s.constant, true);
            }
        }
    }

    const double xi_lo = opt.pessimistic ? 0.0 : std::max(0.0, xi_floor);
    m.add_variable("xi", xi_lo, opt.pessimistic ? 0.0 : mip::kInfinity, false, elastic ? 0.0 : 1.0);
    for (std::size_t i = 0; i < movable.size(); ++i) {
        if (klo[i] > khi[i]) {
            if (crossed) *crossed = true;
            khi[i] = klo[i];
        }
        m.add_variable("k" + std::to_string(movable[i]), klo[i], khi[i], true);
    }
    for (const auto& [id, lo] : continuous) m.add_variable("D" + std::to_string(id), lo, p.bounds.at(id).upper);
    for (auto& r : rows) {
        if (elastic && r.relaxable) {
            const int slack = m.add_variable("s_" + r.name, 0.0, mip::kInfinity, false, 1.0);
            r.terms.push_back({slack, r.sense == Sense::LessEqual ? -1.0 : 1.0});
        }
        m.add_constraint(r.name, std::move(r.terms), r.sense, r.rhs);
    }
    return m;
}

double node_value(const TimingGraph& graph, const std::map<NodeId, int>* levels, NodeId n) {
    if (!levels) return 0.0;
    const auto& ff = graph.flip_flop(n);
    if (!ff.buffer) return 0.0;
    const auto it = levels->find(n);
    return it == levels->end() ? ff.buffer->value() : ff.buffer->value_at(it->second);
}

}  // namespace

void HoldConfig::validate() const {
    if (samples < 100) throw std::invalid_argument("hold sample count must be at least 100");
    if (!(target > 0.0) || target > 1.0) throw std::invalid_argument("hold yield target must lie in (0, 1]");
    if (exact_limit < 0) throw std::invalid_argument("exact_limit must be non-negative");
}

HoldResult hold_bounds_from_samples(const Eigen::MatrixXd& samples, const HoldConfig& cfg) {
    if (!(cfg.target > 0.0) || cfg.target > 1.0) {
        throw std::invalid_argument("hold yield target must lie in (0, 1]");
    }
    const int m = static_cast<int>(samples.rows());
    if (m == 0) throw std::invalid_argument("no hold samples");
    const int budget = m - required_count(m, cfg.target);
    if (budget == 0) return finish_hold(samples, {}, true);
    if (m <= cfg.exact_limit) {
        if (auto dropped = exact_drop(samples, budget, cfg.limits)) {
            return finish_hold(samples, std::move(*dropped), true);
        }
    }
    return finish_hold(samples, greedy_drop(samples, budget), false);
}

Eigen::MatrixXd sample_hold_margins(const TimingGraph& graph, const DelayModel& model, int samples,
                                    std::uint64_t seed) {
    const int n = graph.num_edges();
    Eigen::VectorXd mu(n);
    Eigen::MatrixXd cov(n, n);
    std::vector<VariableLabel> labels;
    for (int a = 0; a < n; ++a) {
        const int va = graph.edge(a).hold_var;
        mu(a) = model.mean(va);
        for (int b = 0; b < n; ++b) cov(a, b) = model.covariance()(va, graph.edge(b).hold_var);
        labels.push_back({a, VariableKind::HoldMargin});
    }
    const ChipSampler sampler(DelayModel(mu, cov, labels));
    Eigen::MatrixXd out(samples, n);
    for (int k = 0; k < samples; ++k) out.row(k) = sampler.sample(seed, k).true_delays.transpose();
    return out;
}

HoldResult compute_hold_bounds(const TimingGraph& graph, const DelayModel& model, const HoldConfig& cfg) {
    cfg.validate();
    return hold_bounds_from_samples(sample_hold_margins(graph, model, cfg.samples, cfg.seed), cfg);
}

TimingGraph with_levels(const TimingGraph& graph, const std::map<NodeId, int>& levels) {
    TimingGraph g = graph;
    for (const auto& [n, level] : levels) g.set_buffer_level(n, level);
    return g;
}

mip::Model configuration_model(const TimingGraph& graph, const ConfigProblem& problem,
                               const ConfigOptions& options, const std::vector<NodeId>& movable) {
    return build(graph, problem, options, movable, false, nullptr);
}

BufferConfiguration configure_buffers(const TimingGraph& graph, const ConfigProblem& p, const ConfigOptions& opt) {
    if (!p.hold.empty() && static_cast<int>(p.hold.size()) != graph.num_edges()) {
        throw std::invalid_argument("hold bounds must cover every edge");
    }
    for (const auto& [id, b] : p.bounds) {
        if (b.edge != id) throw std::invalid_argument("bound keyed by the wrong edge");
        if (!(b.lower <= b.upper)) throw std::invalid_argument("bound with lower > upper on edge " + std::to_string(id));
    }
    BufferConfiguration out;
    const auto movable = movable_nodes(graph, p);
    std::vector<std::string> constant_conflicts;
    bool crossed = false;
    const auto model = build(graph, p, opt, movable, false, &constant_conflicts, &crossed);
    if (!constant_conflicts.empty()) {
        out.conflicts = std::move(constant_conflicts);
        return out;
    }
    const auto sol = crossed ? mip::Solution{} : mip::solve(model, opt.limits);
    if (sol.status == mip::Status::Infeasible) {
        const auto elastic = build(graph, p, opt, movable, true, nullptr);
        const auto rel = mip::solve(elastic, opt.limits);
        if (!rel.values.empty()) {
            for (int v = 0; v < elastic.num_variables(); ++v) {
                const auto& var = elastic.variables()[static_cast<std::size_t>(v)];
                if (var.name.rfind("s_", 0) == 0 && rel.values[static_cast<std::size_t>(v)] > 1e-7) {
                    out.conflicts.push_back(var.name.substr(2));
                }
            }
        }
        return out;
    }
    if (sol.values.empty()) {
        throw std::runtime_error("configuration MILP stopped without a solution (" +
                                 std::string(mip::to_string(sol.status)) + ")");
    }

    for (NodeId n : graph.buffered_nodes()) out.levels[n] = graph.flip_flop(n).buffer->level();
    for (std::size_t i = 0; i < movable.size(); ++i) {
        const int steps = graph.flip_flop(movable[i]).buffer->step_count();
        const long level = std::lround(sol.values[1 + i]);
        out.levels[movable[i]] = static_cast<int>(std::clamp<long>(level, 0, steps - 1));
    }
    out.feasible = true;
    const TimingGraph g = with_levels(graph, out.levels);
    for (const auto& [id, b] : p.bounds) {
        const double room = p.period - g.edge_shift(id);
        const double d = opt.pessimistic ? b.upper : std::clamp(room, b.lower, b.upper);
        out.assumed[id] = d;
        out.xi = std::max(out.xi, b.upper - d);
    }
    return out;
}

ChipVerdict check_chip(const ChipInstance& chip, const TimingGraph& graph, const std::map<NodeId, int>* levels,
                       double period) {
    ChipVerdict v;
    v.chip_id = chip.chip_id;
    v.feasible = true;
    v.setup_pass = true;
    v.hold_pass = true;
    for (const auto& e : graph.edges()) {
        const double shift = e.src == e.dst ? 0.0 : node_value(graph, levels, e.src) - node_value(graph, levels, e.dst);
        if (chip.true_delays(e.setup_var) + shift > period + kCheckTol) v.setup_pass = false;
        if (shift < chip.true_delays(e.hold_var) - kCheckTol) v.hold_pass = false;
    }
    return v;
}

BufferConfiguration ideal_configuration(const ChipInstance& chip, const TimingGraph& graph, double period,
                                        const HoldBounds& hold, const ConfigOptions& options) {
    ConfigProblem p;
    p.period = period;
    p.hold = hold;
    for (const auto& e : graph.edges()) {
        const double d = chip.true_delays(e.setup_var);
        p.bounds[e.id] = DelayBound{e.id, d, d};
    }
    return configure_buffers(graph, p, options);
}

YieldReport evaluate_yield(const std::vector<ChipInstance>& chips, const std::vector<BufferConfiguration>& configs,
                           const TimingGraph& graph, double period, const HoldBounds& hold,
                           const ConfigOptions& options) {
    if (chips.size() != configs.size()) throw std::invalid_argument("one configuration per chip required");
    YieldReport r;
    r.period = period;
    if (chips.empty()) return r;
    int tested = 0;
    int ideal = 0;
    int bare = 0;
    for (std::size_t i = 0; i < chips.size(); ++i) {
        ChipVerdict v;
        if (configs[i].feasible) {
            v = check_chip(chips[i], graph, &configs[i].levels, period);
        } else {
            v.chip_id = chips[i].chip_id;
        }
        v.xi = configs[i].xi;
        tested += v.pass();
        r.verdicts.push_back(v);

        const auto best = ideal_configuration(chips[i], graph, period, hold, options);
        ideal += best.feasible && check_chip(chips[i], graph, &best.levels, period).pass();
        bare += check_chip(chips[i], graph, nullptr, period).pass();
    }
    const double n = static_cast<double>(chips.size());
    r.y_tested = tested / n;
    r.y_ideal = ideal / n;
    r.y_no_buffer = bare / n;
    return r;
}

double critical_delay(const ChipInstance& chip, const TimingGraph& graph) {
    double worst = -mip::kInfinity;
    for (const auto& e : graph.edges()) worst = std::max(worst, chip.true_delays(e.setup_var));
    return worst;
}

}  // namespace effitest
