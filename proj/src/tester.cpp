#include "effitest/tester.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>

namespace effitest {

namespace {

constexpr double kRemovalSlack = 1e-9;

bool finished(const DelayBound& b, double resolution) {
    return b.width() <= resolution * (1.0 + kRemovalSlack);
}

// Value of a flip-flop's clock offset: r + step * k for movable buffers,
// the current value otherwise.
struct OffsetTerm {
    int var = -1;       // model variable of the level, -1 when fixed
    double step = 0.0;  // coefficient of the level
    double base = 0.0;  // constant part
};

}  // namespace

std::map<EdgeId, DelayBound> initial_bounds(const TimingGraph& graph, const DelayModel& model,
                                            const std::vector<EdgeId>& edges) {
    std::map<EdgeId, DelayBound> out;
    for (EdgeId id : edges) {
        const int v = graph.edge(id).setup_var;
        const double mu = model.mean(v);
        const double sd = model.stddev(v);
        out[id] = DelayBound{id, mu - 3.0 * sd, mu + 3.0 * sd};
    }
    return out;
}

void TesterConfig::validate() const {
    if (!(resolution > 0.0)) throw std::invalid_argument("tester resolution must be > 0");
    if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
    if (!(k0 > 0.0) || !(kd >= 0.0)) throw std::invalid_argument("weights need k0 > 0 and kd >= 0");
    if (!(gap >= 0.0)) throw std::invalid_argument("alignment gap must be >= 0");
}

double default_resolution(const TimingGraph& graph, const DelayModel& model,
                          const std::vector<EdgeId>& edges, int halvings) {
    if (edges.empty()) throw std::invalid_argument("default_resolution needs edges");
    double sum = 0.0;
    for (EdgeId e : edges) sum += model.stddev(graph.edge(e).setup_var);
    const double mean_sd = sum / static_cast<double>(edges.size());
    if (!(mean_sd > 0.0)) throw std::invalid_argument("default_resolution needs non-zero spreads");
    return 6.0 * mean_sd / std::ldexp(1.0, halvings);
}

std::vector<double> alignment_weights(const std::vector<DelayBound>& bounds, double k0, double kd) {
    const std::size_t n = bounds.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double ca = bounds[a].center();
        const double cb = bounds[b].center();
        if (ca != cb) return ca < cb;
        return bounds[a].edge < bounds[b].edge;
    });
    std::vector<double> w(n, k0);
    if (n == 0) return w;
    const auto middle = static_cast<std::ptrdiff_t>((n - 1) / 2);
    for (std::size_t rank = 0; rank < n; ++rank) {
        const auto dist = std::abs(static_cast<std::ptrdiff_t>(rank) - middle);
        // Weights stay positive even for very long batches.
        w[order[rank]] = std::max(k0 - kd * static_cast<double>(dist), 1e-3 * k0);
    }
    return w;
}

mip::Model alignment_model(const std::vector<DelayBound>& active, const TimingGraph& graph,
                           const HoldBounds& hold, const TesterConfig& cfg,
                           const std::vector<NodeId>& movable) {
    using mip::Sense;
    using mip::Term;
    const auto weights = alignment_weights(active, cfg.k0, cfg.kd);

    std::map<NodeId, OffsetTerm> offset;
    auto term_of = [&](NodeId n) {
        const auto it = offset.find(n);
        if (it != offset.end()) return it->second;
        return OffsetTerm{-1, 0.0, graph.buffer_value(n)};
    };

    mip::Model m;
    // Period window wide enough for every reachable shifted center.
    double max_shift = 0.0;
    double lo = mip::kInfinity;
    double hi = -mip::kInfinity;
    for (const auto& b : active) {
        lo = std::min(lo, b.lower);
        hi = std::max(hi, b.upper);
    }
    for (const auto& ff : graph.flip_flops()) {
        if (ff.buffer) {
            max_shift = std::max({max_shift, std::abs(ff.buffer->range_start()), std::abs(ff.buffer->range_end())});
        }
    }
    max_shift *= 2.0;
    const double t_lo = lo - max_shift - 1.0;
    const double t_hi = hi + max_shift + 1.0;
    const int t = m.add_variable("T", t_lo, t_hi);

    for (NodeId n : movable) {
        const auto& buf = graph.flip_flop(n).buffer;
        if (!buf) throw std::invalid_argument("movable flip-flop has no buffer");
        const int v = m.add_variable("k" + std::to_string(n), 0.0, buf->step_count() - 1, true);
        offset[n] = OffsetTerm{v, buf->step(), buf->range_start()};
    }

    const double big_m = 4.0 * ((t_hi - t_lo) + 2.0 * max_shift + 1.0);
    for (std::size_t i = 0; i < active.size(); ++i) {
        const auto& edge = graph.edge(active[i].edge);
        const std::string tag = std::to_string(edge.id);
        const int eta = m.add_variable("eta" + tag, 0.0, cfg.form == AlignmentForm::BigM ? big_m : mip::kInfinity,
                                       false, weights[i]);
        // delta = T - c - (x_src - x_dst) = T + lin - rhs_const
        std::vector<Term> delta{{t, 1.0}};
        double constant = active[i].center();
        if (edge.src != edge.dst) {
            const auto s = term_of(edge.src);
            const auto d = term_of(edge.dst);
            if (s.var >= 0) delta.push_back({s.var, -s.step});
            if (d.var >= 0) delta.push_back({d.var, d.step});
            constant += s.base - d.base;
        }
        auto scaled = [&](double f, std::vector<Term> extra) {
            std::vector<Term> out;
            for (const auto& term : delta) out.push_back({term.var, f * term.coef});
            out.insert(out.end(), extra.begin(), extra.end());
            return out;
        };
        if (cfg.form == AlignmentForm::Epigraph) {
            // eta - delta >= 0 and eta + delta >= 0
            m.add_constraint("up" + tag, scaled(-1.0, {{eta, 1.0}}), Sense::GreaterEqual, -constant);
            m.add_constraint("dn" + tag, scaled(1.0, {{eta, 1.0}}), Sense::GreaterEqual, constant);
        } else {
            const int zp = m.add_variable("zp" + tag, 0.0, 1.0, true);
            const int zn = m.add_variable("zn" + tag, 0.0, 1.0, true);
            m.add_constraint("p1_" + tag, scaled(1.0, {{zp, -big_m}}), Sense::LessEqual, constant);
            m.add_constraint("p2_" + tag, scaled(1.0, {{eta, -1.0}, {zp, big_m}}), Sense::LessEqual, big_m + constant);
            m.add_constraint("p3_" + tag, scaled(-1.0, {{eta, 1.0}, {zp, big_m}}), Sense::LessEqual, big_m - constant);
            m.add_constraint("n1_" + tag, scaled(-1.0, {{zn, -big_m}}), Sense::LessEqual, -constant);
            m.add_constraint("n2_" + tag, scaled(-1.0, {{eta, -1.0}, {zn, big_m}}), Sense::LessEqual, big_m - constant);
            m.add_constraint("n3_" + tag, scaled(1.0, {{eta, 1.0}, {zn, big_m}}), Sense::LessEqual, big_m + constant);
        }
    }

    if (!hold.empty() && !movable.empty()) {
        // Edges with the same buffer-dependent part share one row (largest
        // bound); rows on a single level become bounds on that level.
        std::map<std::vector<std::pair<int, double>>, std::pair<double, EdgeId>> rows;
        for (const auto& e : graph.edges()) {
            if (e.src == e.dst) continue;
            const double lambda = hold.at(static_cast<std::size_t>(e.id));
            if (!std::isfinite(lambda)) continue;
            const auto s = term_of(e.src);
            const auto d = term_of(e.dst);
            if (s.var < 0 && d.var < 0) continue;
            std::vector<std::pair<int, double>> key;
            if (s.var >= 0) key.emplace_back(s.var, s.step);
            if (d.var >= 0) key.emplace_back(d.var, -d.step);
            std::sort(key.begin(), key.end());
            const double rhs = lambda - s.base + d.base;
            const auto it = rows.find(key);
            if (it == rows.end()) {
                rows.emplace(key, std::make_pair(rhs, e.id));
            } else if (rhs > it->second.first) {
                it->second = {rhs, e.id};
            }
        }
        for (const auto& [key, row] : rows) {
            const auto [rhs, id] = row;
            if (key.size() == 1) {
                const auto& v = m.variables()[static_cast<std::size_t>(key[0].first)];
                const double q = rhs / key[0].second;
                double lo = v.lower;
                double hi = v.upper;
                if (key[0].second > 0) {
                    lo = std::max(lo, std::ceil(q - 1e-9));
                } else {
                    hi = std::min(hi, std::floor(q + 1e-9));
                }
                if (lo <= hi) {
                    m.set_bounds(key[0].first, lo, hi);
                    continue;
                }
            }
            // Equal step sizes: divide through and round the bound up, which
            // every integer setting satisfies and the LP relaxation feels.
            double g = 1.0;
            double bound = rhs;
            if (key.size() == 2 && std::abs(std::abs(key[0].second) - std::abs(key[1].second)) <=
                                       1e-12 * std::abs(key[0].second)) {
                g = std::abs(key[0].second);
                bound = std::ceil(rhs / g - 1e-9);
            }
            std::vector<Term> lhs;
            for (const auto& [var, coef] : key) lhs.push_back({var, coef / g});
            m.add_constraint("hold" + std::to_string(id), lhs, Sense::GreaterEqual, bound);
        }
    }
    return m;
}

FrequencyChoice compute_frequency(const std::vector<DelayBound>& active, const TimingGraph& graph,
                                  const HoldBounds& hold, const TesterConfig& cfg) {
    FrequencyChoice out;
    if (active.empty()) return out;
    if (!hold.empty() && static_cast<int>(hold.size()) != graph.num_edges()) {
        throw std::invalid_argument("hold bounds must cover every edge");
    }
    out.weights = alignment_weights(active, cfg.k0, cfg.kd);

    std::vector<NodeId> movable;
    if (cfg.align) {
        std::set<NodeId> nodes;
        for (const auto& b : active) {
            const auto& e = graph.edge(b.edge);
            if (e.src == e.dst) continue;
            if (graph.has_buffer(e.src)) nodes.insert(e.src);
            if (graph.has_buffer(e.dst)) nodes.insert(e.dst);
        }
        movable.assign(nodes.begin(), nodes.end());
    }

    auto shift_under = [&](EdgeId id, const std::map<NodeId, int>& levels) {
        const auto& e = graph.edge(id);
        if (e.src == e.dst) return 0.0;
        auto value = [&](NodeId n) {
            const auto it = levels.find(n);
            return it == levels.end() ? graph.buffer_value(n) : graph.flip_flop(n).buffer->value_at(it->second);
        };
        return value(e.src) - value(e.dst);
    };

    if (movable.empty()) {
        // Weighted median of the shifted centers.
        std::vector<std::pair<double, std::size_t>> pts;
        double total = 0.0;
        for (std::size_t i = 0; i < active.size(); ++i) {
            const double s = shift_under(active[i].edge, {});
            out.shifts.push_back(s);
            pts.emplace_back(active[i].center() + s, i);
            total += out.weights[i];
        }
        std::sort(pts.begin(), pts.end());
        double acc = 0.0;
        for (const auto& [value, i] : pts) {
            acc += out.weights[i];
            if (acc >= 0.5 * total * (1.0 - 1e-12)) {
                out.period = value;
                break;
            }
        }
    } else {
        const auto model = alignment_model(active, graph, hold, cfg, movable);
        mip::Tolerances tol;
        tol.absolute_gap = cfg.gap * cfg.k0;
        const auto sol = mip::solve(model, cfg.limits, tol);
        if (sol.status == mip::Status::Infeasible) {
            std::vector<std::string> rows;
            for (const auto& c : model.constraints()) {
                if (c.name.rfind("hold", 0) == 0) rows.push_back(c.name);
            }
            throw AlignmentError("hold bounds leave no feasible buffer setting", rows);
        }
        if (sol.values.empty()) {
            throw std::runtime_error("alignment MILP stopped without a solution (" +
                                     std::string(mip::to_string(sol.status)) + ")");
        }
        out.solved_by_milp = true;
        out.period = sol.values[0];
        for (std::size_t i = 0; i < movable.size(); ++i) {
            const int steps = graph.flip_flop(movable[i]).buffer->step_count();
            const long level = std::lround(sol.values[1 + i]);
            out.levels[movable[i]] = static_cast<int>(std::clamp<long>(level, 0, steps - 1));
        }
        for (const auto& b : active) out.shifts.push_back(shift_under(b.edge, out.levels));
    }
    for (std::size_t i = 0; i < active.size(); ++i) {
        out.objective += out.weights[i] * std::abs(out.period - active[i].center() - out.shifts[i]);
    }
    return out;
}

std::vector<bool> apply_frequency_step(const std::vector<EdgeId>& edges, const ChipInstance& chip,
                                       const TimingGraph& graph, double period) {
    std::vector<bool> pass;
    pass.reserve(edges.size());
    for (EdgeId id : edges) {
        const double d = chip.true_delays(graph.edge(id).setup_var);
        pass.push_back(d + graph.edge_shift(id) <= period);
    }
    return pass;
}

void update_bound(DelayBound& bound, double threshold, bool pass, bool* contradicted) {
    bool bad = false;
    if (pass) {
        if (threshold < bound.lower) {
            bad = true;
            bound.upper = bound.lower;
        } else if (threshold < bound.upper) {
            bound.upper = threshold;
        }
    } else {
        if (threshold > bound.upper) {
            bad = true;
            bound.lower = bound.upper;
        } else if (threshold > bound.lower) {
            bound.lower = threshold;
        }
    }
    if (contradicted) *contradicted = bad;
}

BatchResult run_batch_test(const TestBatch& batch, const ChipInstance& chip, const DelayModel& model,
                           TimingGraph& graph, const std::map<EdgeId, DelayBound>& start,
                           const TesterConfig& cfg, const HoldBounds& hold, IterationLog* log) {
    cfg.validate();
    (void)model;
    BatchResult result;
    std::vector<EdgeId> active;
    for (EdgeId id : batch.edges) {
        const auto it = start.find(id);
        if (it == start.end()) throw std::invalid_argument("no starting window for edge " + std::to_string(id));
        DelayBound b = it->second;
        b.edge = id;
        if (b.lower > b.upper) throw std::invalid_argument("inverted window for edge " + std::to_string(id));
        const double d = chip.true_delays(graph.edge(id).setup_var);
        if (d < b.lower || d > b.upper) result.out_of_window.push_back(id);
        result.bounds[id] = b;
        if (!finished(b, cfg.resolution)) active.push_back(id);
    }

    const auto buffered = graph.buffered_nodes();
    while (!active.empty()) {
        if (result.iterations >= cfg.max_iterations) {
            result.guard_tripped = true;
            break;
        }
        std::vector<DelayBound> current;
        for (EdgeId id : active) current.push_back(result.bounds.at(id));
        const auto choice = compute_frequency(current, graph, hold, cfg);
        for (const auto& [node, level] : choice.levels) graph.set_buffer_level(node, level);
        const auto pass = apply_frequency_step(active, chip, graph, choice.period);
        ++result.iterations;

        IterationRecord rec;
        rec.chip_id = chip.chip_id;
        rec.batch_index = batch.index;
        rec.iteration = result.iterations;
        rec.period = choice.period;
        if (log) {
            for (NodeId n : buffered) rec.buffers.emplace_back(n, graph.buffer_value(n));
        }
        std::vector<EdgeId> still;
        for (std::size_t i = 0; i < active.size(); ++i) {
            auto& b = result.bounds.at(active[i]);
            EdgeStep step;
            step.edge = active[i];
            step.shift = graph.edge_shift(active[i]);
            step.threshold = choice.period - step.shift;
            step.pass = pass[i];
            update_bound(b, step.threshold, step.pass, &step.contradicted);
            step.lower = b.lower;
            step.upper = b.upper;
            if (log) rec.edges.push_back(step);
            if (!finished(b, cfg.resolution)) still.push_back(active[i]);
        }
        if (log) log->append(std::move(rec));
        active = std::move(still);
    }
    return result;
}

ChipTestResult run_chip_test(const std::vector<TestBatch>& batches, const ChipInstance& chip,
                             const DelayModel& model, TimingGraph& graph, const TesterConfig& cfg,
                             const HoldBounds& hold, IterationLog* log,
                             const std::map<EdgeId, DelayBound>* start) {
    ChipTestResult out;
    for (const auto& batch : batches) {
        graph.reset_buffers();
        std::map<EdgeId, DelayBound> windows;
        if (start) {
            for (EdgeId e : batch.edges) {
                const auto it = start->find(e);
                windows[e] = it != start->end() ? it->second : initial_bounds(graph, model, {e}).at(e);
            }
        } else {
            windows = initial_bounds(graph, model, batch.edges);
        }
        auto r = run_batch_test(batch, chip, model, graph, windows, cfg, hold, log);
        out.iterations += r.iterations;
        out.batch_iterations.push_back(r.iterations);
        out.guard_tripped = out.guard_tripped || r.guard_tripped;
        out.out_of_window.insert(out.out_of_window.end(), r.out_of_window.begin(), r.out_of_window.end());
        for (auto& [e, b] : r.bounds) out.bounds[e] = b;
    }
    graph.reset_buffers();
    return out;
}

void IterationLog::append(const IterationLog& other) {
    records_.insert(records_.end(), other.records_.begin(), other.records_.end());
}

void IterationLog::write_jsonl(std::ostream& out) const {
    for (const auto& r : records_) {
        nlohmann::json j;
        j["chip"] = r.chip_id;
        j["batch"] = r.batch_index;
        j["iteration"] = r.iteration;
        j["period"] = r.period;
        nlohmann::json buffers = nlohmann::json::array();
        for (const auto& [n, v] : r.buffers) buffers.push_back({n, v});
        j["buffers"] = std::move(buffers);
        nlohmann::json edges = nlohmann::json::array();
        for (const auto& s : r.edges) {
            edges.push_back({{"edge", s.edge},
                             {"shift", s.shift},
                             {"threshold", s.threshold},
                             {"pass", s.pass},
                             {"lower", s.lower},
                             {"upper", s.upper},
                             {"contradicted", s.contradicted}});
        }
        j["edges"] = std::move(edges);
        out << j.dump() << '\n';
    }
}

IterationLog IterationLog::read_jsonl(std::istream& in) {
    IterationLog log;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        IterationRecord r;
        r.chip_id = j.at("chip").get<int>();
        r.batch_index = j.at("batch").get<int>();
        r.iteration = j.at("iteration").get<int>();
        r.period = j.at("period").get<double>();
        for (const auto& b : j.at("buffers")) r.buffers.emplace_back(b.at(0).get<int>(), b.at(1).get<double>());
        for (const auto& s : j.at("edges")) {
            EdgeStep step;
            step.edge = s.at("edge").get<int>();
            step.shift = s.at("shift").get<double>();
            step.threshold = s.at("threshold").get<double>();
            step.pass = s.at("pass").get<bool>();
            step.lower = s.at("lower").get<double>();
            step.upper = s.at("upper").get<double>();
            step.contradicted = s.at("contradicted").get<bool>();
            r.edges.push_back(step);
        }
        log.append(std::move(r));
    }
    return log;
}

std::map<EdgeId, DelayBound> replay_bounds(const IterationLog& log, const std::map<EdgeId, DelayBound>& start) {
    std::map<EdgeId, DelayBound> bounds = start;
    for (const auto& r : log.records()) {
        for (const auto& s : r.edges) {
            auto it = bounds.find(s.edge);
            if (it == bounds.end()) throw std::invalid_argument("log names an edge without a start window");
            update_bound(it->second, s.threshold, s.pass);
        }
    }
    return bounds;
}

}  // namespace effitest
