#include "effitest/timing_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace effitest {

// ---------------------------------------------------------------------------
// TuningBuffer

TuningBuffer::TuningBuffer(double range_start, double range_width, int step_count, int level)
    : start_(range_start), width_(range_width), steps_(step_count), level_(level) {
    if (steps_ < 2) throw TimingModelError("buffer needs at least 2 grid levels");
    if (!(width_ >= 0.0) || !std::isfinite(start_)) {
        throw TimingModelError("buffer range width must be >= 0");
    }
    set_level(level);
}

TuningBuffer TuningBuffer::symmetric(double width, int step_count) {
    TuningBuffer b(-width / 2.0, width, step_count, 0);
    b.set_level(b.zero_level());
    return b;
}

double TuningBuffer::value_at(int level) const {
    return start_ + static_cast<double>(level) * step();
}

int TuningBuffer::nearest_level(double x) const {
    // Distances within a tiny fraction of a step count as ties.
    const double tie = 1e-9 * std::max(step(), 1e-300);
    int best = 0;
    double best_dist = std::abs(value_at(0) - x);
    for (int k = 1; k < steps_; ++k) {
        const double d = std::abs(value_at(k) - x);
        if (d < best_dist - tie) {
            best_dist = d;
            best = k;
        }
    }
    return best;
}

void TuningBuffer::set_level(int level) {
    if (level < 0 || level >= steps_) {
        throw TimingModelError("buffer level " + std::to_string(level) + " outside [0, " +
                               std::to_string(steps_ - 1) + "]");
    }
    level_ = level;
}

// ---------------------------------------------------------------------------
// TimingGraph

TimingGraph::TimingGraph(std::vector<FlipFlop> flip_flops, std::vector<TimingEdge> edges,
                         double designated_period, std::vector<Exclusion> exclusions,
                         bool allow_self_loops)
    : nodes_(std::move(flip_flops)),
      edges_(std::move(edges)),
      period_(designated_period),
      exclusions_(std::move(exclusions)) {
    if (!(period_ > 0.0)) throw TimingModelError("designated period must be > 0");
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& ff = nodes_[i];
        if (ff.id != static_cast<NodeId>(i)) {
            throw TimingModelError("flip-flop ids must be 0..n-1 in order");
        }
        if (ff.setup_time < 0.0 || ff.hold_time < 0.0) {
            throw TimingModelError("setup/hold times must be >= 0");
        }
    }
    for (std::size_t i = 0; i < edges_.size(); ++i) {
        const auto& e = edges_[i];
        if (e.id != static_cast<EdgeId>(i)) throw TimingModelError("edge ids must be 0..m-1");
        if (e.src < 0 || e.src >= num_flip_flops() || e.dst < 0 || e.dst >= num_flip_flops()) {
            throw TimingModelError("edge " + std::to_string(e.id) + " has an unknown endpoint");
        }
        if (e.src == e.dst && !allow_self_loops) {
            throw TimingModelError("edge " + std::to_string(e.id) + " is a self-loop");
        }
    }
    for (auto& [a, b] : exclusions_) {
        if (a < 0 || a >= num_edges() || b < 0 || b >= num_edges() || a == b) {
            throw TimingModelError("exclusion pair references an invalid edge");
        }
        if (a > b) std::swap(a, b);
    }
    std::sort(exclusions_.begin(), exclusions_.end());
    exclusions_.erase(std::unique(exclusions_.begin(), exclusions_.end()), exclusions_.end());
}

const FlipFlop& TimingGraph::flip_flop(NodeId id) const {
    if (id < 0 || id >= num_flip_flops()) throw TimingModelError("unknown flip-flop");
    return nodes_[static_cast<std::size_t>(id)];
}

const TimingEdge& TimingGraph::edge(EdgeId id) const {
    if (id < 0 || id >= num_edges()) throw TimingModelError("unknown edge");
    return edges_[static_cast<std::size_t>(id)];
}

bool TimingGraph::excluded(EdgeId a, EdgeId b) const {
    if (a > b) std::swap(a, b);
    return std::binary_search(exclusions_.begin(), exclusions_.end(), Exclusion{a, b});
}

std::vector<NodeId> TimingGraph::buffered_nodes() const {
    std::vector<NodeId> out;
    for (const auto& ff : nodes_) {
        if (ff.buffer) out.push_back(ff.id);
    }
    return out;
}

int TimingGraph::num_buffers() const {
    return static_cast<int>(std::count_if(nodes_.begin(), nodes_.end(),
                                          [](const FlipFlop& f) { return f.buffer.has_value(); }));
}

double TimingGraph::buffer_value(NodeId id) const {
    const auto& ff = flip_flop(id);
    return ff.buffer ? ff.buffer->value() : 0.0;
}

double TimingGraph::edge_shift(EdgeId id) const {
    const auto& e = edge(id);
    return buffer_value(e.src) - buffer_value(e.dst);
}

void TimingGraph::set_buffer_level(NodeId id, int level) {
    auto& ff = nodes_.at(static_cast<std::size_t>(id));
    if (!ff.buffer) throw TimingModelError("flip-flop " + std::to_string(id) + " has no buffer");
    ff.buffer->set_level(level);
}

void TimingGraph::reset_buffers() {
    for (auto& ff : nodes_) {
        if (ff.buffer) ff.buffer->set_level(ff.buffer->zero_level());
    }
}

std::vector<EdgeId> TimingGraph::all_edge_ids() const {
    std::vector<EdgeId> ids(edges_.size());
    std::iota(ids.begin(), ids.end(), 0);
    return ids;
}

// ---------------------------------------------------------------------------
// DelayModel

const char* to_string(VariableKind kind) {
    return kind == VariableKind::SetupDelay ? "setup" : "hold";
}

VariableKind variable_kind_from_string(const std::string& s) {
    if (s == "setup") return VariableKind::SetupDelay;
    if (s == "hold") return VariableKind::HoldMargin;
    throw TimingModelError("unknown variable kind '" + s + "'");
}

double min_eigenvalue(const Eigen::MatrixXd& m) {
    if (m.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

Eigen::MatrixXd repair_psd(const Eigen::MatrixXd& m) {
    if (m.size() == 0) return m;
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    const Eigen::VectorXd clamped = es.eigenvalues().cwiseMax(0.0);
    Eigen::MatrixXd out = es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (out + out.transpose());
}

DelayModel::DelayModel(Eigen::VectorXd mean, Eigen::MatrixXd covariance,
                       std::vector<VariableLabel> labels)
    : mean_(std::move(mean)), cov_(std::move(covariance)), labels_(std::move(labels)) {
    const auto n = mean_.size();
    if (cov_.rows() != n || cov_.cols() != n) {
        throw TimingModelError("mean and covariance dimensions disagree");
    }
    if (static_cast<Eigen::Index>(labels_.size()) != n) {
        throw TimingModelError("one label per variable required");
    }
    if (n == 0) return;
    if (!mean_.allFinite() || !cov_.allFinite()) {
        throw TimingModelError("delay model contains non-finite values");
    }
    const double max_diag = cov_.diagonal().maxCoeff();
    if (cov_.diagonal().minCoeff() < 0.0) throw TimingModelError("negative variance");
    const double scale = std::max(max_diag, 1e-300);
    if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw TimingModelError("covariance is not symmetric");
    }
    if (min_eigenvalue(cov_) < -1e-9 * scale) {
        throw TimingModelError("covariance is not positive semi-definite");
    }
}

double DelayModel::stddev(int var) const { return std::sqrt(std::max(0.0, cov_(var, var))); }

double DelayModel::correlation(int a, int b) const {
    if (a == b) return 1.0;
    const double sa = stddev(a);
    const double sb = stddev(b);
    if (sa <= 0.0 || sb <= 0.0) return 0.0;
    return cov_(a, b) / (sa * sb);
}

DelayModel DelayModel::with_scaled_stddev(double factor) const {
    Eigen::MatrixXd cov = cov_;
    cov.diagonal() *= factor * factor;
    return DelayModel(mean_, cov, labels_);
}

// ---------------------------------------------------------------------------
// Sampling

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

ChipSampler::ChipSampler(const DelayModel& model) : mean_(model.mean()) {
    const auto& cov = model.covariance();
    const auto n = cov.rows();
    if (n == 0) {
        factor_.resize(0, 0);
        return;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) {
        factor_ = llt.matrixL();
        if (factor_.allFinite()) return;
    }
    // Semi-definite covariance: V * sqrt(max(lambda, 0)).
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(repair_psd(cov));
    if (es.info() != Eigen::Success) {
        throw TimingModelError("covariance cannot be factorized");
    }
    factor_ = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    if (!factor_.allFinite()) throw TimingModelError("covariance cannot be factorized");
}

ChipInstance ChipSampler::sample(std::uint64_t seed, int chip_id) const {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(chip_id)));
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd z(mean_.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    ChipInstance chip;
    chip.chip_id = chip_id;
    chip.true_delays = mean_ + factor_ * z;
    return chip;
}

ChipInstance sample_chip(const DelayModel& model, std::uint64_t seed, int chip_id) {
    return ChipSampler(model).sample(seed, chip_id);
}

// ---------------------------------------------------------------------------
// Generator

int buffer_count_for(int flip_flops, double buffer_fraction) {
    return static_cast<int>(std::ceil(buffer_fraction * flip_flops - 1e-9));
}

void GeneratorConfig::validate() const {
    if (flip_flops < 2) throw TimingModelError("generator needs at least 2 flip-flops");
    if (!(buffer_fraction > 0.0 && buffer_fraction <= 1.0)) {
        throw TimingModelError("buffer_fraction must lie in (0, 1]");
    }
    if (!(global_corr >= 0.0 && global_corr <= intra_cluster_corr && intra_cluster_corr <= 1.0)) {
        throw TimingModelError("need 0 <= global_corr <= intra_cluster_corr <= 1");
    }
    if (!(cv > 0.0)) throw TimingModelError("cv must be > 0");
    if (!(mean_delay_low > 0.0 && mean_delay_low <= mean_delay_high)) {
        throw TimingModelError("mean delay range must satisfy 0 < low <= high");
    }
    if (paths < 1) throw TimingModelError("need at least one required path");
    if (clusters < 1) throw TimingModelError("need at least one cluster");
    if (!(side_imbalance >= 0.0 && side_imbalance <= 1.0)) {
        throw TimingModelError("side_imbalance must lie in [0, 1]");
    }
    if (!(hold_margin_low >= 0.0 && hold_margin_low <= hold_margin_high)) {
        throw TimingModelError("hold margin range must satisfy 0 <= low <= high");
    }
    if (!(hold_coupling >= 0.0 && hold_coupling <= 1.0)) {
        throw TimingModelError("hold_coupling must lie in [0, 1]");
    }
    if (buffer_steps < 2) throw TimingModelError("buffer_steps must be >= 2");
}

Benchmark generate_benchmark(const GeneratorConfig& cfg) {
    cfg.validate();
    const int n_b = buffer_count_for(cfg.flip_flops, cfg.buffer_fraction);
    const int n_s = cfg.flip_flops;
    const int n_p = cfg.paths;
    const int n_c = cfg.clusters;
    if (n_c > n_b) {
        throw TimingModelError("cluster count " + std::to_string(n_c) +
                               " exceeds buffered flip-flop count " + std::to_string(n_b));
    }
    if (n_p < n_b - 1) {
        throw TimingModelError("need at least " + std::to_string(n_b - 1) +
                               " paths to connect " + std::to_string(n_b) + " buffers");
    }

    std::mt19937_64 rng(cfg.seed);
    std::vector<NodeId> order(static_cast<std::size_t>(n_s));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::vector<NodeId>> cluster_buffers(static_cast<std::size_t>(n_c));
    std::vector<std::vector<NodeId>> cluster_plain(static_cast<std::size_t>(n_c));
    std::vector<int> node_cluster(static_cast<std::size_t>(n_s), 0);
    std::vector<bool> buffered(static_cast<std::size_t>(n_s), false);
    for (int k = 0; k < n_s; ++k) {
        const NodeId id = order[static_cast<std::size_t>(k)];
        const bool is_buffer = k < n_b;
        const int c = (is_buffer ? k : k - n_b) % n_c;
        node_cluster[static_cast<std::size_t>(id)] = c;
        buffered[static_cast<std::size_t>(id)] = is_buffer;
        (is_buffer ? cluster_buffers : cluster_plain)[static_cast<std::size_t>(c)].push_back(id);
    }

    // Capacity of distinct (src, dst) pairs that touch a buffer of the cluster.
    long long capacity = n_b - 1;
    for (int c = 0; c < n_c; ++c) {
        const auto nb = static_cast<long long>(cluster_buffers[static_cast<std::size_t>(c)].size());
        const auto nu = static_cast<long long>(cluster_plain[static_cast<std::size_t>(c)].size());
        capacity += 2 * nb * nu + nb * (nb - 1);
    }
    if (n_p > capacity) {
        throw TimingModelError("requested " + std::to_string(n_p) +
                               " paths but the cluster topology admits at most " +
                               std::to_string(capacity));
    }

    // Heavy side of each buffer: true = incoming paths are the long ones.
    std::vector<bool> heavy_in(static_cast<std::size_t>(n_s), false);
    std::bernoulli_distribution coin(0.5);
    for (int k = 0; k < n_b; ++k) heavy_in[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = coin(rng);

    std::set<std::pair<NodeId, NodeId>> used;
    std::vector<TimingEdge> edges;
    std::vector<int> edge_cluster;
    std::vector<bool> edge_heavy;
    auto add_edge = [&](NodeId src, NodeId dst, int cluster, bool heavy) {
        TimingEdge e;
        e.id = static_cast<EdgeId>(edges.size());
        e.src = src;
        e.dst = dst;
        e.setup_var = e.id;
        e.hold_var = n_p + e.id;
        edges.push_back(e);
        edge_cluster.push_back(cluster);
        edge_heavy.push_back(heavy);
        used.insert({src, dst});
    };

    // Chain the buffers so the required-path graph is weakly connected.
    for (int k = 1; k < n_b; ++k) {
        const NodeId a = order[static_cast<std::size_t>(k - 1)];
        const NodeId b = order[static_cast<std::size_t>(k)];
        add_edge(a, b, node_cluster[static_cast<std::size_t>(a)], !heavy_in[static_cast<std::size_t>(a)]);
    }

    // Remaining paths attach to a buffer of their cluster.
    int cursor = 0;
    while (static_cast<int>(edges.size()) < n_p) {
        const int c = cursor++ % n_c;
        const auto& bufs = cluster_buffers[static_cast<std::size_t>(c)];
        const auto& plain = cluster_plain[static_cast<std::size_t>(c)];
        bool placed = false;
        for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
            const NodeId b = bufs[std::uniform_int_distribution<std::size_t>(0, bufs.size() - 1)(rng)];
            const bool incoming = coin(rng);
            NodeId other;
            const std::size_t pool = plain.size() + bufs.size() - 1;
            if (pool == 0) break;
            std::size_t pick = std::uniform_int_distribution<std::size_t>(0, pool - 1)(rng);
            if (pick < plain.size()) {
                other = plain[pick];
            } else {
                pick -= plain.size();
                std::vector<NodeId> others;
                for (NodeId x : bufs) {
                    if (x != b) others.push_back(x);
                }
                other = others[pick];
            }
            const NodeId src = incoming ? other : b;
            const NodeId dst = incoming ? b : other;
            if (used.count({src, dst})) continue;
            const bool heavy = incoming == heavy_in[static_cast<std::size_t>(b)];
            add_edge(src, dst, c, heavy);
            placed = true;
        }
        if (!placed) {
            // Dense cluster: fall back to the first free pair in a fixed scan.
            for (NodeId b : bufs) {
                for (int dir = 0; dir < 2 && !placed; ++dir) {
                    std::vector<NodeId> partners(plain);
                    for (NodeId x : bufs) {
                        if (x != b) partners.push_back(x);
                    }
                    for (NodeId o : partners) {
                        const NodeId src = dir == 0 ? o : b;
                        const NodeId dst = dir == 0 ? b : o;
                        if (used.count({src, dst})) continue;
                        add_edge(src, dst, c, (dir == 0) == heavy_in[static_cast<std::size_t>(b)]);
                        placed = true;
                        break;
                    }
                }
                if (placed) break;
            }
        }
        if (!placed && cursor > 4 * n_p + 4 * n_c) {
            throw TimingModelError("could not place all required paths");
        }
    }

    // Means, variances and the block correlation structure.
    const double lo = cfg.mean_delay_low;
    const double hi = cfg.mean_delay_high;
    const double half = 0.5 * (hi - lo) * cfg.side_imbalance;
    std::vector<double> setup_mean(static_cast<std::size_t>(n_p));
    for (int e = 0; e < n_p; ++e) {
        const bool heavy = edge_heavy[static_cast<std::size_t>(e)];
        const double a = heavy ? lo + half : lo;
        const double b = heavy ? hi : hi - half;
        setup_mean[static_cast<std::size_t>(e)] = std::uniform_real_distribution<double>(a, b)(rng);
    }
    const double period = *std::max_element(setup_mean.begin(), setup_mean.end());
    const double width = period / 8.0;
    std::vector<double> hold_mean(static_cast<std::size_t>(n_p));
    for (int e = 0; e < n_p; ++e) {
        hold_mean[static_cast<std::size_t>(e)] =
            -width * std::uniform_real_distribution<double>(cfg.hold_margin_low, cfg.hold_margin_high)(rng);
    }

    const int dim = 2 * n_p;
    Eigen::VectorXd mu(dim);
    Eigen::VectorXd sigma(dim);
    for (int e = 0; e < n_p; ++e) {
        mu(e) = setup_mean[static_cast<std::size_t>(e)];
        mu(n_p + e) = hold_mean[static_cast<std::size_t>(e)];
        sigma(e) = cfg.cv * std::abs(mu(e));
        sigma(n_p + e) = cfg.cv * std::abs(mu(n_p + e));
    }
    Eigen::MatrixXd structural(n_p, n_p);
    for (int a = 0; a < n_p; ++a) {
        for (int b = 0; b < n_p; ++b) {
            if (a == b) {
                structural(a, b) = 1.0;
            } else {
                structural(a, b) = edge_cluster[static_cast<std::size_t>(a)] ==
                                           edge_cluster[static_cast<std::size_t>(b)]
                                       ? cfg.intra_cluster_corr
                                       : cfg.global_corr;
            }
        }
    }
    Eigen::MatrixXd cov(dim, dim);
    cov.topLeftCorner(n_p, n_p) = structural;
    cov.bottomRightCorner(n_p, n_p) = structural;
    cov.topRightCorner(n_p, n_p) = -cfg.hold_coupling * structural;
    cov.bottomLeftCorner(n_p, n_p) = -cfg.hold_coupling * structural;
    cov = sigma.asDiagonal() * cov * sigma.asDiagonal();
    const Eigen::MatrixXd upper = cov.selfadjointView<Eigen::Upper>();
    cov = upper;
    const double max_diag = cov.diagonal().maxCoeff();
    if (min_eigenvalue(cov) < -1e-12 * max_diag) cov = repair_psd(cov);

    std::vector<VariableLabel> labels;
    labels.reserve(static_cast<std::size_t>(dim));
    for (int e = 0; e < n_p; ++e) labels.push_back({e, VariableKind::SetupDelay});
    for (int e = 0; e < n_p; ++e) labels.push_back({e, VariableKind::HoldMargin});

    std::vector<FlipFlop> nodes(static_cast<std::size_t>(n_s));
    for (int i = 0; i < n_s; ++i) {
        nodes[static_cast<std::size_t>(i)].id = i;
        if (buffered[static_cast<std::size_t>(i)]) {
            nodes[static_cast<std::size_t>(i)].buffer = TuningBuffer(0.0, 0.0, cfg.buffer_steps);
        }
    }
    TimingGraph graph(std::move(nodes), std::move(edges), period);
    Benchmark bench{buffer_defaults(graph, period, cfg.buffer_steps),
                    DelayModel(std::move(mu), std::move(cov), std::move(labels)), cfg};
    return bench;
}

TimingGraph buffer_defaults(const TimingGraph& graph, double designated_period, int step_count) {
    if (!(designated_period > 0.0)) throw TimingModelError("designated period must be > 0");
    std::vector<FlipFlop> nodes = graph.flip_flops();
    for (auto& ff : nodes) {
        if (ff.buffer) ff.buffer = TuningBuffer::symmetric(designated_period / 8.0, step_count);
    }
    return TimingGraph(std::move(nodes), graph.edges(), graph.designated_period(),
                       graph.exclusions(), true);
}

}  // namespace effitest
