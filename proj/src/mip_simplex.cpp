// Bounded-variable primal simplex on a dense tableau.
//
// Columns: n structural, m slacks (one per row, bounds encode the row sense),
// m artificials. Row i reads  a_i x + s_i + sign_i * art_i = b_i  with the
// artificial basis chosen so its initial value is |residual_i| >= 0.

#include "effitest/mip.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>

namespace effitest::mip {

enum class VarState : std::uint8_t { Basic, AtLower, AtUpper, FreeZero };

struct LpBasis {
    int n = 0;
    int m = 0;
    std::vector<double> tab, lo, hi, beta, sign;
    std::vector<VarState> state;
    std::vector<int> basis;
};

namespace {

class Tableau {
public:
    Tableau(const Model& model, const std::vector<double>& lower,
            const std::vector<double>& upper, const Limits& limits, const Tolerances& tol)
        : model_(model), limits_(limits), tol_(tol) {
        n_ = model.num_variables();
        m_ = model.num_constraints();
        cols_ = n_ + 2 * m_;
        lo_.assign(static_cast<std::size_t>(cols_), 0.0);
        hi_.assign(static_cast<std::size_t>(cols_), kInfinity);
        for (int j = 0; j < n_; ++j) {
            lo_[idx(j)] = lower[idx(j)];
            hi_[idx(j)] = upper[idx(j)];
        }
        for (int i = 0; i < m_; ++i) {
            const auto sense = model.constraints()[idx(i)].sense;
            const int s = n_ + i;
            if (sense == Sense::LessEqual) {
                lo_[idx(s)] = 0.0;
                hi_[idx(s)] = kInfinity;
            } else if (sense == Sense::GreaterEqual) {
                lo_[idx(s)] = -kInfinity;
                hi_[idx(s)] = 0.0;
            } else {
                lo_[idx(s)] = 0.0;
                hi_[idx(s)] = 0.0;
            }
        }
        build();
    }

    // Resumes from a saved tableau under new structural bounds; nonbasic
    // values that move are pushed through to the basic values.
    Tableau(const Model& model, const LpBasis& saved, const std::vector<double>& lower,
            const std::vector<double>& upper, const Limits& limits, const Tolerances& tol)
        : model_(model), limits_(limits), tol_(tol), n_(saved.n), m_(saved.m), cols_(saved.n + 2 * saved.m),
          lo_(saved.lo), hi_(saved.hi), tab_(saved.tab), state_(saved.state), basis_(saved.basis),
          beta_(saved.beta), sign_(saved.sign) {
        for (int j = 0; j < n_; ++j) {
            const bool basic = state_[idx(j)] == VarState::Basic;
            const double before = basic ? 0.0 : nonbasic_value(j);
            lo_[idx(j)] = lower[idx(j)];
            hi_[idx(j)] = upper[idx(j)];
            if (basic) continue;
            VarState& st = state_[idx(j)];
            if (st == VarState::AtUpper && std::isfinite(hi_[idx(j)])) {
                st = VarState::AtUpper;
            } else if (std::isfinite(lo_[idx(j)])) {
                st = VarState::AtLower;
            } else if (std::isfinite(hi_[idx(j)])) {
                st = VarState::AtUpper;
            } else {
                st = VarState::FreeZero;
            }
            const double delta = nonbasic_value(j) - before;
            if (delta == 0.0) continue;
            for (int i = 0; i < m_; ++i) beta_[idx(i)] -= at(i, j) * delta;
        }
    }

    [[nodiscard]] std::shared_ptr<const LpBasis> save() const {
        auto b = std::make_shared<LpBasis>();
        b->n = n_;
        b->m = m_;
        b->tab = tab_;
        b->lo = lo_;
        b->hi = hi_;
        b->beta = beta_;
        b->sign = sign_;
        b->state = state_;
        b->basis = basis_;
        return b;
    }

    // Bounded dual simplex: the most violated basic variable leaves at the
    // bound it violates; the entering column keeps every reduced cost on the
    // right side.
    Status dual_phase(const std::vector<double>& cost, std::int64_t& iterations) {
        cost_ = cost;
        while (true) {
            int r = -1;
            double worst = tol_.feasibility;
            bool above = false;
            for (int i = 0; i < m_; ++i) {
                const int b = basis_[idx(i)];
                const double v = beta_[idx(i)];
                if (lo_[idx(b)] - v > worst) {
                    worst = lo_[idx(b)] - v;
                    r = i;
                    above = false;
                } else if (v - hi_[idx(b)] > worst) {
                    worst = v - hi_[idx(b)];
                    r = i;
                    above = true;
                }
            }
            if (r < 0) return Status::Optimal;
            if (iterations >= limits_.max_lp_iterations) return Status::IterationLimit;
            compute_reduced_costs();

            // Moving x_j by delta moves x_r by -a_rj * delta.
            const double want = above ? 1.0 : -1.0;  // required sign of a_rj * delta
            int enter = -1;
            double best_ratio = kInfinity;
            double best_abs = 0.0;
            for (int j = 0; j < cols_; ++j) {
                const VarState st = state_[idx(j)];
                if (st == VarState::Basic) continue;
                if (st != VarState::FreeZero && !(hi_[idx(j)] > lo_[idx(j)])) continue;
                const double a = at(r, j);
                if (std::abs(a) <= tol_.pivot) continue;
                if (st == VarState::AtLower && a * want <= 0.0) continue;
                if (st == VarState::AtUpper && a * want >= 0.0) continue;
                const double ratio = std::abs(reduced_[idx(j)]) / std::abs(a);
                if (ratio < best_ratio - 1e-12 || (ratio <= best_ratio + 1e-12 && std::abs(a) > best_abs)) {
                    best_ratio = ratio;
                    best_abs = std::abs(a);
                    enter = j;
                }
            }
            if (enter < 0) return Status::Infeasible;
            ++iterations;

            const int leaving = basis_[idx(r)];
            const double target = above ? hi_[idx(leaving)] : lo_[idx(leaving)];
            const double delta = (beta_[idx(r)] - target) / at(r, enter);
            const double entering_value = nonbasic_value(enter) + delta;
            for (int i = 0; i < m_; ++i) beta_[idx(i)] -= at(i, enter) * delta;
            state_[idx(leaving)] = above ? VarState::AtUpper : VarState::AtLower;
            pivot(r, enter);
            basis_[idx(r)] = enter;
            state_[idx(enter)] = VarState::Basic;
            beta_[idx(r)] = entering_value;
        }
    }

    // Dual repair, then a primal pass to settle any reduced-cost drift.
    Status resolve(LpResult& out) {
        std::int64_t iterations = 0;
        const std::vector<double> phase2 = structural_costs();
        Status st = dual_phase(phase2, iterations);
        out.iterations = iterations;
        if (st != Status::Optimal) return st;
        st = run_phase(phase2, iterations);
        out.iterations = iterations;
        if (st != Status::Optimal) return st;
        extract(out);
        return Status::Optimal;
    }

    // Worst bound or row violation of `x` under the current structural bounds.
    [[nodiscard]] double violation(const std::vector<double>& x) const {
        double worst = 0.0;
        for (int j = 0; j < n_; ++j) {
            worst = std::max({worst, lo_[idx(j)] - x[idx(j)], x[idx(j)] - hi_[idx(j)]});
        }
        return std::max(worst, model_.max_violation(x));
    }

    Status run_phase(const std::vector<double>& cost, std::int64_t& iterations) {
        cost_ = cost;
        bool bland = false;
        int degenerate_streak = 0;
        while (true) {
            if (iterations >= limits_.max_lp_iterations) return Status::IterationLimit;
            compute_reduced_costs();
            const int enter = choose_entering(bland);
            if (enter < 0) return Status::Optimal;
            const double dir = reduced_[idx(enter)] < 0.0 ? 1.0 : -1.0;

            // Ratio test.
            double best_step = hi_[idx(enter)] - lo_[idx(enter)];  // bound flip
            int leave_row = -1;
            bool leave_to_upper = false;
            double best_alpha = 0.0;
            for (int i = 0; i < m_; ++i) {
                const double alpha = dir * at(i, enter);
                if (std::abs(alpha) <= tol_.pivot) continue;
                const int b = basis_[idx(i)];
                double step;
                bool to_upper;
                if (alpha > 0.0) {
                    if (!std::isfinite(lo_[idx(b)])) continue;
                    step = (beta_[idx(i)] - lo_[idx(b)]) / alpha;
                    to_upper = false;
                } else {
                    if (!std::isfinite(hi_[idx(b)])) continue;
                    step = (hi_[idx(b)] - beta_[idx(i)]) / (-alpha);
                    to_upper = true;
                }
                step = std::max(step, 0.0);
                bool take = false;
                if (leave_row < 0) {
                    take = step < best_step;
                } else if (step < best_step - 1e-12) {
                    take = true;
                } else if (step <= best_step + 1e-12) {
                    // Tie: Bland picks the smallest basic index; otherwise the
                    // larger pivot magnitude for stability.
                    if (bland) {
                        take = b < basis_[idx(leave_row)];
                    } else {
                        take = std::abs(alpha) > std::abs(best_alpha);
                    }
                }
                if (take) {
                    best_step = step;
                    leave_row = i;
                    leave_to_upper = to_upper;
                    best_alpha = alpha;
                }
            }
            if (!std::isfinite(best_step)) return Status::Unbounded;
            ++iterations;

            if (best_step < 1e-12) {
                if (++degenerate_streak > limits_.degenerate_switch) bland = true;
            } else {
                degenerate_streak = 0;
            }

            for (int i = 0; i < m_; ++i) {
                beta_[idx(i)] -= best_step * dir * at(i, enter);
            }
            if (leave_row < 0) {
                // Entering variable runs to its opposite bound.
                state_[idx(enter)] =
                    dir > 0.0 ? VarState::AtUpper : VarState::AtLower;
                continue;
            }
            const double entering_value = nonbasic_value(enter) + dir * best_step;
            const int leaving = basis_[idx(leave_row)];
            state_[idx(leaving)] = leave_to_upper ? VarState::AtUpper : VarState::AtLower;
            pivot(leave_row, enter);
            basis_[idx(leave_row)] = enter;
            state_[idx(enter)] = VarState::Basic;
            beta_[idx(leave_row)] = entering_value;
        }
    }

    Status solve(LpResult& out, bool want_duals) {
        std::int64_t iterations = 0;
        std::vector<double> phase1(static_cast<std::size_t>(cols_), 0.0);
        for (int i = 0; i < m_; ++i) phase1[idx(n_ + m_ + i)] = 1.0;
        Status st = run_phase(phase1, iterations);
        out.iterations = iterations;
        if (st != Status::Optimal) return st;

        double infeasibility = 0.0;
        for (int i = 0; i < m_; ++i) {
            if (basis_[idx(i)] >= n_ + m_) infeasibility += std::max(0.0, beta_[idx(i)]);
        }
        for (int a = n_ + m_; a < cols_; ++a) {
            if (state_[idx(a)] != VarState::Basic && nonbasic_value(a) > 0.0) {
                infeasibility += nonbasic_value(a);
            }
        }
        if (infeasibility > tol_.feasibility) return Status::Infeasible;

        for (int a = n_ + m_; a < cols_; ++a) {
            hi_[idx(a)] = 0.0;
            if (state_[idx(a)] != VarState::Basic) state_[idx(a)] = VarState::AtLower;
        }

        const std::vector<double> phase2 = structural_costs();
        st = run_phase(phase2, iterations);
        out.iterations = iterations;
        if (st != Status::Optimal) return st;

        extract(out);
        if (want_duals) out.duals = duals(phase2);
        return Status::Optimal;
    }

private:
    [[nodiscard]] std::vector<double> structural_costs() const {
        std::vector<double> c(static_cast<std::size_t>(cols_), 0.0);
        for (int j = 0; j < n_; ++j) c[idx(j)] = model_.variables()[idx(j)].objective;
        return c;
    }

    void extract(LpResult& out) const {
        out.values.assign(static_cast<std::size_t>(n_), 0.0);
        for (int j = 0; j < n_; ++j) {
            if (state_[idx(j)] != VarState::Basic) out.values[idx(j)] = nonbasic_value(j);
        }
        for (int i = 0; i < m_; ++i) {
            const int b = basis_[idx(i)];
            if (b < n_) {
                out.values[idx(b)] = std::clamp(beta_[idx(i)], lo_[idx(b)], hi_[idx(b)]);
            }
        }
        out.objective = model_.evaluate(out.values);
    }

    static std::size_t idx(int i) { return static_cast<std::size_t>(i); }

    double& at(int row, int col) { return tab_[idx(row) * idx(cols_) + idx(col)]; }
    double at(int row, int col) const { return tab_[idx(row) * idx(cols_) + idx(col)]; }

    double nonbasic_value(int j) const {
        switch (state_[idx(j)]) {
        case VarState::AtLower: return lo_[idx(j)];
        case VarState::AtUpper: return hi_[idx(j)];
        default: return 0.0;
        }
    }

    void build() {
        tab_.assign(idx(m_) * idx(cols_), 0.0);
        state_.assign(idx(cols_), VarState::AtLower);
        basis_.assign(idx(m_), 0);
        beta_.assign(idx(m_), 0.0);
        sign_.assign(idx(m_), 1.0);

        for (int j = 0; j < n_ + m_; ++j) {
            if (std::isfinite(lo_[idx(j)])) {
                state_[idx(j)] = VarState::AtLower;
            } else if (std::isfinite(hi_[idx(j)])) {
                state_[idx(j)] = VarState::AtUpper;
            } else {
                state_[idx(j)] = VarState::FreeZero;
            }
        }
        for (int i = 0; i < m_; ++i) {
            const auto& row = model_.constraints()[idx(i)];
            for (const auto& t : row.terms) at(i, t.var) += t.coef;
            at(i, n_ + i) = 1.0;
            double residual = row.rhs;
            for (int j = 0; j < n_ + m_; ++j) {
                const double a = at(i, j);
                if (a != 0.0) residual -= a * nonbasic_value(j);
            }
            const double s = residual < 0.0 ? -1.0 : 1.0;
            sign_[idx(i)] = s;
            if (s < 0.0) {
                for (int j = 0; j < n_ + m_; ++j) at(i, j) = -at(i, j);
            }
            const int art = n_ + m_ + i;
            at(i, art) = 1.0;
            basis_[idx(i)] = art;
            state_[idx(art)] = VarState::Basic;
            beta_[idx(i)] = std::abs(residual);
        }
    }

    void compute_reduced_costs() {
        reduced_.assign(idx(cols_), 0.0);
        for (int j = 0; j < cols_; ++j) reduced_[idx(j)] = cost_[idx(j)];
        for (int i = 0; i < m_; ++i) {
            const double cb = cost_[idx(basis_[idx(i)])];
            if (cb == 0.0) continue;
            const double* row = &tab_[idx(i) * idx(cols_)];
            for (int j = 0; j < cols_; ++j) reduced_[idx(j)] -= cb * row[j];
        }
    }

    int choose_entering(bool bland) const {
        int best = -1;
        double best_score = 0.0;
        for (int j = 0; j < cols_; ++j) {
            const VarState s = state_[idx(j)];
            if (s == VarState::Basic) continue;
            const double d = reduced_[idx(j)];
            bool eligible = false;
            if (s == VarState::AtLower) {
                eligible = d < -tol_.optimality && hi_[idx(j)] > lo_[idx(j)];
            } else if (s == VarState::AtUpper) {
                eligible = d > tol_.optimality && hi_[idx(j)] > lo_[idx(j)];
            } else {
                eligible = std::abs(d) > tol_.optimality;
            }
            if (!eligible) continue;
            if (bland) return j;
            if (std::abs(d) > best_score) {
                best_score = std::abs(d);
                best = j;
            }
        }
        return best;
    }

    void pivot(int r, int c) {
        double* prow = &tab_[idx(r) * idx(cols_)];
        const double p = prow[c];
        for (int j = 0; j < cols_; ++j) prow[j] /= p;
        prow[c] = 1.0;
        for (int i = 0; i < m_; ++i) {
            if (i == r) continue;
            double* row = &tab_[idx(i) * idx(cols_)];
            const double f = row[c];
            if (f == 0.0) continue;
            for (int j = 0; j < cols_; ++j) row[j] -= f * prow[j];
            row[c] = 0.0;
        }
    }

    // y solves B'y = c_B using the original (unscaled) column data.
    std::vector<double> duals(const std::vector<double>& cost) const {
        if (m_ == 0) return {};
        Eigen::MatrixXd basis_matrix = Eigen::MatrixXd::Zero(m_, m_);
        Eigen::VectorXd cb(m_);
        for (int k = 0; k < m_; ++k) {
            const int col = basis_[idx(k)];
            cb(k) = cost[idx(col)];
            if (col < n_) {
                for (int i = 0; i < m_; ++i) {
                    for (const auto& t : model_.constraints()[idx(i)].terms) {
                        if (t.var == col) basis_matrix(i, k) += t.coef;
                    }
                }
            } else if (col < n_ + m_) {
                basis_matrix(col - n_, k) = 1.0;
            } else {
                basis_matrix(col - n_ - m_, k) = sign_[idx(col - n_ - m_)];
            }
        }
        const Eigen::VectorXd y = basis_matrix.transpose().fullPivLu().solve(cb);
        return {y.data(), y.data() + y.size()};
    }

    const Model& model_;
    Limits limits_;
    Tolerances tol_;
    int n_ = 0;
    int m_ = 0;
    int cols_ = 0;
    std::vector<double> lo_, hi_, cost_, reduced_;
    std::vector<double> tab_;
    std::vector<VarState> state_;
    std::vector<int> basis_;
    std::vector<double> beta_;
    std::vector<double> sign_;
};

}  // namespace

LpResult solve_lp(const Model& model, const std::vector<double>* lower,
                  const std::vector<double>* upper, const Limits& limits, const Tolerances& tol,
                  bool want_duals) {
    std::vector<double> lo(static_cast<std::size_t>(model.num_variables()));
    std::vector<double> hi(lo.size());
    for (std::size_t j = 0; j < lo.size(); ++j) {
        lo[j] = lower ? (*lower)[j] : model.variables()[j].lower;
        hi[j] = upper ? (*upper)[j] : model.variables()[j].upper;
        if (lo[j] > hi[j] + tol.feasibility) {
            LpResult r;
            r.status = Status::Infeasible;
            return r;
        }
        hi[j] = std::max(hi[j], lo[j]);
    }
    LpResult result;
    Tableau tableau(model, lo, hi, limits, tol);
    result.status = tableau.solve(result, want_duals);
    return result;
}

LpResult solve_lp_warm(const Model& model, const std::vector<double>& lower, const std::vector<double>& upper,
                       const std::shared_ptr<const LpBasis>& start, std::shared_ptr<const LpBasis>* final,
                       const Limits& limits, const Tolerances& tol) {
    std::vector<double> lo = lower;
    std::vector<double> hi = upper;
    for (std::size_t j = 0; j < lo.size(); ++j) {
        if (lo[j] > hi[j] + tol.feasibility) {
            LpResult r;
            r.status = Status::Infeasible;
            return r;
        }
        hi[j] = std::max(hi[j], lo[j]);
    }
    std::int64_t spent = 0;
    if (start && start->n == model.num_variables() && start->m == model.num_constraints()) {
        Tableau warm(model, *start, lo, hi, limits, tol);
        LpResult result;
        result.status = warm.resolve(result);
        spent = result.iterations;
        if (result.status == Status::Optimal && warm.violation(result.values) <= tol.feasibility) {
            if (final) *final = warm.save();
            return result;
        }
    }
    LpResult result;
    Tableau cold(model, lo, hi, limits, tol);
    result.status = cold.solve(result, false);
    result.iterations += spent;
    if (final) *final = result.status == Status::Optimal ? cold.save() : nullptr;
    return result;
}

}  // namespace effitest::mip
