// Test-only brute-force oracles. Nothing here may call into the code paths
// it is used to check.

#ifndef EFFITEST_TESTS_ORACLES_HPP
#define EFFITEST_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace oracle {

// Dense MIP: min c'x, rows a_i x <= b_i, integer vars on [lo, hi] grids,
// at most two continuous vars with finite box bounds.
struct DenseMip {
    std::vector<std::vector<double>> a;
    std::vector<double> b;
    std::vector<double> c;
    std::vector<double> lo, hi;
    std::vector<bool> integer;
};

// Minimises over the continuous variables (<= 2) with the integer part fixed
// by enumerating every vertex of the 2-D feasible polygon.
inline std::optional<double> solve_continuous_part(const DenseMip& m,
                                                   const std::vector<double>& x_int,
                                                   const std::vector<int>& cont) {
    const double tol = 1e-9;
    std::vector<std::vector<double>> rows;  // coefficients on cont vars
    std::vector<double> rhs;
    for (std::size_t i = 0; i < m.a.size(); ++i) {
        double r = m.b[i];
        std::vector<double> coef;
        for (std::size_t j = 0; j < m.c.size(); ++j) {
            if (m.integer[j]) r -= m.a[i][j] * x_int[j];
        }
        for (int k : cont) coef.push_back(m.a[i][static_cast<std::size_t>(k)]);
        rows.push_back(coef);
        rhs.push_back(r);
    }
    double fixed = 0.0;
    for (std::size_t j = 0; j < m.c.size(); ++j) {
        if (m.integer[j]) fixed += m.c[j] * x_int[j];
    }
    const std::size_t d = cont.size();
    for (std::size_t k = 0; k < d; ++k) {
        std::vector<double> up(d, 0.0), dn(d, 0.0);
        up[k] = 1.0;
        dn[k] = -1.0;
        rows.push_back(up);
        rhs.push_back(m.hi[static_cast<std::size_t>(cont[k])]);
        rows.push_back(dn);
        rhs.push_back(-m.lo[static_cast<std::size_t>(cont[k])]);
    }
    auto feasible = [&](const std::vector<double>& y) {
        for (std::size_t i = 0; i < rows.size(); ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += rows[i][k] * y[k];
            if (s > rhs[i] + 1e-7) return false;
        }
        return true;
    };
    auto cost = [&](const std::vector<double>& y) {
        double s = fixed;
        for (std::size_t k = 0; k < d; ++k) s += m.c[static_cast<std::size_t>(cont[k])] * y[k];
        return s;
    };
    std::optional<double> best;
    if (d == 0) {
        if (feasible({})) best = fixed;
        return best;
    }
    if (d == 1) {
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (std::abs(rows[i][0]) < tol) continue;
            std::vector<double> y{rhs[i] / rows[i][0]};
            if (feasible(y) && (!best || cost(y) < *best)) best = cost(y);
        }
        return best;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t k = i + 1; k < rows.size(); ++k) {
            const double det = rows[i][0] * rows[k][1] - rows[i][1] * rows[k][0];
            if (std::abs(det) < 1e-12) continue;
            std::vector<double> y{(rhs[i] * rows[k][1] - rows[i][1] * rhs[k]) / det,
                                  (rows[i][0] * rhs[k] - rhs[i] * rows[k][0]) / det};
            if (feasible(y) && (!best || cost(y) < *best)) best = cost(y);
        }
    }
    return best;
}

inline std::optional<double> enumerate_mip(const DenseMip& m) {
    std::vector<int> ints, cont;
    for (std::size_t j = 0; j < m.c.size(); ++j) {
        (m.integer[j] ? ints : cont).push_back(static_cast<int>(j));
    }
    std::vector<double> x(m.c.size(), 0.0);
    for (int j : ints) x[static_cast<std::size_t>(j)] = m.lo[static_cast<std::size_t>(j)];
    std::optional<double> best;
    while (true) {
        auto v = solve_continuous_part(m, x, cont);
        if (v && (!best || *v < *best)) best = v;
        // odometer increment
        std::size_t k = 0;
        for (; k < ints.size(); ++k) {
            const auto j = static_cast<std::size_t>(ints[k]);
            if (x[j] + 0.5 < m.hi[j]) {
                x[j] += 1.0;
                break;
            }
            x[j] = m.lo[j];
        }
        if (k == ints.size()) break;
    }
    return best;
}

/// Minimum of sum_e w_e |T - c_e - shift_e| over a buffer grid and a T sweep.
/// `shift_of` maps a level vector to per-edge shifts.
template <class ShiftFn>
double alignment_sweep(const std::vector<double>& centers, const std::vector<double>& weights,
                       const std::vector<int>& levels, ShiftFn shift_of, double t_lo, double t_hi,
                       double t_step) {
    std::vector<int> k(levels.size(), 0);
    double best = std::numeric_limits<double>::infinity();
    while (true) {
        const std::vector<double> shift = shift_of(k);
        if (!shift.empty() || centers.empty()) {
            const long steps = static_cast<long>(std::llround((t_hi - t_lo) / t_step));
            for (long s = 0; s <= steps; ++s) {
                const double t = t_lo + static_cast<double>(s) * t_step;
                double obj = 0.0;
                for (std::size_t e = 0; e < centers.size(); ++e) {
                    obj += weights[e] * std::abs(t - centers[e] - shift[e]);
                }
                best = std::min(best, obj);
            }
        }
        std::size_t i = 0;
        for (; i < k.size(); ++i) {
            if (k[i] + 1 < levels[i]) {
                ++k[i];
                break;
            }
            k[i] = 0;
        }
        if (i == k.size()) break;
    }
    return best;
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
inline std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a) {
    const std::size_t n = a.size();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        }
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p];
                    const double akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k];
                    const double aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
    std::sort(ev.rbegin(), ev.rend());
    return ev;
}

/// Smallest count of leading eigenvalues reaching `capture` of the total.
inline int pcs_for_mass(const std::vector<double>& descending, double capture) {
    double total = 0.0;
    for (double v : descending) total += std::max(v, 0.0);
    if (total <= 0.0) return 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < descending.size(); ++i) {
        acc += std::max(descending[i], 0.0);
        if (acc >= capture * total * (1.0 - 1e-12)) return static_cast<int>(i) + 1;
    }
    return static_cast<int>(descending.size());
}

/// Lower Cholesky factor with a small diagonal jitter for semi-definite input.
inline std::vector<std::vector<double>> cholesky(const std::vector<std::vector<double>>& a) {
    const std::size_t n = a.size();
    std::vector<std::vector<double>> l(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i][j];
            for (std::size_t k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
            if (i == j) {
                l[i][i] = std::sqrt(std::max(s, 0.0));
            } else {
                l[i][j] = l[j][j] > 1e-150 ? s / l[j][j] : 0.0;
            }
        }
    }
    return l;
}

struct ConditionalEstimate {
    double mean = 0.0;
    double stddev = 0.0;
    long count = 0;
};

/// Monte-Carlo conditional moments of every variable given variable `t`
/// falls within value +- window (rejection on `samples` joint draws).
inline std::vector<ConditionalEstimate> mc_conditional(const std::vector<double>& mu,
                                                       const std::vector<std::vector<double>>& cov,
                                                       std::size_t t, double value, double window,
                                                       long samples, std::uint64_t seed) {
    const std::size_t n = mu.size();
    const auto l = cholesky(cov);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> z(n), x(n), s1(n, 0.0), s2(n, 0.0);
    long hits = 0;
    for (long k = 0; k < samples; ++k) {
        for (auto& v : z) v = normal(rng);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = mu[i];
            for (std::size_t j = 0; j <= i; ++j) x[i] += l[i][j] * z[j];
        }
        if (std::abs(x[t] - value) > window) continue;
        ++hits;
        for (std::size_t i = 0; i < n; ++i) {
            s1[i] += x[i];
            s2[i] += x[i] * x[i];
        }
    }
    std::vector<ConditionalEstimate> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].count = hits;
        if (hits < 2) continue;
        const double m = s1[i] / static_cast<double>(hits);
        const double var = (s2[i] - static_cast<double>(hits) * m * m) / static_cast<double>(hits - 1);
        out[i].mean = m;
        out[i].stddev = std::sqrt(std::max(var, 0.0));
    }
    return out;
}

}  // namespace oracle

#endif
