// Small dense mixed-integer linear optimizer.
//
// The LP relaxation is a bounded-variable primal simplex over a dense
// tableau (two phases, artificial start basis). Integer variables are
// handled by best-bound branch-and-bound. Sizes in this project stay in the
// tens to low hundreds of rows, which is what the dense layout is meant for.

#ifndef EFFITEST_MIP_HPP
#define EFFITEST_MIP_HPP

#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace effitest::mip {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

enum class Sense { LessEqual, GreaterEqual, Equal };

struct Variable {
    std::string name;
    double lower = 0.0;
    double upper = kInfinity;
    bool integer = false;
    double objective = 0.0;
};

struct Term {
    int var = 0;
    double coef = 0.0;
};

struct Constraint {
    std::string name;
    std::vector<Term> terms;
    Sense sense = Sense::LessEqual;
    double rhs = 0.0;
};

class ModelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Minimization model. Built incrementally, immutable once handed to solve().
class Model {
public:
    int add_variable(std::string name, double lower, double upper, bool integer = false,
                     double objective = 0.0);
    int add_constraint(std::string name, std::vector<Term> terms, Sense sense, double rhs);

    void set_objective(int var, double coef);
    void set_bounds(int var, double lower, double upper);
    void set_objective_offset(double offset) { offset_ = offset; }

    [[nodiscard]] const std::vector<Variable>& variables() const { return vars_; }
    [[nodiscard]] const std::vector<Constraint>& constraints() const { return rows_; }
    [[nodiscard]] double objective_offset() const { return offset_; }
    [[nodiscard]] int num_variables() const { return static_cast<int>(vars_.size()); }
    [[nodiscard]] int num_constraints() const { return static_cast<int>(rows_.size()); }
    [[nodiscard]] bool has_integers() const;

    /// Throws ModelError on unbounded integer variables, lower > upper,
    /// non-finite coefficients or rows that reference unknown variables.
    void validate() const;

    /// Objective value (including offset) of an assignment.
    [[nodiscard]] double evaluate(const std::vector<double>& values) const;
    /// Largest absolute violation over rows and variable bounds.
    [[nodiscard]] double max_violation(const std::vector<double>& values) const;

    /// LP-style text dump (objective, constraints, bounds, integrality).
    [[nodiscard]] std::string to_lp_string() const;

private:
    std::vector<Variable> vars_;
    std::vector<Constraint> rows_;
    double offset_ = 0.0;
};

enum class Status { Optimal, Infeasible, Unbounded, IterationLimit };

[[nodiscard]] const char* to_string(Status status);

struct Tolerances {
    double feasibility = 1e-6;
    double integrality = 1e-6;
    double optimality = 1e-9;  // reduced-cost threshold
    double pivot = 1e-9;
    /// Branch-and-bound prunes nodes whose bound is within this of the
    /// incumbent; 0 proves optimality.
    double absolute_gap = 0.0;
};

struct Limits {
    std::int64_t max_nodes = 200000;
    std::int64_t max_lp_iterations = 100000;  // per LP solve
    // Consecutive degenerate pivots before pricing falls back to Bland's rule.
    int degenerate_switch = 30;
};

struct LpResult {
    Status status = Status::Infeasible;
    std::vector<double> values;
    double objective = 0.0;
    std::int64_t iterations = 0;
    /// Row duals y with c_j - a_j'y the reduced cost of structural column j.
    /// Filled only when requested.
    std::vector<double> duals;
};

/// Solve the LP relaxation, optionally overriding variable bounds.
LpResult solve_lp(const Model& model, const std::vector<double>* lower = nullptr,
                  const std::vector<double>* upper = nullptr, const Limits& limits = {},
                  const Tolerances& tol = {}, bool want_duals = false);

/// Final simplex tableau of an LP solve.
struct LpBasis;

/// solve_lp with explicit bounds that resumes from `start` when given: the
/// saved tableau is re-bounded and repaired by dual simplex. Any doubt about
/// the warm result (iteration limit, infeasibility, a violated row) falls
/// back to a cold solve. The final tableau of an optimal solve is stored in
/// `*final` when requested.
LpResult solve_lp_warm(const Model& model, const std::vector<double>& lower, const std::vector<double>& upper,
                       const std::shared_ptr<const LpBasis>& start, std::shared_ptr<const LpBasis>* final,
                       const Limits& limits = {}, const Tolerances& tol = {});

struct Solution {
    Status status = Status::Infeasible;
    std::vector<double> values;
    double objective = 0.0;
    /// Best proven lower bound on the optimum when the search stopped.
    double best_bound = -kInfinity;
    std::int64_t nodes = 0;
    std::int64_t lp_iterations = 0;
    /// Largest global lower bound observed during the best-bound phase (the
    /// bound of each node when popped). Never exceeds the optimum when
    /// bounding is sound.
    double max_global_bound = -kInfinity;

    [[nodiscard]] bool optimal() const { return status == Status::Optimal; }
};

/// Branch-and-bound with most-fractional branching (ties by variable index):
/// a depth-first dive until the first incumbent, best-bound selection after.
Solution solve(const Model& model, const Limits& limits = {}, const Tolerances& tol = {});

}  // namespace effitest::mip

#endif
