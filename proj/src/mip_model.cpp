#include "effitest/mip.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace effitest::mip {

int Model::add_variable(std::string name, double lower, double upper, bool integer,
                        double objective) {
    vars_.push_back(Variable{std::move(name), lower, upper, integer, objective});
    return static_cast<int>(vars_.size()) - 1;
}

int Model::add_constraint(std::string name, std::vector<Term> terms, Sense sense, double rhs) {
    rows_.push_back(Constraint{std::move(name), std::move(terms), sense, rhs});
    return static_cast<int>(rows_.size()) - 1;
}

void Model::set_objective(int var, double coef) {
    if (var < 0 || var >= num_variables()) {
        throw ModelError("objective references unknown variable " + std::to_string(var));
    }
    vars_[static_cast<std::size_t>(var)].objective = coef;
}

void Model::set_bounds(int var, double lower, double upper) {
    if (var < 0 || var >= num_variables()) {
        throw ModelError("bounds reference unknown variable " + std::to_string(var));
    }
    vars_[static_cast<std::size_t>(var)].lower = lower;
    vars_[static_cast<std::size_t>(var)].upper = upper;
}

bool Model::has_integers() const {
    return std::any_of(vars_.begin(), vars_.end(), [](const Variable& v) { return v.integer; });
}

void Model::validate() const {
    for (const auto& v : vars_) {
        if (std::isnan(v.lower) || std::isnan(v.upper) || v.lower > v.upper) {
            throw ModelError("variable '" + v.name + "' has invalid bounds");
        }
        if (v.integer && (!std::isfinite(v.lower) || !std::isfinite(v.upper))) {
            throw ModelError("integer variable '" + v.name + "' needs finite bounds");
        }
        if (!std::isfinite(v.objective)) {
            throw ModelError("variable '" + v.name + "' has a non-finite objective coefficient");
        }
    }
    for (const auto& row : rows_) {
        if (!std::isfinite(row.rhs)) {
            throw ModelError("constraint '" + row.name + "' has a non-finite rhs");
        }
        for (const auto& t : row.terms) {
            if (t.var < 0 || t.var >= num_variables()) {
                throw ModelError("constraint '" + row.name + "' references unknown variable");
            }
            if (!std::isfinite(t.coef)) {
                throw ModelError("constraint '" + row.name + "' has a non-finite coefficient");
            }
        }
    }
}

double Model::evaluate(const std::vector<double>& values) const {
    double obj = offset_;
    for (std::size_t j = 0; j < vars_.size(); ++j) {
        obj += vars_[j].objective * values[j];
    }
    return obj;
}

double Model::max_violation(const std::vector<double>& values) const {
    double worst = 0.0;
    for (std::size_t j = 0; j < vars_.size(); ++j) {
        worst = std::max(worst, vars_[j].lower - values[j]);
        worst = std::max(worst, values[j] - vars_[j].upper);
    }
    for (const auto& row : rows_) {
        double lhs = 0.0;
        for (const auto& t : row.terms) {
            lhs += t.coef * values[static_cast<std::size_t>(t.var)];
        }
        switch (row.sense) {
        case Sense::LessEqual: worst = std::max(worst, lhs - row.rhs); break;
        case Sense::GreaterEqual: worst = std::max(worst, row.rhs - lhs); break;
        case Sense::Equal: worst = std::max(worst, std::abs(lhs - row.rhs)); break;
        }
    }
    return worst;
}

namespace {

void write_linear(std::ostringstream& os, const std::vector<Term>& terms,
                  const std::vector<Variable>& vars) {
    if (terms.empty()) {
        os << " 0";
        return;
    }
    bool first = true;
    for (const auto& t : terms) {
        if (t.coef == 0.0) continue;
        const double mag = std::abs(t.coef);
        os << (t.coef < 0 ? " - " : (first ? " " : " + "));
        if (mag != 1.0) os << mag << ' ';
        os << vars[static_cast<std::size_t>(t.var)].name;
        first = false;
    }
    if (first) os << " 0";
}

}  // namespace

std::string Model::to_lp_string() const {
    std::ostringstream os;
    os.precision(17);
    os << "Minimize\n obj:";
    std::vector<Term> obj;
    for (std::size_t j = 0; j < vars_.size(); ++j) {
        if (vars_[j].objective != 0.0) obj.push_back({static_cast<int>(j), vars_[j].objective});
    }
    write_linear(os, obj, vars_);
    if (offset_ != 0.0) os << (offset_ < 0 ? " - " : " + ") << std::abs(offset_);
    os << "\nSubject To\n";
    for (const auto& row : rows_) {
        os << ' ' << row.name << ':';
        write_linear(os, row.terms, vars_);
        switch (row.sense) {
        case Sense::LessEqual: os << " <= "; break;
        case Sense::GreaterEqual: os << " >= "; break;
        case Sense::Equal: os << " = "; break;
        }
        os << row.rhs << '\n';
    }
    os << "Bounds\n";
    for (const auto& v : vars_) {
        os << ' ';
        if (std::isinf(v.lower)) os << "-inf"; else os << v.lower;
        os << " <= " << v.name << " <= ";
        if (std::isinf(v.upper)) os << "+inf"; else os << v.upper;
        os << '\n';
    }
    os << "General\n";
    for (const auto& v : vars_) {
        if (v.integer) os << ' ' << v.name << '\n';
    }
    os << "End\n";
    return os.str();
}

const char* to_string(Status status) {
    switch (status) {
    case Status::Optimal: return "optimal";
    case Status::Infeasible: return "infeasible";
    case Status::Unbounded: return "unbounded";
    case Status::IterationLimit: return "iteration-limit";
    }
    return "unknown";
}

}  // namespace effitest::mip
