#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "robustify/error.hpp"

namespace robustify {

struct Term {
    std::size_t var = 0;
    double coef = 0.0;

    bool operator==(const Term&) const = default;
};

/// Affine form `bias + sum coef_i * y_var_i` over the network outputs.
///
/// Terms are kept sorted by variable index, one entry per variable, and
/// never hold an explicit zero coefficient.
class LinearExpr {
public:
    LinearExpr() = default;
    explicit LinearExpr(double bias) : bias_(bias) {}

    static LinearExpr variable(std::size_t var, double coef = 1.0)
    {
        LinearExpr e;
        e.add_term(var, coef);
        return e;
    }

    /// y_a - y_b + bias, the shape of every margin atom.
    static LinearExpr difference(std::size_t a, std::size_t b, double bias = 0.0)
    {
        LinearExpr e(bias);
        e.add_term(a, 1.0);
        e.add_term(b, -1.0);
        return e;
    }

    LinearExpr& add_term(std::size_t var, double coef)
    {
        auto it = std::lower_bound(terms_.begin(), terms_.end(), var,
                                   [](const Term& t, std::size_t v) { return t.var < v; });
        if (it != terms_.end() && it->var == var) {
            it->coef += coef;
            if (it->coef == 0.0)
                terms_.erase(it);
        } else if (coef != 0.0) {
            terms_.insert(it, Term{var, coef});
        }
        return *this;
    }

    LinearExpr& add_bias(double b)
    {
        bias_ += b;
        return *this;
    }

    const std::vector<Term>& terms() const { return terms_; }
    double bias() const { return bias_; }
    bool is_constant() const { return terms_.empty(); }

    /// Smallest output arity able to host every referenced variable.
    std::size_t min_arity() const { return terms_.empty() ? 0 : terms_.back().var + 1; }

    double coef(std::size_t var) const
    {
        auto it = std::lower_bound(terms_.begin(), terms_.end(), var,
                                   [](const Term& t, std::size_t v) { return t.var < v; });
        return (it != terms_.end() && it->var == var) ? it->coef : 0.0;
    }

    LinearExpr operator-() const
    {
        LinearExpr r = *this;
        r.bias_ = -r.bias_;
        for (auto& t : r.terms_)
            t.coef = -t.coef;
        return r;
    }

    LinearExpr& operator+=(const LinearExpr& o)
    {
        for (const auto& t : o.terms_)
            add_term(t.var, t.coef);
        bias_ += o.bias_;
        return *this;
    }

    LinearExpr& operator-=(const LinearExpr& o) { return *this += -o; }

    friend LinearExpr operator+(LinearExpr a, const LinearExpr& b) { return a += b; }
    friend LinearExpr operator-(LinearExpr a, const LinearExpr& b) { return a -= b; }

    LinearExpr scaled(double s) const
    {
        LinearExpr r;
        r.bias_ = bias_ * s;
        for (const auto& t : terms_)
            r.add_term(t.var, t.coef * s);
        return r;
    }

    /// Evaluates the form at `point`. The summation order (bias first, then
    /// terms by ascending index) is shared with the circuit's affine rows so
    /// both routes round identically.
    template <class T>
    T evaluate(std::span<const T> point) const
    {
        T acc = T(bias_);
        for (const auto& t : terms_) {
            if (t.var >= point.size())
                throw FormulaError("point of length " + std::to_string(point.size()) +
                                   " does not cover output y_" + std::to_string(t.var));
            acc += T(t.coef) * point[t.var];
        }
        return acc;
    }

    bool operator==(const LinearExpr&) const = default;

private:
    std::vector<Term> terms_;
    double bias_ = 0.0;
};

} // namespace robustify
