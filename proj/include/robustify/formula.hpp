#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "robustify/error.hpp"
#include "robustify/linear_expr.hpp"

namespace robustify {

/// Comparison of a linear expression against zero: `expr REL 0`.
enum class Relation { Le, Lt, Ge, Gt };

enum class Strictness { NonStrict, Strict };

inline Strictness strictness_of(Relation r)
{
    return (r == Relation::Lt || r == Relation::Gt) ? Strictness::Strict : Strictness::NonStrict;
}

inline const char* to_string(Relation r)
{
    switch (r) {
    case Relation::Le: return "<=";
    case Relation::Lt: return "<";
    case Relation::Ge: return ">=";
    case Relation::Gt: return ">";
    }
    return "?";
}

inline const char* to_string(Strictness s) { return s == Strictness::Strict ? "strict" : "nonstrict"; }

/// A linear constraint stored in canonical `expr <= 0` or `expr < 0` form.
struct Atom {
    LinearExpr expr;
    Relation rel = Relation::Le;

    template <class T>
    bool holds(std::span<const T> point) const
    {
        const T v = expr.evaluate(point);
        return rel == Relation::Le ? v <= T(0) : v < T(0);
    }

    bool operator==(const Atom&) const = default;
};

/// Rewrites `e >= 0` / `e > 0` into `-e <= 0` / `-e < 0`.
inline Atom canonical_atom(LinearExpr e, Relation rel)
{
    switch (rel) {
    case Relation::Le:
    case Relation::Lt: return Atom{std::move(e), rel};
    case Relation::Ge: return Atom{-e, Relation::Le};
    case Relation::Gt: return Atom{-e, Relation::Lt};
    }
    return Atom{std::move(e), rel};
}

/// Negation-free post-condition: atoms combined with n-ary And/Or.
///
/// The constants only survive as the whole formula (constant folding pushes
/// them out of every composite node).
class Formula {
public:
    enum class Kind { Atom, And, Or, True, False };

    static Formula atom(LinearExpr e, Relation rel)
    {
        Formula f(Kind::Atom);
        f.atom_ = canonical_atom(std::move(e), rel);
        return f;
    }
    static Formula atom(Atom a) { return atom(std::move(a.expr), a.rel); }

    /// Builds an And node as given; call `flatten` to restore the invariants.
    static Formula conj(std::vector<Formula> children)
    {
        if (children.empty())
            throw FormulaError("conjunction needs at least one child");
        Formula f(Kind::And);
        f.children_ = std::move(children);
        return f;
    }

    static Formula disj(std::vector<Formula> children)
    {
        if (children.empty())
            throw FormulaError("disjunction needs at least one child");
        Formula f(Kind::Or);
        f.children_ = std::move(children);
        return f;
    }

    static Formula constant(bool value) { return Formula(value ? Kind::True : Kind::False); }

    Kind kind() const { return kind_; }
    bool is_atom() const { return kind_ == Kind::Atom; }
    bool is_and() const { return kind_ == Kind::And; }
    bool is_or() const { return kind_ == Kind::Or; }
    bool is_constant() const { return kind_ == Kind::True || kind_ == Kind::False; }
    bool is_composite() const { return is_and() || is_or(); }

    const Atom& as_atom() const
    {
        if (!is_atom())
            throw FormulaError("formula node is not an atom");
        return atom_;
    }
    const std::vector<Formula>& children() const { return children_; }

    bool operator==(const Formula&) const = default;

private:
    explicit Formula(Kind k) : kind_(k) {}

    Kind kind_;
    Atom atom_;
    std::vector<Formula> children_;
};

/// Post-condition as written by a user: may carry negations over atoms and
/// any of the four relations.
struct RawFormula {
    enum class Kind { Atom, Not, And, Or };

    Kind kind = Kind::Atom;
    LinearExpr expr;
    Relation rel = Relation::Le;
    std::vector<RawFormula> children;

    static RawFormula atom(LinearExpr e, Relation r)
    {
        RawFormula f;
        f.expr = std::move(e);
        f.rel = r;
        return f;
    }
    static RawFormula negation(RawFormula child)
    {
        RawFormula f;
        f.kind = Kind::Not;
        f.children.push_back(std::move(child));
        return f;
    }
    static RawFormula conj(std::vector<RawFormula> c)
    {
        RawFormula f;
        f.kind = Kind::And;
        f.children = std::move(c);
        return f;
    }
    static RawFormula disj(std::vector<RawFormula> c)
    {
        RawFormula f;
        f.kind = Kind::Or;
        f.children = std::move(c);
        return f;
    }
};

// ---------------------------------------------------------------------------
// Flattening and normalization
// ---------------------------------------------------------------------------

/// Folds constant atoms, splices same-operator children, and collapses
/// single-child nodes. Idempotent.
inline Formula flatten(const Formula& f)
{
    switch (f.kind()) {
    case Formula::Kind::True:
    case Formula::Kind::False: return f;
    case Formula::Kind::Atom: {
        const Atom& a = f.as_atom();
        if (a.expr.is_constant()) {
            const double b = a.expr.bias();
            return Formula::constant(a.rel == Relation::Le ? b <= 0.0 : b < 0.0);
        }
        return f;
    }
    case Formula::Kind::And:
    case Formula::Kind::Or: break;
    }

    const bool is_and = f.is_and();
    // absorbing element: False for And, True for Or
    const Formula::Kind absorbing = is_and ? Formula::Kind::False : Formula::Kind::True;
    const Formula::Kind neutral = is_and ? Formula::Kind::True : Formula::Kind::False;

    std::vector<Formula> out;
    out.reserve(f.children().size());
    for (const auto& c : f.children()) {
        Formula fc = flatten(c);
        if (fc.kind() == absorbing)
            return fc;
        if (fc.kind() == neutral)
            continue;
        if (fc.kind() == f.kind()) {
            for (const auto& g : fc.children())
                out.push_back(g);
        } else {
            out.push_back(std::move(fc));
        }
    }
    if (out.empty())
        return Formula::constant(is_and);
    if (out.size() == 1)
        return std::move(out.front());
    return is_and ? Formula::conj(std::move(out)) : Formula::disj(std::move(out));
}

/// True iff `f` already satisfies the flattened-NNF invariants.
inline bool is_flat(const Formula& f, bool is_root = true)
{
    if (f.is_constant())
        return is_root;
    if (f.is_atom())
        return !f.as_atom().expr.is_constant() &&
               (f.as_atom().rel == Relation::Le || f.as_atom().rel == Relation::Lt);
    if (f.children().size() < 2)
        return false;
    for (const auto& c : f.children()) {
        if (c.kind() == f.kind() || !is_flat(c, false))
            return false;
    }
    return true;
}

namespace detail {

inline Formula nnf(const RawFormula& raw)
{
    switch (raw.kind) {
    case RawFormula::Kind::Atom: return Formula::atom(raw.expr, raw.rel);
    case RawFormula::Kind::Not: {
        if (raw.children.size() != 1 || raw.children.front().kind != RawFormula::Kind::Atom)
            throw FormulaError("negation is only allowed directly over a linear constraint");
        const RawFormula& a = raw.children.front();
        switch (a.rel) {
        case Relation::Le: return Formula::atom(a.expr, Relation::Gt);
        case Relation::Lt: return Formula::atom(a.expr, Relation::Ge);
        case Relation::Ge: return Formula::atom(a.expr, Relation::Lt);
        case Relation::Gt: return Formula::atom(a.expr, Relation::Le);
        }
        break;
    }
    case RawFormula::Kind::And:
    case RawFormula::Kind::Or: {
        if (raw.children.empty())
            throw FormulaError("empty conjunction/disjunction");
        std::vector<Formula> cs;
        cs.reserve(raw.children.size());
        for (const auto& c : raw.children)
            cs.push_back(nnf(c));
        return raw.kind == RawFormula::Kind::And ? Formula::conj(std::move(cs))
                                                 : Formula::disj(std::move(cs));
    }
    }
    throw FormulaError("unknown formula node");
}

} // namespace detail

/// Pushes negations into atom relations, canonicalizes atoms to `<= 0` /
/// `< 0`, and flattens.
inline Formula normalize_nnf(const RawFormula& raw) { return flatten(detail::nnf(raw)); }

// ---------------------------------------------------------------------------
// Queries over normalized formulas
// ---------------------------------------------------------------------------

enum class RootKind { Atomic, Conjunctive, Disjunctive, Constant };
enum class Shape { DNF, CNF, PureConj, PureDisj, General };

inline const char* to_string(RootKind r)
{
    switch (r) {
    case RootKind::Atomic: return "atomic";
    case RootKind::Conjunctive: return "conjunctive";
    case RootKind::Disjunctive: return "disjunctive";
    case RootKind::Constant: return "constant";
    }
    return "?";
}

inline const char* to_string(Shape s)
{
    switch (s) {
    case Shape::DNF: return "DNF";
    case Shape::CNF: return "CNF";
    case Shape::PureConj: return "pure-conjunction";
    case Shape::PureDisj: return "pure-disjunction";
    case Shape::General: return "general";
    }
    return "?";
}

struct FormulaClass {
    RootKind root = RootKind::Atomic;
    Shape shape = Shape::General;
    Strictness strictness = Strictness::NonStrict;
    std::size_t depth = 0;
    std::size_t node_count = 0;
    std::size_t atom_count = 0;
};

/// Edges on the longest root-to-atom path.
inline std::size_t depth(const Formula& f)
{
    std::size_t d = 0;
    for (const auto& c : f.children())
        d = std::max(d, depth(c) + 1);
    return d;
}

inline std::size_t node_count(const Formula& f)
{
    std::size_t n = 1;
    for (const auto& c : f.children())
        n += node_count(c);
    return n;
}

inline std::size_t atom_count(const Formula& f)
{
    if (f.is_atom())
        return 1;
    std::size_t n = 0;
    for (const auto& c : f.children())
        n += atom_count(c);
    return n;
}

inline std::size_t min_arity(const Formula& f)
{
    if (f.is_atom())
        return f.as_atom().expr.min_arity();
    std::size_t n = 0;
    for (const auto& c : f.children())
        n = std::max(n, min_arity(c));
    return n;
}

/// Recursive comparator strictness: a conjunction is non-strict only when
/// every child is; a disjunction is strict only when every child is.
inline Strictness strictness(const Formula& f)
{
    switch (f.kind()) {
    case Formula::Kind::Atom: return strictness_of(f.as_atom().rel);
    case Formula::Kind::True:
    case Formula::Kind::False: return Strictness::NonStrict;
    case Formula::Kind::And:
        for (const auto& c : f.children())
            if (strictness(c) == Strictness::Strict)
                return Strictness::Strict;
        return Strictness::NonStrict;
    case Formula::Kind::Or:
        for (const auto& c : f.children())
            if (strictness(c) == Strictness::NonStrict)
                return Strictness::NonStrict;
        return Strictness::Strict;
    }
    return Strictness::NonStrict;
}

inline FormulaClass classify(const Formula& f, std::size_t m)
{
    if (min_arity(f) > m)
        throw FormulaError("formula references y_" + std::to_string(min_arity(f) - 1) +
                           " but the network has " + std::to_string(m) + " outputs");

    FormulaClass c;
    c.strictness = strictness(f);
    c.depth = depth(f);
    c.node_count = node_count(f);
    c.atom_count = atom_count(f);

    auto all_atoms = [](const Formula& g) {
        return std::all_of(g.children().begin(), g.children().end(),
                           [](const Formula& x) { return x.is_atom(); });
    };
    auto normal_form = [&](Formula::Kind inner) {
        bool has_inner = false;
        for (const auto& ch : f.children()) {
            if (ch.is_atom())
                continue;
            if (ch.kind() != inner || !all_atoms(ch))
                return false;
            has_inner = true;
        }
        return has_inner;
    };

    switch (f.kind()) {
    case Formula::Kind::True:
    case Formula::Kind::False:
        c.root = RootKind::Constant;
        c.shape = Shape::PureConj;
        break;
    case Formula::Kind::Atom:
        c.root = RootKind::Atomic;
        c.shape = Shape::PureConj;
        break;
    case Formula::Kind::And:
        c.root = RootKind::Conjunctive;
        c.shape = all_atoms(f) ? Shape::PureConj
                  : normal_form(Formula::Kind::Or) ? Shape::CNF
                                                   : Shape::General;
        break;
    case Formula::Kind::Or:
        c.root = RootKind::Disjunctive;
        c.shape = all_atoms(f) ? Shape::PureDisj
                  : normal_form(Formula::Kind::And) ? Shape::DNF
                                                    : Shape::General;
        break;
    }
    return c;
}

/// Brute-force semantics of the formula at a point of the output space.
template <class T>
bool eval_formula(const Formula& f, std::span<const T> point)
{
    switch (f.kind()) {
    case Formula::Kind::True: return true;
    case Formula::Kind::False: return false;
    case Formula::Kind::Atom: return f.as_atom().holds(point);
    case Formula::Kind::And:
        for (const auto& c : f.children())
            if (!eval_formula(c, point))
                return false;
        return true;
    case Formula::Kind::Or:
        for (const auto& c : f.children())
            if (eval_formula(c, point))
                return true;
        return false;
    }
    return false;
}

inline bool eval_formula(const Formula& f, const std::vector<double>& point)
{
    return eval_formula<double>(f, std::span<const double>(point));
}

/// De Morgan dual with every atom relation flipped.
inline Formula negate(const Formula& f)
{
    switch (f.kind()) {
    case Formula::Kind::True: return Formula::constant(false);
    case Formula::Kind::False: return Formula::constant(true);
    case Formula::Kind::Atom: {
        const Atom& a = f.as_atom();
        // not(e <= 0) == -e < 0 ; not(e < 0) == -e <= 0
        return Formula::atom(-a.expr, a.rel == Relation::Le ? Relation::Lt : Relation::Le);
    }
    case Formula::Kind::And:
    case Formula::Kind::Or: {
        std::vector<Formula> cs;
        cs.reserve(f.children().size());
        for (const auto& c : f.children())
            cs.push_back(negate(c));
        return f.is_and() ? Formula::disj(std::move(cs)) : Formula::conj(std::move(cs));
    }
    }
    return f;
}

/// Q[eta]: every atom `e <= 0` becomes `e - eta <= 0` (strict atoms alike).
inline Formula substitute_margin(const Formula& f, double eta)
{
    if (!(eta >= 0.0))
        throw FormulaError("margin substitution requires eta >= 0");
    switch (f.kind()) {
    case Formula::Kind::Atom: {
        Atom a = f.as_atom();
        a.expr.add_bias(-eta);
        return Formula::atom(std::move(a));
    }
    case Formula::Kind::And:
    case Formula::Kind::Or: {
        std::vector<Formula> cs;
        cs.reserve(f.children().size());
        for (const auto& c : f.children())
            cs.push_back(substitute_margin(c, eta));
        return f.is_and() ? Formula::conj(std::move(cs)) : Formula::disj(std::move(cs));
    }
    default: return f;
    }
}

/// Collects every atom in left-to-right order.
inline void collect_atoms(const Formula& f, std::vector<const Atom*>& out)
{
    if (f.is_atom()) {
        out.push_back(&f.as_atom());
        return;
    }
    for (const auto& c : f.children())
        collect_atoms(c, out);
}

inline std::string format_coef(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string to_string(const LinearExpr& e)
{
    std::string s;
    for (const auto& t : e.terms()) {
        if (!s.empty())
            s += t.coef < 0 ? " - " : " + ";
        else if (t.coef < 0)
            s += "-";
        const double a = t.coef < 0 ? -t.coef : t.coef;
        if (a != 1.0)
            s += format_coef(a) + "*";
        s += "y" + std::to_string(t.var);
    }
    if (e.bias() != 0.0 || s.empty()) {
        if (s.empty())
            s = format_coef(e.bias());
        else
            s += (e.bias() < 0 ? " - " : " + ") + format_coef(e.bias() < 0 ? -e.bias() : e.bias());
    }
    return s;
}

inline std::string to_string(const Formula& f)
{
    switch (f.kind()) {
    case Formula::Kind::True: return "true";
    case Formula::Kind::False: return "false";
    case Formula::Kind::Atom:
        return to_string(f.as_atom().expr) + " " + to_string(f.as_atom().rel) + " 0";
    default: break;
    }
    std::string s = "(";
    const char* sep = f.is_and() ? " & " : " | ";
    for (std::size_t i = 0; i < f.children().size(); ++i) {
        if (i)
            s += sep;
        s += to_string(f.children()[i]);
    }
    return s + ")";
}

} // namespace robustify
