#pragma once

// VNNLIB subset: declare-const over X_i / Y_i, assert, and/or, the four
// relations, + and - (unary or n-ary) and * between a constant and a term.
// `;` starts a comment. Bounds on single X variables form the input box;
// everything mentioning Y forms the (negated) post-condition.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "robustify/circuit.hpp"
#include "robustify/error.hpp"
#include "robustify/formula.hpp"

namespace robustify {

struct InputBox {
    std::vector<double> lower;
    std::vector<double> upper;

    std::size_t size() const { return lower.size(); }

    void validate() const
    {
        if (lower.size() != upper.size())
            throw SpecError("input box bound vectors differ in length");
        for (std::size_t i = 0; i < lower.size(); ++i) {
            if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]))
                throw SpecError("input box bound for X_" + std::to_string(i) + " is not finite");
            if (lower[i] > upper[i])
                throw SpecError("input box has lower > upper for X_" + std::to_string(i));
        }
    }

    bool contains(const std::vector<double>& x) const
    {
        if (x.size() != size())
            return false;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (x[i] < lower[i] || x[i] > upper[i])
                return false;
        return true;
    }

    /// L-infinity ball of radius eps around `center`, optionally clipped.
    static InputBox around(const std::vector<double>& center, double eps,
                           std::optional<std::pair<double, double>> clip = std::nullopt)
    {
        if (!(eps >= 0.0) || !std::isfinite(eps))
            throw SpecError("epsilon must be a finite non-negative number");
        InputBox b;
        for (double c : center) {
            double lo = c - eps, hi = c + eps;
            if (clip) {
                lo = std::max(lo, clip->first);
                hi = std::min(hi, clip->second);
            }
            b.lower.push_back(lo);
            b.upper.push_back(hi);
        }
        b.validate();
        return b;
    }

    bool operator==(const InputBox&) const = default;
};

/// Parsed property: the box pre-condition and the formula whose satisfying
/// outputs are counterexamples.
struct VnnlibProperty {
    InputBox box;
    Formula formula = Formula::constant(true);
    std::size_t num_outputs = 0;
};

// ---------------------------------------------------------------------------
// Numbers
// ---------------------------------------------------------------------------

/// Shortest decimal that round-trips, in plain (non-exponent) notation.
inline std::string format_number(double v)
{
    if (!std::isfinite(v))
        throw Error("cannot serialize a non-finite number");
    if (v == 0.0)
        return "0.0";
    char buf[512];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
    if (res.ec != std::errc())
        throw Error("number formatting failed");
    std::string s(buf, res.ptr);
    if (s.find('.') == std::string::npos)
        s += ".0";
    return s;
}

namespace detail {

struct SExpr {
    bool is_list = false;
    std::string atom;
    std::vector<SExpr> items;
    std::size_t line = 0;
};

class SExprParser {
public:
    explicit SExprParser(std::string_view text) : text_(text) {}

    std::vector<SExpr> parse_all()
    {
        std::vector<SExpr> out;
        skip();
        while (pos_ < text_.size()) {
            out.push_back(parse());
            skip();
        }
        return out;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const
    {
        throw ParseError("line " + std::to_string(line_) + ": " + msg);
    }

    void skip()
    {
        while (pos_ < text_.size()) {
            const char c = text_[pos_];
            if (c == ';') {
                while (pos_ < text_.size() && text_[pos_] != '\n')
                    ++pos_;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                if (c == '\n')
                    ++line_;
                ++pos_;
            } else {
                break;
            }
        }
    }

    SExpr parse()
    {
        skip();
        if (pos_ >= text_.size())
            fail("unexpected end of input");
        SExpr e;
        e.line = line_;
        if (text_[pos_] == '(') {
            ++pos_;
            e.is_list = true;
            for (;;) {
                skip();
                if (pos_ >= text_.size())
                    fail("unbalanced parenthesis");
                if (text_[pos_] == ')') {
                    ++pos_;
                    return e;
                }
                e.items.push_back(parse());
            }
        }
        if (text_[pos_] == ')')
            fail("unexpected ')'");
        const std::size_t start = pos_;
        while (pos_ < text_.size()) {
            const char c = text_[pos_];
            if (c == '(' || c == ')' || c == ';' || c == ' ' || c == '\t' || c == '\r' || c == '\n')
                break;
            ++pos_;
        }
        e.atom = std::string(text_.substr(start, pos_ - start));
        return e;
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
};

inline std::optional<double> parse_number(const std::string& s)
{
    if (s.empty())
        return std::nullopt;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    if (*b == '+')
        ++b;
    double v = 0;
    auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc() || res.ptr != e)
        return std::nullopt;
    return v;
}

/// Affine form over two variable families: X (inputs) and Y (outputs).
struct MixedExpr {
    LinearExpr x;
    LinearExpr y;
    double bias = 0.0;

    bool is_constant() const { return x.is_constant() && y.is_constant(); }

    MixedExpr& operator+=(const MixedExpr& o)
    {
        x += o.x;
        y += o.y;
        bias += o.bias;
        return *this;
    }
    MixedExpr scaled(double s) const { return MixedExpr{x.scaled(s), y.scaled(s), bias * s}; }
};

enum class Family { X, Y };

class PropertyBuilder {
public:
    void declare(const SExpr& e)
    {
        if (e.items.size() != 3 || e.items[1].is_list || e.items[2].is_list || e.items[2].atom != "Real")
            fail(e, "expected (declare-const <name> Real)");
        const std::string& name = e.items[1].atom;
        const auto var = split_name(name, e);
        if (declared_.count(name))
            fail(e, "variable '" + name + "' declared twice");
        declared_[name] = var;
        auto& count = var.first == Family::X ? nx_ : ny_;
        count = std::max(count, var.second + 1);
    }

    MixedExpr term(const SExpr& e) const
    {
        if (!e.is_list) {
            if (auto v = parse_number(e.atom))
                return MixedExpr{LinearExpr(), LinearExpr(), *v};
            auto it = declared_.find(e.atom);
            if (it == declared_.end())
                fail(e, "undeclared variable '" + e.atom + "'");
            MixedExpr m;
            (it->second.first == Family::X ? m.x : m.y).add_term(it->second.second, 1.0);
            return m;
        }
        if (e.items.empty() || e.items[0].is_list)
            fail(e, "expected an arithmetic operator");
        const std::string& op = e.items[0].atom;
        const std::size_t n = e.items.size() - 1;
        if (op == "+") {
            if (n == 0)
                fail(e, "'+' needs operands");
            MixedExpr acc;
            for (std::size_t i = 1; i <= n; ++i)
                acc += term(e.items[i]);
            return acc;
        }
        if (op == "-") {
            if (n == 0)
                fail(e, "'-' needs operands");
            if (n == 1)
                return term(e.items[1]).scaled(-1.0);
            MixedExpr acc = term(e.items[1]);
            for (std::size_t i = 2; i <= n; ++i)
                acc += term(e.items[i]).scaled(-1.0);
            return acc;
        }
        if (op == "*") {
            if (n < 2)
                fail(e, "'*' needs two operands");
            MixedExpr acc = term(e.items[1]);
            for (std::size_t i = 2; i <= n; ++i) {
                MixedExpr rhs = term(e.items[i]);
                if (acc.is_constant())
                    acc = rhs.scaled(acc.bias);
                else if (rhs.is_constant())
                    acc = acc.scaled(rhs.bias);
                else
                    fail(e, "nonlinear term: '*' must join a constant and a variable");
            }
            return acc;
        }
        fail(e, "unsupported arithmetic operator '" + op + "'");
    }

    RawFormula formula(const SExpr& e, bool& has_x, bool& has_y) const
    {
        if (!e.is_list || e.items.empty() || e.items[0].is_list)
            fail(e, "expected a constraint");
        const std::string& op = e.items[0].atom;
        if (op == "and" || op == "or") {
            if (e.items.size() < 2)
                fail(e, "'" + op + "' needs operands");
            std::vector<RawFormula> cs;
            for (std::size_t i = 1; i < e.items.size(); ++i)
                cs.push_back(formula(e.items[i], has_x, has_y));
            return op == "and" ? RawFormula::conj(std::move(cs)) : RawFormula::disj(std::move(cs));
        }
        Relation rel;
        if (op == "<=")
            rel = Relation::Le;
        else if (op == "<")
            rel = Relation::Lt;
        else if (op == ">=")
            rel = Relation::Ge;
        else if (op == ">")
            rel = Relation::Gt;
        else
            fail(e, "unsupported operator '" + op + "'");
        if (e.items.size() != 3)
            fail(e, "'" + op + "' takes exactly two operands");
        MixedExpr d = term(e.items[1]);
        d += term(e.items[2]).scaled(-1.0);
        if (!d.x.is_constant())
            has_x = true;
        if (!d.y.is_constant())
            has_y = true;
        last_x_ = d.x;
        LinearExpr y = d.y;
        y.add_bias(d.bias);
        last_bias_ = d.bias;
        return RawFormula::atom(std::move(y), rel);
    }

    /// Tightens the box with a single-variable X constraint.
    void add_bound(const SExpr& e)
    {
        bool hx = false, hy = false;
        RawFormula f = formula(e, hx, hy);
        if (f.kind != RawFormula::Kind::Atom)
            fail(e, "input constraints must be single bounds");
        const LinearExpr& x = last_x_;
        if (x.terms().size() != 1)
            fail(e, "input constraints must bound a single X variable (boxes only)");
        const auto [var, c] = x.terms().front();
        // c * X + bias  rel  0
        const double v = -last_bias_ / c;
        bool upper = f.rel == Relation::Le || f.rel == Relation::Lt;
        if (c < 0)
            upper = !upper;
        if (upper)
            upper_[var] = std::min(upper_.count(var) ? upper_[var] : v, v);
        else
            lower_[var] = std::max(lower_.count(var) ? lower_[var] : v, v);
    }

    void add_assert(const SExpr& e)
    {
        if (e.items.size() != 2)
            fail(e, "expected (assert <constraint>)");
        const SExpr& body = e.items[1];
        bool has_x = false, has_y = false;
        RawFormula f = formula(body, has_x, has_y);
        if (has_x && has_y)
            fail(e, "constraint mixes X and Y variables");
        if (!has_x && !has_y)
            fail(e, "constraint has no variables");
        if (has_y) {
            post_.push_back(std::move(f));
            return;
        }
        if (f.kind == RawFormula::Kind::Atom) {
            add_bound(body);
        } else if (f.kind == RawFormula::Kind::And) {
            for (std::size_t i = 1; i < body.items.size(); ++i)
                add_bound(body.items[i]);
        } else {
            fail(e, "disjunctive input constraints are not supported (boxes only)");
        }
    }

    VnnlibProperty finish() const
    {
        if (post_.empty())
            throw ParseError("no output constraint asserted; the file encodes no property");
        VnnlibProperty p;
        p.num_outputs = ny_;
        for (std::size_t i = 0; i < nx_; ++i) {
            auto lo = lower_.find(i);
            auto hi = upper_.find(i);
            if (lo == lower_.end() || hi == upper_.end())
                throw ParseError("X_" + std::to_string(i) + " lacks a lower or upper bound");
            p.box.lower.push_back(lo->second);
            p.box.upper.push_back(hi->second);
        }
        try {
            p.box.validate();
        } catch (const SpecError& e) {
            throw ParseError(e.what());
        }
        p.formula = post_.size() == 1 ? normalize_nnf(post_.front()) : normalize_nnf(RawFormula::conj(post_));
        return p;
    }

private:
    [[noreturn]] static void fail(const SExpr& e, const std::string& msg)
    {
        throw ParseError("line " + std::to_string(e.line) + ": " + msg);
    }

    static std::pair<Family, std::size_t> split_name(const std::string& name, const SExpr& e)
    {
        if (name.size() < 3 || (name[0] != 'X' && name[0] != 'Y') || name[1] != '_')
            fail(e, "variable '" + name + "' is not of the form X_<i> or Y_<i>");
        std::size_t idx = 0;
        const char* b = name.data() + 2;
        const char* end = name.data() + name.size();
        auto res = std::from_chars(b, end, idx);
        if (res.ec != std::errc() || res.ptr != end)
            fail(e, "variable '" + name + "' has a malformed index");
        return {name[0] == 'X' ? Family::X : Family::Y, idx};
    }

    std::map<std::string, std::pair<Family, std::size_t>> declared_;
    std::size_t nx_ = 0;
    std::size_t ny_ = 0;
    std::map<std::size_t, double> lower_;
    std::map<std::size_t, double> upper_;
    std::vector<RawFormula> post_;
    mutable LinearExpr last_x_;
    mutable double last_bias_ = 0.0;
};

} // namespace detail

inline VnnlibProperty parse_vnnlib(std::string_view text)
{
    detail::SExprParser sp(text);
    const auto forms = sp.parse_all();
    detail::PropertyBuilder b;
    for (const auto& f : forms) {
        if (!f.is_list || f.items.empty() || f.items[0].is_list)
            throw ParseError("line " + std::to_string(f.line) + ": expected a top-level command");
        const std::string& cmd = f.items[0].atom;
        if (cmd == "declare-const")
            b.declare(f);
        else if (cmd == "assert")
            b.add_assert(f);
        else
            throw ParseError("line " + std::to_string(f.line) + ": unsupported command '" + cmd + "'");
    }
    return b.finish();
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

namespace detail {

inline std::string emit_linear(const LinearExpr& e, const char* var_prefix)
{
    std::vector<std::string> parts;
    for (const auto& t : e.terms()) {
        const std::string v = std::string(var_prefix) + std::to_string(t.var);
        if (t.coef == 1.0)
            parts.push_back(v);
        else if (t.coef == -1.0)
            parts.push_back("(- " + v + ")");
        else
            parts.push_back("(* " + format_number(t.coef) + " " + v + ")");
    }
    if (parts.empty())
        return "0.0";
    if (parts.size() == 1)
        return parts.front();
    std::string s = "(+";
    for (const auto& p : parts)
        s += " " + p;
    return s + ")";
}

inline std::string emit_formula(const Formula& f, const std::string& indent)
{
    switch (f.kind()) {
    case Formula::Kind::True: return "(<= 0.0 0.0)";
    case Formula::Kind::False: return "(<= 1.0 0.0)";
    case Formula::Kind::Atom: {
        const Atom& a = f.as_atom();
        LinearExpr lhs;
        for (const auto& t : a.expr.terms())
            lhs.add_term(t.var, t.coef);
        return std::string("(") + (a.rel == Relation::Lt ? "<" : "<=") + " " + emit_linear(lhs, "Y_") + " " +
               format_number(-a.expr.bias() + 0.0) + ")";
    }
    case Formula::Kind::And:
    case Formula::Kind::Or: break;
    }
    std::string s = f.is_and() ? "(and" : "(or";
    const std::string inner = indent + "    ";
    for (const auto& c : f.children())
        s += "\n" + inner + emit_formula(c, inner);
    return s + ")";
}

inline void emit_box(std::string& out, const InputBox& box)
{
    for (std::size_t i = 0; i < box.size(); ++i) {
        out += "(assert (>= X_" + std::to_string(i) + " " + format_number(box.lower[i]) + "))\n";
        out += "(assert (<= X_" + std::to_string(i) + " " + format_number(box.upper[i]) + "))\n";
    }
}

inline void emit_declarations(std::string& out, std::size_t nx, std::size_t ny)
{
    for (std::size_t i = 0; i < nx; ++i)
        out += "(declare-const X_" + std::to_string(i) + " Real)\n";
    for (std::size_t i = 0; i < ny; ++i)
        out += "(declare-const Y_" + std::to_string(i) + " Real)\n";
}

inline void emit_comments(std::string& out, const std::vector<std::string>& comments)
{
    for (const auto& c : comments)
        out += "; " + c + "\n";
    if (!comments.empty())
        out += "\n";
}

} // namespace detail

/// Box plus the formula over Y_0..Y_{m-1}, asserted as-is.
inline std::string emit_vnnlib(const InputBox& box, const Formula& formula, std::size_t num_outputs,
                               const std::vector<std::string>& comments = {})
{
    if (min_arity(formula) > num_outputs)
        throw FormulaError("formula references more outputs than declared");
    std::string out;
    detail::emit_comments(out, comments);
    detail::emit_declarations(out, box.size(), num_outputs);
    out += "\n";
    detail::emit_box(out, box);
    out += "\n";
    if (formula.is_and()) {
        // top-level conjunction as separate asserts, the common idiom
        for (const auto& c : formula.children())
            out += "(assert " + detail::emit_formula(c, "") + ")\n";
    } else {
        out += "(assert " + detail::emit_formula(formula, "") + ")\n";
    }
    return out;
}

inline std::string emit_vnnlib(const VnnlibProperty& p, const std::vector<std::string>& comments = {})
{
    return emit_vnnlib(p.box, p.formula, p.num_outputs, comments);
}

/// Box plus the scalar assertion on the appended output Y_0.
inline std::string emit_query_vnnlib(const InputBox& box, const QuerySpec& q,
                                     const std::vector<std::string>& comments = {})
{
    std::string out;
    detail::emit_comments(out, comments);
    detail::emit_declarations(out, box.size(), 1);
    out += "\n";
    detail::emit_box(out, box);
    out += "\n";
    out += std::string("(assert (") + to_string(q.assert_cmp) + " Y_0 " + format_number(q.threshold) + "))\n";
    return out;
}

} // namespace robustify
