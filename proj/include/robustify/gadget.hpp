#pragma once

// Lowering of a flattened NNF post-condition into appended ReLU layers.
//
// For an atom `LE <= 0` (or `LE < 0`) the base gadgets are
//
//   V(and, LE, eta) =  LE + eta        V(or, LE, eta) = -LE + eta
//
// and a node Q = Q_1 op ... op Q_k is realized as
//
//   V(op, Q, eta) = sum_i Relu(b(op, k, eta) - V(dual(op), Q_i, eta))
//   b(and, k, eta) = eta (1 + 1/k)        b(or, k, eta) = 2 eta
//
// Each child contributes one ReLU neuron `Relu(b - V(child))`; the flip
// (weight -1, bias b) and the parent's summation fold into one affine layer
// between ReLU stages. If Q holds then V(or, Q) >= eta for a disjunctive
// root and V(and, Q) <= eta for a conjunctive root (strict variants follow
// the recursive strictness of Q). The converse only holds up to atom slack
// 2 eta for DNF/CNF formulas.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "robustify/circuit.hpp"
#include "robustify/error.hpp"
#include "robustify/formula.hpp"

namespace robustify {

inline constexpr double default_eta = 1e-4;
inline constexpr double min_eta = 1e-7;

inline double b_value(GadgetOp op, std::size_t k, double eta)
{
    if (k == 0)
        throw FormulaError("stage bias needs fan-out k >= 1");
    return op == GadgetOp::And ? eta * (1.0 + 1.0 / static_cast<double>(k)) : 2.0 * eta;
}

using StageBiasFn = double (*)(GadgetOp, std::size_t, double);

struct GadgetOptions {
    /// Replaceable only to build deliberately broken circuits in tests.
    StageBiasFn stage_bias = &b_value;
};

struct CompiledCircuit {
    CircuitIR circuit;
    QuerySpec query;
};

/// Sum of ReLU(b - v_i) over child gadget values.
template <class T>
T combine(GadgetOp op, std::span<const T> child_values, const T& eta)
{
    const std::size_t k = child_values.size();
    if (k == 0)
        throw FormulaError("gadget node without children");
    const T b = op == GadgetOp::And ? eta + eta / T(static_cast<double>(k)) : eta + eta;
    T sum = T(0);
    for (const auto& v : child_values) {
        const T z = b - v;
        if (z > T(0))
            sum += z;
    }
    return sum;
}

/// V(role, f, eta) evaluated straight from its recursive definition.
template <class T>
T gadget_value(GadgetOp role, const Formula& f, const T& eta, std::span<const T> point)
{
    if (f.is_atom()) {
        const T le = f.as_atom().expr.evaluate(point);
        return role == GadgetOp::And ? le + eta : eta - le;
    }
    if (!f.is_composite())
        throw FormulaError("constant formulas have no gadget value");
    const GadgetOp op = f.is_and() ? GadgetOp::And : GadgetOp::Or;
    if (op != role)
        throw FormulaError("gadget role does not match the node operator; flatten first");
    std::vector<T> vals;
    vals.reserve(f.children().size());
    for (const auto& c : f.children())
        vals.push_back(gadget_value(dual(op), c, eta, point));
    return combine(op, std::span<const T>(vals), eta);
}

/// Operator the root gadget is evaluated with; atoms use the and-gadget.
inline GadgetOp root_role(const Formula& f) { return f.is_or() ? GadgetOp::Or : GadgetOp::And; }

template <class T>
T gadget_value(const Formula& f, const T& eta, std::span<const T> point)
{
    return gadget_value(root_role(f), f, eta, point);
}

namespace detail {

inline void require_flat(const Formula& f)
{
    if (!is_flat(f))
        throw FormulaError("formula must be flattened NNF (alternating And/Or, >= 2 children, "
                           "canonical atoms)");
}

inline void require_arity(const Formula& f, std::size_t m)
{
    if (min_arity(f) > m)
        throw FormulaError("formula references y_" + std::to_string(min_arity(f) - 1) +
                           " but the circuit has " + std::to_string(m) + " inputs");
}

inline CompiledCircuit compile_constant(bool value, std::size_t m)
{
    CompiledCircuit out;
    CircuitIR& c = out.circuit;
    c.input_arity = m;
    c.mode = CircuitMode::ConstantFolded;
    c.root_op = GadgetOp::And;
    AffineLayer layer(m);
    layer.add_row({}, value ? 0.0 : 1.0);
    c.layers.push_back(std::move(layer));
    out.query = QuerySpec{Comparator::Le, 0.0};
    return out;
}

struct GadgetBuilder {
    double eta;
    StageBiasFn stage_bias;
    std::vector<GadgetNode> nodes;
    std::vector<const Formula*> source;
    std::vector<std::vector<std::size_t>> kids;
    std::vector<std::size_t> height;

    std::size_t visit(const Formula& f, std::optional<std::size_t> parent, std::size_t depth, GadgetOp role)
    {
        const std::size_t id = nodes.size();
        nodes.emplace_back();
        source.push_back(&f);
        kids.emplace_back();
        height.push_back(0);

        GadgetNode n;
        n.parent = parent;
        n.depth = depth;
        n.role = role;
        if (f.is_atom()) {
            n.kind = GadgetNode::Kind::Atom;
            const Atom& a = f.as_atom();
            n.atom_relation = a.rel;
            n.base_gadget = role == GadgetOp::And ? a.expr : -a.expr;
            n.base_gadget.add_bias(eta);
        } else {
            n.kind = f.is_and() ? GadgetNode::Kind::And : GadgetNode::Kind::Or;
            n.fan_out = f.children().size();
            n.stage_bias = stage_bias(role, n.fan_out, eta);
        }
        nodes[id] = std::move(n);

        std::size_t h = 0;
        for (const auto& c : f.children()) {
            const std::size_t cid = visit(c, id, depth + 1, dual(role));
            kids[id].push_back(cid);
            h = std::max(h, height[cid] + 1);
        }
        height[id] = h;
        return id;
    }
};

} // namespace detail

/// Exact encoding of a pure conjunction of non-strict atoms
/// (y = sum Relu(LE_i), y <= 0 iff every LE_i <= 0) or a pure disjunction
/// of strict atoms (y = sum Relu(-LE_i), y > 0 iff some LE_i < 0).
inline CompiledCircuit compile_fast_path(const Formula& f, std::size_t m)
{
    detail::require_flat(f);
    detail::require_arity(f, m);
    std::vector<const Atom*> atoms;
    bool disjunctive = false;
    if (f.is_atom()) {
        atoms.push_back(&f.as_atom());
        disjunctive = f.as_atom().rel == Relation::Lt;
    } else if (f.is_composite()) {
        for (const auto& c : f.children()) {
            if (!c.is_atom())
                throw FormulaError("fast path needs a pure conjunction or pure disjunction of atoms");
            atoms.push_back(&c.as_atom());
        }
        disjunctive = f.is_or();
    } else {
        throw FormulaError("fast path does not apply to constant formulas");
    }
    const Relation needed = disjunctive ? Relation::Lt : Relation::Le;
    for (const Atom* a : atoms)
        if (a->rel != needed)
            throw FormulaError(disjunctive ? "fast path disjunction needs every atom strict"
                                           : "fast path conjunction needs every atom non-strict");

    CompiledCircuit out;
    CircuitIR& c = out.circuit;
    c.input_arity = m;
    c.mode = CircuitMode::FastPathExact;
    c.root_op = disjunctive ? GadgetOp::Or : GadgetOp::And;
    c.strictness = strictness(f);
    c.eta = 0.0;

    AffineLayer rows(m);
    for (const Atom* a : atoms)
        rows.add_row(a->expr, disjunctive ? -1.0 : 1.0);
    AffineLayer sum(rows.output_dim());
    std::vector<AffineLayer::Entry> ones;
    for (std::size_t i = 0; i < rows.output_dim(); ++i)
        ones.push_back({i, 1.0});
    sum.add_row(ones, 0.0);
    c.layers.push_back(std::move(rows));
    c.layers.push_back(std::move(sum));
    c.check();

    out.query = disjunctive ? QuerySpec{Comparator::Gt, 0.0} : QuerySpec{Comparator::Le, 0.0};
    return out;
}

inline bool fast_path_applies(const Formula& f)
{
    if (f.is_atom())
        return true;
    if (!f.is_composite())
        return false;
    const Relation needed = f.is_or() ? Relation::Lt : Relation::Le;
    return std::all_of(f.children().begin(), f.children().end(),
                       [&](const Formula& c) { return c.is_atom() && c.as_atom().rel == needed; });
}

/// Assertion handed to the solver for a gadget circuit of formula `f`.
inline QuerySpec gadget_query(const Formula& f, double eta)
{
    const bool strict = strictness(f) == Strictness::Strict;
    if (f.is_or())
        return QuerySpec{strict ? Comparator::Gt : Comparator::Ge, eta};
    return QuerySpec{strict ? Comparator::Lt : Comparator::Le, eta};
}

inline CompiledCircuit compile_gadget(const Formula& f, std::size_t m, double eta,
                                      const GadgetOptions& opts = {})
{
    if (!(eta > 0.0))
        throw FormulaError("gadget encoding requires eta > 0");
    detail::require_flat(f);
    detail::require_arity(f, m);
    if (f.is_constant())
        throw FormulaError("constant formulas have no gadget; use compile()");

    detail::GadgetBuilder b{eta, opts.stage_bias, {}, {}, {}, {}};
    b.visit(f, std::nullopt, 0, root_role(f));
    const std::size_t n = b.nodes.size();
    const std::size_t stages = b.height[0];

    CompiledCircuit out;
    CircuitIR& c = out.circuit;
    c.input_arity = m;
    c.eta = eta;
    c.root_op = root_role(f);
    c.strictness = strictness(f);
    c.mode = CircuitMode::GadgetApprox;
    out.query = gadget_query(f, eta);

    if (stages == 0) {
        AffineLayer layer(m);
        layer.add_row(b.nodes[0].base_gadget);
        c.layers.push_back(std::move(layer));
        c.nodes = std::move(b.nodes);
        c.check();
        return out;
    }

    // A non-root node's neuron lives on stage height+1; its parent reads it
    // on stage height(parent), so shallower subtrees are carried forward.
    constexpr std::size_t none = static_cast<std::size_t>(-1);
    std::vector<std::vector<std::size_t>> column(stages + 1, std::vector<std::size_t>(n, none));
    std::vector<std::size_t> width(stages + 1, 0);
    for (std::size_t id = 1; id < n; ++id)
        b.nodes[id].stage = b.height[id] + 1;
    for (std::size_t s = 1; s <= stages; ++s) {
        for (std::size_t id = 1; id < n; ++id)
            if (b.nodes[id].stage == s)
                column[s][id] = width[s]++;
        for (std::size_t id = 1; id < n; ++id) {
            const std::size_t needed = b.height[*b.nodes[id].parent];
            if (b.nodes[id].stage < s && s <= needed) {
                column[s][id] = width[s]++;
                ++c.passthrough_neurons;
            }
        }
    }

    auto parent_bias = [&](std::size_t id) { return b.nodes[*b.nodes[id].parent].stage_bias; };

    // stage 1: flips of the atom base gadgets, straight from the logits
    {
        AffineLayer layer(m);
        for (std::size_t id = 1; id < n; ++id) {
            if (b.nodes[id].stage != 1)
                continue;
            LinearExpr row = -b.nodes[id].base_gadget;
            row.add_bias(parent_bias(id));
            layer.add_row(row);
        }
        c.layers.push_back(std::move(layer));
    }
    // stages 2..H: flips of composite nodes plus carried values
    for (std::size_t s = 1; s < stages; ++s) {
        AffineLayer layer(width[s]);
        std::vector<std::pair<std::size_t, std::size_t>> order; // (column at s+1, node)
        for (std::size_t id = 1; id < n; ++id)
            if (column[s + 1][id] != none)
                order.emplace_back(column[s + 1][id], id);
        std::sort(order.begin(), order.end());
        for (const auto& [col, id] : order) {
            std::vector<AffineLayer::Entry> es;
            if (b.nodes[id].stage == s + 1) {
                for (std::size_t k : b.kids[id])
                    es.push_back({column[s][k], -1.0});
                std::sort(es.begin(), es.end(), [](auto& x, auto& y) { return x.col < y.col; });
                layer.add_row(es, parent_bias(id));
            } else {
                es.push_back({column[s][id], 1.0});
                layer.add_row(es, 0.0);
            }
        }
        c.layers.push_back(std::move(layer));
    }
    // final sum for the root
    {
        AffineLayer layer(width[stages]);
        std::vector<AffineLayer::Entry> es;
        for (std::size_t k : b.kids[0])
            es.push_back({column[stages][k], 1.0});
        std::sort(es.begin(), es.end(), [](auto& x, auto& y) { return x.col < y.col; });
        layer.add_row(es, 0.0);
        c.layers.push_back(std::move(layer));
    }
    c.nodes = std::move(b.nodes);
    c.check();
    return out;
}

/// Picks the exact fast path when it applies, the gadget otherwise, and a
/// constant circuit for folded formulas.
inline CompiledCircuit compile(const Formula& f, std::size_t m, double eta)
{
    if (f.is_constant()) {
        detail::require_arity(f, m);
        return detail::compile_constant(f.kind() == Formula::Kind::True, m);
    }
    if (fast_path_applies(f))
        return compile_fast_path(f, m);
    return compile_gadget(f, m, eta);
}

/// Atom slack bounding any counterexample reported through the gadget:
/// 2 eta for DNF/CNF formulas (and their degenerate pure forms), no claim
/// for general shapes.
inline std::optional<double> expected_error_margin(const Formula& f, double eta)
{
    if (f.is_constant())
        return 0.0;
    const FormulaClass cls = classify(f, min_arity(f));
    if (cls.shape == Shape::General)
        return std::nullopt;
    return 2.0 * eta;
}

} // namespace robustify
