#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "robustify/error.hpp"
#include "robustify/formula.hpp"
#include "robustify/linear_expr.hpp"

namespace robustify {

/// Row-compressed affine map `out = W in + bias`.
///
/// Gadget layers are block-sparse (each neuron reads its own children), so
/// rows store only their non-zero entries; `dense()` materializes W for
/// serialization.
class AffineLayer {
public:
    struct Entry {
        std::size_t col = 0;
        double weight = 0.0;
    };

    explicit AffineLayer(std::size_t input_dim = 0) : input_dim_(input_dim) { row_start_.push_back(0); }

    /// Appends one output row; entries must be in ascending column order.
    void add_row(std::span<const Entry> entries, double bias)
    {
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].col >= input_dim_)
                throw FormulaError("affine row column out of range");
            if (i && entries[i].col <= entries[i - 1].col)
                throw FormulaError("affine row entries must be strictly ascending");
        }
        entries_.insert(entries_.end(), entries.begin(), entries.end());
        row_start_.push_back(entries_.size());
        bias_.push_back(bias);
    }

    void add_row(std::initializer_list<Entry> entries, double bias)
    {
        add_row(std::span<const Entry>(entries.begin(), entries.size()), bias);
    }

    /// Row computing `sign * expr` (bias included).
    void add_row(const LinearExpr& expr, double sign = 1.0)
    {
        std::vector<Entry> es;
        es.reserve(expr.terms().size());
        for (const auto& t : expr.terms())
            es.push_back(Entry{t.var, sign * t.coef});
        add_row(es, sign * expr.bias());
    }

    std::size_t input_dim() const { return input_dim_; }
    std::size_t output_dim() const { return bias_.size(); }
    std::size_t nonzeros() const { return entries_.size(); }

    std::span<const Entry> row(std::size_t r) const
    {
        return std::span<const Entry>(entries_).subspan(row_start_[r], row_start_[r + 1] - row_start_[r]);
    }
    double bias(std::size_t r) const { return bias_[r]; }
    const std::vector<double>& biases() const { return bias_; }

    double weight(std::size_t r, std::size_t c) const
    {
        for (const auto& e : row(r))
            if (e.col == c)
                return e.weight;
        return 0.0;
    }

    /// Row-major output_dim x input_dim matrix.
    std::vector<double> dense() const
    {
        std::vector<double> w(output_dim() * input_dim_, 0.0);
        for (std::size_t r = 0; r < output_dim(); ++r)
            for (const auto& e : row(r))
                w[r * input_dim_ + e.col] = e.weight;
        return w;
    }

    template <class T>
    void apply(std::span<const T> in, std::vector<T>& out) const
    {
        if (in.size() != input_dim_)
            throw FormulaError("affine layer expects " + std::to_string(input_dim_) + " inputs, got " +
                               std::to_string(in.size()));
        out.resize(output_dim());
        for (std::size_t r = 0; r < output_dim(); ++r) {
            T acc = T(bias_[r]);
            for (const auto& e : row(r))
                acc += T(e.weight) * in[e.col];
            out[r] = acc;
        }
    }

private:
    std::size_t input_dim_ = 0;
    std::vector<std::size_t> row_start_;
    std::vector<Entry> entries_;
    std::vector<double> bias_;
};

enum class GadgetOp { And, Or };

inline GadgetOp dual(GadgetOp op) { return op == GadgetOp::And ? GadgetOp::Or : GadgetOp::And; }

inline const char* to_string(GadgetOp op) { return op == GadgetOp::And ? "and" : "or"; }

enum class CircuitMode { FastPathExact, GadgetApprox, ConstantFolded };

inline const char* to_string(CircuitMode m)
{
    switch (m) {
    case CircuitMode::FastPathExact: return "fast-path-exact";
    case CircuitMode::GadgetApprox: return "gadget-approx";
    case CircuitMode::ConstantFolded: return "constant-folded";
    }
    return "?";
}

/// One formula node as realized by the gadget, in preorder.
struct GadgetNode {
    enum class Kind { Atom, And, Or };

    Kind kind = Kind::Atom;
    /// Operator whose gadget this node computes: its own operator for
    /// composite nodes, the dual of the parent's operator for atoms.
    GadgetOp role = GadgetOp::And;
    std::optional<std::size_t> parent;
    std::size_t depth = 0;
    std::size_t fan_out = 0;
    /// Stage bias b(op, k, eta) of a composite node.
    double stage_bias = 0.0;
    /// Atoms: the affine base gadget, `LE + eta` or `-LE + eta`.
    LinearExpr base_gadget;
    Relation atom_relation = Relation::Le;
    /// ReLU stage (1-based) holding this node's flip neuron; 0 for the root.
    std::size_t stage = 0;
};

/// Appended circuit: affine layers with a ReLU between consecutive layers,
/// ending in a single scalar output.
struct CircuitIR {
    std::size_t input_arity = 0;
    std::vector<AffineLayer> layers;
    double eta = 0.0;
    GadgetOp root_op = GadgetOp::And;
    Strictness strictness = Strictness::NonStrict;
    CircuitMode mode = CircuitMode::GadgetApprox;
    std::vector<GadgetNode> nodes;
    /// Identity neurons carrying a non-negative value across stages when
    /// sibling subtrees have unequal depth.
    std::size_t passthrough_neurons = 0;

    std::size_t relu_stages() const { return layers.empty() ? 0 : layers.size() - 1; }

    std::size_t relu_neurons() const
    {
        std::size_t n = 0;
        for (std::size_t i = 0; i + 1 < layers.size(); ++i)
            n += layers[i].output_dim();
        return n;
    }

    void check() const
    {
        if (layers.empty())
            throw FormulaError("circuit has no layers");
        if (layers.front().input_dim() != input_arity)
            throw FormulaError("circuit input arity mismatch");
        for (std::size_t i = 1; i < layers.size(); ++i)
            if (layers[i].input_dim() != layers[i - 1].output_dim())
                throw FormulaError("circuit layer dimensions do not chain");
        if (layers.back().output_dim() != 1)
            throw FormulaError("circuit must end in a single output");
    }
};

enum class Comparator { Le, Lt, Ge, Gt };

inline const char* to_string(Comparator c)
{
    switch (c) {
    case Comparator::Le: return "<=";
    case Comparator::Lt: return "<";
    case Comparator::Ge: return ">=";
    case Comparator::Gt: return ">";
    }
    return "?";
}

inline Comparator negation(Comparator c)
{
    switch (c) {
    case Comparator::Le: return Comparator::Gt;
    case Comparator::Lt: return Comparator::Ge;
    case Comparator::Ge: return Comparator::Lt;
    case Comparator::Gt: return Comparator::Le;
    }
    return c;
}

template <class T>
bool compare(const T& y, Comparator c, const T& threshold)
{
    switch (c) {
    case Comparator::Le: return y <= threshold;
    case Comparator::Lt: return y < threshold;
    case Comparator::Ge: return y >= threshold;
    case Comparator::Gt: return y > threshold;
    }
    return false;
}

/// Final scalar query on the appended output `y`.
///
/// `assert_cmp` is what the emitted property asks the solver to satisfy
/// (a satisfying input is a candidate counterexample); `verify_cmp` is its
/// negation, the goal proven when the solver answers unsat.
struct QuerySpec {
    Comparator assert_cmp = Comparator::Ge;
    double threshold = 0.0;

    Comparator verify_cmp() const { return negation(assert_cmp); }

    template <class T>
    bool asserted(const T& y) const
    {
        return compare(y, assert_cmp, T(threshold));
    }
};

template <class T>
T eval_circuit(const CircuitIR& c, std::span<const T> logits)
{
    if (logits.size() != c.input_arity)
        throw FormulaError("circuit expects " + std::to_string(c.input_arity) + " inputs, got " +
                           std::to_string(logits.size()));
    std::vector<T> cur(logits.begin(), logits.end());
    std::vector<T> next;
    for (std::size_t i = 0; i < c.layers.size(); ++i) {
        c.layers[i].apply(std::span<const T>(cur), next);
        if (i + 1 < c.layers.size())
            for (auto& v : next)
                if (v < T(0))
                    v = T(0);
        std::swap(cur, next);
    }
    return cur.front();
}

inline double eval_circuit(const CircuitIR& c, const std::vector<double>& logits)
{
    return eval_circuit<double>(c, std::span<const double>(logits));
}

} // namespace robustify
