#pragma once

// Reference forward pass over the Gemm / MatMul / Add / Relu / Flatten
// subset of ONNX, in double precision with initializers widened.

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "robustify/error.hpp"
#include "robustify/onnx.hpp"

namespace robustify {

struct DenseValue {
    std::vector<std::int64_t> shape;
    std::vector<double> data;

    std::size_t rank() const { return shape.size(); }
};

namespace detail {

inline std::size_t numel(const std::vector<std::int64_t>& s)
{
    std::size_t n = 1;
    for (auto d : s)
        n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const std::vector<std::int64_t>& s)
{
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i)
        out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

/// Views a rank <= 2 value as a matrix; rank 1 becomes a row vector.
inline std::pair<std::int64_t, std::int64_t> as_matrix(const DenseValue& v, const std::string& what)
{
    if (v.rank() == 1)
        return {1, v.shape[0]};
    if (v.rank() == 2)
        return {v.shape[0], v.shape[1]};
    throw ModelError(what + " expects a rank-1 or rank-2 operand, got shape " + shape_str(v.shape));
}

inline DenseValue broadcast_add(const DenseValue& a, const DenseValue& b, const std::string& where)
{
    const std::size_t r = std::max(a.rank(), b.rank());
    std::vector<std::int64_t> sa(r, 1), sb(r, 1), so(r, 1);
    std::copy(a.shape.begin(), a.shape.end(), sa.begin() + static_cast<std::ptrdiff_t>(r - a.rank()));
    std::copy(b.shape.begin(), b.shape.end(), sb.begin() + static_cast<std::ptrdiff_t>(r - b.rank()));
    for (std::size_t i = 0; i < r; ++i) {
        if (sa[i] != sb[i] && sa[i] != 1 && sb[i] != 1)
            throw ModelError(where + ": shapes " + shape_str(a.shape) + " and " + shape_str(b.shape) +
                             " do not broadcast");
        so[i] = std::max(sa[i], sb[i]);
    }
    DenseValue out{so, std::vector<double>(numel(so))};
    std::vector<std::int64_t> idx(r, 0);
    for (std::size_t flat = 0; flat < out.data.size(); ++flat) {
        std::size_t ia = 0, ib = 0;
        for (std::size_t d = 0; d < r; ++d) {
            ia = ia * static_cast<std::size_t>(sa[d]) + static_cast<std::size_t>(sa[d] == 1 ? 0 : idx[d]);
            ib = ib * static_cast<std::size_t>(sb[d]) + static_cast<std::size_t>(sb[d] == 1 ? 0 : idx[d]);
        }
        out.data[flat] = a.data[ia] + b.data[ib];
        for (std::size_t d = r; d-- > 0;) {
            if (++idx[d] < so[d])
                break;
            idx[d] = 0;
        }
    }
    return out;
}

inline DenseValue matmul(const DenseValue& a, bool ta, const DenseValue& b, bool tb, const std::string& where)
{
    auto [ar, ac] = as_matrix(a, where);
    auto [br, bc] = as_matrix(b, where);
    const std::int64_t M = ta ? ac : ar;
    const std::int64_t K = ta ? ar : ac;
    const std::int64_t Kb = tb ? bc : br;
    const std::int64_t N = tb ? br : bc;
    if (K != Kb)
        throw ModelError(where + ": inner dimensions differ (" + shape_str(a.shape) + " x " + shape_str(b.shape) + ")");
    DenseValue out{{M, N}, std::vector<double>(static_cast<std::size_t>(M * N), 0.0)};
    for (std::int64_t i = 0; i < M; ++i)
        for (std::int64_t j = 0; j < N; ++j) {
            double acc = 0.0;
            for (std::int64_t k = 0; k < K; ++k) {
                const double x = ta ? a.data[static_cast<std::size_t>(k * ac + i)] : a.data[static_cast<std::size_t>(i * ac + k)];
                const double y = tb ? b.data[static_cast<std::size_t>(j * bc + k)] : b.data[static_cast<std::size_t>(k * bc + j)];
                acc += x * y;
            }
            out.data[static_cast<std::size_t>(i * N + j)] = acc;
        }
    return out;
}

} // namespace detail

/// Forward pass with the initializers decoded once. The model must outlive
/// the evaluator.
class Evaluator {
public:
    explicit Evaluator(const onnx::Model& model) : model_(&model)
    {
        for (const auto& t : model.graph.initializers)
            constants_[t.name] = DenseValue{t.dims, t.values()};
    }

    /// Runs the graph on a single sample. `x` holds the input's feature
    /// elements; a leading batch dimension (dynamic or 1) is fixed to 1.
    /// Returns the flattened designated output (or `output` if given).
    std::vector<double> run(std::span<const double> x, const std::string& output = {}) const;

private:
    const onnx::Model* model_;
    std::map<std::string, DenseValue> constants_;
};

inline std::vector<double> Evaluator::run(std::span<const double> x, const std::string& output) const
{
    const onnx::Graph& g = model_->graph;
    std::map<std::string, DenseValue> env;
    auto lookup = [&](const std::string& name) -> const DenseValue* {
        auto it = env.find(name);
        if (it != env.end())
            return &it->second;
        auto ct = constants_.find(name);
        return ct == constants_.end() ? nullptr : &ct->second;
    };

    const auto ins = g.runtime_inputs();
    if (ins.size() != 1)
        throw ModelError("forward expects exactly one runtime input, found " + std::to_string(ins.size()));
    const onnx::ValueInfo& in = *ins.front();
    if (!in.shape)
        throw ModelError("graph input '" + in.name + "' has no shape");
    DenseValue xv;
    for (std::size_t i = 0; i < in.shape->size(); ++i) {
        const auto& d = (*in.shape)[i];
        if (d.is_static())
            xv.shape.push_back(*d.value);
        else if (i == 0)
            xv.shape.push_back(1);
        else
            throw ModelError("graph input '" + in.name + "' has a symbolic non-batch dimension");
    }
    if (detail::numel(xv.shape) != x.size())
        throw ModelError("input '" + in.name + "' of shape " + detail::shape_str(xv.shape) + " needs " +
                         std::to_string(detail::numel(xv.shape)) + " values, got " + std::to_string(x.size()));
    xv.data.assign(x.begin(), x.end());
    env[in.name] = std::move(xv);

    auto get = [&](const onnx::Node& n, std::size_t i) -> const DenseValue& {
        if (i >= n.inputs.size() || n.inputs[i].empty())
            throw ModelError(n.op_type + " node '" + n.name + "' is missing input " + std::to_string(i));
        const DenseValue* v = lookup(n.inputs[i]);
        if (!v)
            throw ModelError("value '" + n.inputs[i] + "' is not available");
        return *v;
    };

    for (const auto& n : g.nodes) {
        if (!n.domain.empty() && n.domain != "ai.onnx")
            throw ModelError("unsupported operator domain '" + n.domain + "' (node '" + n.name + "')");
        const std::string where = n.op_type + " node '" + n.name + "'";
        DenseValue out;
        if (n.op_type == "Gemm") {
            const float alpha = n.float_attr("alpha", 1.0f);
            const float beta = n.float_attr("beta", 1.0f);
            out = detail::matmul(get(n, 0), n.int_attr("transA", 0) != 0, get(n, 1), n.int_attr("transB", 0) != 0, where);
            for (auto& v : out.data)
                v *= static_cast<double>(alpha);
            if (n.inputs.size() > 2 && !n.inputs[2].empty()) {
                DenseValue c = get(n, 2);
                for (auto& v : c.data)
                    v *= static_cast<double>(beta);
                out = detail::broadcast_add(out, c, where);
                if (out.shape.size() != 2)
                    throw ModelError(where + ": bias does not broadcast to the product");
            }
        } else if (n.op_type == "MatMul") {
            const DenseValue& a = get(n, 0);
            const DenseValue& b = get(n, 1);
            out = detail::matmul(a, false, b, false, where);
            if (a.rank() == 1 && b.rank() == 1)
                out.shape = {};
            else if (a.rank() == 1)
                out.shape = {out.shape[1]};
            else if (b.rank() == 1)
                throw ModelError(where + ": matrix times vector operands are not supported");
        } else if (n.op_type == "Add") {
            out = detail::broadcast_add(get(n, 0), get(n, 1), where);
        } else if (n.op_type == "Relu") {
            out = get(n, 0);
            for (auto& v : out.data)
                v = v > 0.0 ? v : 0.0;
        } else if (n.op_type == "Flatten") {
            out = get(n, 0);
            const auto r = static_cast<std::int64_t>(out.rank());
            std::int64_t axis = n.int_attr("axis", 1);
            if (axis < 0)
                axis += r;
            if (axis < 0 || axis > r)
                throw ModelError(where + ": axis out of range");
            std::int64_t outer = 1, inner = 1;
            for (std::int64_t i = 0; i < r; ++i)
                (i < axis ? outer : inner) *= out.shape[static_cast<std::size_t>(i)];
            out.shape = {outer, inner};
        } else {
            throw ModelError("unsupported operator '" + n.op_type + "' (node '" + n.name +
                             "'); the evaluator handles Gemm, MatMul, Add, Relu, Flatten");
        }
        if (n.outputs.empty())
            throw ModelError(where + " has no output");
        env[n.outputs.front()] = std::move(out);
    }

    const std::string& name = output.empty() ? g.outputs.front().name : output;
    const DenseValue* v = lookup(name);
    if (!v)
        throw ModelError("output '" + name + "' was not computed");
    return v->data;
}

inline std::vector<double> forward(const onnx::Model& model, std::span<const double> x, const std::string& output = {})
{
    return Evaluator(model).run(x, output);
}

inline std::vector<double> forward(const onnx::Model& model, const std::vector<double>& x)
{
    return forward(model, std::span<const double>(x));
}

} // namespace robustify
