#include <gtest/gtest.h>

#include <random>

#include "robustify/evaluator.hpp"
#include "robustify/gadget.hpp"
#include "robustify/onnx.hpp"
#include "support/generators.hpp"
#include "support/models.hpp"

using namespace robustify;
using namespace robustify::onnx;

namespace {

LinearExpr y(std::size_t i, double c = 1.0) { return LinearExpr::variable(i, c); }

Formula two_branch_dnf()
{
    auto atom = [](LinearExpr e) { return Formula::atom(std::move(e), Relation::Le); };
    return Formula::disj({Formula::conj({atom(y(1) + y(2)), atom(y(2))}),
                          Formula::conj({atom(LinearExpr::difference(1, 3)), atom(y(3) + LinearExpr(-2.0))})});
}

Model identity_stub(std::size_t m)
{
    std::vector<double> w(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        w[i * m + i] = 1.0;
    return make_dense_model({m, m}, {w}, {std::vector<double>(m, 0.0)});
}

std::size_t count_op(const Model& m, const std::string& op)
{
    std::size_t n = 0;
    for (const auto& node : m.graph.nodes)
        n += node.op_type == op;
    return n;
}

} // namespace

TEST(Protobuf, VarintRoundTrip)
{
    for (std::uint64_t v : {0ull, 1ull, 127ull, 128ull, 300ull, 1ull << 35, ~0ull}) {
        pb::Writer w;
        w.varint(v);
        pb::Reader r(w.str());
        EXPECT_EQ(r.varint(), v);
        EXPECT_TRUE(r.done());
    }
}

TEST(Protobuf, NegativeIntUsesTenBytes)
{
    pb::Writer w;
    w.int_field(3, -1);
    EXPECT_EQ(w.str().size(), 11u);
    pb::Reader r(w.str());
    EXPECT_EQ(r.next().as_int64(), -1);
}

TEST(Protobuf, Truncated)
{
    pb::Writer w;
    w.bytes_field(1, "hello world");
    std::string s = w.str();
    s.pop_back();
    pb::Reader r(s);
    EXPECT_THROW(r.next(), ModelError);
}

TEST(Onnx, RoundTripIsByteStable)
{
    std::mt19937_64 rng(11);
    const Model m = testsupport::to_model(testsupport::random_net(rng, {5, 7, 3}));
    const std::string a = save_model(m);
    const Model back = load_model(a);
    EXPECT_EQ(back, m);
    EXPECT_EQ(save_model(back), a);
}

TEST(Onnx, InitializersBitwisePreserved)
{
    std::mt19937_64 rng(12);
    const Model m = testsupport::to_model(testsupport::random_net(rng, {4, 6, 2}));
    const Model back = load_model(save_model(m));
    ASSERT_EQ(back.graph.initializers.size(), m.graph.initializers.size());
    for (std::size_t i = 0; i < m.graph.initializers.size(); ++i) {
        EXPECT_EQ(back.graph.initializers[i].raw_data, m.graph.initializers[i].raw_data);
        EXPECT_EQ(back.graph.initializers[i].dims, m.graph.initializers[i].dims);
    }
}

TEST(Onnx, Proto2Encoding)
{
    // repeated scalars go out one tag per element, as onnx's own serializer writes them
    Tensor t;
    t.dims = {3, 4};
    EXPECT_EQ(onnx::detail::encode_tensor(t).substr(0, 4), std::string("\x08\x03\x08\x04", 4));
    // a packed dims field still decodes
    EXPECT_EQ(onnx::detail::decode_tensor(std::string("\x0a\x02\x03\x04", 4)).dims, (std::vector<std::int64_t>{3, 4}));

    // an explicitly empty opset domain survives the round trip, an absent one stays absent
    Model m = identity_stub(2);
    m.opset_import = {OpsetId{"", 13, true}};
    const std::string with = save_model(m);
    m.opset_import = {OpsetId{"", 13, false}};
    const std::string without = save_model(m);
    EXPECT_EQ(with.size(), without.size() + 2);
    EXPECT_EQ(save_model(load_model(with)), with);
    EXPECT_EQ(save_model(load_model(without)), without);
}

TEST(Onnx, UnknownFieldsSurvive)
{
    Model m = identity_stub(3);
    pb::Writer extra;
    extra.bytes_field(14, "metadata blob"); // ModelProto.metadata_props
    m.unknown = extra.str();
    pb::Writer node_extra;
    node_extra.bytes_field(99, "future");
    m.graph.nodes.front().unknown = node_extra.str();
    const Model back = load_model(save_model(m));
    EXPECT_EQ(back.unknown, m.unknown);
    EXPECT_EQ(back.graph.nodes.front().unknown, m.graph.nodes.front().unknown);
}

TEST(Onnx, RejectsGarbage)
{
    EXPECT_THROW(load_model(""), ModelError);
    EXPECT_THROW(load_model(std::string("\xff\xff\xff", 3)), ModelError);
    const std::string good = save_model(identity_stub(3));
    EXPECT_THROW(load_model(std::string_view(good).substr(0, good.size() / 2)), ModelError);
}

TEST(Onnx, TensorStorageForms)
{
    Tensor t;
    t.name = "t";
    t.dims = {3};
    t.data_type = Float;
    t.float_data = {1.5f, -2.0f, 0.25f};
    EXPECT_EQ(t.values(), (std::vector<double>{1.5, -2.0, 0.25}));
    Tensor d = Tensor::from_values("d", {2}, {0.1, 0.2}, Double);
    EXPECT_EQ(d.values(), (std::vector<double>{0.1, 0.2}));
    Tensor f = Tensor::from_values("f", {1}, {0.1});
    EXPECT_EQ(f.values().front(), static_cast<double>(0.1f));
    Tensor bad = t;
    bad.dims = {4};
    EXPECT_THROW(bad.values(), ModelError);
}

TEST(Onnx, Arity)
{
    const Model m = identity_stub(4);
    EXPECT_EQ(output_arity(m), 4u);
    EXPECT_EQ(input_arity(m), 4u);
    EXPECT_FALSE(m.graph.inputs.front().shape->front().is_static());
}

TEST(Append, TwoBranchDnfAddsFiveNodes)
{
    const Model host = identity_stub(4);
    const auto cc = compile_gadget(two_branch_dnf(), 4, 0.2);
    const auto res = append_circuit(host, cc.circuit);
    EXPECT_EQ(res.added_nodes, 5u);
    EXPECT_EQ(res.model.graph.nodes.size(), host.graph.nodes.size() + 5);
    EXPECT_EQ(count_op(res.model, "Relu"), 2u);
    EXPECT_EQ(res.output_name, "Y_prop");
    ASSERT_EQ(res.model.graph.outputs.size(), 1u);
    EXPECT_EQ(feature_count(res.model.graph.outputs.front()), 1u);
    // the original output is kept as an annotated intermediate
    ASSERT_EQ(res.model.graph.value_info.size(), 1u);
    EXPECT_EQ(res.model.graph.value_info.front().name, "Y");

    EXPECT_NEAR(forward(res.model, std::vector<double>{0, -1, -1, 0})[0], 0.8, 1e-6);
    EXPECT_NEAR(forward(res.model, std::vector<double>{0, 1, 1, 3})[0], 0.0, 1e-6);
}

TEST(Append, ZeroStageCircuitIsOneGemm)
{
    const Model host = identity_stub(3);
    const Formula f = Formula::atom(LinearExpr::difference(0, 2), Relation::Le);
    const auto cc = compile_gadget(f, 3, 0.01);
    ASSERT_EQ(cc.circuit.relu_stages(), 0u);
    const auto res = append_circuit(host, cc.circuit);
    EXPECT_EQ(res.added_nodes, 1u);
    EXPECT_EQ(count_op(res.model, "Gemm"), 2u);
}

TEST(Append, NameCollisions)
{
    Model host = identity_stub(2);
    host.graph.outputs.front().name = "Y_prop";
    for (auto& n : host.graph.nodes)
        for (auto& o : n.outputs)
            if (o == "Y")
                o = "Y_prop";
    host.graph.initializers.push_back(Tensor::from_values("robustify_l0_W", {1}, {0.0}));
    const Formula f = Formula::disj({Formula::atom(y(0), Relation::Lt), Formula::atom(y(1), Relation::Lt)});
    const auto res = append_circuit(host, compile(f, 2, 1e-3).circuit);
    EXPECT_NE(res.output_name, "Y_prop");
    EXPECT_EQ(res.output_name.rfind("Y_prop_", 0), 0u);
    EXPECT_NO_THROW(check_graph(res.model.graph));
    EXPECT_NO_THROW(load_model(save_model(res.model)));
}

TEST(Append, FlattenForRank3Output)
{
    Model host = identity_stub(4);
    auto& out = host.graph.outputs.front();
    Dim two, batch;
    two.value = 2;
    batch.param = "N";
    out.shape = std::vector<Dim>{batch, two, two};
    const auto res = append_circuit(host, compile(two_branch_dnf(), 4, 0.2).circuit);
    EXPECT_EQ(res.model.graph.nodes[host.graph.nodes.size()].op_type, "Flatten");
    EXPECT_EQ(res.added_nodes, 6u);
}

TEST(Append, RejectsArityMismatch)
{
    EXPECT_THROW(append_circuit(identity_stub(3), compile(two_branch_dnf(), 4, 0.2).circuit), ModelError);
}

TEST(Append, KeepsHostOpset)
{
    Model host = identity_stub(4);
    host.opset_import = {OpsetId{"", 17}};
    const auto res = append_circuit(host, compile(two_branch_dnf(), 4, 0.2).circuit);
    ASSERT_EQ(res.model.opset_import.size(), 1u);
    EXPECT_EQ(res.model.opset_import.front().version, 17);
}

TEST(Append, DoubleHostGetsDoubleWeights)
{
    Model host = identity_stub(4);
    host.graph.outputs.front().elem_type = Double;
    const auto res = append_circuit(host, compile(two_branch_dnf(), 4, 0.2).circuit);
    for (std::size_t i = host.graph.initializers.size(); i < res.model.graph.initializers.size(); ++i)
        EXPECT_EQ(res.model.graph.initializers[i].data_type, Double);
}

// N'(x) = C(N(x)) on random nets, formulas and points.
TEST(Append, CompositionLaw)
{
    std::mt19937_64 rng(2024);
    testsupport::FormulaShape shape;
    shape.m = 5;
    shape.max_depth = 3;
    for (int trial = 0; trial < 40; ++trial) {
        const auto net = testsupport::random_net(rng, {6, 8, 5});
        const Model host = testsupport::to_model(net);
        const Formula f = testsupport::random_formula(rng, shape);
        const auto cc = compile(f, 5, 1e-3);
        const auto res = append_circuit(host, cc.circuit);
        const Evaluator ev(res.model);
        for (int p = 0; p < 20; ++p) {
            const auto x = testsupport::random_point(rng, 6, -2.0, 2.0);
            const double direct = eval_circuit(cc.circuit, testsupport::dense_forward(net, x));
            const double composed = ev.run(x)[0];
            EXPECT_NEAR(composed, direct, 1e-6 * std::max(1.0, std::abs(direct))) << to_string(f);
        }
    }
}
