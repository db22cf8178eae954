#pragma once

// In-memory ONNX model: just enough structure for graph surgery, with every
// unmodelled field carried through verbatim.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "robustify/circuit.hpp"
#include "robustify/error.hpp"
#include "robustify/protobuf.hpp"

namespace robustify::onnx {

enum DataType : std::int32_t { Float = 1, Int32 = 6, Int64 = 7, Double = 11 };

struct Tensor {
    std::string name;
    std::vector<std::int64_t> dims;
    std::int32_t data_type = Float;
    std::vector<float> float_data;
    std::vector<std::int64_t> int32_data;
    std::vector<std::int64_t> int64_data;
    std::vector<double> double_data;
    std::string raw_data;
    std::string unknown;

    std::size_t element_count() const
    {
        std::size_t n = 1;
        for (auto d : dims) {
            if (d < 0)
                throw ModelError("tensor '" + name + "' has a negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    /// Values widened to double, whichever storage field holds them.
    std::vector<double> values() const
    {
        const std::size_t n = element_count();
        std::vector<double> out;
        out.reserve(n);
        auto from_raw = [&](std::size_t width, auto convert) {
            if (raw_data.size() != n * width)
                throw ModelError("tensor '" + name + "' raw_data has " + std::to_string(raw_data.size()) +
                                 " bytes, expected " + std::to_string(n * width));
            for (std::size_t i = 0; i < n; ++i)
                out.push_back(convert(raw_data.data() + i * width));
        };
        switch (data_type) {
        case Float:
            if (!raw_data.empty() || float_data.empty())
                from_raw(4, [](const char* p) {
                    float f;
                    std::memcpy(&f, p, 4);
                    return static_cast<double>(f);
                });
            else
                out.assign(float_data.begin(), float_data.end());
            break;
        case Double:
            if (!raw_data.empty() || double_data.empty())
                from_raw(8, [](const char* p) {
                    double d;
                    std::memcpy(&d, p, 8);
                    return d;
                });
            else
                out = double_data;
            break;
        case Int64:
            if (!raw_data.empty() || int64_data.empty())
                from_raw(8, [](const char* p) {
                    std::int64_t v;
                    std::memcpy(&v, p, 8);
                    return static_cast<double>(v);
                });
            else
                out.assign(int64_data.begin(), int64_data.end());
            break;
        case Int32:
            if (!raw_data.empty() || int32_data.empty())
                from_raw(4, [](const char* p) {
                    std::int32_t v;
                    std::memcpy(&v, p, 4);
                    return static_cast<double>(v);
                });
            else
                out.assign(int32_data.begin(), int32_data.end());
            break;
        default:
            throw ModelError("tensor '" + name + "' has unsupported data type " + std::to_string(data_type));
        }
        if (out.size() != n)
            throw ModelError("tensor '" + name + "' holds " + std::to_string(out.size()) + " values, dims say " +
                             std::to_string(n));
        return out;
    }

    /// float32 tensor stored little-endian in raw_data; values rounded to nearest.
    static Tensor from_values(std::string name, std::vector<std::int64_t> dims, const std::vector<double>& v,
                              std::int32_t type = Float)
    {
        Tensor t;
        t.name = std::move(name);
        t.dims = std::move(dims);
        t.data_type = type;
        if (type == Float) {
            t.raw_data.resize(v.size() * 4);
            for (std::size_t i = 0; i < v.size(); ++i) {
                const float f = static_cast<float>(v[i]);
                std::memcpy(t.raw_data.data() + i * 4, &f, 4);
            }
        } else if (type == Double) {
            t.raw_data.resize(v.size() * 8);
            std::memcpy(t.raw_data.data(), v.data(), v.size() * 8);
        } else {
            throw ModelError("only float and double tensors can be created");
        }
        if (t.element_count() != v.size())
            throw ModelError("tensor '" + t.name + "' value count does not match its dims");
        return t;
    }

    bool operator==(const Tensor&) const = default;
};

enum AttributeType : std::int32_t { AttrFloat = 1, AttrInt = 2, AttrString = 3, AttrTensor = 4, AttrFloats = 6, AttrInts = 7 };

struct Attribute {
    std::string name;
    std::int32_t type = 0;
    float f = 0;
    std::int64_t i = 0;
    std::string s;
    std::vector<Tensor> t; // zero or one
    std::vector<float> floats;
    std::vector<std::int64_t> ints;
    std::string unknown;

    static Attribute make_int(std::string name, std::int64_t v)
    {
        Attribute a;
        a.name = std::move(name);
        a.type = AttrInt;
        a.i = v;
        return a;
    }
    static Attribute make_float(std::string name, float v)
    {
        Attribute a;
        a.name = std::move(name);
        a.type = AttrFloat;
        a.f = v;
        return a;
    }

    bool operator==(const Attribute&) const = default;
};

struct Node {
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::string name;
    std::string op_type;
    std::string domain;
    std::vector<Attribute> attributes;
    std::string doc_string;
    std::string unknown;

    const Attribute* attribute(std::string_view n) const
    {
        for (const auto& a : attributes)
            if (a.name == n)
                return &a;
        return nullptr;
    }
    std::int64_t int_attr(std::string_view n, std::int64_t fallback) const
    {
        const Attribute* a = attribute(n);
        return a ? a->i : fallback;
    }
    float float_attr(std::string_view n, float fallback) const
    {
        const Attribute* a = attribute(n);
        return a ? a->f : fallback;
    }

    bool operator==(const Node&) const = default;
};

struct Dim {
    std::optional<std::int64_t> value;
    std::string param;

    bool is_static() const { return value.has_value(); }
    bool operator==(const Dim&) const = default;
};

struct ValueInfo {
    std::string name;
    bool is_tensor = false;
    std::int32_t elem_type = 0;
    std::optional<std::vector<Dim>> shape;
    std::string type_unknown;   // unmodelled TypeProto fields
    std::string tensor_unknown; // unmodelled TypeProto.Tensor fields
    std::string unknown;

    bool operator==(const ValueInfo&) const = default;
};

struct OpsetId {
    std::string domain;
    std::int64_t version = 0;
    /// Whether the domain is written even when empty.
    bool explicit_domain = true;
    bool operator==(const OpsetId&) const = default;
};

struct Graph {
    std::vector<Node> nodes;
    std::string name;
    std::vector<Tensor> initializers;
    std::vector<ValueInfo> inputs;
    std::vector<ValueInfo> outputs;
    std::vector<ValueInfo> value_info;
    std::string unknown;

    const Tensor* initializer(std::string_view n) const
    {
        for (const auto& t : initializers)
            if (t.name == n)
                return &t;
        return nullptr;
    }

    /// Graph inputs that are not also initializers.
    std::vector<const ValueInfo*> runtime_inputs() const
    {
        std::vector<const ValueInfo*> out;
        for (const auto& v : inputs)
            if (!initializer(v.name))
                out.push_back(&v);
        return out;
    }

    bool operator==(const Graph&) const = default;
};

struct Model {
    std::int64_t ir_version = 8;
    std::string producer_name;
    std::string producer_version;
    std::vector<OpsetId> opset_import;
    Graph graph;
    std::string unknown;

    std::int64_t default_opset() const
    {
        for (const auto& o : opset_import)
            if (o.domain.empty() || o.domain == "ai.onnx")
                return o.version;
        return 0;
    }

    bool operator==(const Model&) const = default;
};

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

namespace detail {

inline std::string str(const pb::Field& f, const char* what) { return std::string(pb::expect_bytes(f, what)); }

inline Tensor decode_tensor(std::string_view data)
{
    Tensor t;
    pb::Reader r(data);
    bool has_type = false;
    while (!r.done()) {
        const auto f = r.next();
        switch (f.number) {
        case 1: pb::read_varints(f, t.dims); break;
        case 2:
            t.data_type = static_cast<std::int32_t>(pb::expect_varint(f, "data_type"));
            has_type = true;
            break;
        case 4: pb::read_floats(f, t.float_data); break;
        case 5: pb::read_varints(f, t.int32_data); break;
        case 7: pb::read_varints(f, t.int64_data); break;
        case 8: t.name = str(f, "name"); break;
        case 9: t.raw_data = str(f, "raw_data"); break;
        case 10: pb::read_doubles(f, t.double_data); break;
        default: t.unknown.append(f.raw); break;
        }
    }
    if (!has_type)
        t.data_type = 0;
    return t;
}

inline Attribute decode_attribute(std::string_view data)
{
    Attribute a;
    pb::Reader r(data);
    while (!r.done()) {
        const auto f = r.next();
        switch (f.number) {
        case 1: a.name = str(f, "name"); break;
        case 2:
            if (f.type != pb::WireType::Fixed32)
                throw ModelError("attribute float is not fixed32");
            a.f = f.as_float();
            break;
        case 3: a.i = static_cast<std::int64_t>(pb::expect_varint(f, "i")); break;
        case 4: a.s = str(f, "s"); break;
        case 5: a.t.push_back(decode_tensor(pb::expect_bytes(f, "t"))); break;
        case 7: pb::read_floats(f, a.floats); break;
        case 8: pb::read_varints(f, a.ints); break;
        case 20: a.type = static_cast<std::int32_t>(pb::expect_varint(f, "type")); break;
        default: a.unknown.append(f.raw); break;
        }
    }
    return a;
}

inline Node decode_node(std::string_view data)
{
    Node n;
    pb::Reader r(data);
    while (!r.done()) {
        const auto f = r.next();
        switch (f.number) {
        case 1: n.inputs.push_back(str(f, "input")); break;
        case 2: n.outputs.push_back(str(f, "output")); break;
        case 3: n.name = str(f, "name"); break;
        case 4: n.op_type = str(f, "op_type"); break;
        case 5: n.attributes.push_back(decode_attribute(f.bytes)); break;
        case 6: n.doc_string = str(f, "doc_string"); break;
        case 7: n.domain = str(f, "domain"); break;
        default: n.unknown.append(f.raw); break;
        }
    }
    return n;
}

inline std::vector<Dim> decode_shape(std::string_view data)
{
    std::vector<Dim> dims;
    pb::Reader r(data);
    while (!r.done()) {
        const auto f = r.next();
        if (f.number != 1)
            continue;
        Dim d;
        pb::Reader dr(pb::expect_bytes(f, "dim"));
        while (!dr.done()) {
            const auto g = dr.next();
            if (g.number == 1)
                d.value = static_cast<std::int64_t>(pb::expect_varint(g, "dim_value"));
            else if (g.number == 2)
                d.param = str(g, "dim_param");
        }
        dims.push_back(std::move(d));
    }
    return dims;
}

inline ValueInfo decode_value_info(std::string_view data)
{
    ValueInfo v;
    pb::Reader r(data);
    while (!r.done()) {
        const auto f = r.next();
        if (f.number == 1) {
            v.name = str(f, "name");
        } else if (f.number == 2) {
            pb::Reader tr(pb::expect_bytes(f, "type"));
            while (!tr.done()) {
                const auto g = tr.next();
                if (g.number != 1) {
                    v.type_unknown.append(g.raw);
                    continue;
                }
                v.is_tensor = true;
                pb::Reader ter(pb::expect_bytes(g, "tensor_type"));
                while (!ter.done()) {
                    const auto h = ter.next();
                    if (h.number == 1)
                        v.elem_type = static_cast<std::int32_t>(pb::expect_varint(h, "elem_type"));
                    else if (h.number == 2)
                        v.shape = decode_shape(pb::expect_bytes(h, "shape"));
                    else
                        v.tensor_unknown.append(h.raw);
                }
            }
        } else {
            v.unknown.append(f.raw);
        }
    }
    return v;
}

inline Graph decode_graph(std::string_view data)
{
    Graph g;
    pb::Reader r(data);
    while (!r.done()) {
        const auto f = r.next();
        switch (f.number) {
        case 1: g.nodes.push_back(decode_node(pb::expect_bytes(f, "node"))); break;
        case 2: g.name = str(f, "name"); break;
        case 5: g.initializers.push_back(decode_tensor(pb::expect_bytes(f, "initializer"))); break;
        case 11: g.inputs.push_back(decode_value_info(pb::expect_bytes(f, "input"))); break;
        case 12: g.outputs.push_back(decode_value_info(pb::expect_bytes(f, "output"))); break;
        case 13: g.value_info.push_back(decode_value_info(pb::expect_bytes(f, "value_info"))); break;
        default: g.unknown.append(f.raw); break;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

inline std::string encode_tensor(const Tensor& t)
{
    pb::Writer w;
    w.repeated_ints(1, t.dims);
    if (t.data_type)
        w.int_field(2, t.data_type);
    w.packed_floats(4, t.float_data);
    w.packed_ints(5, t.int32_data);
    w.packed_ints(7, t.int64_data);
    w.string_field_if(8, t.name);
    if (!t.raw_data.empty())
        w.bytes_field(9, t.raw_data);
    w.packed_doubles(10, t.double_data);
    w.raw(t.unknown);
    return w.take();
}

inline std::string encode_attribute(const Attribute& a)
{
    pb::Writer w;
    w.bytes_field(1, a.name);
    switch (a.type) {
    case AttrFloat: w.float_field(2, a.f); break;
    case AttrInt: w.int_field(3, a.i); break;
    case AttrString: w.bytes_field(4, a.s); break;
    default: break;
    }
    if (a.type != AttrFloat && a.f != 0.0f)
        w.float_field(2, a.f);
    if (a.type != AttrInt && a.i != 0)
        w.int_field(3, a.i);
    if (a.type != AttrString && !a.s.empty())
        w.bytes_field(4, a.s);
    for (const auto& t : a.t)
        w.bytes_field(5, encode_tensor(t));
    w.repeated_floats(7, a.floats);
    w.repeated_ints(8, a.ints);
    if (a.type)
        w.int_field(20, a.type);
    w.raw(a.unknown);
    return w.take();
}

inline std::string encode_node(const Node& n)
{
    pb::Writer w;
    for (const auto& s : n.inputs)
        w.bytes_field(1, s);
    for (const auto& s : n.outputs)
        w.bytes_field(2, s);
    w.string_field_if(3, n.name);
    w.bytes_field(4, n.op_type);
    for (const auto& a : n.attributes)
        w.bytes_field(5, encode_attribute(a));
    w.string_field_if(6, n.doc_string);
    w.string_field_if(7, n.domain);
    w.raw(n.unknown);
    return w.take();
}

inline std::string encode_value_info(const ValueInfo& v)
{
    pb::Writer w;
    w.bytes_field(1, v.name);
    if (v.is_tensor || !v.type_unknown.empty()) {
        pb::Writer type;
        if (v.is_tensor) {
            pb::Writer tensor;
            if (v.elem_type)
                tensor.int_field(1, v.elem_type);
            if (v.shape) {
                pb::Writer shape;
                for (const auto& d : *v.shape) {
                    pb::Writer dim;
                    if (d.value)
                        dim.int_field(1, *d.value);
                    else if (!d.param.empty())
                        dim.bytes_field(2, d.param);
                    shape.bytes_field(1, dim.str());
                }
                tensor.bytes_field(2, shape.str());
            }
            tensor.raw(v.tensor_unknown);
            type.bytes_field(1, tensor.str());
        }
        type.raw(v.type_unknown);
        w.bytes_field(2, type.str());
    }
    w.raw(v.unknown);
    return w.take();
}

inline std::string encode_graph(const Graph& g)
{
    pb::Writer w;
    for (const auto& n : g.nodes)
        w.bytes_field(1, encode_node(n));
    w.string_field_if(2, g.name);
    for (const auto& t : g.initializers)
        w.bytes_field(5, encode_tensor(t));
    for (const auto& v : g.inputs)
        w.bytes_field(11, encode_value_info(v));
    for (const auto& v : g.outputs)
        w.bytes_field(12, encode_value_info(v));
    for (const auto& v : g.value_info)
        w.bytes_field(13, encode_value_info(v));
    w.raw(g.unknown);
    return w.take();
}

} // namespace detail

/// Rejects duplicate value names and nodes reading values produced later.
inline void check_graph(const Graph& g)
{
    std::set<std::string> known;
    for (const auto& t : g.initializers)
        if (!known.insert(t.name).second)
            throw ModelError("duplicate initializer name '" + t.name + "'");
    std::set<std::string> input_names;
    for (const auto& v : g.inputs) {
        if (!input_names.insert(v.name).second)
            throw ModelError("duplicate graph input '" + v.name + "'");
        known.insert(v.name);
    }
    std::set<std::string> produced;
    std::set<std::string> node_names;
    for (const auto& n : g.nodes) {
        for (const auto& in : n.inputs)
            if (!in.empty() && !known.count(in))
                throw ModelError("node '" + n.name + "' (" + n.op_type + ") reads '" + in +
                                 "' before it is produced; graph is not topologically sorted");
        for (const auto& out : n.outputs) {
            if (out.empty())
                continue;
            if (!produced.insert(out).second || input_names.count(out))
                throw ModelError("value '" + out + "' is produced more than once");
            known.insert(out);
        }
        if (!n.name.empty() && !node_names.insert(n.name).second)
            throw ModelError("duplicate node name '" + n.name + "'");
    }
    for (const auto& o : g.outputs)
        if (!known.count(o.name))
            throw ModelError("graph output '" + o.name + "' is never produced");
}

inline Model load_model(std::string_view bytes)
{
    if (bytes.empty())
        throw ModelError("empty model file");
    Model m;
    bool has_graph = false;
    pb::Reader r(bytes);
    while (!r.done()) {
        const auto f = r.next();
        switch (f.number) {
        case 1: m.ir_version = static_cast<std::int64_t>(pb::expect_varint(f, "ir_version")); break;
        case 2: m.producer_name = detail::str(f, "producer_name"); break;
        case 3: m.producer_version = detail::str(f, "producer_version"); break;
        case 7:
            m.graph = detail::decode_graph(pb::expect_bytes(f, "graph"));
            has_graph = true;
            break;
        case 8: {
            OpsetId o;
            o.explicit_domain = false;
            pb::Reader orr(pb::expect_bytes(f, "opset_import"));
            while (!orr.done()) {
                const auto g = orr.next();
                if (g.number == 1) {
                    o.domain = detail::str(g, "domain");
                    o.explicit_domain = true;
                }
                else if (g.number == 2)
                    o.version = static_cast<std::int64_t>(pb::expect_varint(g, "version"));
            }
            m.opset_import.push_back(std::move(o));
            break;
        }
        default: m.unknown.append(f.raw); break;
        }
    }
    if (!has_graph)
        throw ModelError("model has no graph");
    if (m.graph.outputs.empty())
        throw ModelError("graph declares no outputs");
    check_graph(m.graph);
    return m;
}

inline std::string save_model(const Model& m)
{
    pb::Writer w;
    w.int_field(1, m.ir_version);
    w.string_field_if(2, m.producer_name);
    w.string_field_if(3, m.producer_version);
    w.bytes_field(7, detail::encode_graph(m.graph));
    for (const auto& o : m.opset_import) {
        pb::Writer ow;
        if (o.explicit_domain || !o.domain.empty())
            ow.bytes_field(1, o.domain);
        ow.int_field(2, o.version);
        w.bytes_field(8, ow.str());
    }
    w.raw(m.unknown);
    return w.take();
}

inline std::string read_file(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw ModelError("cannot open '" + p.string() + "'");
    return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& p, std::string_view bytes)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write '" + p.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw Error("write to '" + p.string() + "' failed");
}

inline Model load_model_file(const std::filesystem::path& p) { return load_model(read_file(p)); }

inline void save_model_file(const Model& m, const std::filesystem::path& p) { write_file(p, save_model(m)); }

// ---------------------------------------------------------------------------
// Shapes
// ---------------------------------------------------------------------------

inline bool batch_like(const Dim& d) { return !d.is_static() || *d.value == 1; }

/// Element count of a value with its leading batch dimension (dynamic or 1)
/// stripped when the rank is at least 2.
inline std::size_t feature_count(const ValueInfo& v)
{
    if (!v.shape)
        throw ModelError("value '" + v.name + "' has no shape information");
    const auto& s = *v.shape;
    if (s.empty())
        return 1;
    std::size_t first = (s.size() >= 2 && batch_like(s[0])) ? 1 : 0;
    std::size_t n = 1;
    for (std::size_t i = first; i < s.size(); ++i) {
        if (!s[i].is_static())
            throw ModelError("value '" + v.name + "' has a symbolic non-batch dimension '" + s[i].param + "'");
        n *= static_cast<std::size_t>(*s[i].value);
    }
    return n;
}

/// Output arity m of the designated (first) graph output.
inline std::size_t output_arity(const Model& m) { return feature_count(m.graph.outputs.front()); }

inline std::size_t input_arity(const Model& m)
{
    const auto ins = m.graph.runtime_inputs();
    if (ins.size() != 1)
        throw ModelError("expected exactly one runtime graph input, found " + std::to_string(ins.size()));
    return feature_count(*ins.front());
}

// ---------------------------------------------------------------------------
// Surgery
// ---------------------------------------------------------------------------

struct AppendResult {
    Model model;
    std::string output_name;
    std::size_t added_nodes = 0;
};

namespace detail {

class NameTable {
public:
    explicit NameTable(const Graph& g)
    {
        for (const auto& t : g.initializers)
            used_.insert(t.name);
        for (const auto* list : {&g.inputs, &g.outputs, &g.value_info})
            for (const auto& v : *list)
                used_.insert(v.name);
        for (const auto& n : g.nodes) {
            used_.insert(n.name);
            for (const auto& s : n.inputs)
                used_.insert(s);
            for (const auto& s : n.outputs)
                used_.insert(s);
        }
    }

    std::string fresh(const std::string& base)
    {
        std::string name = base;
        for (int i = 1; used_.count(name); ++i)
            name = base + "_" + std::to_string(i);
        used_.insert(name);
        return name;
    }

private:
    std::set<std::string> used_;
};

} // namespace detail

/// Attaches the circuit after the designated output: one Gemm per affine
/// layer with a Relu between consecutive Gemms, ending in a scalar output.
/// A Flatten is inserted first unless the output is already [batch, m].
inline AppendResult append_circuit(const Model& host, const CircuitIR& c, const std::string& output_name = "Y_prop")
{
    c.check();
    AppendResult res;
    res.model = host;
    Graph& g = res.model.graph;
    const ValueInfo target = g.outputs.front();
    const std::size_t m = feature_count(target);
    if (m != c.input_arity)
        throw ModelError("model output '" + target.name + "' has " + std::to_string(m) +
                         " elements but the circuit expects " + std::to_string(c.input_arity));
    const std::int32_t elem = target.elem_type ? target.elem_type : Float;
    if (elem != Float && elem != Double)
        throw ModelError("cannot append onto an output of element type " + std::to_string(elem));

    detail::NameTable names(g);
    std::string cur = target.name;
    const auto& shape = *target.shape;
    Dim batch;
    batch.value = 1;
    const bool already_2d = shape.size() == 2 && batch_like(shape[0]);
    if (shape.size() >= 2 && batch_like(shape[0]))
        batch = shape[0];
    if (!already_2d) {
        Node flat;
        flat.op_type = "Flatten";
        flat.name = names.fresh("robustify_flatten");
        flat.inputs = {cur};
        cur = names.fresh("robustify_flat");
        flat.outputs = {cur};
        const bool has_batch = shape.size() >= 2 && batch_like(shape[0]);
        flat.attributes.push_back(Attribute::make_int("axis", has_batch ? 1 : 0));
        g.nodes.push_back(std::move(flat));
        ++res.added_nodes;
    }

    for (std::size_t li = 0; li < c.layers.size(); ++li) {
        const AffineLayer& layer = c.layers[li];
        const std::size_t in = layer.input_dim();
        const std::size_t out = layer.output_dim();
        std::vector<double> bt(in * out, 0.0); // W transposed, [in, out]
        for (std::size_t r = 0; r < out; ++r)
            for (const auto& e : layer.row(r))
                bt[e.col * out + r] = e.weight;
        const std::string stem = "robustify_l" + std::to_string(li);
        Tensor w = Tensor::from_values(names.fresh(stem + "_W"),
                                       {static_cast<std::int64_t>(in), static_cast<std::int64_t>(out)}, bt, elem);
        Tensor b = Tensor::from_values(names.fresh(stem + "_B"), {static_cast<std::int64_t>(out)}, layer.biases(), elem);

        Node gemm;
        gemm.op_type = "Gemm";
        gemm.name = names.fresh(stem + "_gemm");
        gemm.inputs = {cur, w.name, b.name};
        const bool last = li + 1 == c.layers.size();
        cur = last ? names.fresh(output_name) : names.fresh(stem + "_pre");
        gemm.outputs = {cur};
        gemm.attributes = {Attribute::make_float("alpha", 1.0f), Attribute::make_float("beta", 1.0f),
                           Attribute::make_int("transA", 0), Attribute::make_int("transB", 0)};
        g.initializers.push_back(std::move(w));
        g.initializers.push_back(std::move(b));
        g.nodes.push_back(std::move(gemm));
        ++res.added_nodes;
        if (!last) {
            Node relu;
            relu.op_type = "Relu";
            relu.name = names.fresh(stem + "_relu");
            relu.inputs = {cur};
            cur = names.fresh(stem + "_act");
            relu.outputs = {cur};
            g.nodes.push_back(std::move(relu));
            ++res.added_nodes;
        }
    }

    ValueInfo y;
    y.name = cur;
    y.is_tensor = true;
    y.elem_type = elem;
    Dim one;
    one.value = 1;
    y.shape = std::vector<Dim>{batch, one};
    g.outputs = {y};
    // the demoted output keeps its shape annotation
    if (std::none_of(g.value_info.begin(), g.value_info.end(), [&](const ValueInfo& v) { return v.name == target.name; }))
        g.value_info.push_back(target);
    if (res.model.default_opset() == 0)
        res.model.opset_import.push_back(OpsetId{"", 13});
    res.output_name = cur;
    check_graph(g);
    return res;
}

/// Fully connected ReLU network `X -> Gemm -> Relu -> ... -> Gemm -> Y`
/// with float32 weights. `weights[l]` is row-major [out][in].
inline Model make_dense_model(const std::vector<std::size_t>& sizes, const std::vector<std::vector<double>>& weights,
                              const std::vector<std::vector<double>>& biases)
{
    if (sizes.size() < 2 || weights.size() != sizes.size() - 1 || biases.size() != weights.size())
        throw ModelError("dense model needs one weight matrix and bias per layer");
    Model m;
    m.ir_version = 8;
    m.producer_name = "robustify";
    m.opset_import = {OpsetId{"", 13}};
    Graph& g = m.graph;
    g.name = "dense";
    Dim batch;
    batch.param = "N";
    auto vi = [&](std::string name, std::size_t n) {
        ValueInfo v;
        v.name = std::move(name);
        v.is_tensor = true;
        v.elem_type = Float;
        Dim d;
        d.value = static_cast<std::int64_t>(n);
        v.shape = std::vector<Dim>{batch, d};
        return v;
    };
    g.inputs.push_back(vi("X", sizes.front()));
    std::string cur = "X";
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const auto in = static_cast<std::int64_t>(sizes[l]);
        const auto out = static_cast<std::int64_t>(sizes[l + 1]);
        if (weights[l].size() != sizes[l] * sizes[l + 1] || biases[l].size() != sizes[l + 1])
            throw ModelError("layer " + std::to_string(l) + " parameter sizes do not match");
        const std::string s = std::to_string(l);
        g.initializers.push_back(Tensor::from_values("W" + s, {out, in}, weights[l]));
        g.initializers.push_back(Tensor::from_values("B" + s, {out}, biases[l]));
        Node gemm;
        gemm.op_type = "Gemm";
        gemm.name = "gemm" + s;
        gemm.inputs = {cur, "W" + s, "B" + s};
        const bool last = l + 2 == sizes.size();
        cur = last ? "Y" : "h" + s;
        gemm.outputs = {cur};
        gemm.attributes = {Attribute::make_int("transB", 1)};
        g.nodes.push_back(std::move(gemm));
        if (!last) {
            Node relu;
            relu.op_type = "Relu";
            relu.name = "relu" + s;
            relu.inputs = {cur};
            cur = "a" + s;
            relu.outputs = {cur};
            g.nodes.push_back(std::move(relu));
        }
    }
    g.outputs.push_back(vi("Y", sizes.back()));
    check_graph(g);
    return m;
}

} // namespace robustify::onnx
