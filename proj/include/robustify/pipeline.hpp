#pragma once

// Property spec ingestion and the compile pipeline:
// spec + model -> negated post-condition -> circuit -> appended model,
// VNNLIB queries and a metadata record.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "robustify/confidence.hpp"
#include "robustify/error.hpp"
#include "robustify/evaluator.hpp"
#include "robustify/formula.hpp"
#include "robustify/gadget.hpp"
#include "robustify/onnx.hpp"
#include "robustify/topk.hpp"
#include "robustify/vnnlib.hpp"

namespace robustify {

using json = nlohmann::json;

inline constexpr const char* tool_version = "1.0.0";

enum class PropertyKind { Standard, Relaxed, Strong, Smooth, TopK, TopKRelaxed, TopKAffinity, RawVnnlib };

inline const char* to_string(PropertyKind k)
{
    switch (k) {
    case PropertyKind::Standard: return "standard";
    case PropertyKind::Relaxed: return "relaxed";
    case PropertyKind::Strong: return "strong";
    case PropertyKind::Smooth: return "smooth";
    case PropertyKind::TopK: return "topk";
    case PropertyKind::TopKRelaxed: return "topk_relaxed";
    case PropertyKind::TopKAffinity: return "topk_affinity";
    case PropertyKind::RawVnnlib: return "raw_vnnlib";
    }
    return "?";
}

inline PropertyKind parse_kind(const std::string& s)
{
    for (auto k : {PropertyKind::Standard, PropertyKind::Relaxed, PropertyKind::Strong, PropertyKind::Smooth,
                   PropertyKind::TopK, PropertyKind::TopKRelaxed, PropertyKind::TopKAffinity, PropertyKind::RawVnnlib})
        if (s == to_string(k))
            return k;
    throw SpecError("unknown property kind '" + s +
                    "' (expected standard, relaxed, strong, smooth, topk, topk_relaxed, topk_affinity, raw_vnnlib)");
}

struct RobustnessSpec {
    PropertyKind kind = PropertyKind::Standard;
    std::optional<std::size_t> num_classes;
    std::optional<std::size_t> seed_class;
    std::optional<double> seed_confidence;
    std::optional<std::vector<double>> seed_logits;
    std::optional<std::vector<double>> seed_input;
    std::optional<double> epsilon;
    std::optional<std::pair<double, double>> clip;
    std::optional<InputBox> input_box;
    std::optional<double> tau;   // relaxed, smooth
    std::optional<double> tau2;  // strong
    std::optional<double> delta; // relaxed / strong override
    std::optional<std::size_t> k;
    std::optional<std::size_t> max_rank;
    std::vector<std::vector<std::size_t>> affinity_sets;
    std::optional<double> eta;
    std::optional<std::string> vnnlib_text;
};

// ---------------------------------------------------------------------------
// Vector files: .npy (little-endian float32/float64, C order) or text with
// whitespace/comma separated numbers.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> parse_npy(const std::string& bytes, const std::string& where)
{
    if (bytes.size() < 10 || bytes.compare(0, 6, "\x93NUMPY") != 0)
        throw SpecError(where + ": not an .npy file");
    const auto major = static_cast<unsigned char>(bytes[6]);
    std::size_t header_len = 0, off = 0;
    if (major == 1) {
        header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
        off = 10;
    } else {
        if (bytes.size() < 12)
            throw SpecError(where + ": truncated .npy header");
        for (int i = 3; i >= 0; --i)
            header_len = (header_len << 8) | static_cast<unsigned char>(bytes[8 + static_cast<std::size_t>(i)]);
        off = 12;
    }
    if (off + header_len > bytes.size())
        throw SpecError(where + ": truncated .npy header");
    const std::string header = bytes.substr(off, header_len);
    std::size_t width = 0;
    if (header.find("'<f4'") != std::string::npos)
        width = 4;
    else if (header.find("'<f8'") != std::string::npos)
        width = 8;
    else
        throw SpecError(where + ": only little-endian float32/float64 .npy arrays are supported");
    if (header.find("'fortran_order': True") != std::string::npos)
        throw SpecError(where + ": Fortran-ordered arrays are not supported");
    const std::string data = bytes.substr(off + header_len);
    if (data.size() % width)
        throw SpecError(where + ": payload size is not a multiple of the element size");
    std::vector<double> out(data.size() / width);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (width == 4) {
            float f;
            std::memcpy(&f, data.data() + i * 4, 4);
            out[i] = f;
        } else {
            std::memcpy(&out[i], data.data() + i * 8, 8);
        }
    }
    return out;
}

inline std::vector<double> parse_number_list(const std::string& text, const std::string& where)
{
    std::vector<double> out;
    std::string tok;
    auto flush = [&] {
        if (tok.empty())
            return;
        auto v = parse_number(tok);
        if (!v)
            throw SpecError(where + ": '" + tok + "' is not a number");
        out.push_back(*v);
        tok.clear();
    };
    bool comment = false;
    for (char c : text) {
        if (comment) {
            if (c == '\n')
                comment = false;
            continue;
        }
        if (c == '#') {
            flush();
            comment = true;
        } else if (c == ',' || c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '[' || c == ']')
            flush();
        else
            tok += c;
    }
    flush();
    return out;
}

} // namespace detail

inline std::vector<double> read_vector_file(const std::filesystem::path& p)
{
    std::string bytes;
    try {
        bytes = onnx::read_file(p);
    } catch (const ModelError& e) {
        throw SpecError(e.what());
    }
    if (bytes.size() >= 6 && bytes.compare(0, 6, "\x93NUMPY") == 0)
        return detail::parse_npy(bytes, p.string());
    return detail::parse_number_list(bytes, p.string());
}

// ---------------------------------------------------------------------------
// Spec parsing
// ---------------------------------------------------------------------------

namespace detail {

inline double get_number(const json& j, const char* key)
{
    const json& v = j.at(key);
    if (!v.is_number())
        throw SpecError(std::string("'") + key + "' must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d))
        throw SpecError(std::string("'") + key + "' must be finite");
    return d;
}

inline std::size_t get_index(const json& j, const char* key)
{
    const json& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw SpecError(std::string("'") + key + "' must be a non-negative integer");
    return v.get<std::size_t>();
}

inline std::vector<double> get_vector(const json& v, const char* key, const std::filesystem::path& base)
{
    if (v.is_string())
        return read_vector_file(base / v.get<std::string>());
    if (!v.is_array())
        throw SpecError(std::string("'") + key + "' must be an array of numbers or a file path");
    std::vector<double> out;
    for (const auto& e : v) {
        if (!e.is_number())
            throw SpecError(std::string("'") + key + "' must contain numbers only");
        out.push_back(e.get<double>());
    }
    return out;
}

} // namespace detail

inline RobustnessSpec parse_spec(const json& j, const std::filesystem::path& base_dir = {})
{
    if (!j.is_object())
        throw SpecError("spec must be a JSON object");
    static const std::vector<std::string> known{
        "kind", "num_classes", "seed_class", "seed_confidence", "seed_logits", "seed_input", "epsilon", "clip",
        "input_box", "tau", "tau2", "delta", "k", "max_rank", "affinity_sets", "eta", "vnnlib", "vnnlib_text",
        "comment"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw SpecError("unknown spec field '" + key + "'");
    if (!j.contains("kind") || !j["kind"].is_string())
        throw SpecError("spec needs a string 'kind'");

    RobustnessSpec s;
    try {
        s.kind = parse_kind(j["kind"].get<std::string>());
        if (j.contains("num_classes"))
            s.num_classes = detail::get_index(j, "num_classes");
        if (j.contains("seed_class"))
            s.seed_class = detail::get_index(j, "seed_class");
        if (j.contains("seed_confidence"))
            s.seed_confidence = detail::get_number(j, "seed_confidence");
        if (j.contains("seed_logits"))
            s.seed_logits = detail::get_vector(j["seed_logits"], "seed_logits", base_dir);
        if (j.contains("seed_input"))
            s.seed_input = detail::get_vector(j["seed_input"], "seed_input", base_dir);
        if (j.contains("epsilon"))
            s.epsilon = detail::get_number(j, "epsilon");
        if (j.contains("clip")) {
            const auto c = detail::get_vector(j["clip"], "clip", base_dir);
            if (c.size() != 2 || !(c[0] <= c[1]))
                throw SpecError("'clip' must be [lo, hi] with lo <= hi");
            s.clip = std::make_pair(c[0], c[1]);
        }
        if (j.contains("input_box")) {
            const json& b = j["input_box"];
            if (!b.is_object() || !b.contains("lower") || !b.contains("upper"))
                throw SpecError("'input_box' needs 'lower' and 'upper'");
            InputBox box{detail::get_vector(b["lower"], "lower", base_dir), detail::get_vector(b["upper"], "upper", base_dir)};
            box.validate();
            s.input_box = std::move(box);
        }
        if (j.contains("tau"))
            s.tau = detail::get_number(j, "tau");
        if (j.contains("tau2"))
            s.tau2 = detail::get_number(j, "tau2");
        if (j.contains("delta"))
            s.delta = detail::get_number(j, "delta");
        if (j.contains("k"))
            s.k = detail::get_index(j, "k");
        if (j.contains("max_rank"))
            s.max_rank = detail::get_index(j, "max_rank");
        if (j.contains("affinity_sets")) {
            if (!j["affinity_sets"].is_array())
                throw SpecError("'affinity_sets' must be an array of class arrays");
            for (const auto& set : j["affinity_sets"]) {
                if (!set.is_array())
                    throw SpecError("'affinity_sets' must be an array of class arrays");
                std::vector<std::size_t> v;
                for (const auto& c : set) {
                    if (!c.is_number_integer() || c.get<long long>() < 0)
                        throw SpecError("affinity set entries must be class indices");
                    v.push_back(c.get<std::size_t>());
                }
                s.affinity_sets.push_back(std::move(v));
            }
        }
        if (j.contains("eta"))
            s.eta = detail::get_number(j, "eta");
        if (j.contains("vnnlib_text")) {
            if (!j["vnnlib_text"].is_string())
                throw SpecError("'vnnlib_text' must be a string");
            s.vnnlib_text = j["vnnlib_text"].get<std::string>();
        } else if (j.contains("vnnlib")) {
            if (!j["vnnlib"].is_string())
                throw SpecError("'vnnlib' must be a file path");
            try {
                s.vnnlib_text = onnx::read_file(base_dir / j["vnnlib"].get<std::string>());
            } catch (const ModelError& e) {
                throw SpecError(e.what());
            }
        }
    } catch (const json::exception& e) {
        throw SpecError(std::string("malformed spec: ") + e.what());
    }

    auto require = [&](bool ok, const std::string& what) {
        if (!ok)
            throw SpecError(std::string(to_string(s.kind)) + " spec requires " + what);
    };
    switch (s.kind) {
    case PropertyKind::Relaxed: require(s.tau || s.delta, "'tau' or 'delta'"); break;
    case PropertyKind::Strong: require(s.tau2 || s.delta, "'tau2' or 'delta'"); break;
    case PropertyKind::Smooth: require(s.tau.has_value(), "'tau'"); break;
    case PropertyKind::TopK: require(s.k.has_value(), "'k'"); break;
    case PropertyKind::TopKRelaxed: require(s.max_rank.has_value(), "'max_rank'"); break;
    case PropertyKind::TopKAffinity:
        require(s.max_rank.has_value(), "'max_rank'");
        require(!s.affinity_sets.empty(), "'affinity_sets'");
        break;
    case PropertyKind::RawVnnlib: require(s.vnnlib_text.has_value(), "'vnnlib' or 'vnnlib_text'"); break;
    case PropertyKind::Standard: break;
    }
    if (s.tau && s.kind == PropertyKind::Smooth && !(*s.tau > 0.0))
        throw SpecError("smoothness tau must be positive");
    if (s.eta && !(*s.eta >= min_eta))
        throw SpecError("eta must be at least " + format_number(min_eta));
    return s;
}

inline RobustnessSpec load_spec_file(const std::filesystem::path& p)
{
    std::string text;
    try {
        text = onnx::read_file(p);
    } catch (const ModelError& e) {
        throw SpecError(e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw SpecError(p.string() + ": " + e.what());
    }
    return parse_spec(j, p.parent_path());
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct CompileOptions {
    /// Overrides the spec's eta.
    std::optional<double> eta;
    std::string output_name = "Y_prop";
    /// Random inputs from the box used to spot-check the composition law;
    /// 0 disables the check.
    std::size_t composition_checks = 8;
    std::uint64_t seed = 0;
};

struct CompileArtifacts {
    Formula formula = Formula::constant(true);
    FormulaClass formula_class{};
    CompiledCircuit compiled;
    InputBox box;
    onnx::Model model;
    std::string output_name;
    std::string query_vnnlib;
    std::string property_vnnlib;
    json metadata;
    std::vector<std::string> warnings;
    bool infeasible = false;
    bool trivially_violated = false;
};

namespace detail {

inline json bounds_json(const ConfidenceBounds& b)
{
    json j;
    j["variant"] = to_string(b.variant);
    j["m"] = b.m;
    j["deltas"] = b.deltas;
    j["guaranteed_safe_threshold"] = b.guaranteed_safe_threshold;
    if (b.counterexample_floor)
        j["counterexample_floor"] = *b.counterexample_floor;
    if (b.counterexample_ceiling)
        j["counterexample_ceiling"] = *b.counterexample_ceiling;
    if (b.counterexample_bounds)
        j["counterexample_bounds"] = {b.counterexample_bounds->first, b.counterexample_bounds->second};
    if (b.safe_interval)
        j["safe_interval"] = {b.safe_interval->first, b.safe_interval->second};
    return j;
}

inline double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

/// Seed logits from the spec or, failing that, from running the model on
/// the seed input.
inline std::optional<std::vector<double>> seed_logits(const RobustnessSpec& s, const onnx::Model* model)
{
    if (s.seed_logits)
        return s.seed_logits;
    if (!s.seed_input || !model)
        return std::nullopt;
    try {
        return forward(*model, *s.seed_input);
    } catch (const ModelError& e) {
        throw ModelError(std::string("cannot evaluate the seed input (") + e.what() +
                         "); give 'seed_logits' or 'seed_class' in the spec");
    }
}

inline SeedContext seed_context(const RobustnessSpec& s, const onnx::Model* model, std::size_t m, bool need_confidence)
{
    const bool have_class = s.seed_class.has_value();
    const bool have_conf = s.seed_confidence.has_value();
    if (!s.seed_logits && (!s.seed_input || !model) && have_class && (have_conf || !need_confidence)) {
        SeedContext c;
        c.m = m;
        c.seed_class = *s.seed_class;
        c.seed_confidence = have_conf ? *s.seed_confidence : 100.0;
        c.validate();
        return c;
    }
    auto logits = seed_logits(s, model);
    if (!logits)
        throw SpecError("spec needs 'seed_class' (and 'seed_confidence' for smoothness), 'seed_logits' or 'seed_input'");
    if (logits->size() != m)
        throw SpecError("seed logits have " + std::to_string(logits->size()) + " entries but the model has " +
                        std::to_string(m) + " outputs");
    SeedContext c = SeedContext::from_logits(*logits);
    if (have_class && *s.seed_class != c.seed_class)
        throw SpecError("seed_class " + std::to_string(*s.seed_class) + " is not the argmax (" +
                        std::to_string(c.seed_class) + ") of the seed logits");
    if (have_conf && std::abs(*s.seed_confidence - c.seed_confidence) > 1e-9)
        throw SpecError("seed_confidence disagrees with the seed logits");
    c.validate();
    return c;
}

inline InputBox input_box(const RobustnessSpec& s)
{
    if (s.input_box)
        return *s.input_box;
    return InputBox::around(*s.seed_input, *s.epsilon, s.clip);
}

} // namespace detail

/// The negated post-condition for a spec, plus what the metadata needs to
/// state the guarantee. `model` is only used to evaluate a seed input.
struct PropertyBuild {
    Formula formula = Formula::constant(true);
    std::optional<InputBox> box;
    std::optional<ConfidenceBounds> bounds;
    json seed = json::object();
    json extra = json::object();
    std::vector<std::string> warnings;
    bool infeasible = false;
    bool trivially_violated = false;
    std::string sentence_unsat;
    std::string sentence_sat_detail;
};

inline PropertyBuild build_property(const RobustnessSpec& spec, std::size_t m, const onnx::Model* model = nullptr)
{
    PropertyBuild out;
    auto logits_or_throw = [&](const char* what) {
        if (!model && !spec.seed_logits)
            throw SpecError(std::string(what) + " needs 'seed_logits' when no model is given");
        return detail::seed_logits(spec, model);
    };
    auto seed = [&](bool need_conf) {
        if (!model && !spec.seed_logits && !(spec.seed_class && (spec.seed_confidence || !need_conf)))
            throw SpecError("spec needs 'seed_class' or 'seed_logits' when no model is given");
        return detail::seed_context(spec, model, m, need_conf);
    };

    if (spec.kind == PropertyKind::RawVnnlib) {
        VnnlibProperty p = parse_vnnlib(*spec.vnnlib_text);
        if (p.num_outputs != m)
            throw SpecError("VNNLIB declares " + std::to_string(p.num_outputs) + " outputs but the model has " +
                            std::to_string(m));
        out.box = p.box;
        out.formula = p.formula;
        out.sentence_unsat = "no input in the box satisfies the asserted output formula";
        return out;
    }
    if (spec.input_box || (spec.seed_input && spec.epsilon))
        out.box = detail::input_box(spec);

    switch (spec.kind) {
    case PropertyKind::Standard: {
        const SeedContext sc = seed(false);
        std::vector<Formula> atoms;
        for (std::size_t i = 0; i < m; ++i)
            if (i != sc.seed_class)
                atoms.push_back(Formula::atom(LinearExpr::difference(sc.seed_class, i), Relation::Lt));
        out.formula = flatten(Formula::disj(std::move(atoms)));
        out.seed = {{"class", sc.seed_class}};
        out.sentence_unsat = "every input in the box keeps y_" + std::to_string(sc.seed_class) +
                             " >= y_i for all i (class " + std::to_string(sc.seed_class) + " up to ties)";
        break;
    }
    case PropertyKind::Relaxed: {
        const SeedContext sc = seed(false);
        const double delta = spec.delta ? *spec.delta : delta_relaxed(*spec.tau);
        if (!(delta >= 0.0))
            throw SpecError("relaxed delta must be non-negative");
        out.formula = build_relaxed_negation(m, sc.seed_class, delta);
        out.bounds = relaxed_bounds(delta, m);
        out.seed = {{"class", sc.seed_class}};
        out.sentence_unsat = "no input in the box is classified as a class other than " +
                             std::to_string(sc.seed_class) + " with confidence >= " +
                             format_number(out.bounds->guaranteed_safe_threshold) + "%";
        out.sentence_sat_detail = "a counterexample of the exact formula is misclassified with confidence >= " +
                                  format_number(*out.bounds->counterexample_floor) + "%";
        break;
    }
    case PropertyKind::Strong: {
        const SeedContext sc = seed(false);
        const double delta = spec.delta ? *spec.delta : delta_strong(*spec.tau2, m);
        if (!(delta >= 0.0))
            throw SpecError("strong delta must be non-negative");
        out.formula = build_strong_negation(m, sc.seed_class, delta);
        out.bounds = strong_bounds(delta, m);
        out.seed = {{"class", sc.seed_class}};
        out.sentence_unsat = "every input in the box is classified as " + std::to_string(sc.seed_class) +
                             " with confidence > " + format_number(out.bounds->guaranteed_safe_threshold) + "%";
        out.sentence_sat_detail = "a counterexample of the exact formula has seed-class confidence <= " +
                                  format_number(*out.bounds->counterexample_ceiling) + "%";
        break;
    }
    case PropertyKind::Smooth: {
        const SeedContext sc = seed(true);
        const SmoothDeltas d = deltas_smooth(sc.seed_confidence, *spec.tau, m);
        out.formula = build_smooth_negation(m, sc.seed_class, d.delta1, d.delta2);
        out.bounds = smooth_bounds(d.delta1, d.delta2, m);
        out.seed = {{"class", sc.seed_class}, {"confidence", sc.seed_confidence}};
        if (!d.feasible) {
            out.infeasible = true;
            out.warnings.push_back("inconclusive-by-approximation: delta2 >= delta1, the simplified safe region "
                                   "is empty, so the query cannot be proven");
        }
        out.sentence_unsat = "the seed-class confidence of every input in the box stays within (" +
                             format_number(sc.seed_confidence - *spec.tau) + ", " +
                             format_number(sc.seed_confidence + *spec.tau) + ")%";
        out.sentence_sat_detail = "a counterexample of the exact formula has seed-class confidence >= " +
                                  format_number(out.bounds->counterexample_bounds->first) + "% or <= " +
                                  format_number(out.bounds->counterexample_bounds->second) + "%";
        break;
    }
    case PropertyKind::TopK:
    case PropertyKind::TopKRelaxed:
    case PropertyKind::TopKAffinity: {
        auto logits = logits_or_throw("top-k specs");
        if (!logits)
            throw SpecError("top-k specs need 'seed_logits' or 'seed_input'");
        if (logits->size() != m)
            throw SpecError("seed logits length differs from the output arity");
        TopKContext ctx{*logits, spec.max_rank.value_or(spec.k.value_or(1)), spec.affinity_sets};
        if (spec.kind == PropertyKind::TopK) {
            if (*spec.k < 1 || *spec.k >= m)
                throw SpecError("top-k rank k must satisfy 1 <= k < m");
            ctx.max_rank = *spec.k;
            out.formula = build_topk_negation(ctx, *spec.k);
            out.seed = {{"topk_set", topk_set(*logits, *spec.k)}};
            out.sentence_unsat = "every input in the box has the same top-" + std::to_string(*spec.k) +
                                 " class set as the seed";
        } else if (spec.kind == PropertyKind::TopKRelaxed) {
            out.formula = build_topk_relaxed_negation(ctx);
            out.sentence_unsat = "for every input in the box some k <= " + std::to_string(ctx.max_rank) +
                                 " keeps the seed's top-k class set";
        } else {
            json pj = json::array();
            for (const auto& p : filter_affinity_pairs(ctx))
                pj.push_back({{"k", p.k}, {"set", p.set}});
            out.extra["affinity_pairs"] = pj;
            auto neg = build_affinity_negation(ctx);
            if (std::holds_alternative<TriviallyViolated>(neg)) {
                out.trivially_violated = true;
                out.formula = Formula::constant(true);
                out.warnings.push_back("trivially violated: no affinity set contains the seed's top-k set for "
                                       "any k <= max_rank");
            } else {
                out.formula = std::get<Formula>(neg);
            }
            out.sentence_unsat = "for every input in the box some surviving <k, S> pair keeps the top-k set "
                                 "equal to the seed's";
        }
        break;
    }
    case PropertyKind::RawVnnlib: break;
    }
    return out;
}

/// One-line summary of a formula's clause structure.
inline std::string describe(const Formula& f, const FormulaClass& c)
{
    const auto n = std::to_string(c.atom_count);
    switch (c.shape) {
    case Shape::PureDisj:
        return c.atom_count == 1 ? "1 atom" : n + " disjunctive atoms";
    case Shape::PureConj:
        if (f.is_constant())
            return f.kind() == Formula::Kind::True ? "constant true" : "constant false";
        return c.atom_count == 1 ? "1 atom" : n + " conjunctive atoms";
    case Shape::DNF:
        return std::to_string(f.children().size()) + " disjuncts over " + n + " atoms (DNF)";
    case Shape::CNF:
        return std::to_string(f.children().size()) + " clauses over " + n + " atoms (CNF)";
    case Shape::General: break;
    }
    return "general formula of depth " + std::to_string(c.depth) + " over " + n + " atoms";
}

/// Full compile: formula, circuit, appended model, VNNLIB texts, metadata.
inline CompileArtifacts compile_property(const onnx::Model& model, const RobustnessSpec& spec,
                                         const CompileOptions& opts = {})
{
    const std::size_t m = onnx::output_arity(model);
    const std::size_t n_in = onnx::input_arity(model);
    if (spec.num_classes && *spec.num_classes != m)
        throw SpecError("spec says " + std::to_string(*spec.num_classes) + " classes but the model has " +
                        std::to_string(m) + " outputs");

    double eta = default_eta;
    if (spec.eta)
        eta = *spec.eta;
    if (opts.eta)
        eta = *opts.eta;
    if (!(eta >= min_eta) || !std::isfinite(eta))
        throw SpecError("eta must be a finite number >= " + format_number(min_eta));

    PropertyBuild pb = build_property(spec, m, &model);
    if (!pb.box)
        throw SpecError("spec needs 'input_box' or 'seed_input' with 'epsilon'");

    CompileArtifacts out;
    out.box = *pb.box;
    out.formula = pb.formula;
    out.warnings = pb.warnings;
    out.infeasible = pb.infeasible;
    out.trivially_violated = pb.trivially_violated;
    if (out.box.size() != n_in)
        throw SpecError("input box has " + std::to_string(out.box.size()) + " entries but the model input has " +
                        std::to_string(n_in));

    out.formula_class = classify(out.formula, m);
    out.compiled = compile(out.formula, m, eta);
    const CircuitIR& c = out.compiled.circuit;

    auto appended = onnx::append_circuit(model, c, opts.output_name);
    out.model = std::move(appended.model);
    out.output_name = appended.output_name;

    const auto margin = c.mode == CircuitMode::FastPathExact ? std::optional<double>(0.0)
                                                             : expected_error_margin(out.formula, eta);
    const QuerySpec& q = out.compiled.query;

    std::vector<std::string> header{std::string("robustify ") + tool_version,
                                    std::string("kind: ") + to_string(spec.kind),
                                    std::string("mode: ") + to_string(c.mode), "eta: " + format_number(eta)};
    out.query_vnnlib = emit_query_vnnlib(out.box, q, header);
    out.property_vnnlib = emit_vnnlib(out.box, out.formula, m,
                                      {std::string("robustify ") + tool_version,
                                       "negated post-condition over the original outputs"});

    json meta;
    json flags = json::object();
    meta["tool"] = {{"name", "robustify"}, {"version", tool_version}};
    meta["kind"] = to_string(spec.kind);
    meta["seed"] = pb.seed;
    for (const auto& [k, v] : pb.extra.items())
        meta[k] = v;
    meta["eta"] = eta;
    meta["eta_float32"] = detail::f32(eta);
    meta["mode"] = to_string(c.mode);
    meta["strictness"] = to_string(c.strictness);
    meta["formula"] = {{"root", to_string(out.formula_class.root)},
                       {"shape", to_string(out.formula_class.shape)},
                       {"depth", out.formula_class.depth},
                       {"nodes", out.formula_class.node_count},
                       {"atoms", out.formula_class.atom_count},
                       {"summary", describe(out.formula, out.formula_class)},
                       {"text", to_string(out.formula)}};
    meta["query"] = {{"output", out.output_name},
                     {"assert", to_string(q.assert_cmp)},
                     {"verify", to_string(q.verify_cmp())},
                     {"threshold", q.threshold}};
    meta["circuit"] = {{"layers", c.layers.size()},
                       {"relu_stages", c.relu_stages()},
                       {"relu_neurons", c.relu_neurons()},
                       {"passthrough_neurons", c.passthrough_neurons},
                       {"added_nodes", appended.added_nodes}};
    meta["model"] = {{"inputs", n_in},
                     {"outputs", m},
                     {"original_output", model.graph.outputs.front().name},
                     {"opset", out.model.default_opset()}};
    meta["input_box"] = {{"dims", out.box.size()},
                         {"min_lower", *std::min_element(out.box.lower.begin(), out.box.lower.end())},
                         {"max_upper", *std::max_element(out.box.upper.begin(), out.box.upper.end())}};
    if (margin)
        meta["error_margin"] = *margin;
    else
        meta["error_margin"] = nullptr;
    if (pb.bounds) {
        const ConfidenceBounds& b = *pb.bounds;
        meta["bounds"] = detail::bounds_json(b);
        // the deltas reach the network as float32 biases
        std::vector<double> d32;
        for (double d : b.deltas)
            d32.push_back(detail::f32(d));
        const ConfidenceBounds b32 = b.variant == ConfidenceVariant::Relaxed ? relaxed_bounds(d32[0], m)
                                     : b.variant == ConfidenceVariant::Strong ? strong_bounds(d32[0], m)
                                                                              : smooth_bounds(d32[0], d32[1], m);
        const double drift = std::abs(b32.guaranteed_safe_threshold - b.guaranteed_safe_threshold);
        meta["bounds_float32"] = detail::bounds_json(b32);
        meta["bounds_float32_drift"] = drift;
        flags["float32_drift_exceeds_1e-6"] = drift / 100.0 > 1e-6;
    }
    flags["infeasible_approximation"] = out.infeasible;
    flags["trivially_violated"] = out.trivially_violated;
    meta["flags"] = flags;

    json g;
    const std::string y = out.output_name;
    g["unsat"] = "If a verifier proves no input in the box gives " + y + " " + to_string(q.assert_cmp) + " " +
                 format_number(q.threshold) + ", then " + pb.sentence_unsat + ".";
    const std::string detail_text = pb.sentence_sat_detail;
    if (c.mode == CircuitMode::FastPathExact)
        g["sat"] = "A satisfying input satisfies the negated post-condition exactly." +
                   (detail_text.empty() ? std::string() : " In particular, " + detail_text + ".");
    else if (c.mode == CircuitMode::ConstantFolded)
        g["sat"] = std::string("The negated post-condition is constant ") +
                   (out.formula.kind() == Formula::Kind::True ? "true: every input is a counterexample."
                                                              : "false: no input is a counterexample.");
    else if (margin)
        g["sat"] = "A satisfying input satisfies the negated post-condition with every atom relaxed by at most " +
                   format_number(*margin) + "; it need not satisfy the exact formula." +
                   (detail_text.empty() ? std::string() : " Up to that slack, " + detail_text + ".");
    else
        g["sat"] = "A satisfying input is only a candidate: this formula shape carries no atom-slack bound, so "
                   "re-check it against the exact formula.";
    meta["guarantee"] = g;

    // composition spot check on the evaluator subset
    if (opts.composition_checks) {
        json cj;
        try {
            Evaluator base(model), full(out.model);
            std::mt19937_64 rng(opts.seed);
            double worst = 0.0;
            for (std::size_t i = 0; i < opts.composition_checks; ++i) {
                std::vector<double> x(n_in);
                for (std::size_t d = 0; d < n_in; ++d)
                    x[d] = std::uniform_real_distribution<double>(out.box.lower[d], out.box.upper[d])(rng);
                const double direct = eval_circuit(c, base.run(x));
                const double composed = full.run(x, out.output_name).front();
                worst = std::max(worst, std::abs(direct - composed) / std::max(1.0, std::abs(direct)));
            }
            cj = {{"points", opts.composition_checks},
                  {"max_rel_diff", worst},
                  {"tolerance", 1e-6},
                  {"passed", worst <= 1e-6}};
            if (worst > 1e-6)
                out.warnings.push_back("composition check exceeded 1e-6 after float32 storage");
        } catch (const ModelError& e) {
            cj = {{"skipped", e.what()}};
        }
        meta["composition_check"] = cj;
    }
    meta["warnings"] = out.warnings;
    out.metadata = std::move(meta);
    return out;
}

/// Writes model.onnx, query.vnnlib, property.vnnlib and metadata.json.
inline void write_artifacts(const CompileArtifacts& a, const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
    onnx::save_model_file(a.model, dir / "model.onnx");
    onnx::write_file(dir / "query.vnnlib", a.query_vnnlib);
    onnx::write_file(dir / "property.vnnlib", a.property_vnnlib);
    onnx::write_file(dir / "metadata.json", a.metadata.dump(2) + "\n");
}

} // namespace robustify
