// robustify: compile robustness properties into appended ONNX networks and
// VNNLIB queries, evaluate models, run the validators.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "robustify/robustify.hpp"

namespace fs = std::filesystem;
using namespace robustify;

namespace {

enum Exit { Ok = 0, Failure = 1, SpecFailure = 2, ModelFailure = 3, Infeasible = 4 };

struct Classified {
    int code;
    const char* type;
};

Classified classify_error(const std::exception& e)
{
    if (dynamic_cast<const ParseError*>(&e))
        return {SpecFailure, "ParseError"};
    if (dynamic_cast<const SpecError*>(&e))
        return {SpecFailure, "SpecError"};
    if (dynamic_cast<const FormulaError*>(&e))
        return {SpecFailure, "FormulaError"};
    if (dynamic_cast<const ModelError*>(&e))
        return {ModelFailure, "ModelError"};
    if (dynamic_cast<const Error*>(&e))
        return {Failure, "Error"};
    return {Failure, "InternalError"};
}

json error_json(const std::exception& e, const std::string& context = {})
{
    const auto c = classify_error(e);
    json j = {{"error", {{"type", c.type}, {"message", e.what()}}}, {"exit_code", c.code}};
    if (!context.empty())
        j["error"]["context"] = context;
    return j;
}

int report_error(const std::exception& e, const std::string& context = {})
{
    const json j = error_json(e, context);
    std::cerr << j.dump() << "\n";
    return j["exit_code"].get<int>();
}

std::uint64_t env_seed()
{
    const char* s = std::getenv("ROBUSTIFY_SEED");
    if (!s || !*s)
        return 0;
    try {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used, 0);
        if (used != std::string(s).size())
            throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw SpecError(std::string("ROBUSTIFY_SEED must be an unsigned integer, got '") + s + "'");
    }
}

std::string fmt(double v)
{
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// compile
// ---------------------------------------------------------------------------

struct CompileArgs {
    std::vector<std::string> models;
    std::vector<std::string> specs;
    std::string out;
    double eta = 0.0;
    bool eta_given = false;
    bool strict = false;
    bool json_out = false;
    unsigned jobs = 1;
};

struct JobResult {
    json record;
    int code = Ok;
    bool infeasible = false;
    std::vector<std::string> warnings;
};

JobResult compile_one(const std::string& model_path, const std::string& spec_path, const fs::path& out_dir,
                      const CompileArgs& a, std::uint64_t seed)
{
    JobResult r;
    r.record = {{"model", model_path}, {"spec", spec_path}, {"out", out_dir.string()}};
    try {
        const onnx::Model model = onnx::load_model_file(model_path);
        const RobustnessSpec spec = load_spec_file(spec_path);
        CompileOptions opt;
        if (a.eta_given)
            opt.eta = a.eta;
        opt.seed = seed;
        const CompileArtifacts art = compile_property(model, spec, opt);
        write_artifacts(art, out_dir);
        r.infeasible = art.infeasible;
        r.warnings = art.warnings;
        r.record["status"] = "ok";
        r.record["kind"] = art.metadata["kind"];
        r.record["mode"] = art.metadata["mode"];
        r.record["formula"] = art.metadata["formula"]["summary"];
        r.record["query"] = art.output_name + " " + to_string(art.compiled.query.assert_cmp) + " " +
                            format_number(art.compiled.query.threshold);
        r.record["warnings"] = art.warnings;
        r.record["flags"] = art.metadata["flags"];
    } catch (const std::exception& e) {
        const json ej = error_json(e);
        r.code = ej["exit_code"].get<int>();
        r.record["status"] = "error";
        r.record["error"] = ej["error"];
    }
    return r;
}

int cmd_compile(const CompileArgs& a)
{
    std::vector<std::pair<std::string, std::string>> pairs;
    if (a.models.size() == 1) {
        for (const auto& s : a.specs)
            pairs.emplace_back(a.models.front(), s);
    } else if (a.models.size() == a.specs.size()) {
        for (std::size_t i = 0; i < a.specs.size(); ++i)
            pairs.emplace_back(a.models[i], a.specs[i]);
    } else {
        throw SpecError("give one model for all specs or one model per spec");
    }
    const std::uint64_t seed = env_seed();

    std::vector<fs::path> dirs;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pairs.size() == 1) {
            dirs.emplace_back(a.out);
        } else {
            std::ostringstream name;
            name << std::setw(3) << std::setfill('0') << i << "_" << fs::path(pairs[i].second).stem().string();
            dirs.push_back(fs::path(a.out) / name.str());
        }
    }

    std::vector<JobResult> results(pairs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next++) < pairs.size();)
            results[i] = compile_one(pairs[i].first, pairs[i].second, dirs[i], a, seed);
    };
    const unsigned n = std::max(1u, std::min<unsigned>(a.jobs, static_cast<unsigned>(pairs.size())));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < n; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();

    int code = Ok;
    bool infeasible = false;
    json all = json::array();
    for (const auto& r : results) {
        all.push_back(r.record);
        if (r.code != Ok) {
            std::cerr << json{{"error", r.record["error"]}, {"exit_code", r.code}, {"spec", r.record["spec"]}}.dump()
                      << "\n";
            if (code == Ok)
                code = r.code;
            continue;
        }
        infeasible = infeasible || r.infeasible;
        for (const auto& w : r.warnings)
            std::cerr << "warning: " << r.record["spec"].get<std::string>() << ": " << w << "\n";
        if (!a.json_out)
            std::cout << r.record["out"].get<std::string>() << ": " << r.record["kind"].get<std::string>() << ", "
                      << r.record["mode"].get<std::string>() << ", " << r.record["formula"].get<std::string>()
                      << ", assert " << r.record["query"].get<std::string>() << "\n";
    }
    if (a.json_out)
        std::cout << (pairs.size() == 1 ? all.front() : all).dump(2) << "\n";
    if (code != Ok)
        return code;
    if (a.strict && infeasible) {
        std::cerr << json{{"error", {{"type", "InfeasibleApproximation"},
                                     {"message", "the approximation is inconclusive and --strict is set"}}},
                          {"exit_code", Infeasible}}
                         .dump()
                  << "\n";
        return Infeasible;
    }
    return Ok;
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

struct ValidateArgs {
    bool claims = false;
    std::string vnnlib;
    std::string spec;
    std::string model;
    double eta = default_eta;
    std::size_t samples = 10000;
    std::vector<std::size_t> classes;
    std::vector<double> taus;
    std::vector<double> box{-10.0, 10.0};
    bool seed_given = false;
    std::uint64_t seed = 0;
    std::string json_path;
};

json report_json(const ValidationReport& r)
{
    json j = {{"property", r.property},   {"samples", r.samples},     {"violations", r.violations},
              {"max_slack", r.max_slack}, {"tolerance", r.tolerance}, {"verdict", r.passed() ? "pass" : "fail"},
              {"witnesses", r.witnesses}};
    if (r.property == "error-bound") {
        j["tight_points"] = r.tight_points;
        j["tight_witnesses"] = r.tight_witnesses;
    }
    if (!r.note.empty())
        j["note"] = r.note;
    return j;
}

void print_report(const ValidationReport& r)
{
    std::cout << std::left << std::setw(22) << r.property << (r.passed() ? "PASS" : "FAIL") << "  samples=" << r.samples
              << " violations=" << r.violations << " max_slack=" << fmt(r.max_slack);
    if (r.property == "error-bound")
        std::cout << " tight_points=" << r.tight_points;
    std::cout << "\n";
    for (const auto& w : r.witnesses) {
        std::cout << "    witness:";
        for (double v : w)
            std::cout << " " << fmt(v);
        std::cout << "\n";
    }
    if (!r.note.empty())
        std::cout << "    note: " << r.note << "\n";
}

int cmd_validate(const ValidateArgs& a)
{
    const std::uint64_t seed = a.seed_given ? a.seed : env_seed();
    std::vector<ValidationReport> reports;
    json head = json::object();

    if (a.claims) {
        ClaimsOptions o;
        if (!a.classes.empty())
            o.classes = a.classes;
        if (!a.taus.empty())
            o.relaxed_taus = a.taus;
        for (auto m : o.classes)
            if (m < 2)
                throw SpecError("class counts must be >= 2");
        o.samples = a.samples;
        o.seed = seed;
        reports = validate_confidence_claims(o);
        head["mode"] = "claims";
    } else {
        Formula f = Formula::constant(true);
        std::size_t m = 0;
        if (!a.vnnlib.empty()) {
            std::string text;
            try {
                text = onnx::read_file(a.vnnlib);
            } catch (const ModelError& e) {
                throw SpecError(e.what());
            }
            const auto p = parse_vnnlib(text);
            f = p.formula;
            m = p.num_outputs;
        } else if (!a.spec.empty()) {
            const RobustnessSpec spec = load_spec_file(a.spec);
            std::optional<onnx::Model> model;
            if (!a.model.empty())
                model = onnx::load_model_file(a.model);
            if (model)
                m = onnx::output_arity(*model);
            else if (spec.num_classes)
                m = *spec.num_classes;
            else if (spec.seed_logits)
                m = spec.seed_logits->size();
            else
                throw SpecError("cannot tell the class count: give -m, 'num_classes' or 'seed_logits'");
            f = build_property(spec, m, model ? &*model : nullptr).formula;
        } else {
            throw SpecError("validate needs --claims, --vnnlib or --spec");
        }
        if (a.box.size() != 2 || !(a.box[0] < a.box[1]))
            throw SpecError("--box takes two numbers lo < hi");
        if (!(a.eta >= min_eta))
            throw SpecError("eta must be at least " + format_number(min_eta));
        SamplingOptions o;
        o.samples = a.samples;
        o.seed = seed;
        o.lo = a.box[0];
        o.hi = a.box[1];
        o.arity = std::max<std::size_t>(m, std::max<std::size_t>(min_arity(f), 1));
        reports.push_back(validate_soundness(f, a.eta, o));
        const auto cls = classify(f, o.arity);
        if (cls.shape != Shape::General) {
            reports.push_back(validate_error_bound(f, a.eta, o));
        } else {
            ValidationReport skipped;
            skipped.property = "error-bound";
            skipped.note = "skipped: the 2 eta bound is stated for DNF/CNF formulas only";
            reports.push_back(skipped);
        }
        head["mode"] = "formula";
        head["eta"] = a.eta;
        head["formula"] = describe(f, cls);
    }

    head["seed"] = seed;
    bool pass = true;
    json rj = json::array();
    for (const auto& r : reports) {
        print_report(r);
        rj.push_back(report_json(r));
        pass = pass && r.passed();
    }
    head["reports"] = rj;
    head["verdict"] = pass ? "pass" : "fail";
    std::cout << "verdict: " << (pass ? "pass" : "fail") << "\n";
    if (!a.json_path.empty()) {
        if (a.json_path == "-")
            std::cout << head.dump(2) << "\n";
        else
            onnx::write_file(a.json_path, head.dump(2) + "\n");
    }
    return pass ? Ok : Failure;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const std::string& model_path, const std::string& input, const std::string& output, bool json_out)
{
    const onnx::Model model = onnx::load_model_file(model_path);
    const std::vector<double> x = read_vector_file(input);
    const std::vector<double> y = Evaluator(model).run(x, output);
    require_finite(y);
    json j = {{"logits", y}};
    if (y.size() >= 1) {
        const std::size_t t = argmax(y);
        j["argmax"] = t;
        j["confidence"] = confidences(y);
    }
    if (json_out) {
        std::cout << j.dump(2) << "\n";
        return Ok;
    }
    std::cout << "argmax: " << j["argmax"].get<std::size_t>() << "\n";
    std::cout << "class  logit            confidence%\n";
    for (std::size_t i = 0; i < y.size(); ++i)
        std::cout << std::left << std::setw(7) << i << std::setw(17) << fmt(y[i]) << fmt(j["confidence"][i].get<double>())
                  << "\n";
    return Ok;
}

// ---------------------------------------------------------------------------
// info
// ---------------------------------------------------------------------------

std::string shape_text(const onnx::ValueInfo& v)
{
    if (!v.shape)
        return "?";
    std::string s = "[";
    for (std::size_t i = 0; i < v.shape->size(); ++i) {
        const auto& d = (*v.shape)[i];
        s += (i ? "," : "") + (d.is_static() ? std::to_string(*d.value) : (d.param.empty() ? "?" : d.param));
    }
    return s + "]";
}

json formula_info(const Formula& f, std::size_t m)
{
    const auto c = classify(f, m);
    return {{"root", to_string(c.root)},     {"shape", to_string(c.shape)},   {"depth", c.depth},
            {"atoms", c.atom_count},         {"nodes", c.node_count},         {"strictness", to_string(c.strictness)},
            {"summary", describe(f, c)},     {"fast_path", fast_path_applies(f)}};
}

int cmd_info(const std::string& path, const std::string& model_path, bool json_out)
{
    json j;
    const std::string ext = fs::path(path).extension().string();
    std::string bytes;
    try {
        bytes = onnx::read_file(path);
    } catch (const ModelError& e) {
        throw SpecError(e.what());
    }
    if (ext == ".onnx") {
        const onnx::Model m = onnx::load_model(bytes);
        std::map<std::string, std::size_t> ops;
        for (const auto& n : m.graph.nodes)
            ++ops[n.op_type];
        json ins = json::array(), outs = json::array();
        for (const auto* v : m.graph.runtime_inputs())
            ins.push_back({{"name", v->name}, {"shape", shape_text(*v)}});
        for (const auto& v : m.graph.outputs)
            outs.push_back({{"name", v.name}, {"shape", shape_text(v)}});
        j = {{"type", "model"},
             {"inputs", ins},
             {"outputs", outs},
             {"m", onnx::output_arity(m)},
             {"nodes", m.graph.nodes.size()},
             {"ops", ops},
             {"initializers", m.graph.initializers.size()},
             {"opset", m.default_opset()},
             {"ir_version", m.ir_version}};
    } else if (ext == ".vnnlib") {
        const auto p = parse_vnnlib(bytes);
        j = {{"type", "vnnlib"}, {"inputs", p.box.size()}, {"outputs", p.num_outputs},
             {"formula", formula_info(p.formula, std::max<std::size_t>(p.num_outputs, 1))}};
    } else {
        json sj;
        try {
            sj = json::parse(bytes);
        } catch (const json::exception& e) {
            throw SpecError(path + ": not an .onnx, .vnnlib or JSON spec file (" + e.what() + ")");
        }
        const RobustnessSpec spec = parse_spec(sj, fs::path(path).parent_path());
        std::optional<onnx::Model> model;
        if (!model_path.empty())
            model = onnx::load_model_file(model_path);
        std::size_t m = 0;
        if (model)
            m = onnx::output_arity(*model);
        else if (spec.num_classes)
            m = *spec.num_classes;
        else if (spec.seed_logits)
            m = spec.seed_logits->size();
        else if (spec.kind == PropertyKind::RawVnnlib)
            m = parse_vnnlib(*spec.vnnlib_text).num_outputs;
        else
            throw SpecError("cannot tell the class count: give -m, 'num_classes' or 'seed_logits'");
        const PropertyBuild pb = build_property(spec, m, model ? &*model : nullptr);
        j = {{"type", "spec"}, {"kind", to_string(spec.kind)}, {"m", m}, {"formula", formula_info(pb.formula, m)},
             {"warnings", pb.warnings}};
    }
    if (json_out) {
        std::cout << j.dump(2) << "\n";
        return Ok;
    }
    if (j["type"] == "model") {
        std::cout << "model: " << j["nodes"] << " nodes, opset " << j["opset"] << ", m=" << j["m"] << "\n";
        for (const auto& v : j["inputs"])
            std::cout << "  input  " << v["name"].get<std::string>() << " " << v["shape"].get<std::string>() << "\n";
        for (const auto& v : j["outputs"])
            std::cout << "  output " << v["name"].get<std::string>() << " " << v["shape"].get<std::string>() << "\n";
        for (const auto& [op, n] : j["ops"].items())
            std::cout << "  " << op << " x" << n << "\n";
    } else {
        const json& f = j["formula"];
        if (j["type"] == "vnnlib")
            std::cout << "vnnlib: " << j["inputs"] << " inputs, " << j["outputs"] << " outputs\n";
        else
            std::cout << "spec: " << j["kind"].get<std::string>() << ", m=" << j["m"] << "\n";
        std::cout << "  " << f["summary"].get<std::string>() << "\n";
        std::cout << "  root " << f["root"].get<std::string>() << ", shape " << f["shape"].get<std::string>()
                  << ", depth " << f["depth"] << ", " << f["strictness"].get<std::string>()
                  << (f["fast_path"].get<bool>() ? ", exact fast path" : "") << "\n";
        if (j.contains("warnings"))
            for (const auto& w : j["warnings"])
                std::cerr << "warning: " << w.get<std::string>() << "\n";
    }
    return Ok;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"robustify: compile robustness properties into appended networks and VNNLIB queries"};
    app.require_subcommand(1);
    app.set_version_flag("--version", tool_version);

    CompileArgs ca;
    auto* compile = app.add_subcommand("compile", "compile a property spec against a model");
    compile->add_option("-m,--model", ca.models, "ONNX model (one, or one per spec)")->required();
    compile->add_option("-p,--spec", ca.specs, "property spec JSON (repeatable)")->required();
    compile->add_option("-o,--out", ca.out, "output directory")->required();
    compile->add_option("--eta", ca.eta, "encoding slack (default 1e-4, minimum 1e-7)");
    compile->add_flag("--strict", ca.strict, "exit 4 when the approximation is inconclusive");
    compile->add_flag("--json", ca.json_out, "print a JSON summary");
    compile->add_option("-j,--jobs", ca.jobs, "parallel compiles in batch mode")->check(CLI::Range(1u, 256u));

    ValidateArgs va;
    auto* validate = app.add_subcommand("validate", "run the sampling validators");
    validate->add_flag("--claims", va.claims, "softmax confidence claims");
    validate->add_option("--vnnlib", va.vnnlib, "validate the encoding of a VNNLIB post-condition");
    validate->add_option("-p,--spec", va.spec, "validate the encoding of a spec's formula");
    validate->add_option("-m,--model", va.model, "model used to resolve the spec");
    validate->add_option("--eta", va.eta, "encoding slack");
    validate->add_option("-n,--samples", va.samples, "samples (per cell for --claims)");
    validate->add_option("--classes", va.classes, "class counts for --claims");
    validate->add_option("--tau", va.taus, "relaxed thresholds for --claims");
    validate->add_option("--box", va.box, "sampling box lo hi for logits")->expected(2);
    auto* seed_opt = validate->add_option("--seed", va.seed, "RNG seed (default: ROBUSTIFY_SEED or 0)");
    validate->add_option("--json", va.json_path, "write the JSON report to a file ('-' for stdout)");

    std::string eval_model, eval_input, eval_output;
    bool eval_json = false;
    auto* eval = app.add_subcommand("eval", "forward pass, argmax and confidences");
    eval->add_option("-m,--model", eval_model, "ONNX model")->required();
    eval->add_option("-x,--input", eval_input, "input vector (.npy or text)")->required();
    eval->add_option("--output", eval_output, "graph value to report (default: graph output)");
    eval->add_flag("--json", eval_json, "JSON output");

    std::string info_path, info_model;
    bool info_json = false;
    auto* info = app.add_subcommand("info", "summarize a model, VNNLIB file or spec");
    info->add_option("file", info_path, ".onnx, .vnnlib or spec .json")->required();
    info->add_option("-m,--model", info_model, "model used to resolve a spec");
    info->add_flag("--json", info_json, "JSON output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << json{{"error", {{"type", "UsageError"}, {"message", e.what()}}}, {"exit_code", SpecFailure}}.dump()
                  << "\n";
        return SpecFailure;
    }

    try {
        if (compile->parsed()) {
            ca.eta_given = compile->count("--eta") > 0;
            return cmd_compile(ca);
        }
        if (validate->parsed()) {
            va.seed_given = seed_opt->count() > 0;
            return cmd_validate(va);
        }
        if (eval->parsed())
            return cmd_eval(eval_model, eval_input, eval_output, eval_json);
        if (info->parsed())
            return cmd_info(info_path, info_model, info_json);
    } catch (const std::exception& e) {
        return report_error(e);
    }
    return Failure;
}
