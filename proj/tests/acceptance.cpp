// Acceptance run: one PASS/FAIL line per criterion, with timings.
// Usage: acceptance [N...]   (no arguments runs all eight)

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "robustify/robustify.hpp"
#include "support/generators.hpp"
#include "support/models.hpp"
#include "support/oracles.hpp"

using namespace robustify;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------

Outcome two_branch_reproduction()
{
    auto atom = [](LinearExpr e) { return Formula::atom(std::move(e), Relation::Le); };
    const auto y = [](std::size_t i) { return LinearExpr::variable(i); };
    const Formula f = Formula::disj({Formula::conj({atom(y(1) + y(2)), atom(y(2))}),
                                     Formula::conj({atom(LinearExpr::difference(1, 3)), atom(y(3) + LinearExpr(-2.0))})});
    const auto cc = compile(f, 4, 0.2);
    std::vector<double> atoms, ands, ors;
    for (const auto& n : cc.circuit.nodes) {
        if (n.kind == GadgetNode::Kind::Atom)
            atoms.push_back(n.base_gadget.bias());
        else
            (n.kind == GadgetNode::Kind::And ? ands : ors).push_back(n.stage_bias);
    }
    const double a = eval_circuit(cc.circuit, std::vector<double>{0, -1, -1, 0});
    const double b = eval_circuit(cc.circuit, std::vector<double>{0, 1, 1, 3});
    const bool ok = atoms == std::vector<double>{0.2, 0.2, 0.2, 2.2} && ands.size() == 2 &&
                    std::abs(ands[0] - 0.3) < 1e-15 && ands[0] == ands[1] && ors == std::vector<double>{0.4} &&
                    cc.query.assert_cmp == Comparator::Ge && cc.query.threshold == 0.2 &&
                    std::abs(a - 0.8) <= 1e-12 && std::abs(b) <= 1e-12;
    return {ok, fmt("atom biases {%g,%g,%g,%g}, and b=%.17g, or b=%g, assert Y %s %g, values %.15g / %.15g",
                    atoms.at(0), atoms.at(1), atoms.at(2), atoms.at(3), ands.at(0), ors.at(0),
                    to_string(cc.query.assert_cmp), cc.query.threshold, a, b)};
}

// ---------------------------------------------------------------------------

Outcome soundness_sweep()
{
    std::mt19937_64 rng(7001);
    std::size_t points = 0, violations = 0;
    for (int i = 0; i < 1000; ++i) {
        testsupport::FormulaShape shape;
        shape.m = 1 + rng() % 6;
        const Formula f = testsupport::random_formula(rng, shape);
        for (double eta : {1e-4, 1e-2, 0.2}) {
            SamplingOptions o;
            o.samples = 1000;
            o.seed = rng();
            o.allow_fast_path = false;
            const auto r = validate_soundness(f, eta, o);
            points += r.samples;
            violations += r.violations;
            if (!r.passed())
                std::cerr << "  soundness violation: " << to_string(f) << " eta " << eta << "\n";
        }
    }
    return {violations == 0, fmt("%zu formulas x 3 eta, %zu points, %zu violations (tol 1e-9)", std::size_t{1000},
                                 points, violations)};
}

// ---------------------------------------------------------------------------

/// Moves p by least norm so every selected atom's affine form equals its
/// target. False when the atoms' coefficient rows are dependent.
bool pin_all(std::vector<double>& p, const std::vector<const Atom*>& atoms, const std::vector<double>& target)
{
    const std::size_t k = atoms.size(), m = p.size();
    std::vector<std::vector<double>> a(k, std::vector<double>(m, 0.0));
    std::vector<std::vector<double>> g(k, std::vector<double>(k + 1, 0.0));
    for (std::size_t i = 0; i < k; ++i) {
        for (const auto& t : atoms[i]->expr.terms())
            a[i][t.var] += t.coef;
        g[i][k] = target[i] - atoms[i]->expr.evaluate<double>(p);
    }
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t d = 0; d < m; ++d)
                g[i][j] += a[i][d] * a[j][d];
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t piv = c;
        for (std::size_t i = c; i < k; ++i)
            if (std::abs(g[i][c]) > std::abs(g[piv][c]))
                piv = i;
        if (std::abs(g[piv][c]) < 1e-9)
            return false;
        std::swap(g[c], g[piv]);
        for (std::size_t i = 0; i < k; ++i)
            if (i != c) {
                const double r = g[i][c] / g[c][c];
                for (std::size_t j = c; j <= k; ++j)
                    g[i][j] -= r * g[c][j];
            }
    }
    for (std::size_t i = 0; i < k; ++i) {
        const double l = g[i][k] / g[i][i];
        for (std::size_t d = 0; d < m; ++d)
            p[d] += l * a[i][d];
    }
    return true;
}

/// Searches for an asserted point violating Q: random points with a random
/// subset of one clause's atoms pinned near their boundaries at once.
std::optional<std::vector<double>> find_tight(const Formula& f, std::size_t m, double eta, std::mt19937_64& rng,
                                              int tries = 4000)
{
    const auto cc = compile_gadget(f, m, eta);
    const Formula relaxed = substitute_margin(f, 2.0 * eta);
    std::vector<std::vector<const Atom*>> clauses;
    if (f.is_atom()) {
        clauses.push_back({&f.as_atom()});
    } else {
        for (const auto& c : f.children()) {
            std::vector<const Atom*> a;
            collect_atoms(c, a);
            clauses.push_back(std::move(a));
        }
    }
    std::uniform_real_distribution<double> frac(0.0, 1.0);
    for (int s = 0; s < tries; ++s) {
        auto p = testsupport::random_point(rng, m);
        const auto& cl = clauses[rng() % clauses.size()];
        std::vector<const Atom*> sel;
        std::vector<double> tgt;
        for (const auto* a : cl)
            if (rng() % 4) {
                sel.push_back(a);
                tgt.push_back(frac(rng) * eta * (rng() % 3 == 0 ? -1.0 : 1.0));
            }
        if (sel.empty() || !pin_all(p, sel, tgt))
            continue;
        if (cc.query.asserted(eval_circuit(cc.circuit, p)) && !eval_formula(f, p) && eval_formula(relaxed, p))
            return p;
    }
    return std::nullopt;
}

Outcome error_bound_sweep()
{
    std::mt19937_64 rng(7002);
    std::size_t points = 0, violations = 0, sweep_tight = 0, sweep_total = 0;
    double worst_need = 0.0, worst_eta = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t m = 1 + rng() % 6;
        const bool cnf = i % 2;
        const Formula f = testsupport::random_dnf(rng, m, 5, 0.5, cnf);
        for (double eta : {1e-4, 1e-2, 0.2}) {
            SamplingOptions o;
            o.samples = 1000;
            o.seed = rng();
            o.allow_fast_path = false;
            o.arity = m;
            const auto r = validate_error_bound(f, eta, o);
            points += r.samples;
            violations += r.violations;
            if (r.max_slack / eta > worst_need / std::max(worst_eta, 1e-300)) {
                worst_need = r.max_slack;
                worst_eta = eta;
            }
            if (eta == 0.2) {
                ++sweep_total;
                sweep_tight += r.tight_points > 0 || find_tight(f, m, eta, rng).has_value();
            }
        }
    }

    // planted formulas: a tight point exists by construction; the search
    // has to find one on its own
    std::size_t planted_found = 0, planted_witness_ok = 0, planted_points = 0, planted_violations = 0;
    const std::size_t planted_total = 1000;
    for (std::size_t i = 0; i < planted_total; ++i) {
        const double eta = 0.2;
        const auto pl = i % 2 ? testsupport::planted_cnf(rng, eta, rng() % 2) : testsupport::planted_dnf(rng, eta, rng() % 2);
        const std::size_t m = pl.witness.size();
        const auto cc = compile_gadget(pl.formula, m, eta);
        planted_witness_ok += cc.query.asserted(eval_circuit(cc.circuit, pl.witness)) &&
                              !eval_formula(pl.formula, pl.witness) &&
                              eval_formula(substitute_margin(pl.formula, 2.0 * eta), pl.witness);
        SamplingOptions o;
        o.samples = 1000;
        o.seed = rng();
        o.allow_fast_path = false;
        o.arity = m;
        const auto r = validate_error_bound(pl.formula, eta, o);
        planted_points += r.samples;
        planted_violations += r.violations;
        planted_found += r.tight_points > 0 || find_tight(pl.formula, m, eta, rng).has_value();
    }

    const bool ok = violations == 0 && planted_violations == 0 && planted_found == planted_total &&
                    planted_witness_ok == planted_total;
    return {ok, fmt("%zu + %zu points, %zu bound violations, worst needed margin %.3g eta; "
                    "tight witness found for %zu/%zu random and %zu/%zu planted formulas (eta 0.2)",
                    points, planted_points, violations + planted_violations, worst_need / std::max(worst_eta, 1e-300),
                    sweep_tight, sweep_total, planted_found, planted_total)};
}

// ---------------------------------------------------------------------------

Outcome fast_path_exactness()
{
    std::mt19937_64 rng(7003);
    std::uniform_int_distribution<int> coef(-3, 3), bias(-4, 4), grid(-40, 40);
    std::size_t points = 0, disagreements = 0, boundary = 0, non_fast = 0;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t m = 1 + rng() % 6;
        const std::size_t n = 1 + rng() % 5;
        const bool disj = rng() % 2;
        std::vector<Formula> atoms;
        for (std::size_t a = 0; a < n; ++a) {
            LinearExpr e(static_cast<double>(bias(rng)));
            for (std::size_t v = 0; v < m; ++v)
                if (rng() % 2)
                    if (int c = coef(rng))
                        e.add_term(v, c);
            if (e.is_constant())
                e.add_term(rng() % m, rng() % 2 ? 1.0 : -2.0);
            const Relation r = n == 1 ? (rng() % 2 ? Relation::Lt : Relation::Le) : (disj ? Relation::Lt : Relation::Le);
            atoms.push_back(Formula::atom(std::move(e), r));
        }
        const Formula f = n == 1 ? atoms[0] : flatten(disj ? Formula::disj(atoms) : Formula::conj(atoms));
        const auto cc = compile(f, m, 0.2);
        if (cc.circuit.mode != CircuitMode::FastPathExact) {
            ++non_fast;
            continue;
        }
        std::vector<const Atom*> as;
        collect_atoms(f, as);
        for (int s = 0; s < 1000; ++s) {
            std::vector<double> p(m);
            for (auto& v : p)
                v = grid(rng) / 8.0;
            if (s % 2) {
                // exact boundary: solve for a variable whose coefficient is a power of two
                const Atom& a = *as[rng() % as.size()];
                for (const auto& t : a.expr.terms())
                    if (std::abs(t.coef) == 1.0 || std::abs(t.coef) == 2.0) {
                        p[t.var] -= a.expr.evaluate<double>(p) / t.coef;
                        break;
                    }
                boundary += a.expr.evaluate<double>(p) == 0.0;
            }
            ++points;
            disagreements += cc.query.asserted(eval_circuit(cc.circuit, p)) != eval_formula(f, p);
        }
    }
    return {disagreements == 0 && non_fast == 0 && points == 1000000,
            fmt("%zu points (%zu exactly on a boundary), %zu disagreements", points, boundary, disagreements)};
}

// ---------------------------------------------------------------------------

Outcome confidence_claims()
{
    ClaimsOptions o;
    o.samples = 100000;
    o.seed = 7004;
    const auto reports = validate_confidence_claims(o);
    bool ok = true;
    std::string line;
    for (const auto& r : reports) {
        ok = ok && r.passed();
        line += fmt("%s %zu/%zu, ", r.property.c_str(), r.violations, r.samples);
    }
    const double d80 = delta_relaxed(80.0);
    const double ds = delta_strong(30.0, 10);
    const double lb = gap_lower_confidence(std::log(4.0), 10);
    ok = ok && std::abs(d80 - 1.3862944) <= 1e-6 && std::abs(ds - 1.34993) <= 1e-5 && std::abs(lb - 30.769) <= 1e-3;
    return {ok, line + fmt("delta(80)=%.9f delta_strong(30,10)=%.7f lower(ln4,10)=%.5f", d80, ds, lb)};
}

// ---------------------------------------------------------------------------

TopKContext topk_ctx(std::vector<double> l, std::size_t K, std::vector<std::vector<std::size_t>> sets = {})
{
    TopKContext c;
    c.seed_logits = std::move(l);
    c.max_rank = K;
    c.affinity_sets = std::move(sets);
    return c;
}

Outcome topk_agreement()
{
    std::mt19937_64 rng(7005);
    std::normal_distribution<double> nd;
    const std::vector<std::vector<std::size_t>> mnist{{0, 8}, {4, 9}, {1, 9, 7}, {2}, {3}, {5}, {6}};
    std::size_t pairs = 0, disagreements = 0, bad_counts = 0, affinity_formulas = 0;
    for (int i = 0; i < 10000; ++i) {
        const std::size_t m = i % 2 ? 4 : 10;
        const std::size_t K = 1 + rng() % 3;
        std::vector<double> l(m), lp(m);
        for (auto& v : l)
            v = nd(rng);
        for (auto& v : lp)
            v = nd(rng);
        std::vector<std::set<std::size_t>> s(K + 1), sp(K + 1);
        bool ties = false;
        for (std::size_t k = 1; k <= K; ++k) {
            s[k] = testsupport::topk_oracle(l, k);
            sp[k] = testsupport::topk_oracle(lp, k);
            ties = ties || s[k].empty() || sp[k].empty();
        }
        if (ties)
            continue;
        ++pairs;
        const auto ctx = topk_ctx(l, K);
        // single rank
        const Formula one = build_topk_negation(ctx, K);
        disagreements += eval_formula(one, lp) != (s[K] != sp[K]);
        bad_counts += atom_count(one) != (m - K) * K;
        // all ranks up to K
        const Formula all = build_topk_relaxed_negation(ctx);
        bool differ_all = true;
        for (std::size_t k = 1; k <= K; ++k)
            differ_all = differ_all && s[k] != sp[k];
        disagreements += eval_formula(all, lp) != differ_all;
        if (K == 1)
            bad_counts += atom_count(all) != m - 1;
        else
            for (std::size_t k = 1; k <= K; ++k)
                bad_counts += atom_count(all.children()[k - 1]) != (m - k) * k;
        // affinity filtering (ten classes)
        if (m != 10)
            continue;
        const auto c = topk_ctx(l, K, mnist);
        const auto kept = filter_affinity_pairs(c);
        const auto neg = build_affinity_negation(c);
        if (kept.empty()) {
            disagreements += !std::holds_alternative<TriviallyViolated>(neg);
            continue;
        }
        ++affinity_formulas;
        const Formula& af = std::get<Formula>(neg);
        bool expected = true;
        std::size_t atoms = 0;
        for (const auto& p : kept) {
            // oracle: N^k(x) inside S is checked independently
            bool inside = true;
            for (std::size_t j : s[p.k])
                inside = inside && std::find(p.set.begin(), p.set.end(), j) != p.set.end();
            disagreements += !inside;
            expected = expected && s[p.k] != sp[p.k];
            atoms += (m - p.k) * p.k;
        }
        disagreements += eval_formula(af, lp) != expected;
        bad_counts += atom_count(af) != atoms;
    }
    return {disagreements == 0 && bad_counts == 0 && pairs > 9000,
            fmt("%zu pairs (%zu with affinity formulas), %zu disagreements, %zu clause-count mismatches", pairs,
                affinity_formulas, disagreements, bad_counts)};
}

// ---------------------------------------------------------------------------

Outcome end_to_end()
{
    std::mt19937_64 rng(7006);
    const auto net = testsupport::random_net(rng, {784, 64, 10}, 4.0);
    const onnx::Model host = testsupport::to_model(net);
    std::vector<double> x0(784);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (auto& v : x0)
        v = u01(rng);
    json spec{{"kind", "relaxed"}, {"tau", 80}, {"seed_input", x0}, {"epsilon", 0.2}};
    const auto art = compile_property(host, parse_spec(spec));
    const Evaluator appended(art.model), original(host);
    const double eta = art.compiled.circuit.eta;
    const Formula relaxed = substitute_margin(art.formula, 2.0 * eta);

    double worst = 0.0;
    std::size_t both = 0, neither = 0, slack_band = 0, missed = 0, outside_bound = 0;
    auto check = [&](const std::vector<double>& x) {
        const auto logits = original.run(x);
        const double y = appended.run(x, art.output_name)[0];
        const double direct = eval_circuit(art.compiled.circuit, logits);
        worst = std::max(worst, std::abs(y - direct) / std::max(1.0, std::abs(direct)));
        const bool asserted = art.compiled.query.asserted(y);
        const bool q = eval_formula(art.formula, logits);
        if (asserted && q)
            ++both;
        else if (!asserted && !q)
            ++neither;
        else if (q)
            ++missed;
        else if (eval_formula(relaxed, logits))
            ++slack_band;
        else
            ++outside_bound;
        return asserted;
    };
    std::vector<std::vector<double>> yes, no;
    for (int i = 0; i < 10000; ++i) {
        std::vector<double> x(784);
        for (std::size_t j = 0; j < x.size(); ++j)
            x[j] = std::uniform_real_distribution<double>(art.box.lower[j], art.box.upper[j])(rng);
        (check(x) ? yes : no).push_back(std::move(x));
    }
    const std::size_t random_both = both, random_neither = neither;

    // bisect between the two sides to land right at the asserted edge,
    // where the slack band lives
    auto at = [&](const std::vector<double>& a, const std::vector<double>& b, double t) {
        std::vector<double> x(a.size());
        for (std::size_t j = 0; j < x.size(); ++j)
            x[j] = a[j] + t * (b[j] - a[j]);
        return x;
    };
    auto asserted_at = [&](const std::vector<double>& x) {
        return art.compiled.query.asserted(appended.run(x, art.output_name)[0]);
    };
    const std::size_t edges = std::min<std::size_t>({200, yes.size(), no.size()});
    for (std::size_t i = 0; i < edges; ++i) {
        const auto& a = yes[i];
        const auto& b = no[rng() % no.size()];
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 60; ++it) {
            const double mid = (lo + hi) / 2.0;
            (asserted_at(at(a, b, mid)) ? lo : hi) = mid;
        }
        check(at(a, b, lo));
        check(at(a, b, hi));
    }
    return {worst <= 1e-6 && missed == 0 && outside_bound == 0 && random_both > 0 && random_neither > 0,
            fmt("composition worst rel. diff %.3g; random inputs: asserted&Q %zu, neither %zu; "
                "with %zu bisected edge pairs: slack band %zu, Q not asserted %zu, beyond 2 eta %zu",
                worst, random_both, random_neither, edges, slack_band, missed, outside_bound)};
}

// ---------------------------------------------------------------------------

Outcome round_trips()
{
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(ROBUSTIFY_FIXTURE_DIR))
        if (e.path().extension() == ".vnnlib")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::size_t bad_files = 0, truth_checks = 0;
    for (const auto& file : files) {
        const auto expect = json::parse(slurp(fs::path(file).replace_extension(".expect.json")));
        const auto a = parse_vnnlib(slurp(file));
        const std::string text = emit_vnnlib(a);
        const auto b = parse_vnnlib(text);
        bool ok = b.formula == a.formula && b.box == a.box && b.num_outputs == expect["num_outputs"] &&
                  b.box.lower == expect["lower"].get<std::vector<double>>() &&
                  b.box.upper == expect["upper"].get<std::vector<double>>() && emit_vnnlib(b) == text;
        for (std::size_t i = 0; i < expect["points"].size(); ++i) {
            const auto p = expect["points"][i].get<std::vector<double>>();
            const bool t = expect["truth"][i].get<bool>();
            ok = ok && eval_formula(a.formula, p) == t && eval_formula(b.formula, p) == t;
            ++truth_checks;
        }
        if (!ok) {
            ++bad_files;
            std::cerr << "  round-trip mismatch: " << file.filename() << "\n";
        }
    }

    std::mt19937_64 rng(7008);
    std::size_t models = 0, bad_models = 0;
    auto check_model = [&](const onnx::Model& m) {
        ++models;
        const onnx::Model back = onnx::load_model(onnx::save_model(m));
        bool ok = back.graph.initializers.size() == m.graph.initializers.size();
        for (std::size_t i = 0; ok && i < m.graph.initializers.size(); ++i) {
            const auto& x = m.graph.initializers[i];
            const auto& y = back.graph.initializers[i];
            ok = x.raw_data == y.raw_data && x.dims == y.dims && x.data_type == y.data_type &&
                 std::memcmp(x.values().data(), y.values().data(), x.values().size() * sizeof(double)) == 0;
        }
        bad_models += !ok;
    };
    for (int i = 0; i < 20; ++i)
        check_model(testsupport::to_model(testsupport::random_net(rng, {1 + rng() % 20, 1 + rng() % 20, 2 + rng() % 9})));
    const fs::path sample = fs::path(ROBUSTIFY_SAMPLES_DIR) / "mnist_like.onnx";
    std::string byte_note = "sample model missing";
    if (fs::exists(sample)) {
        const std::string bytes = slurp(sample);
        const onnx::Model m = onnx::load_model(bytes);
        check_model(m);
        byte_note = onnx::save_model(m) == bytes ? "mnist_like.onnx re-saves byte-identical"
                                                 : "mnist_like.onnx re-saves with different bytes";
        check_model(onnx::load_model(onnx::save_model(m)));
    }
    const bool identical = byte_note.find("identical") != std::string::npos;
    return {files.size() == 50 && bad_files == 0 && bad_models == 0 && identical,
            fmt("%zu vnnlib files, %zu truth checks, %zu mismatches; %zu onnx models, %zu initializer mismatches; %s",
                files.size(), truth_checks, bad_files, models, bad_models, byte_note.c_str())};
}

struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double limit_seconds; // 0: no limit
};

} // namespace

int main(int argc, char** argv)
{
    const std::vector<Criterion> all{
        {"two-branch DNF reproduction", two_branch_reproduction, 1.0},
        {"soundness sweep", soundness_sweep, 120.0},
        {"2 eta error bound", error_bound_sweep, 0.0},
        {"fast path exactness", fast_path_exactness, 0.0},
        {"confidence claims", confidence_claims, 300.0},
        {"top-k equivalence", topk_agreement, 0.0},
        {"end-to-end composition", end_to_end, 120.0},
        {"format round-trips", round_trips, 0.0},
    };
    std::vector<std::size_t> pick;
    for (int i = 1; i < argc; ++i)
        pick.push_back(std::stoul(argv[i]));
    if (pick.empty())
        for (std::size_t i = 1; i <= all.size(); ++i)
            pick.push_back(i);

    int failed = 0;
    for (std::size_t n : pick) {
        const auto& c = all.at(n - 1);
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = c.limit_seconds == 0.0 || secs < c.limit_seconds;
        const bool pass = o.pass && in_time;
        failed += !pass;
        std::cout << (pass ? "PASS" : "FAIL") << " " << n << " " << c.name << " (" << fmt("%.2f", secs) << " s"
                  << (in_time ? "" : fmt(", limit %.0f s", c.limit_seconds)) << "): " << o.detail << std::endl;
    }
    return failed ? 1 : 0;
}
