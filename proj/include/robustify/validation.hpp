#pragma once

// Sampling validators. Each check is a universally quantified statement
// about the encoding or the softmax bounds; the validators draw stratified
// points, count counterexamples and keep a few witnesses.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "robustify/circuit.hpp"
#include "robustify/confidence.hpp"
#include "robustify/formula.hpp"
#include "robustify/gadget.hpp"
#include "robustify/softmax.hpp"

namespace robustify {

struct ValidationReport {
    std::string property;
    std::size_t samples = 0;
    std::size_t violations = 0;
    std::vector<std::vector<double>> witnesses;
    /// Soundness: worst amount by which an asserted-side check failed.
    /// Error bound: largest atom relaxation needed by any asserted point.
    /// Confidence checks: largest drift of a bound (in percent) after float32
    /// rounding of delta.
    double max_slack = 0.0;
    double tolerance = 0.0;
    /// Error bound only: asserted points that violate Q itself.
    std::size_t tight_points = 0;
    std::vector<std::vector<double>> tight_witnesses;
    std::string note;

    bool passed() const { return violations == 0; }

    void absorb(const ValidationReport& o, std::size_t max_witnesses = 5)
    {
        samples += o.samples;
        violations += o.violations;
        max_slack = std::max(max_slack, o.max_slack);
        tight_points += o.tight_points;
        for (const auto& w : o.witnesses)
            if (witnesses.size() < max_witnesses)
                witnesses.push_back(w);
        for (const auto& w : o.tight_witnesses)
            if (tight_witnesses.size() < max_witnesses)
                tight_witnesses.push_back(w);
    }
};

struct SamplingOptions {
    std::size_t samples = 10000;
    std::uint64_t seed = 0;
    double lo = -10.0;
    double hi = 10.0;
    double tolerance = 1e-9;
    /// 0 infers the arity from the formula.
    std::size_t arity = 0;
    std::size_t max_witnesses = 5;
    /// Compile through `compile` (fast path where it applies) or always
    /// through the gadget.
    bool allow_fast_path = true;
    GadgetOptions gadget{};
};

namespace detail {

/// Uniform points, points pushed onto atom boundaries at offsets
/// {0, +-eta/2, +-eta, +-2eta}, and lattice points on an eta/2 grid.
class StratifiedSampler {
public:
    StratifiedSampler(const Formula& f, std::size_t m, double eta, const SamplingOptions& o)
        : m_(m), eta_(eta), opt_(o), rng_(o.seed)
    {
        collect_atoms(f, atoms_);
    }

    std::vector<double> next()
    {
        std::vector<double> p(m_);
        std::uniform_real_distribution<double> u(opt_.lo, opt_.hi);
        for (auto& v : p)
            v = u(rng_);
        const auto mode = rng_() % 10;
        if (mode < 4 || atoms_.empty())
            return p;
        if (mode < 8) {
            const std::size_t passes = 1 + rng_() % 2;
            for (std::size_t k = 0; k < passes; ++k)
                project(p, *atoms_[rng_() % atoms_.size()]);
            return p;
        }
        std::uniform_int_distribution<int> grid(-8, 8);
        for (auto& v : p)
            v = (rng_() % 2) ? grid(rng_) * eta_ / 2.0 : static_cast<double>(grid(rng_) / 3);
        return p;
    }

private:
    void project(std::vector<double>& p, const Atom& a)
    {
        static constexpr std::array<double, 7> offsets{0.0, 0.5, -0.5, 1.0, -1.0, 2.0, -2.0};
        const double d = offsets[rng_() % offsets.size()] * eta_;
        double norm2 = 0.0;
        for (const auto& t : a.expr.terms())
            norm2 += t.coef * t.coef;
        if (norm2 == 0.0)
            return;
        const double step = (d - a.expr.evaluate<double>(p)) / norm2;
        for (const auto& t : a.expr.terms())
            p[t.var] += step * t.coef;
    }

    std::size_t m_;
    double eta_;
    SamplingOptions opt_;
    std::mt19937_64 rng_;
    std::vector<const Atom*> atoms_;
};

inline CompiledCircuit compile_for_validation(const Formula& f, std::size_t m, double eta, const SamplingOptions& o)
{
    if (o.allow_fast_path && o.gadget.stage_bias == &b_value)
        return compile(f, m, eta);
    if (f.is_constant())
        return compile(f, m, eta);
    return compile_gadget(f, m, eta, o.gadget);
}

inline std::size_t arity_for(const Formula& f, const SamplingOptions& o)
{
    const std::size_t need = std::max<std::size_t>(min_arity(f), 1);
    if (o.arity && o.arity < need)
        throw FormulaError("sampling arity is smaller than the formula's");
    return o.arity ? o.arity : need;
}

/// Signed distance of y past the threshold on the asserted side (>= 0 when
/// asserted).
inline double asserted_margin(const QuerySpec& q, double y)
{
    return (q.assert_cmp == Comparator::Ge || q.assert_cmp == Comparator::Gt) ? y - q.threshold : q.threshold - y;
}

} // namespace detail

/// Smallest mu >= 0 such that every atom relaxed by mu (LE <= mu) makes
/// the formula hold at `p`; infinity for False.
inline double needed_margin(const Formula& f, std::span<const double> p)
{
    switch (f.kind()) {
    case Formula::Kind::True: return 0.0;
    case Formula::Kind::False: return std::numeric_limits<double>::infinity();
    case Formula::Kind::Atom: return std::max(0.0, f.as_atom().expr.evaluate<double>(p));
    case Formula::Kind::And: {
        double v = 0.0;
        for (const auto& c : f.children())
            v = std::max(v, needed_margin(c, p));
        return v;
    }
    case Formula::Kind::Or: {
        double v = std::numeric_limits<double>::infinity();
        for (const auto& c : f.children())
            v = std::min(v, needed_margin(c, p));
        return v;
    }
    }
    return 0.0;
}

/// Q(y) implies the circuit output lies on the asserted side of eta.
inline ValidationReport validate_soundness(const Formula& f, double eta, const SamplingOptions& o = {})
{
    const std::size_t m = detail::arity_for(f, o);
    const auto cc = detail::compile_for_validation(f, m, eta, o);
    ValidationReport r;
    r.property = "soundness";
    r.tolerance = o.tolerance;
    detail::StratifiedSampler s(f, m, eta, o);
    for (std::size_t i = 0; i < o.samples; ++i) {
        const auto p = s.next();
        ++r.samples;
        if (!eval_formula(f, p))
            continue;
        const double y = eval_circuit(cc.circuit, p);
        const double margin = detail::asserted_margin(cc.query, y);
        const bool strict = cc.query.assert_cmp == Comparator::Gt || cc.query.assert_cmp == Comparator::Lt;
        const bool ok = strict ? margin > -o.tolerance : margin >= -o.tolerance;
        if (!ok) {
            ++r.violations;
            r.max_slack = std::max(r.max_slack, -margin);
            if (r.witnesses.size() < o.max_witnesses)
                r.witnesses.push_back(p);
        }
    }
    return r;
}

/// Every point the circuit places on the asserted side satisfies Q[2 eta].
/// Also counts asserted points violating Q: the slack is really used there.
inline ValidationReport validate_error_bound(const Formula& f, double eta, const SamplingOptions& o = {})
{
    const std::size_t m = detail::arity_for(f, o);
    const auto cls = classify(f, m);
    if (cls.shape == Shape::General)
        throw FormulaError("the 2 eta error bound is established for DNF and CNF formulas only");
    const auto cc = detail::compile_for_validation(f, m, eta, o);
    const Formula relaxed = substitute_margin(f, 2.0 * eta + o.tolerance);
    ValidationReport r;
    r.property = "error-bound";
    r.tolerance = o.tolerance;
    detail::StratifiedSampler s(f, m, eta, o);
    for (std::size_t i = 0; i < o.samples; ++i) {
        const auto p = s.next();
        ++r.samples;
        const double y = eval_circuit(cc.circuit, p);
        if (!cc.query.asserted(y))
            continue;
        const double need = needed_margin(f, p);
        r.max_slack = std::max(r.max_slack, need);
        if (!eval_formula(relaxed, p)) {
            ++r.violations;
            if (r.witnesses.size() < o.max_witnesses)
                r.witnesses.push_back(p);
        } else if (!eval_formula(f, p)) {
            ++r.tight_points;
            if (r.tight_witnesses.size() < o.max_witnesses)
                r.tight_witnesses.push_back(p);
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Softmax claims
// ---------------------------------------------------------------------------

struct ClaimsOptions {
    std::vector<std::size_t> classes{2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::vector<double> relaxed_taus{50, 60, 80, 90, 95, 99};
    /// Strong thresholds as fractions of the way from 100/m to 100.
    std::vector<double> strong_fractions{0.0, 0.1, 0.3, 0.5, 0.8, 0.95};
    /// (C, tau) pairs for smoothness; pairs out of range for a given m are skipped.
    std::vector<std::pair<double, double>> smooth_pairs{{50, 10}, {60, 25}, {51, 40}, {90, 5}, {30, 20}, {70, 25}};
    std::size_t samples = 100000; // per cell
    std::uint64_t seed = 0;
    double tolerance = 1e-9;
    std::size_t max_witnesses = 5;
    bool float32_recheck = true;
};

namespace detail {

/// Logits with a prescribed gap y_t - max_{i != t} y_i.
class GapSampler {
public:
    explicit GapSampler(std::uint64_t seed) : rng_(seed) {}

    std::vector<double> logits(std::size_t m, std::size_t t, double gap)
    {
        std::uniform_real_distribution<double> u(-10.0, 10.0);
        std::vector<double> y(m);
        const auto mode = rng_() % 4;
        const double top = u(rng_);
        for (std::size_t i = 0; i < m; ++i) {
            if (mode == 0)
                y[i] = top; // all competitors tied: tight for the m-class bounds
            else if (mode == 1)
                y[i] = top - 30.0 - u(rng_); // one competitor dominates: tight for the 2-class bounds
            else
                y[i] = std::min(top, u(rng_));
        }
        std::size_t tp = (t + 1 + rng_() % (m - 1)) % m;
        y[tp] = top;
        y[t] = top + gap;
        return y;
    }

    /// Gap near `edge`: exactly on it, just around it, or spread out.
    double gap_near(double edge)
    {
        static constexpr std::array<double, 5> tiny{0.0, 1e-12, -1e-12, 1e-6, -1e-6};
        const auto mode = rng_() % 3;
        if (mode == 0)
            return edge + tiny[rng_() % tiny.size()];
        if (mode == 1)
            return edge + std::uniform_real_distribution<double>(-0.5, 0.5)(rng_);
        return edge + std::uniform_real_distribution<double>(-8.0, 8.0)(rng_);
    }

    std::size_t index(std::size_t m) { return rng_() % m; }

private:
    std::mt19937_64 rng_;
};

inline double best_other(const std::vector<double>& y, std::size_t t)
{
    double b = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < y.size(); ++i)
        if (i != t)
            b = std::max(b, y[i]);
    return b;
}

inline void record(ValidationReport& r, bool ok, const std::vector<double>& y, std::size_t max_witnesses)
{
    ++r.samples;
    if (ok)
        return;
    ++r.violations;
    if (r.witnesses.size() < max_witnesses)
        r.witnesses.push_back(y);
}

inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

} // namespace detail

/// Relaxed claims with margin `delta` for threshold tau: a seed-class max
/// with gap below delta has confidence below 100/(1+e^-delta) (= tau), and
/// a gap of at least delta guarantees the m-class floor.
inline void check_relaxed_cell(ValidationReport& c1, ValidationReport& c2, std::size_t m, double delta,
                               std::size_t n, detail::GapSampler& g, const ClaimsOptions& o)
{
    const double tau = gap_upper_confidence(delta);
    const double floor = gap_lower_confidence(delta, m);
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t t = g.index(m);
        double gap = g.gap_near(delta);
        if (gap < 0.0)
            gap = -gap; // t stays the argmax
        const auto y = g.logits(m, t, gap);
        const double conf = confidence(y, t);
        const double real_gap = y[t] - detail::best_other(y, t);
        if (real_gap < delta)
            detail::record(c1, conf < tau + o.tolerance, y, o.max_witnesses);
        else
            detail::record(c2, conf >= floor - o.tolerance, y, o.max_witnesses);
    }
}

inline void check_strong_cell(ValidationReport& c3, std::size_t m, double delta, std::size_t n, detail::GapSampler& g,
                              const ClaimsOptions& o)
{
    const double tau2 = gap_lower_confidence(delta, m);
    const double ceiling = gap_upper_confidence(delta);
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t t = g.index(m);
        const auto y = g.logits(m, t, g.gap_near(delta));
        const double conf = confidence(y, t);
        const double gap = y[t] - detail::best_other(y, t);
        if (gap > delta)
            detail::record(c3, conf > tau2 - o.tolerance && argmax(y) == t, y, o.max_witnesses);
        else
            detail::record(c3, conf <= ceiling + o.tolerance, y, o.max_witnesses);
    }
}

inline void check_smooth_cell(ValidationReport& c4, std::size_t m, double d1, double d2, std::size_t n,
                              detail::GapSampler& g, const ClaimsOptions& o)
{
    const double upper = gap_upper_confidence(d1);    // C + tau
    const double lower = gap_lower_confidence(d2, m); // C - tau
    const double hi_floor = gap_lower_confidence(d1, m);
    const double lo_ceiling = gap_upper_confidence(d2);
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t t = g.index(m);
        const auto y = g.logits(m, t, g.gap_near(s % 2 == 0 ? d1 : d2));
        const double conf = confidence(y, t);
        const double gap = y[t] - detail::best_other(y, t);
        bool ok;
        if (gap < d1 && gap > d2)
            ok = conf < upper + o.tolerance && conf > lower - o.tolerance;
        else
            ok = (gap >= d1 && conf >= hi_floor - o.tolerance) || (gap <= d2 && conf <= lo_ceiling + o.tolerance);
        detail::record(c4, ok, y, o.max_witnesses);
    }
}

/// Confidence guarantees over the class/threshold grid, one report per builder plus the
/// float32 re-check (the deltas as stored in the appended network).
inline std::vector<ValidationReport> validate_confidence_claims(const ClaimsOptions& o = {})
{
    ValidationReport c1, c2, c3, c4, f32;
    c1.property = "relaxed-upper";
    c2.property = "relaxed-floor";
    c3.property = "strong";
    c4.property = "smooth";
    f32.property = "float32-recheck";
    for (auto* r : {&c1, &c2, &c3, &c4, &f32})
        r->tolerance = o.tolerance;
    detail::GapSampler g(o.seed);

    auto drift = [&](double exact, double rounded) { f32.max_slack = std::max(f32.max_slack, std::abs(exact - rounded)); };
    // the float32 tolerance is on probabilities; bounds here are percentages
    const double drift_limit = 1e-6 * 100.0;

    for (std::size_t m : o.classes) {
        for (double tau : o.relaxed_taus) {
            const double d = delta_relaxed(tau);
            check_relaxed_cell(c1, c2, m, d, o.samples, g, o);
            if (o.float32_recheck) {
                const double df = detail::to_f32(d);
                drift(gap_upper_confidence(d), gap_upper_confidence(df));
                drift(gap_lower_confidence(d, m), gap_lower_confidence(df, m));
                ValidationReport a, b;
                check_relaxed_cell(a, b, m, df, o.samples / 10 + 1, g, o);
                f32.absorb(a, o.max_witnesses);
                f32.absorb(b, o.max_witnesses);
            }
        }
        for (double frac : o.strong_fractions) {
            const double lo = 100.0 / static_cast<double>(m);
            const double tau2 = lo + frac * (100.0 - lo);
            if (tau2 >= 100.0)
                continue;
            const double d = delta_strong(tau2, m);
            check_strong_cell(c3, m, d, o.samples, g, o);
            if (o.float32_recheck) {
                const double df = detail::to_f32(d);
                drift(gap_lower_confidence(d, m), gap_lower_confidence(df, m));
                drift(gap_upper_confidence(d), gap_upper_confidence(df));
                ValidationReport a;
                check_strong_cell(a, m, df, o.samples / 10 + 1, g, o);
                f32.absorb(a, o.max_witnesses);
            }
        }
        for (const auto& [C, tau] : o.smooth_pairs) {
            if (!(C - tau > 0.0) || !(C + tau < 100.0))
                continue;
            const auto sd = deltas_smooth(C, tau, m);
            check_smooth_cell(c4, m, sd.delta1, sd.delta2, o.samples, g, o);
            if (o.float32_recheck) {
                const double d1 = detail::to_f32(sd.delta1), d2 = detail::to_f32(sd.delta2);
                drift(gap_upper_confidence(sd.delta1), gap_upper_confidence(d1));
                drift(gap_lower_confidence(sd.delta2, m), gap_lower_confidence(d2, m));
                ValidationReport a;
                check_smooth_cell(a, m, d1, d2, o.samples / 10 + 1, g, o);
                f32.absorb(a, o.max_witnesses);
            }
        }
    }
    if (f32.max_slack > drift_limit) {
        ++f32.violations;
        f32.note = "bound drift after float32 rounding exceeds 1e-6 in probability";
    }
    return {c1, c2, c3, c4, f32};
}

} // namespace robustify
