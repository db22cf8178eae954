#pragma once

// Softmax-confidence robustness variants reduced to logit-margin formulas.
//
// Every threshold is a percentage in (0, 100), matching the factor 100 in the
// confidence definition. A margin delta on the gap between the seed-class
// logit and the best competing logit stands in for each confidence threshold:
//
//   relaxed   delta  = -ln(100/tau - 1)
//   strong    delta  = -ln((100/tau2 - 1) / (m - 1))
//   smooth    delta1 = -ln(100/(C + tau) - 1)
//             delta2 = -ln((100/(C - tau) - 1) / (m - 1))
//
// The builders return the *negated* post-condition, i.e. the formula a
// verifier searches a satisfying input for.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "robustify/error.hpp"
#include "robustify/formula.hpp"
#include "robustify/softmax.hpp"

namespace robustify {

enum class ConfidenceVariant { Relaxed, Strong, Smooth };

inline const char* to_string(ConfidenceVariant v)
{
    switch (v) {
    case ConfidenceVariant::Relaxed: return "relaxed";
    case ConfidenceVariant::Strong: return "strong";
    case ConfidenceVariant::Smooth: return "smooth";
    }
    return "?";
}

/// Seed image summary: class count, seed class and its confidence.
struct SeedContext {
    std::size_t m = 0;
    std::size_t seed_class = 0;
    double seed_confidence = 0.0;
    std::optional<std::vector<double>> seed_logits;

    static SeedContext from_logits(std::vector<double> logits)
    {
        if (logits.size() < 2)
            throw SpecError("seed logits need at least two classes");
        SeedContext s;
        s.m = logits.size();
        s.seed_class = argmax(logits);
        s.seed_confidence = confidence(logits, s.seed_class);
        s.seed_logits = std::move(logits);
        return s;
    }

    void validate() const
    {
        if (m < 2)
            throw SpecError("at least two classes are required");
        if (seed_class >= m)
            throw SpecError("seed class " + std::to_string(seed_class) + " out of range");
        if (!(seed_confidence > 0.0 && seed_confidence <= 100.0))
            throw SpecError("seed confidence must lie in (0, 100]");
        if (seed_logits) {
            if (seed_logits->size() != m)
                throw SpecError("seed logits length differs from the class count");
            if (argmax(*seed_logits) != seed_class)
                throw SpecError("seed class is not the argmax of the seed logits");
            if (std::abs(confidence(*seed_logits, seed_class) - seed_confidence) > 1e-9)
                throw SpecError("seed confidence disagrees with the seed logits");
        }
    }
};

/// Guarantees attached to a confidence-aware query.
///
/// relaxed: no misclassified input with confidence above
///   `guaranteed_safe_threshold` if the query holds; otherwise a counterexample
///   with confidence >= `counterexample_floor`.
/// strong: all inputs keep the seed class with confidence above
///   `guaranteed_safe_threshold`; otherwise an input is misclassified or has
///   confidence <= `counterexample_ceiling`.
/// smooth: confidence stays inside `safe_interval`; otherwise it is above
///   `counterexample_bounds.first` or below `counterexample_bounds.second`.
struct ConfidenceBounds {
    ConfidenceVariant variant = ConfidenceVariant::Relaxed;
    std::size_t m = 0;
    std::vector<double> deltas;
    double guaranteed_safe_threshold = 0.0;
    std::optional<double> counterexample_floor;
    std::optional<double> counterexample_ceiling;
    std::optional<std::pair<double, double>> counterexample_bounds;
    std::optional<std::pair<double, double>> safe_interval;
};

/// 100 / (1 + e^{-delta}): sigmoid of the gap, in percent.
inline double gap_upper_confidence(double delta) { return 100.0 / (1.0 + std::exp(-delta)); }

/// 100 / (1 + (m-1) e^{-delta}): confidence floor once the gap reaches delta.
inline double gap_lower_confidence(double delta, std::size_t m)
{
    return 100.0 / (1.0 + static_cast<double>(m - 1) * std::exp(-delta));
}

inline void require_classes(std::size_t m)
{
    if (m < 2)
        throw SpecError("at least two classes are required, got " + std::to_string(m));
}

inline void require_class(std::size_t m, std::size_t t)
{
    require_classes(m);
    if (t >= m)
        throw SpecError("class " + std::to_string(t) + " out of range for " + std::to_string(m) +
                        " classes");
}

// ---------------------------------------------------------------------------
// Relaxed robustness
// ---------------------------------------------------------------------------

inline double delta_relaxed(double tau)
{
    if (!(tau >= 50.0 && tau < 100.0))
        throw SpecError("relaxed robustness requires 50 <= tau < 100 (the margin "
                        "approximation is only valid for tau >= 50), got " +
                        std::to_string(tau));
    return -std::log(100.0 / tau - 1.0);
}

inline ConfidenceBounds relaxed_bounds(double delta, std::size_t m)
{
    require_classes(m);
    if (!(delta >= 0.0))
        throw SpecError("relaxed margin must be non-negative");
    ConfidenceBounds b;
    b.variant = ConfidenceVariant::Relaxed;
    b.m = m;
    b.deltas = {delta};
    b.guaranteed_safe_threshold = gap_upper_confidence(delta);
    b.counterexample_floor = gap_lower_confidence(delta, m);
    return b;
}

/// OR over i != t* of AND over j != i of (y_j - y_i + delta <= 0).
inline Formula build_relaxed_negation(std::size_t m, std::size_t seed_class, double delta)
{
    require_class(m, seed_class);
    std::vector<Formula> disjuncts;
    for (std::size_t i = 0; i < m; ++i) {
        if (i == seed_class)
            continue;
        std::vector<Formula> conjuncts;
        for (std::size_t j = 0; j < m; ++j)
            if (j != i)
                conjuncts.push_back(Formula::atom(LinearExpr::difference(j, i, delta), Relation::Le));
        disjuncts.push_back(Formula::conj(std::move(conjuncts)));
    }
    return flatten(Formula::disj(std::move(disjuncts)));
}

// ---------------------------------------------------------------------------
// Strong robustness
// ---------------------------------------------------------------------------

inline double delta_strong(double tau2, std::size_t m)
{
    require_classes(m);
    if (!(tau2 < 100.0) || !(tau2 >= 100.0 / static_cast<double>(m)))
        throw SpecError("strong robustness requires 100/m <= tau2 < 100 so that delta >= 0, got " +
                        std::to_string(tau2));
    const double d = -std::log((100.0 / tau2 - 1.0) / static_cast<double>(m - 1));
    return d < 0.0 ? 0.0 : d;
}

inline ConfidenceBounds strong_bounds(double delta, std::size_t m)
{
    require_classes(m);
    if (!(delta >= 0.0))
        throw SpecError("strong margin must be non-negative");
    ConfidenceBounds b;
    b.variant = ConfidenceVariant::Strong;
    b.m = m;
    b.deltas = {delta};
    b.guaranteed_safe_threshold = gap_lower_confidence(delta, m);
    b.counterexample_ceiling = gap_upper_confidence(delta);
    return b;
}

/// OR over i != t of (y_t - y_i - delta <= 0).
inline Formula build_strong_negation(std::size_t m, std::size_t seed_class, double delta)
{
    require_class(m, seed_class);
    std::vector<Formula> atoms;
    for (std::size_t i = 0; i < m; ++i)
        if (i != seed_class)
            atoms.push_back(Formula::atom(LinearExpr::difference(seed_class, i, -delta), Relation::Le));
    return flatten(Formula::disj(std::move(atoms)));
}

// ---------------------------------------------------------------------------
// Smoothness
// ---------------------------------------------------------------------------

struct SmoothDeltas {
    double delta1 = 0.0;
    double delta2 = 0.0;
    /// delta2 < delta1: the approximated safe band is non-empty.
    bool feasible = false;
};

inline SmoothDeltas deltas_smooth(double seed_confidence, double tau, std::size_t m)
{
    require_classes(m);
    if (!(tau > 0.0))
        throw SpecError("smoothness threshold must be positive");
    if (!(seed_confidence - tau > 0.0))
        throw SpecError("smoothness requires C - tau > 0");
    if (!(seed_confidence + tau < 100.0))
        throw SpecError("smoothness requires C + tau < 100");
    SmoothDeltas d;
    d.delta1 = -std::log(100.0 / (seed_confidence + tau) - 1.0);
    d.delta2 = -std::log((100.0 / (seed_confidence - tau) - 1.0) / static_cast<double>(m - 1));
    d.feasible = d.delta2 < d.delta1;
    return d;
}

/// (AND over i != t of y_i - y_t + delta1 <= 0) OR (OR over i != t of
/// y_t - y_i - delta2 <= 0), flattened.
inline Formula build_smooth_negation(std::size_t m, std::size_t seed_class, double delta1,
                                     double delta2)
{
    require_class(m, seed_class);
    std::vector<Formula> upper;
    std::vector<Formula> top;
    for (std::size_t i = 0; i < m; ++i)
        if (i != seed_class)
            upper.push_back(Formula::atom(LinearExpr::difference(i, seed_class, delta1), Relation::Le));
    top.push_back(Formula::conj(std::move(upper)));
    for (std::size_t i = 0; i < m; ++i)
        if (i != seed_class)
            top.push_back(Formula::atom(LinearExpr::difference(seed_class, i, -delta2), Relation::Le));
    return flatten(Formula::disj(std::move(top)));
}

inline ConfidenceBounds smooth_bounds(double delta1, double delta2, std::size_t m)
{
    require_classes(m);
    ConfidenceBounds b;
    b.variant = ConfidenceVariant::Smooth;
    b.m = m;
    b.deltas = {delta1, delta2};
    b.safe_interval = std::make_pair(gap_lower_confidence(delta2, m), gap_upper_confidence(delta1));
    b.guaranteed_safe_threshold = b.safe_interval->second;
    b.counterexample_bounds = std::make_pair(gap_lower_confidence(delta1, m), gap_upper_confidence(delta2));
    return b;
}

} // namespace robustify
