#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "robustify/error.hpp"
#include "robustify/formula.hpp"

namespace robustify {

/// Seed logits, the largest rank K considered, and optional affinity sets.
struct TopKContext {
    std::vector<double> seed_logits;
    std::size_t max_rank = 1;
    std::vector<std::vector<std::size_t>> affinity_sets;

    std::size_t m() const { return seed_logits.size(); }

    void validate() const
    {
        if (m() < 2)
            throw SpecError("top-k properties need at least two classes");
        if (max_rank < 1 || max_rank >= m())
            throw SpecError("top-k rank K must satisfy 1 <= K < m");
        for (const auto& s : affinity_sets)
            for (std::size_t c : s)
                if (c >= m())
                    throw SpecError("affinity set references class " + std::to_string(c) +
                                    " outside 0.." + std::to_string(m() - 1));
    }
};

/// Indices of the k largest logits, ascending. Rejects a tie between the
/// k-th and (k+1)-th largest values.
inline std::vector<std::size_t> topk_set(std::span<const double> logits, std::size_t k)
{
    const std::size_t m = logits.size();
    if (k < 1 || k > m)
        throw SpecError("top-k rank " + std::to_string(k) + " outside 1.." + std::to_string(m));
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    if (k < m && !(logits[order[k - 1]] > logits[order[k]]))
        throw SpecError("tie between rank " + std::to_string(k) + " and rank " +
                        std::to_string(k + 1) + " logits; the top-" + std::to_string(k) +
                        " set is not well defined");
    std::vector<std::size_t> top(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(top.begin(), top.end());
    return top;
}

/// OR over i outside N^k, j inside N^k of (y_j - y_i < 0), i.e. y_i > y_j.
/// (m - k) * k strict atoms.
inline Formula build_topk_negation(const TopKContext& ctx, std::size_t k)
{
    ctx.validate();
    const auto top = topk_set(ctx.seed_logits, k);
    std::vector<bool> inside(ctx.m(), false);
    for (std::size_t j : top)
        inside[j] = true;
    std::vector<Formula> atoms;
    atoms.reserve((ctx.m() - k) * k);
    for (std::size_t i = 0; i < ctx.m(); ++i) {
        if (inside[i])
            continue;
        for (std::size_t j : top)
            atoms.push_back(Formula::atom(LinearExpr::difference(j, i), Relation::Lt));
    }
    return flatten(Formula::disj(std::move(atoms)));
}

/// AND over k = 1..K of the top-k clause.
inline Formula build_topk_relaxed_negation(const TopKContext& ctx)
{
    ctx.validate();
    std::vector<Formula> clauses;
    for (std::size_t k = 1; k <= ctx.max_rank; ++k)
        clauses.push_back(build_topk_negation(ctx, k));
    return flatten(Formula::conj(std::move(clauses)));
}

struct AffinityPair {
    std::size_t k = 0;
    std::vector<std::size_t> set;

    bool operator==(const AffinityPair&) const = default;
};

/// Pairs <k, S> with N^k(x) a subset of S, in rank order then set order.
inline std::vector<AffinityPair> filter_affinity_pairs(const TopKContext& ctx)
{
    ctx.validate();
    std::vector<AffinityPair> out;
    for (std::size_t k = 1; k <= ctx.max_rank; ++k) {
        const auto top = topk_set(ctx.seed_logits, k);
        for (const auto& s : ctx.affinity_sets) {
            std::vector<std::size_t> sorted = s;
            std::sort(sorted.begin(), sorted.end());
            sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
            if (std::includes(sorted.begin(), sorted.end(), top.begin(), top.end()))
                out.push_back(AffinityPair{k, std::move(sorted)});
        }
    }
    return out;
}

/// No <k, S> pair survives filtering: the negated post-condition is
/// vacuously true and the property is violated at the seed itself.
struct TriviallyViolated {
    bool operator==(const TriviallyViolated&) const = default;
};

using AffinityNegation = std::variant<Formula, TriviallyViolated>;

inline AffinityNegation build_affinity_negation(const TopKContext& ctx)
{
    const auto pairs = filter_affinity_pairs(ctx);
    if (pairs.empty())
        return TriviallyViolated{};
    std::vector<Formula> clauses;
    clauses.reserve(pairs.size());
    for (const auto& p : pairs)
        clauses.push_back(build_topk_negation(ctx, p.k));
    return flatten(Formula::conj(std::move(clauses)));
}

} // namespace robustify
