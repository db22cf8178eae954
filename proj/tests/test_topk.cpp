#include <gtest/gtest.h>

#include <random>
#include <set>

#include "robustify/topk.hpp"
#include "support/oracles.hpp"

using namespace robustify;

namespace {

std::set<std::size_t> as_set(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

TopKContext ctx(std::vector<double> logits, std::size_t K, std::vector<std::vector<std::size_t>> sets = {})
{
    return TopKContext{std::move(logits), K, std::move(sets)};
}

} // namespace

TEST(TopkSet, Basic)
{
    std::vector<double> l{3, 1, 2, 0.5};
    EXPECT_EQ(topk_set(l, 2), (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(topk_set(l, 1), (std::vector<std::size_t>{0}));
    EXPECT_EQ(topk_set(l, 4).size(), 4u);
    std::vector<double> tie{1, 1, 0};
    EXPECT_THROW(topk_set(tie, 1), SpecError);
    EXPECT_EQ(topk_set(tie, 2), (std::vector<std::size_t>{0, 1}));
    EXPECT_THROW(topk_set(l, 0), SpecError);
}

TEST(TopkNegation, FourAtoms)
{
    auto c = ctx({3, 1, 2, 0.5}, 2);
    Formula f = build_topk_negation(c, 2);
    Formula expected = Formula::disj({
        Formula::atom(LinearExpr::difference(0, 1), Relation::Lt),
        Formula::atom(LinearExpr::difference(2, 1), Relation::Lt),
        Formula::atom(LinearExpr::difference(0, 3), Relation::Lt),
        Formula::atom(LinearExpr::difference(2, 3), Relation::Lt),
    });
    EXPECT_EQ(f, expected);
    EXPECT_TRUE(eval_formula(f, std::vector<double>{0, 5, 0, 0}));
    EXPECT_FALSE(eval_formula(f, std::vector<double>{3, 1, 2, 0.5}));
    EXPECT_EQ(classify(f, 4).strictness, Strictness::Strict);
}

TEST(TopkNegation, ClauseCounts)
{
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    for (std::size_t m : {4u, 7u, 10u}) {
        std::vector<double> l(m);
        for (auto& v : l)
            v = n(rng);
        for (std::size_t k = 1; k < m; ++k) {
            auto c = ctx(l, k);
            EXPECT_EQ(atom_count(build_topk_negation(c, k)), (m - k) * k);
        }
    }
}

TEST(TopkNegation, SetOracle)
{
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n;
    std::size_t checked = 0;
    for (int i = 0; i < 10000; ++i) {
        const std::size_t m = i % 2 ? 4 : 10;
        const std::size_t k = 1 + rng() % 3;
        std::vector<double> l(m), lp(m);
        for (auto& v : l)
            v = n(rng);
        for (auto& v : lp)
            v = n(rng);
        const auto s = testsupport::topk_oracle(l, k);
        const auto sp = testsupport::topk_oracle(lp, k);
        if (s.empty() || sp.empty())
            continue;
        Formula f = build_topk_negation(ctx(l, k), k);
        EXPECT_EQ(eval_formula(f, lp), s != sp);
        EXPECT_EQ(as_set(topk_set(l, k)), s);
        ++checked;
    }
    EXPECT_GT(checked, 9000u);
}

TEST(TopkRelaxed, SingleRankCollapses)
{
    auto c = ctx({3, 1, 2, 0.5}, 1);
    EXPECT_EQ(build_topk_relaxed_negation(c), build_topk_negation(c, 1));
}

TEST(TopkRelaxed, TwoClauses)
{
    auto c = ctx({3, 1, 2, 0.5}, 2);
    Formula f = build_topk_relaxed_negation(c);
    ASSERT_TRUE(f.is_and());
    ASSERT_EQ(f.children().size(), 2u);
    EXPECT_EQ(atom_count(f.children()[0]), 3u);
    EXPECT_EQ(atom_count(f.children()[1]), 4u);
    EXPECT_EQ(classify(f, 4).shape, Shape::CNF);
}

TEST(TopkRelaxed, SetOracle)
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    for (int i = 0; i < 10000; ++i) {
        const std::size_t m = i % 2 ? 4 : 10;
        const std::size_t K = 1 + rng() % 3;
        std::vector<double> l(m), lp(m);
        for (auto& v : l)
            v = n(rng);
        for (auto& v : lp)
            v = n(rng);
        bool all_differ = true;
        for (std::size_t k = 1; k <= K; ++k)
            all_differ = all_differ && testsupport::topk_oracle(l, k) != testsupport::topk_oracle(lp, k);
        EXPECT_EQ(eval_formula(build_topk_relaxed_negation(ctx(l, K)), lp), all_differ);
    }
}

TEST(TopkContext, Validation)
{
    EXPECT_THROW(ctx({1, 2}, 2).validate(), SpecError);
    EXPECT_THROW(ctx({1, 2, 3}, 0).validate(), SpecError);
    EXPECT_THROW(ctx({1, 2, 3}, 1, {{0, 5}}).validate(), SpecError);
}

TEST(Affinity, Filter)
{
    std::vector<std::vector<std::size_t>> sets{{0, 8}, {4, 9}};
    std::vector<double> l(10, 0.0);
    l[0] = 5;
    l[8] = 4;
    for (std::size_t i = 0; i < 10; ++i)
        if (i != 0 && i != 8)
            l[i] = -static_cast<double>(i);
    auto one = filter_affinity_pairs(ctx(l, 1, sets));
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0], (AffinityPair{1, {0, 8}}));
    auto two = filter_affinity_pairs(ctx(l, 2, sets));
    ASSERT_EQ(two.size(), 2u);
    EXPECT_EQ(two[1], (AffinityPair{2, {0, 8}}));

    l[2] = 10;
    EXPECT_TRUE(filter_affinity_pairs(ctx(l, 1, sets)).empty());
    EXPECT_TRUE(std::holds_alternative<TriviallyViolated>(build_affinity_negation(ctx(l, 1, sets))));
}

TEST(Affinity, PairClauses)
{
    // any set holding N^2 also holds N^1, so both ranks survive the filter
    auto c = ctx({3, 1, 2, 0.5}, 2, {{0, 2}});
    auto pairs = filter_affinity_pairs(c);
    ASSERT_EQ(pairs.size(), 2u);
    auto n = build_affinity_negation(c);
    ASSERT_TRUE(std::holds_alternative<Formula>(n));
    const Formula& f = std::get<Formula>(n);
    ASSERT_TRUE(f.is_and());
    EXPECT_EQ(atom_count(f.children()[0]), 3u);
    EXPECT_EQ(atom_count(f.children()[1]), 4u);

    auto single = build_affinity_negation(ctx({3, 1, 2, 0.5}, 1, {{0, 2}}));
    EXPECT_EQ(std::get<Formula>(single), build_topk_negation(c, 1));
}

TEST(Affinity, SetOracle)
{
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n;
    const std::vector<std::vector<std::size_t>> mnist{{0, 8}, {4, 9}, {1, 9, 7}, {2}, {3}, {5}, {6}};
    std::size_t formulas = 0;
    for (int i = 0; i < 10000; ++i) {
        std::vector<double> l(10), lp(10);
        for (auto& v : l)
            v = n(rng);
        for (auto& v : lp)
            v = n(rng);
        const std::size_t K = 1 + rng() % 3;
        auto c = ctx(l, K, mnist);
        auto pairs = filter_affinity_pairs(c);
        auto neg = build_affinity_negation(c);
        if (pairs.empty()) {
            EXPECT_TRUE(std::holds_alternative<TriviallyViolated>(neg));
            continue;
        }
        ++formulas;
        bool expected = true;
        for (const auto& p : pairs)
            expected = expected && testsupport::topk_oracle(l, p.k) != testsupport::topk_oracle(lp, p.k);
        EXPECT_EQ(eval_formula(std::get<Formula>(neg), lp), expected);
    }
    EXPECT_GT(formulas, 1000u);
}
