#include <gtest/gtest.h>

#include "isd/rng.hpp"
#include "isd/stats.hpp"
#include "support/oracles.hpp"

using namespace isd;
using stats::Alternative;
using stats::Method;

namespace {

std::vector<double> draws(Rng& r, std::size_t n, double shift, bool rounded = false) {
    std::vector<double> v(n);
    for (auto& x : v) {
        x = r.normal() + shift;
        if (rounded) x = std::round(x * 2.0) / 2.0;
    }
    return v;
}

}  // namespace

TEST(PairedT, MatchesIntegratedDensity) {
    Rng r(1);
    for (int rep = 0; rep < 10; ++rep) {
        const std::size_t n = 3 + rep;
        const auto a = draws(r, n, 0.4), b = draws(r, n, 0.0);
        const auto t = stats::paired_t(a, b);
        EXPECT_NEAR(t.statistic, oracle::paired_t_statistic(a, b), 1e-9);
        EXPECT_EQ(t.df, static_cast<double>(n - 1));
        EXPECT_NEAR(t.p, oracle::t_two_sided_p(t.statistic, t.df), 1e-9);
        const auto g = stats::paired_t(a, b, Alternative::Greater);
        const auto l = stats::paired_t(a, b, Alternative::Less);
        EXPECT_NEAR(g.p + l.p, 1.0, 1e-12);
    }
}

TEST(PairedT, TableValueIsBelowOneInAThousand) {
    EXPECT_LT(stats::t_two_sided_p(9.59, 16), 0.001);
    EXPECT_NEAR(stats::t_two_sided_p(2.119905, 16), 0.05, 1e-6);
}

TEST(PairedT, DegenerateAndInvalidInputs) {
    const auto same = stats::paired_t({1, 2, 3}, {1, 2, 3});
    EXPECT_TRUE(same.degenerate);
    EXPECT_EQ(same.p, 1.0);
    const auto shifted = stats::paired_t({2, 3, 4}, {1, 2, 3}, Alternative::Greater);
    EXPECT_TRUE(shifted.degenerate);
    EXPECT_EQ(shifted.p, 0.0);
    EXPECT_THROW(stats::paired_t({1}, {2}), std::invalid_argument);
    EXPECT_THROW(stats::paired_t({1, 2}, {2}), std::invalid_argument);
}

TEST(SignedRank, ExactMatchesEnumeration) {
    Rng r(2);
    for (std::size_t n = 1; n <= 12; ++n) {
        for (bool ties : {false, true}) {
            const auto x = draws(r, n, 0.3, ties), y = draws(r, n, 0.0, ties);
            const auto brute = oracle::signed_rank_enumeration(x, y);
            const auto g = stats::wilcoxon_signed_rank(x, y, Alternative::Greater);
            if (g.degenerate) continue;
            EXPECT_TRUE(g.exact);
            EXPECT_NEAR(g.p, brute.greater, 1e-9) << "n=" << n;
            EXPECT_NEAR(stats::wilcoxon_signed_rank(x, y, Alternative::Less).p, brute.less, 1e-9);
            EXPECT_NEAR(stats::wilcoxon_signed_rank(x, y, Alternative::TwoSided).p,
                        std::min(1.0, 2.0 * std::min(brute.greater, brute.less)), 1e-9);
        }
    }
}

TEST(SignedRank, StatisticIsPositiveRankSum) {
    const auto w = stats::wilcoxon_signed_rank({5, 1, 3, 7}, {1, 2, 3, 4}, Alternative::Greater);
    // differences 4, -1, (0 dropped), 3 -> ranks 3, 1, 2
    EXPECT_DOUBLE_EQ(w.statistic, 5.0);
    EXPECT_NEAR(w.p, 2.0 / 8.0, 1e-12);
}

TEST(SignedRank, NormalApproximationTracksExact) {
    Rng r(3);
    const auto x = draws(r, 12, 0.5), y = draws(r, 12, 0.0);
    const auto e = stats::wilcoxon_signed_rank(x, y, Alternative::Greater, Method::Exact);
    const auto a = stats::wilcoxon_signed_rank(x, y, Alternative::Greater, Method::Normal);
    EXPECT_FALSE(a.exact);
    EXPECT_NEAR(a.p, e.p, 0.02);
}

TEST(RankSum, ExactMatchesEnumeration) {
    Rng r(4);
    for (int rep = 0; rep < 8; ++rep) {
        const bool ties = rep % 2;
        const auto a = draws(r, 5, 0.5, ties), b = draws(r, 5, 0.0, ties);
        const auto brute = oracle::ranksum_enumeration(a, b);
        const auto g = stats::ranksum(a, b, Alternative::Greater, Method::Exact);
        EXPECT_TRUE(g.exact);
        EXPECT_NEAR(g.p, brute.greater, 1e-9);
        EXPECT_NEAR(stats::ranksum(a, b, Alternative::Less, Method::Exact).p, brute.less, 1e-9);
    }
}

TEST(RankSum, UStatisticAndKnownValue) {
    const auto r = stats::ranksum({6, 7, 8, 9, 10}, {1, 2, 3, 4, 5}, Alternative::Greater, Method::Exact);
    EXPECT_DOUBLE_EQ(r.statistic, 25.0);
    EXPECT_NEAR(r.p, 1.0 / 252.0, 1e-15);
}

TEST(RankSum, NormalApproximationTracksExact) {
    Rng r(5);
    const auto a = draws(r, 10, 0.7), b = draws(r, 10, 0.0);
    const auto e = stats::ranksum(a, b, Alternative::Greater, Method::Exact);
    const auto n = stats::ranksum(a, b, Alternative::Greater, Method::Normal);
    EXPECT_NEAR(n.p, e.p, 0.01);
}

TEST(Ranks, AverageRanksShareTies) {
    const auto r = stats::average_ranks({3.0, 1.0, 3.0, 2.0});
    EXPECT_EQ(r, (std::vector<double>{3.5, 1.0, 3.5, 2.0}));
    EXPECT_EQ(r, oracle::midranks({3.0, 1.0, 3.0, 2.0}));
}

TEST(Spearman, MonotoneAndReversed) {
    EXPECT_DOUBLE_EQ(stats::spearman({1, 2, 3, 4}, {1, 4, 9, 16}), 1.0);
    EXPECT_DOUBLE_EQ(stats::spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
    EXPECT_DOUBLE_EQ(stats::spearman({1, 2, 3}, {5, 5, 5}), 0.0);
}

TEST(Summary, MeanAndSampleSd) {
    EXPECT_DOUBLE_EQ(stats::mean({1, 2, 3, 6}), 3.0);
    EXPECT_DOUBLE_EQ(stats::sample_sd({2, 4, 4, 4, 5, 5, 7, 9}), std::sqrt(32.0 / 7.0));
    EXPECT_EQ(stats::sample_sd({1}), 0.0);
}

TEST(FormatP, FloorAndPrecision) {
    EXPECT_EQ(stats::format_p(1e-20), "< 1e-12");
    EXPECT_EQ(stats::format_p(0.012345), "0.0123");
}
