#include <gtest/gtest.h>

#include "isd/rng.hpp"
#include "isd/signal_prep.hpp"

using namespace isd;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    Rng r(seed);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.normal();
    return m;
}

}  // namespace

TEST(LagSpec, HalfWidthRounds) {
    EXPECT_EQ((LagSpec{0.1, 100.0}).half_width(), 10u);
    EXPECT_EQ((LagSpec{0.1, 100.0}).n_lags(), 21u);
    EXPECT_EQ((LagSpec{0.0, 100.0}).n_lags(), 1u);
    EXPECT_EQ((LagSpec{0.026, 100.0}).half_width(), 3u);
}

TEST(ZScore, RowsHaveZeroMeanUnitSampleSd) {
    Matrix x = random_matrix(4, 50, 1) * 3.0;
    x.array() += 7.0;
    x.row(2).setConstant(5.0);
    const Matrix z = zscore_rows(x);
    for (int c = 0; c < 4; ++c) {
        const double m = z.row(c).mean();
        const double var = (z.row(c).array() - m).square().sum() / 49.0;
        EXPECT_NEAR(m, 0.0, 1e-12);
        if (c == 2) {
            EXPECT_EQ(z.row(c).cwiseAbs().maxCoeff(), 0.0);
        } else {
            EXPECT_NEAR(var, 1.0, 1e-12);
        }
    }
    EXPECT_THROW(zscore_rows(Matrix::Ones(2, 1)), std::invalid_argument);
}

TEST(LagMatrix, ColumnLayoutAndZeroPadding) {
    const Matrix x = random_matrix(3, 12, 2);
    const std::size_t H = 2;
    const Matrix L = build_lag_matrix(x, H);
    ASSERT_EQ(L.rows(), 12);
    ASSERT_EQ(L.cols(), 15);
    for (int t = 0; t < 12; ++t)
        for (int j = 0; j < 5; ++j)
            for (int c = 0; c < 3; ++c) {
                const int s = t + j - static_cast<int>(H);
                const double expect = (s >= 0 && s < 12) ? x(c, s) : 0.0;
                EXPECT_EQ(L(t, j * 3 + c), expect);
            }
}

TEST(LagMatrix, GramAndCrossMatchExplicitProducts) {
    const Matrix x = random_matrix(5, 40, 3);
    const Matrix y = random_matrix(4, 40, 4);
    for (std::size_t H : {0u, 1u, 3u}) {
        const Matrix L = build_lag_matrix(x, H);
        const Matrix gram = L.transpose() * L;
        const Matrix cross = L.transpose() * y.transpose();
        EXPECT_LT((lagged_gram(x, H) - gram).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((lagged_cross(x, y, H) - cross).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(WordWindows, ExtractsAndReportsOutOfBounds) {
    TrialTensor trial;
    trial.data = random_matrix(2, 300, 5);
    const WordWindowSpec spec{0.2, 0.8};
    const std::vector<WordEvent> events = {
        {"a", 0.1, StimulusClass::Poem1, 0}, {"b", 0.2, StimulusClass::Poem1, 0},
        {"c", 1.5, StimulusClass::Poem1, 0}, {"d", 2.2, StimulusClass::Poem1, 0},
        {"e", 2.25, StimulusClass::Poem1, 0}};
    const auto out = extract_word_windows(trial, events, spec);
    ASSERT_EQ(out.windows.size(), 3u);
    ASSERT_EQ(out.skipped.size(), 2u);
    EXPECT_NE(out.skipped[0].find("before"), std::string::npos);
    EXPECT_NE(out.skipped[1].find("after"), std::string::npos);
    EXPECT_EQ(out.windows[1].word, "c");
    EXPECT_EQ(out.windows[1].window.cols(), 100);
    EXPECT_EQ(out.windows[1].window, trial.data.middleCols(130, 100));
    EXPECT_EQ(out.windows[0].window, trial.data.middleCols(0, 100));
}

TEST(WordWindows, SpecValidation) {
    EXPECT_THROW((WordWindowSpec{-0.1, 0.8}).validate(), std::invalid_argument);
    EXPECT_THROW((WordWindowSpec{0.0, 0.0}).validate(), std::invalid_argument);
    EXPECT_EQ((WordWindowSpec{0.2, 0.8}).length(100.0), 100u);
}

TEST(DeadChannels, FlagsConstantRows) {
    TrialTensor t;
    t.data = random_matrix(3, 20, 6);
    t.data.row(1).setConstant(2.0);
    const auto mask = screen_dead_channels(t);
    EXPECT_EQ(mask, (std::vector<bool>{false, true, false}));
}
