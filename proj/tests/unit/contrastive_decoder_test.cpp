#include <gtest/gtest.h>

#include <cmath>

#include "isd/contrastive_decoder.hpp"
#include "isd/synthgen.hpp"

using namespace isd;

namespace {

Matrix unit_rows(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    Rng r(seed);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.normal();
    for (Eigen::Index i = 0; i < rows; ++i) m.row(i).normalize();
    return m;
}

double naive_nt_xent(const Matrix& a, const Matrix& b, double tau) {
    const auto B = a.rows();
    double rows = 0.0, cols = 0.0;
    for (Eigen::Index i = 0; i < B; ++i) {
        double zr = 0.0, zc = 0.0;
        for (Eigen::Index j = 0; j < B; ++j) {
            zr += std::exp(a.row(i).dot(b.row(j)) / tau);
            zc += std::exp(a.row(j).dot(b.row(i)) / tau);
        }
        const double pos = a.row(i).dot(b.row(i)) / tau;
        rows += std::log(zr) - pos;
        cols += std::log(zc) - pos;
    }
    return 0.5 * (rows + cols) / static_cast<double>(B);
}

RankOutcome outcome(const std::string& word, std::size_t rank) { return RankOutcome{word, rank, {}}; }

Vocabulary small_vocab(std::size_t n) {
    std::vector<std::string> w(poem_vocabulary().words().begin(), poem_vocabulary().words().begin() + n);
    return Vocabulary(w);
}

}  // namespace

TEST(NtXent, MatchesNaiveSum) {
    for (int B : {1, 3, 8}) {
        const Matrix a = unit_rows(B, 5, 1), b = unit_rows(B, 5, 2);
        EXPECT_NEAR(nt_xent(a, b, 0.1), naive_nt_xent(a, b, 0.1), 1e-10);
    }
}

TEST(NtXent, UniformSimilaritiesGiveLogBatch) {
    for (int B : {2, 4, 64}) {
        const Matrix z = Matrix::Constant(B, 4, 0.5);
        EXPECT_NEAR(nt_xent(z, z, 0.07), std::log(static_cast<double>(B)), 1e-9);
    }
    const Matrix one = unit_rows(1, 4, 3);
    EXPECT_NEAR(nt_xent(one, unit_rows(1, 4, 4), 0.07), 0.0, 1e-15);
    EXPECT_THROW(nt_xent(one, unit_rows(2, 4, 4), 0.07), std::invalid_argument);
}

TEST(RankOf, TiesRankLowerIndexFirst) {
    const std::vector<double> s = {0.2, 0.5, 0.5, 0.1, 0.5};
    EXPECT_EQ(rank_of(s, 1), 1u);
    EXPECT_EQ(rank_of(s, 2), 2u);
    EXPECT_EQ(rank_of(s, 4), 3u);
    EXPECT_EQ(rank_of(s, 0), 4u);
    EXPECT_EQ(rank_of(s, 3), 5u);
    EXPECT_THROW(rank_of(s, 5), std::out_of_range);
}

TEST(RankCdf, StepsAndRecalls) {
    const std::vector<RankOutcome> o = {outcome("a", 1), outcome("b", 3), outcome("c", 3), outcome("d", 12)};
    const auto c = rank_cdf(o, 12);
    ASSERT_EQ(c.cdf.size(), 12u);
    EXPECT_EQ(c.cdf[0], 0.25);
    EXPECT_EQ(c.cdf[1], 0.25);
    EXPECT_EQ(c.cdf[2], 0.75);
    EXPECT_EQ(c.cdf[10], 0.75);
    EXPECT_EQ(c.cdf[11], 1.0);
    EXPECT_EQ(c.recall_at_1, 0.25);
    EXPECT_EQ(c.recall_at_5, 0.75);
    EXPECT_EQ(c.recall_at_10, 0.75);
    for (std::size_t k = 1; k < c.cdf.size(); ++k) EXPECT_LE(c.cdf[k - 1], c.cdf[k]);
    EXPECT_THROW(rank_cdf(o, 11), std::invalid_argument);
    EXPECT_THROW(rank_cdf({}, 11), std::invalid_argument);
}

TEST(TopWords, MedianOfEncoderMediansWithLexicalTies) {
    const Vocabulary v({"ash", "bay", "cove", "dune"});
    const std::vector<std::vector<RankOutcome>> per = {
        {outcome("ash", 4), outcome("ash", 2), outcome("bay", 1), outcome("cove", 2)},
        {outcome("ash", 3), outcome("bay", 5), outcome("cove", 2)},
        {outcome("bay", 2), outcome("cove", 9)},
    };
    const auto t = top_k_words(per, v, 2);
    EXPECT_DOUBLE_EQ(t.median.at("ash"), 3.0);   // medians 3 and 3
    EXPECT_DOUBLE_EQ(t.median.at("bay"), 2.0);   // medians 1, 5, 2
    EXPECT_DOUBLE_EQ(t.median.at("cove"), 2.0);  // medians 2, 2, 9
    EXPECT_EQ(t.words, (std::vector<std::string>{"bay", "cove"}));
    EXPECT_EQ(t.without_outcomes, std::vector<std::string>{"dune"});
}

TEST(Median, OddEvenAndEmpty) {
    EXPECT_EQ(median({3, 1, 2}), 2.0);
    EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
    EXPECT_THROW(median({}), std::invalid_argument);
}

TEST(DecoderSpec, Validation) {
    DecoderSpec s;
    s.validate();
    s.temperature = 0.0;
    EXPECT_THROW(s.validate(), std::invalid_argument);
}

class SmallDecoder : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        vocab_ = new Vocabulary(small_vocab(8));
        WordWindowFixtureConfig cfg;
        cfg.channels = 8;
        cfg.windows_per_word = 16;
        cfg.seed = 4;
        windows_ = new std::vector<LabelledWindow>(make_word_window_fixture(cfg, *vocab_));
        table_ = new EmbeddingTable(make_synthetic_embedding_table(*vocab_, EncoderName::Semantic, 16, 2));
        spec_.channels = 8;
        spec_.embed_dim = 16;
        spec_.spatial_filters = 8;
        spec_.temporal_blocks = 2;
        spec_.batch_size = 8;
        spec_.max_epochs = 12;
        spec_.patience = 12;
        spec_.lr = 3e-3;
        trained_ = new TrainedDecoder(train_decoder(*windows_, *table_, *vocab_, spec_, 11));
    }
    static void TearDownTestSuite() {
        delete trained_;
        delete table_;
        delete windows_;
        delete vocab_;
    }

    static inline Vocabulary* vocab_ = nullptr;
    static inline std::vector<LabelledWindow>* windows_ = nullptr;
    static inline EmbeddingTable* table_ = nullptr;
    static inline DecoderSpec spec_;
    static inline TrainedDecoder* trained_ = nullptr;
};

TEST_F(SmallDecoder, LearnsAboveChance) {
    const auto outcomes = rank_windows(*trained_, *windows_);
    ASSERT_EQ(outcomes.size(), windows_->size());
    const auto c = rank_cdf(outcomes, vocab_->size());
    EXPECT_GT(c.recall_at_1, 0.5);
    EXPECT_EQ(trained_->meta.val_curve.size(), trained_->meta.epochs_run + 1);
    EXPECT_EQ(trained_->meta.train_curve.size(), trained_->meta.epochs_run + 1);
    EXPECT_TRUE(std::isnan(trained_->meta.train_curve[0]));
}

TEST_F(SmallDecoder, RetrievalAgreesWithCachedWordsAndRankRule) {
    const DecoderModel model(*trained_);
    for (std::size_t i = 0; i < 5; ++i) {
        const auto& w = (*windows_)[i * 7];
        const auto& word = vocab_->word(w.word_index);
        const auto r = model.retrieve(w.window, word);
        const auto s = rank_retrieve(*trained_, w.window, word);
        EXPECT_EQ(r.rank, s.rank);
        EXPECT_EQ(r.rank, rank_of(r.similarities, w.word_index));
        const Vector z = meg_encode(*trained_, w.window);
        EXPECT_NEAR(z.norm(), 1.0, 1e-12);
        EXPECT_NEAR(r.similarities[w.word_index], z.dot(word_encode(*trained_, *table_, word)), 1e-12);
    }
    EXPECT_LT((build_word_cache(*trained_, *table_) - trained_->word_cache).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(SmallDecoder, DeterministicForSeed) {
    auto spec = spec_;
    spec.max_epochs = 2;
    const auto a = train_decoder(*windows_, *table_, *vocab_, spec, 3);
    const auto b = train_decoder(*windows_, *table_, *vocab_, spec, 3);
    EXPECT_EQ(a.meg_params, b.meg_params);
    EXPECT_EQ(a.word_params, b.word_params);
    EXPECT_EQ(a.meta.val_curve, b.meta.val_curve);
}

TEST_F(SmallDecoder, RejectsUnknownWordsAndShapes) {
    EXPECT_THROW(rank_retrieve(*trained_, (*windows_)[0].window, "not-a-word"), std::invalid_argument);
    EXPECT_THROW(rank_retrieve(*trained_, Matrix::Zero(3, 100), vocab_->word(0)), std::invalid_argument);
}
