#include <gtest/gtest.h>

#include <set>

#include "isd/full_pipeline.hpp"
#include "isd/synthgen.hpp"
#include "support/oracles.hpp"

using namespace isd;

namespace {

RankOutcome outcome(std::size_t rank) { return RankOutcome{"w", rank, {}}; }

std::vector<std::string> first_words(std::size_t offset, std::size_t n) {
    const auto& w = poem_vocabulary().words();
    return {w.begin() + static_cast<std::ptrdiff_t>(offset), w.begin() + static_cast<std::ptrdiff_t>(offset + n)};
}

}  // namespace

TEST(AucAboveChance, PerfectChanceAndWorst) {
    const std::size_t V = 76;
    EXPECT_DOUBLE_EQ(auc_above_chance({outcome(1), outcome(1)}, V), 100.0);
    std::vector<RankOutcome> uniform;
    for (std::size_t k = 1; k <= V; ++k) uniform.push_back(outcome(k));
    EXPECT_NEAR(auc_above_chance(uniform, V), 0.0, 1e-12);
    const double worst = auc_above_chance({outcome(V)}, V);
    // cdf is 0 until V: area = -sum_{k<V} k/V over max sum_{k<=V} (1 - k/V).
    EXPECT_NEAR(worst, -100.0 * (V - 1) / 2.0 / ((V - 1) / 2.0), 1e-9);
    EXPECT_THROW(auc_above_chance({}, V), std::invalid_argument);
    EXPECT_THROW(auc_above_chance({outcome(1)}, V, V + 1), std::invalid_argument);
}

TEST(RanksVsUniform, LowRanksAreSignificantUniformAreNot) {
    std::vector<RankOutcome> low, uni;
    for (int i = 0; i < 40; ++i) low.push_back(outcome(1 + i % 5));
    for (std::size_t k = 1; k <= 76; ++k) uni.push_back(outcome(k));
    EXPECT_LT(ranks_vs_uniform(low, 76).p, 1e-6);
    EXPECT_NEAR(ranks_vs_uniform(uni, 76).p, 0.5, 0.05);
}

TEST(Jaccard, Basics) {
    EXPECT_EQ(jaccard({"a", "b"}, {"b", "a"}), 1.0);
    EXPECT_EQ(jaccard({"a", "b"}, {"c"}), 0.0);
    EXPECT_NEAR(jaccard({"a", "b", "c"}, {"b", "c", "d"}), 0.5, 1e-15);
    EXPECT_EQ(jaccard({}, {}), 1.0);
}

TEST(Consistency, NullMeanMatchesHypergeometricOracle) {
    const auto& vocab = poem_vocabulary();
    const auto r = consistency_analysis({first_words(0, 20), first_words(10, 20)}, {}, vocab, 40000, 3);
    ASSERT_EQ(r.null.size(), 40000u);
    double mean = 0.0;
    for (double j : r.null) mean += j;
    mean /= static_cast<double>(r.null.size());
    const double expected = oracle::expected_random_jaccard(76, 20);
    EXPECT_NEAR(mean, expected, 0.02 * expected);
    ASSERT_EQ(r.pairwise.size(), 1u);
    EXPECT_NEAR(r.pairwise[0], 10.0 / 30.0, 1e-15);
}

TEST(Consistency, IdenticalSetsAreHighlySignificant) {
    const auto& vocab = poem_vocabulary();
    const auto s = first_words(5, 20);
    const auto r = consistency_analysis({s, s, s, s, s}, s, vocab, 20000, 1);
    EXPECT_EQ(r.pairwise.size(), 10u);
    for (double j : r.pairwise) EXPECT_EQ(j, 1.0);
    for (double j : r.vs_listened) EXPECT_EQ(j, 1.0);
    EXPECT_LT(r.pairwise_vs_null.p, 0.001);
    EXPECT_LT(r.listened_vs_null.p, 0.001);
}

TEST(Consistency, RejectsMalformedSets) {
    const auto& vocab = poem_vocabulary();
    auto dup = first_words(0, 20);
    dup[1] = dup[0];
    EXPECT_THROW(consistency_analysis({dup}, {}, vocab, 10), std::invalid_argument);
    auto foreign = first_words(0, 20);
    foreign[3] = "zeppelin";
    EXPECT_THROW(consistency_analysis({foreign}, {}, vocab, 10), std::invalid_argument);
    EXPECT_THROW(consistency_analysis({first_words(0, 19)}, {}, vocab, 10), std::invalid_argument);
}

class TinyPipeline : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        SynthConfig c;
        c.n_subjects = 3;
        c.channels = 6;
        c.latent_dim = 3;
        c.duration_s = 8.0;
        c.trials_per_condition = 2;
        c.seed = 12;
        ds_ = new SyntheticDataset(generate_dataset(c));
    }
    static void TearDownTestSuite() { delete ds_; }
    static inline SyntheticDataset* ds_ = nullptr;
};

TEST_F(TinyPipeline, SessionWordWindowsCoverPoemTrials) {
    const auto& s = ds_->sessions[0];
    const WordWindowSpec spec;
    const auto all = session_word_windows(s, TrialSource::Listened, ds_->vocabulary, spec);
    const auto first = session_word_windows(s, TrialSource::Listened, ds_->vocabulary, spec, {0});
    EXPECT_GT(all.size(), 0u);
    EXPECT_EQ(all.size(), 2 * first.size());
    for (const auto& w : all) {
        EXPECT_EQ(w.subject_id, s.subject_id);
        EXPECT_EQ(w.window.rows(), 6);
        EXPECT_EQ(static_cast<std::size_t>(w.window.cols()), spec.length(100.0));
        EXPECT_LT(w.word_index, ds_->vocabulary.size());
    }
}

TEST_F(TinyPipeline, RunProducesValidRanksAndEnforcesZeroShot) {
    const auto& held = ds_->sessions[2];
    auto spec = default_mapping_spec(MappingKind::LinearLag, 6);
    spec.lag.delta_s = 0.02;
    spec.alpha_grid = {1.0};
    LosoOptions lo;
    lo.held_out_trials = 0;
    const auto mapping = fit_mapping(spec, {&ds_->sessions[0], &ds_->sessions[1]}, lo, 1);

    std::vector<LabelledWindow> train;
    for (std::size_t s = 0; s < 2; ++s) {
        auto w = session_word_windows(ds_->sessions[s], TrialSource::Listened, ds_->vocabulary, {});
        train.insert(train.end(), w.begin(), w.end());
    }
    DecoderSpec dspec;
    dspec.channels = 6;
    dspec.embed_dim = 8;
    dspec.spatial_filters = 4;
    dspec.temporal_blocks = 1;
    dspec.max_epochs = 1;
    dspec.batch_size = 8;
    const auto table = make_synthetic_embedding_table(ds_->vocabulary, EncoderName::Semantic, 8, 1);
    const auto decoder = train_decoder(train, table, ds_->vocabulary, dspec, 2);

    const auto run = run_pipeline(held, mapping, decoder);
    const auto expected = session_word_windows(held, TrialSource::Imagined, ds_->vocabulary, {});
    EXPECT_EQ(run.outcomes.size(), expected.size());
    for (const auto& o : run.outcomes) {
        EXPECT_GE(o.rank, 1u);
        EXPECT_LE(o.rank, ds_->vocabulary.size());
    }
    EXPECT_EQ(run.subject_id, held.subject_id);
    EXPECT_GE(run.vs_uniform.p, 0.0);
    EXPECT_LE(run.vs_uniform.p, 1.0);

    EXPECT_THROW(run_pipeline(ds_->sessions[0], mapping, decoder), std::logic_error);
    EXPECT_NO_THROW(verify_zero_shot(held.subject_id, mapping, decoder));

    DecodeOptions jitter;
    jitter.onset_jitter_sd_s = 0.05;
    jitter.jitter_seed = 4;
    const auto a = run_pipeline(held, mapping, decoder, jitter);
    const auto b = run_pipeline(held, mapping, decoder, jitter);
    ASSERT_EQ(a.outcomes.size(), b.outcomes.size());
    for (std::size_t i = 0; i < a.outcomes.size(); ++i) EXPECT_EQ(a.outcomes[i].rank, b.outcomes[i].rank);
}
