#include <gtest/gtest.h>

#include <map>
#include <set>

#include "isd/mapping_eval.hpp"
#include "isd/synthgen.hpp"

using namespace isd;

namespace {

SynthConfig loso_config() {
    SynthConfig c;
    c.n_subjects = 3;
    c.channels = 8;
    c.latent_dim = 4;
    c.duration_s = 4.0;
    c.trials_per_condition = 4;
    c.seed = 21;
    return c;
}

const SyntheticDataset& dataset() {
    static const SyntheticDataset ds = generate_dataset(loso_config());
    return ds;
}

MappingSpec linear_spec() {
    auto s = default_mapping_spec(MappingKind::LinearLag, 8);
    s.lag.delta_s = 0.03;
    s.alpha_grid = {1.0};
    return s;
}

double naive_pearson(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    const double ma = a.mean(), mb = b.mean();
    double sab = 0, saa = 0, sbb = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(ChannelPearson, MatchesNaiveFormulaAndMean) {
    Rng r(1);
    Matrix a(3, 50), b(3, 50);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        a.data()[i] = r.normal();
        b.data()[i] = 0.5 * a.data()[i] + r.normal();
    }
    b.row(2).setConstant(1.0);
    const auto cc = mean_channel_pearson(a, b);
    ASSERT_EQ(cc.per_channel_r.size(), 3u);
    EXPECT_NEAR(cc.per_channel_r[0], naive_pearson(a.row(0), b.row(0)), 1e-12);
    EXPECT_NEAR(cc.per_channel_r[1], naive_pearson(a.row(1), b.row(1)), 1e-12);
    EXPECT_EQ(cc.per_channel_r[2], 0.0);
    EXPECT_NEAR(cc.mean_r, (cc.per_channel_r[0] + cc.per_channel_r[1]) / 3.0, 1e-15);
}

TEST(Derangement, HasNoFixedPointsAndIsUniform) {
    Rng r(2);
    std::map<std::vector<std::size_t>, int> seen;
    for (int i = 0; i < 9000; ++i) {
        const auto p = uniform_derangement(4, r);
        for (std::size_t k = 0; k < 4; ++k) ASSERT_NE(p[k], k);
        ++seen[p];
    }
    ASSERT_EQ(seen.size(), 9u);  // !4 = 9
    for (const auto& [p, n] : seen) EXPECT_NEAR(n, 1000, 120);
    EXPECT_THROW(uniform_derangement(1, r), std::invalid_argument);
}

TEST(NullPairing, DeterministicPerSeedAndLabelsFollowPartner) {
    const auto& s = dataset().sessions[0];
    const auto a = make_null_pairing(s, 5), b = make_null_pairing(s, 5), c = make_null_pairing(s, 6);
    EXPECT_EQ(a.partner, b.partner);
    EXPECT_NE(a.partner, c.partner);
    const auto pairs = null_session_pairs(s, a, TrialSplit::All, 0);
    ASSERT_EQ(pairs.size(), 16u);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto ref = trial_ref(a.partner[i], 4);
        EXPECT_EQ(pairs[i].stimulus_class, ref.stimulus_class);
        EXPECT_EQ(pairs[i].y, zscore_rows(s.listened[index_of(ref.stimulus_class)][ref.trial].data));
    }
}

TEST(SessionPairs, SplitsByTrailingTrials) {
    const auto& s = dataset().sessions[1];
    EXPECT_EQ(session_pairs(s, TrialSplit::All, 1).size(), 16u);
    const auto train = session_pairs(s, TrialSplit::Train, 1);
    const auto held = session_pairs(s, TrialSplit::HeldOut, 1);
    EXPECT_EQ(train.size(), 12u);
    EXPECT_EQ(held.size(), 4u);
    for (const auto& p : held) EXPECT_EQ(p.trial_index, 3u);
    EXPECT_THROW(session_pairs(s, TrialSplit::Train, 4), std::invalid_argument);
}

TEST(Loso, RecordsCoverEveryFoldConditionAndVariant) {
    LosoOptions opt;
    opt.held_out_trials = 1;
    const auto r = run_loso(dataset().sessions, linear_spec(), opt, 3);
    EXPECT_TRUE(r.failures.empty());
    EXPECT_EQ(r.records.size(), 3u * 3u * 2u);
    ASSERT_EQ(r.models.size(), 3u);
    for (std::size_t f = 0; f < 3; ++f) {
        const auto& held = dataset().sessions[f].subject_id;
        const auto& subjects = r.models[f].meta.training_subjects;
        EXPECT_EQ(subjects.size(), 2u);
        EXPECT_EQ(std::count(subjects.begin(), subjects.end(), held), 0);
    }
    for (const auto& rec : r.records) {
        double s = 0.0;
        for (double x : rec.per_channel_r) s += x;
        EXPECT_NEAR(rec.mean_r, s / 8.0, 1e-12);
        if (!rec.null_model) EXPECT_GT(rec.mean_r, 0.1);
    }
}

TEST(Loso, SubjectFilterAndDeterminism) {
    LosoOptions opt;
    opt.held_out_trials = 1;
    opt.include_null = false;
    opt.subjects = {dataset().sessions[2].subject_id};
    const auto a = run_loso(dataset().sessions, linear_spec(), opt, 4);
    const auto b = run_loso(dataset().sessions, linear_spec(), opt, 4);
    ASSERT_EQ(a.records.size(), 3u);
    for (const auto& rec : a.records) EXPECT_EQ(rec.subject_id, opt.subjects[0]);
    for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].per_channel_r, b.records[i].per_channel_r);
}

TEST(Loso, FailedFoldsAreReportedNotThrown) {
    auto spec = linear_spec();
    spec.channels = 5;
    LosoOptions opt;
    opt.held_out_trials = 1;
    opt.include_null = false;
    const auto r = run_loso(dataset().sessions, spec, opt, 1);
    EXPECT_EQ(r.failures.size(), 3u);
    EXPECT_TRUE(r.records.empty());
}

TEST(Classification, TemplatesClassifyThemselves) {
    const auto& s = dataset().sessions[0];
    const auto templates = class_templates(s);
    std::vector<Matrix> preds(templates.begin(), templates.end());
    const auto res = correlation_classify(preds, {StimulusClass::Melody1, StimulusClass::Melody2, StimulusClass::Poem1,
                                                  StimulusClass::Poem2},
                                          templates);
    EXPECT_EQ(res.four.accuracy(), 1.0);
    EXPECT_EQ(res.two.accuracy(), 1.0);
    EXPECT_NEAR(res.scores[2][2], 1.0, 1e-12);
}

TEST(Classification, ConfusionProbabilitiesAreRowNormalised) {
    ConfusionMatrix m(2);
    m.add(0, 0);
    m.add(0, 1);
    m.add(0, 1);
    EXPECT_EQ(m.total(), 3u);
    EXPECT_NEAR(m.accuracy(), 1.0 / 3.0, 1e-15);
    const auto p = m.probabilities();
    EXPECT_NEAR(p[0][1], 2.0 / 3.0, 1e-15);
    EXPECT_EQ(p[1][0], 0.0);
    EXPECT_THROW(m.add(2, 0), std::out_of_range);
}

TEST(EnsembleVote, MajorityThenScoreThenLowestLabel) {
    const std::vector<std::vector<std::size_t>> labels = {{1, 0, 3}, {1, 2, 2}, {0, 2, 3}, {3, 1, 1}};
    const std::vector<std::vector<double>> scores = {{0.1, 0.9, 0.2}, {0.1, 0.2, 0.4}, {0.1, 0.3, 0.1}, {0.1, 0.5, 0.9}};
    EXPECT_EQ(ensemble_vote(labels, scores), (std::vector<std::size_t>{1, 2, 3}));
    const std::vector<std::vector<std::size_t>> tied = {{0}, {2}};
    EXPECT_EQ(ensemble_vote(tied, {{0.4}, {0.6}}), std::vector<std::size_t>{2});
    EXPECT_EQ(ensemble_vote(tied, {}), std::vector<std::size_t>{0});
    EXPECT_THROW(ensemble_vote({}, {}), std::invalid_argument);
}

TEST(Scaling, FullSubsetEqualsLosoAndRowsAreComplete) {
    LosoOptions opt;
    opt.held_out_trials = 1;
    opt.include_null = false;
    ScalingOptions so;
    so.subsets = 3;
    so.loso = opt;
    const auto sc = scaling_curve(dataset().sessions, linear_spec(), so, 9);
    const auto lo = run_loso(dataset().sessions, linear_spec(), opt, 9);
    EXPECT_EQ(sc.rows.size(), 3u * 2u);
    for (const auto& row : sc.rows) {
        EXPECT_EQ(row.subsets_used, 3u);
        if (row.k != 2) continue;
        const auto rec = std::find_if(lo.records.begin(), lo.records.end(), [&](const EvalRecord& r) {
            return r.subject_id == row.subject_id && r.condition == EvalCondition::LOSO;
        });
        ASSERT_NE(rec, lo.records.end());
        EXPECT_EQ(row.mean_r, rec->mean_r);
    }
    ASSERT_EQ(sc.summary.size(), 2u);
    EXPECT_THROW(
        [&] {
            ScalingOptions bad = so;
            bad.ks = {3};
            scaling_curve(dataset().sessions, linear_spec(), bad, 9);
        }(),
        std::invalid_argument);
}
