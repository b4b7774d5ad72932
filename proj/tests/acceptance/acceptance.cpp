// Acceptance checks A1-A12. Prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails.
//
//   acceptance            run every criterion
//   acceptance A4 A7      run the named criteria

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "isd/contrastive_decoder.hpp"
#include "isd/full_pipeline.hpp"
#include "isd/io.hpp"
#include "isd/mapping_eval.hpp"
#include "isd/mapping_models.hpp"
#include "isd/stats.hpp"
#include "isd/synthgen.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace isd;
namespace fs = std::filesystem;

namespace tol {
constexpr double kA1NoiselessR = 0.99;
constexpr double kA1RealR = 0.5;
constexpr double kA1NullAbs = 0.05;
constexpr double kA1P = 0.01;
constexpr double kA1Seconds = 120.0;
constexpr double kA2RelError = 1e-4;
constexpr double kA2Seconds = 60.0;
constexpr double kA3TransformerRel = 0.01;
constexpr double kA3OtherRel = 0.05;
constexpr double kA4Ntxent = 1e-9;
constexpr double kA4Exact = 1e-12;
constexpr double kA4Negated = 1e-6;
constexpr double kA5Causal = 1e-12;
constexpr double kA6Level = 0.99;
constexpr double kA6Auc = 1.0;
constexpr double kA7Oracle = 1e-9;
constexpr double kA7P = 0.001;
constexpr double kA8Recall = 0.9;
constexpr double kA8Seconds = 600.0;
constexpr double kA9MeanRank = 38.5;
constexpr double kA9P = 0.01;
constexpr double kA9ControlP = 0.05;
constexpr int kA9ControlSeeds = 10;
constexpr int kA9ControlNeeded = 8;
constexpr double kA10Rel = 0.02;
constexpr double kA10P = 0.001;
}  // namespace tol

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << "[failed: " << what << "] ";
        }
    }
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    Rng r(seed);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.normal();
    return m;
}

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
    Rng r(seed);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = r.normal();
    return t;
}

Tensor batch_of(const Matrix& m) {
    return Tensor({1, static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                  std::vector<double>(m.data(), m.data() + m.size()));
}

std::string bytes_of(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Every regular file under `a` exists under `b` with identical bytes, and vice versa.
bool same_tree(const fs::path& a, const fs::path& b) {
    std::map<std::string, std::string> fa, fb;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) fa[fs::relative(e.path(), a).string()] = bytes_of(e.path());
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) fb[fs::relative(e.path(), b).string()] = bytes_of(e.path());
    return !fa.empty() && fa == fb;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("isd_acceptance_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// ---------------------------------------------------------------------------

Outcome a1() {
    Outcome o;
    const auto t0 = Clock::now();
    SynthConfig c;
    c.n_subjects = 5;
    c.channels = 16;
    c.duration_s = 6.0;
    c.seed = 3;

    c.noise_sd_listened = 0.0;
    const auto clean = generate_dataset(c);
    auto spec = default_mapping_spec(MappingKind::LinearLag, 16);
    spec.alpha_grid = {1e-8};
    double worst = 1.0;
    for (const auto& s : clean.sessions) {
        const auto model = fit_linear_lag(spec, session_pairs(s, TrialSplit::Train, 2));
        worst = std::min(worst, evaluate_mapping(model, session_pairs(s, TrialSplit::HeldOut, 2)).mean_r);
    }
    o.detail << "noiseless held-out min r=" << worst << "; ";
    o.check(worst > tol::kA1NoiselessR, "noiseless recovery");

    c.noise_sd_listened = 0.3;
    const auto noisy = generate_dataset(c);
    const auto loso = run_loso(noisy.sessions, default_mapping_spec(MappingKind::LinearLag, 16), LosoOptions{}, 7);
    o.check(loso.failures.empty(), "no failed folds");
    std::vector<double> real, null;
    for (const auto& r : loso.records)
        if (r.condition == EvalCondition::LOSO) (r.null_model ? null : real).push_back(r.mean_r);
    const double mr = stats::mean(real), mn = stats::mean(null);
    const auto t = stats::paired_t(real, null);
    o.detail << "LOSO real=" << mr << " null=" << mn << " t=" << t.statistic << " p=" << t.p;
    o.check(mr > tol::kA1RealR, "real mean_r");
    o.check(std::abs(mn) <= tol::kA1NullAbs, "null mean_r");
    o.check(t.p < tol::kA1P, "paired t");
    const double secs = seconds_since(t0);
    o.detail << " (" << std::setprecision(3) << secs << " s)";
    o.check(secs < tol::kA1Seconds, "runtime");
    return o;
}

Outcome a2() {
    Outcome o;
    const auto t0 = Clock::now();
    double worst = 0.0;
    {
        const auto p = nn::parameter(random_tensor({1, 4, 16}, 1));
        const auto y = random_tensor({1, 4, 16}, 2);
        const auto r = isd::testing::grad_check([&] { return nn::combined_loss(p, y, 0.5); }, {p});
        o.detail << "combined_loss " << r.max_rel_error << "; ";
        worst = std::max(worst, r.max_rel_error);
    }
    {
        const auto m = nn::parameter(random_tensor({4, 8}, 3));
        const auto w = nn::parameter(random_tensor({4, 8}, 4));
        const auto r = isd::testing::grad_check(
            [&] { return nn::nt_xent(nn::l2_normalize(m), nn::l2_normalize(w), 0.07); }, {m, w});
        o.detail << "nt_xent " << r.max_rel_error << "; ";
        worst = std::max(worst, r.max_rel_error);
    }
    const auto x = random_tensor({1, 4, 16}, 5);
    const auto y = random_tensor({1, 4, 16}, 6);
    for (auto k : kAllMappingKinds) {
        auto net = make_network(default_mapping_spec(k, 4), 7);
        const auto xin = nn::parameter(x);
        std::vector<nn::Var> inputs{xin};
        for (const auto& [name, v] : net->params().params()) inputs.push_back(v);
        auto loss = [&] {
            Rng dr(9);
            return nn::combined_loss(net->forward(xin, nn::Context{true, &dr}), y, 0.5);
        };
        const auto r = isd::testing::grad_check(loss, inputs, 1e-4, 1e-4, 48);
        o.detail << to_string(k) << ' ' << r.max_rel_error << " (" << r.checked << " entries); ";
        worst = std::max(worst, r.max_rel_error);
    }
    o.check(worst < tol::kA2RelError, "max relative error");
    const double secs = seconds_since(t0);
    o.detail << "(" << std::setprecision(3) << secs << " s)";
    o.check(secs < tol::kA2Seconds, "runtime");
    return o;
}

Outcome a3() {
    Outcome o;
    const std::vector<std::pair<MappingKind, double>> table = {
        {MappingKind::LinearLag, 504525},  {MappingKind::ShallowMLP, 24475}, {MappingKind::CNN1D, 38491},
        {MappingKind::UNet1D, 61496},      {MappingKind::RNN, 57691},        {MappingKind::TCN, 41787},
        {MappingKind::Transformer, 120539}};
    for (const auto& [k, ref] : table) {
        const auto n = static_cast<double>(count_parameters(default_mapping_spec(k)));
        const double rel = std::abs(n - ref) / ref;
        o.detail << to_string(k) << ' ' << static_cast<long>(n) << " (" << std::setprecision(3) << 100.0 * rel << "%) ";
        if (k == MappingKind::LinearLag) {
            o.check(n == ref, "LinearLag exact");
        } else if (k == MappingKind::Transformer) {
            o.check(rel <= tol::kA3TransformerRel, "Transformer within 1%");
        } else {
            o.check(rel <= tol::kA3OtherRel, std::string(to_string(k)) + " within 5%");
        }
    }
    return o;
}

Outcome a4() {
    Outcome o;
    for (int B : {2, 4, 64}) {
        const Matrix z = Matrix::Constant(B, 8, 1.0 / std::sqrt(8.0));
        const double err = std::abs(nt_xent(z, z, 0.07) - std::log(static_cast<double>(B)));
        o.detail << "B=" << B << " err=" << err << "; ";
        o.check(err < tol::kA4Ntxent, "nt_xent uniform");
    }
    const double single = nt_xent(random_matrix(1, 8, 1).rowwise().normalized(),
                                  random_matrix(1, 8, 2).rowwise().normalized(), 0.07);
    o.detail << "B=1 " << single << "; ";
    o.check(std::abs(single) < tol::kA4Ntxent, "nt_xent single");

    const Matrix y = zscore_rows(random_matrix(16, 600, 3));
    const double same = combined_loss(y, y, 0.5).loss;
    o.check(std::abs(same) < tol::kA4Exact, "combined_loss(y, y)");
    // With sample-sd z-scoring the negated loss is 4 (T-1)/T + 1, which tends to 5.
    const double neg600 = combined_loss(-y, y, 0.5).loss;
    o.check(std::abs(neg600 - (4.0 * 599.0 / 600.0 + 1.0)) < tol::kA4Exact, "combined_loss(-y, y) finite T");
    const Eigen::Index long_t = 8'000'000;
    const Matrix yl = zscore_rows(random_matrix(1, long_t, 4));
    const double neg_long = combined_loss(-yl, yl, 0.5).loss;
    o.detail << "loss(y,y)=" << same << " loss(-y,y)@T=600 " << std::setprecision(12) << neg600 << " @T=8e6 " << neg_long;
    o.check(std::abs(neg_long - 5.0) < tol::kA4Negated, "combined_loss(-y, y) = 5");
    return o;
}

Outcome a5() {
    Outcome o;
    auto net = make_network(default_mapping_spec(MappingKind::TCN, 16), 2);
    const std::size_t T = 200;
    const Matrix x = random_matrix(16, T, 3);
    const auto base = net->forward(nn::constant(batch_of(x)), nn::Context{false, nullptr})->value;
    double before = 0.0, after = 0.0;
    for (std::size_t t0 : {0u, 57u, 120u, 198u}) {
        Matrix moved = x;
        moved.rightCols(static_cast<Eigen::Index>(T - t0 - 1)).array() += 5.0 * random_matrix(16, T - t0 - 1, t0).array();
        const auto out = net->forward(nn::constant(batch_of(moved)), nn::Context{false, nullptr})->value;
        for (std::size_t c = 0; c < 16; ++c)
            for (std::size_t t = 0; t < T; ++t) {
                const double d = std::abs(base[c * T + t] - out[c * T + t]);
                if (t <= t0) before = std::max(before, d);
                else after = std::max(after, d);
            }
    }
    o.detail << "max |diff| at <= t: " << before << ", after t: " << after;
    o.check(before < tol::kA5Causal, "causality");
    o.check(after > 0.0, "perturbation reaches the future");
    return o;
}

std::vector<RankOutcome> uniform_retrievals(std::size_t n, std::size_t V, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<RankOutcome> outcomes;
    std::vector<double> sims(V);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& s : sims) s = rng.normal();
        outcomes.push_back(RankOutcome{"w", rank_of(sims, rng.below(V)), {}});
    }
    return outcomes;
}

Outcome a6() {
    Outcome o;
    const std::size_t V = 76, N = 10000;
    const auto outcomes = uniform_retrievals(N, V, 1);
    const auto cdf = rank_cdf(outcomes, V).cdf;
    std::size_t outside = 0;
    for (std::size_t k = 1; k <= V; ++k) {
        const auto [lo, hi] = oracle::binomial_band(static_cast<int>(N), static_cast<double>(k) / V, tol::kA6Level);
        const double count = std::round(cdf[k - 1] * N);
        if (count < lo || count > hi) ++outside;
    }
    const double auc = auc_above_chance(outcomes, V);
    std::vector<RankOutcome> pooled;
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        const auto more = uniform_retrievals(N, V, seed);
        pooled.insert(pooled.end(), more.begin(), more.end());
    }
    const double pooled_auc = auc_above_chance(pooled, V);
    const std::vector<RankOutcome> perfect(50, RankOutcome{"w", 1, {}});
    const double top = auc_above_chance(perfect, V);
    o.detail << "cdf points outside band: " << outside << "; auc=" << auc << "%; pooled 120k auc=" << pooled_auc
             << "%; all rank 1 auc=" << top << "%";
    o.check(outside == 0, "binomial band");
    o.check(std::abs(auc) < tol::kA6Auc, "auc near zero");
    o.check(std::abs(pooled_auc) < tol::kA6Auc, "pooled auc near zero");
    o.check(top == 100.0, "all rank 1");
    return o;
}

Outcome a7() {
    Outcome o;
    Rng r(7);
    auto draws = [&](std::size_t n, double shift, bool ties) {
        std::vector<double> v(n);
        for (auto& x : v) {
            x = r.normal() + shift;
            if (ties) x = std::round(x * 2.0) / 2.0;
        }
        return v;
    };
    double t_err = 0.0, w_err = 0.0, u_err = 0.0;
    for (std::size_t n = 3; n <= 15; ++n) {
        const auto a = draws(n, 0.4, false), b = draws(n, 0.0, false);
        const auto t = stats::paired_t(a, b);
        t_err = std::max({t_err, std::abs(t.statistic - oracle::paired_t_statistic(a, b)),
                          std::abs(t.p - oracle::t_two_sided_p(t.statistic, t.df))});
    }
    for (std::size_t n = 1; n <= 12; ++n)
        for (bool ties : {false, true}) {
            const auto x = draws(n, 0.3, ties), y = draws(n, 0.0, ties);
            const auto brute = oracle::signed_rank_enumeration(x, y);
            const auto g = stats::wilcoxon_signed_rank(x, y, stats::Alternative::Greater, stats::Method::Exact);
            if (g.degenerate) continue;
            const auto l = stats::wilcoxon_signed_rank(x, y, stats::Alternative::Less, stats::Method::Exact);
            w_err = std::max({w_err, std::abs(g.p - brute.greater), std::abs(l.p - brute.less)});
        }
    for (int rep = 0; rep < 10; ++rep) {
        const auto a = draws(5, 0.5, rep % 2), b = draws(5, 0.0, rep % 2);
        const auto brute = oracle::ranksum_enumeration(a, b);
        const auto g = stats::ranksum(a, b, stats::Alternative::Greater, stats::Method::Exact);
        const auto l = stats::ranksum(a, b, stats::Alternative::Less, stats::Method::Exact);
        u_err = std::max({u_err, std::abs(g.p - brute.greater), std::abs(l.p - brute.less)});
    }
    const double p_table = stats::t_two_sided_p(9.59, 16);
    o.detail << "paired_t err=" << t_err << " signed-rank err=" << w_err << " rank-sum err=" << u_err
             << " p(t=9.59, df=16)=" << p_table;
    o.check(t_err < tol::kA7Oracle, "paired t");
    o.check(w_err < tol::kA7Oracle, "signed rank");
    o.check(u_err < tol::kA7Oracle, "rank sum");
    o.check(p_table < tol::kA7P, "table t value");
    return o;
}

Outcome a8() {
    Outcome o;
    const auto t0 = Clock::now();
    const auto& vocab = poem_vocabulary();
    WordWindowFixtureConfig fc;
    fc.windows_per_word = 55;
    fc.seed = 1;
    const auto all = make_word_window_fixture(fc, vocab);
    const auto split = all.end() - static_cast<std::ptrdiff_t>(5 * vocab.size());
    const std::vector<LabelledWindow> train(all.begin(), split), test(split, all.end());
    const auto table = make_synthetic_embedding_table(vocab, EncoderName::Semantic, 64, 3);
    DecoderSpec spec;
    spec.channels = 16;
    spec.spatial_filters = 32;
    spec.max_epochs = 15;
    const auto decoder = train_decoder(train, table, vocab, spec, 5);
    const auto c = rank_cdf(rank_windows(decoder, test), vocab.size());
    const double secs = seconds_since(t0);
    o.detail << "R@1=" << c.recall_at_1 << " R@5=" << c.recall_at_5 << " R@10=" << c.recall_at_10 << " ("
             << std::setprecision(3) << secs << " s)";
    o.check(c.recall_at_1 >= tol::kA8Recall, "R@1");
    o.check(c.recall_at_1 <= c.recall_at_5 && c.recall_at_5 <= c.recall_at_10, "monotone recalls");
    o.check(secs < tol::kA8Seconds, "runtime");
    return o;
}

Outcome a9() {
    Outcome o;
    const auto t0 = Clock::now();
    SynthConfig c;
    c.n_subjects = 8;
    c.channels = 16;
    c.duration_s = 12.0;
    c.seed = 1;
    const auto ds = generate_dataset(c);
    const auto table = make_synthetic_embedding_table(ds.vocabulary, EncoderName::Semantic, 64, 3);

    auto rnn_spec = default_mapping_spec(MappingKind::RNN, 16);
    rnn_spec.rnn_hidden = 16;
    LosoOptions lo;
    lo.held_out_trials = 0;
    lo.train.max_epochs = 30;
    lo.train.patience = 10;
    lo.train.crop_samples = 200;
    DecoderSpec dspec;
    dspec.channels = 16;
    dspec.spatial_filters = 32;
    dspec.max_epochs = 8;

    std::vector<TrainedDecoder> decoders;
    for (std::size_t h = 0; h < ds.sessions.size(); ++h) {
        std::vector<const PairedSession*> train;
        std::vector<LabelledWindow> windows;
        for (std::size_t s = 0; s < ds.sessions.size(); ++s) {
            if (s == h) continue;
            train.push_back(&ds.sessions[s]);
            auto w = session_word_windows(ds.sessions[s], TrialSource::Listened, ds.vocabulary, c.window);
            windows.insert(windows.end(), w.begin(), w.end());
        }
        decoders.push_back(train_decoder(windows, table, ds.vocabulary, dspec, derive_seed(12, h)));
        const auto& held = ds.sessions[h];
        for (const auto& spec : {default_mapping_spec(MappingKind::LinearLag, 16), rnn_spec}) {
            const auto mapping = fit_mapping(spec, train, lo, derive_seed(11, h));
            const auto run = run_pipeline(held, mapping, decoders.back());
            o.detail << held.subject_id << '/' << to_string(spec.kind) << " rank=" << std::setprecision(4)
                     << run.mean_rank << " p=" << std::setprecision(2) << run.vs_uniform.p << "; ";
            o.check(run.mean_rank < tol::kA9MeanRank && run.vs_uniform.p < tol::kA9P,
                    held.subject_id + " " + std::string(to_string(spec.kind)));
        }
    }
    int not_significant = 0;
    o.detail << "random control p:";
    for (int j = 0; j < tol::kA9ControlSeeds; ++j) {
        const std::size_t h = static_cast<std::size_t>(j) % ds.sessions.size();
        auto control = random_mapping(default_mapping_spec(MappingKind::LinearLag, 16), derive_seed(13, j));
        control.meta.training_subjects.clear();
        const auto run = run_pipeline(ds.sessions[h], control, decoders[h]);
        o.detail << ' ' << std::setprecision(2) << run.vs_uniform.p;
        not_significant += run.vs_uniform.p > tol::kA9ControlP;
    }
    o.detail << " (" << not_significant << "/" << tol::kA9ControlSeeds << " not significant; " << std::setprecision(4)
             << seconds_since(t0) << " s)";
    o.check(not_significant >= tol::kA9ControlNeeded, "random control");
    return o;
}

Outcome a10() {
    Outcome o;
    const auto& vocab = poem_vocabulary();
    const auto& words = vocab.words();
    const std::vector<std::string> a(words.begin(), words.begin() + 20), b(words.begin() + 30, words.begin() + 50);
    const auto r = consistency_analysis({a, b}, {}, vocab, 100000, 10);
    const double mc = stats::mean(r.null);
    const double exact = oracle::expected_random_jaccard(76, 20);
    const double rel = std::abs(mc - exact) / exact;
    const auto same = consistency_analysis({a, a, a, a, a}, a, vocab, 100000, 10);
    bool all_one = true;
    for (double j : same.pairwise) all_one = all_one && j == 1.0;
    for (double j : same.vs_listened) all_one = all_one && j == 1.0;
    o.detail << "null mean=" << mc << " oracle=" << exact << " rel=" << rel << "; identical sets p=" << same.pairwise_vs_null.p
             << " listened p=" << same.listened_vs_null.p;
    o.check(rel < tol::kA10Rel, "null mean");
    o.check(all_one, "identical sets give 1");
    o.check(same.pairwise_vs_null.p < tol::kA10P && same.listened_vs_null.p < tol::kA10P, "identical sets p");
    return o;
}

Outcome a11() {
    Outcome o;
    SynthConfig c;
    c.n_subjects = 6;
    c.channels = 16;
    c.duration_s = 6.0;
    c.seed = 11;
    const auto ds = generate_dataset(c);
    auto spec = default_mapping_spec(MappingKind::LinearLag, 16);
    spec.alpha_grid = {1e2};
    ScalingOptions so;
    so.subsets = 5;
    so.loso.include_null = false;
    const auto sc = scaling_curve(ds.sessions, spec, so, 4);
    const auto lo = run_loso(ds.sessions, spec, so.loso, 4);
    std::size_t matched = 0, compared = 0;
    for (const auto& row : sc.rows) {
        if (row.k != c.n_subjects - 1) continue;
        for (const auto& rec : lo.records)
            if (rec.subject_id == row.subject_id && rec.condition == EvalCondition::LOSO && !rec.null_model) {
                ++compared;
                matched += rec.mean_r == row.mean_r;
            }
    }
    std::vector<double> ks, means;
    o.detail << "curve:";
    for (const auto& s : sc.summary) {
        ks.push_back(static_cast<double>(s.k));
        means.push_back(s.mean);
        o.detail << " k=" << s.k << ' ' << std::setprecision(4) << s.mean;
    }
    const double rho = stats::spearman(ks, means);
    o.detail << "; spearman=" << rho << "; k=N-1 exact matches " << matched << "/" << compared;
    o.check(compared == c.n_subjects && matched == compared, "k = N-1 equals LOSO");
    o.check(rho > 0.0, "positive trend");
    return o;
}

Outcome a12() {
    Outcome o;
    const auto root = scratch("a12");
    SynthConfig c;
    c.n_subjects = 3;
    c.channels = 8;
    c.duration_s = 6.0;
    c.trials_per_condition = 4;
    c.seed = 12;

    const auto ds1 = generate_dataset(c);
    io::write_dataset(root / "gen1", ds1);
    io::write_dataset(root / "gen2", generate_dataset(c));
    o.check(same_tree(root / "gen1", root / "gen2"), "generate rerun");

    const auto loaded = io::read_dataset(root / "gen1");
    io::write_dataset(root / "gen3", SyntheticDataset{loaded.config, loaded.sessions, loaded.ground_truth, loaded.vocabulary});
    o.check(same_tree(root / "gen1", root / "gen3"), "dataset round trip");
    const auto reloaded = io::read_dataset(root / "gen3");
    bool exact = true;
    for (std::size_t s = 0; s < loaded.sessions.size(); ++s)
        for (std::size_t k = 0; k < 4; ++k)
            for (std::size_t t = 0; t < c.trials_per_condition; ++t)
                exact = exact && loaded.sessions[s].imagined[k][t].data == reloaded.sessions[s].imagined[k][t].data &&
                        loaded.sessions[s].listened[k][t].data == reloaded.sessions[s].listened[k][t].data;
    o.check(exact, "dataset values bitwise");

    LosoOptions lo;
    lo.held_out_trials = 1;
    lo.train.max_epochs = 3;
    lo.train.crop_samples = 200;
    auto rnn = default_mapping_spec(MappingKind::RNN, 8);
    rnn.rnn_hidden = 8;
    const std::vector<const PairedSession*> train = {&loaded.sessions[0], &loaded.sessions[1]};
    for (const auto& spec : {default_mapping_spec(MappingKind::LinearLag, 8), rnn}) {
        const std::string name(to_string(spec.kind));
        for (int run = 1; run <= 2; ++run) {
            auto m = fit_mapping(spec, train, lo, 5);
            io::round_to_f32(m);
            io::save_mapping(root / ("map" + std::to_string(run)) / name, m);
        }
        const auto stem1 = root / "map1" / name;
        const auto stem2 = root / "map2" / name;
        o.check(bytes_of(stem1.string() + ".bin") == bytes_of(stem2.string() + ".bin") &&
                    bytes_of(stem1.string() + ".json") == bytes_of(stem2.string() + ".json"),
                name + " train rerun");
        const auto back = io::load_mapping(stem1);
        io::save_mapping(root / "map3" / name, back);
        o.check(bytes_of(stem1.string() + ".bin") == bytes_of((root / "map3" / name).string() + ".bin"),
                name + " checkpoint round trip");
        auto fresh = fit_mapping(spec, train, lo, 5);
        io::round_to_f32(fresh);
        const auto& x = loaded.sessions[2].imagined[2][0];
        o.check(forward(back, x).data == forward(fresh, x).data, name + " predictions bitwise");
    }

    std::vector<LabelledWindow> windows;
    for (std::size_t s = 0; s < 2; ++s) {
        auto w = session_word_windows(loaded.sessions[s], TrialSource::Listened, loaded.vocabulary, c.window);
        windows.insert(windows.end(), w.begin(), w.end());
    }
    const auto table = make_synthetic_embedding_table(loaded.vocabulary, EncoderName::Semantic, 16, 1);
    DecoderSpec dspec;
    dspec.channels = 8;
    dspec.embed_dim = 16;
    dspec.spatial_filters = 8;
    dspec.temporal_blocks = 2;
    dspec.max_epochs = 2;
    dspec.batch_size = 16;
    for (int run = 1; run <= 2; ++run) {
        auto d = train_decoder(windows, table, loaded.vocabulary, dspec, 6);
        io::round_to_f32(d);
        io::save_decoder(root / ("dec" + std::to_string(run)) / "semantic", d);
    }
    o.check(same_tree(root / "dec1", root / "dec2"), "decoder train rerun");
    const auto dec = io::load_decoder(root / "dec1" / "semantic");
    io::save_decoder(root / "dec3" / "semantic", dec);
    o.check(same_tree(root / "dec1", root / "dec3"), "decoder checkpoint round trip");

    auto eval_table = [&](const TrainedDecoder& d) {
        io::CsvTable t({{"word", io::ColumnType::Str}, {"rank", io::ColumnType::Int}, {"top_sim", io::ColumnType::F64}});
        for (const auto& r : rank_windows(d, windows))
            t.add_row({r.true_word, io::cell(r.rank), io::cell(*std::max_element(r.similarities.begin(), r.similarities.end()))});
        return t;
    };
    io::write_csv(root / "eval1.csv", eval_table(dec));
    io::write_csv(root / "eval2.csv", eval_table(io::load_decoder(root / "dec2" / "semantic")));
    o.check(bytes_of(root / "eval1.csv") == bytes_of(root / "eval2.csv"), "eval rerun");
    const auto csv = io::read_csv(root / "eval1.csv");
    io::write_csv(root / "eval3.csv", csv);
    o.check(bytes_of(root / "eval1.csv") == bytes_of(root / "eval3.csv"), "csv round trip");

    o.detail << "generate, dataset, mapping (linear_lag, rnn), decoder and eval tables compared byte for byte";
    fs::remove_all(root);
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> all = {
        {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4},   {"A5", a5},   {"A6", a6},
        {"A7", a7}, {"A8", a8}, {"A9", a9}, {"A10", a10}, {"A11", a11}, {"A12", a12}};
    std::vector<std::string> wanted(argv + 1, argv + argc);
    for (const auto& w : wanted) {
        if (std::none_of(all.begin(), all.end(), [&](const auto& e) { return e.first == w; })) {
            std::cerr << "unknown criterion " << w << "\n";
            return 2;
        }
    }
    int failed = 0;
    for (const auto& [id, fn] : all) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), id) == wanted.end()) continue;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "exception: " << e.what();
        }
        std::cout << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail.str() << std::endl;
        failed += !o.pass;
    }
    return failed ? 1 : 0;
}
