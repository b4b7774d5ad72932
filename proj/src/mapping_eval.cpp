#include "isd/mapping_eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "isd/nn/ops.hpp"
#include "isd/rng.hpp"
#include "isd/signal_prep.hpp"
#include "isd/stats.hpp"

namespace isd {

std::string_view to_string(EvalCondition c) {
    switch (c) {
        case EvalCondition::Train: return "train";
        case EvalCondition::UnseenTrials: return "unseen_trials";
        case EvalCondition::LOSO: return "loso";
    }
    return "?";
}

EvalCondition eval_condition_from_string(std::string_view s) {
    if (s == "train") return EvalCondition::Train;
    if (s == "unseen_trials") return EvalCondition::UnseenTrials;
    if (s == "loso") return EvalCondition::LOSO;
    throw std::invalid_argument("unknown evaluation condition '" + std::string(s) + "'");
}

ChannelCorrelation mean_channel_pearson(const Matrix& yhat, const Matrix& y) {
    if (yhat.rows() != y.rows() || yhat.cols() != y.cols()) {
        throw std::invalid_argument("mean_channel_pearson: shape mismatch");
    }
    ChannelCorrelation out;
    out.per_channel_r.resize(static_cast<std::size_t>(y.rows()));
    double sum = 0.0;
    for (Eigen::Index c = 0; c < y.rows(); ++c) {
        const double r = nn::kernels::pearson(yhat.row(c).data(), y.row(c).data(), static_cast<std::size_t>(y.cols()));
        out.per_channel_r[static_cast<std::size_t>(c)] = r;
        sum += r;
    }
    out.mean_r = y.rows() ? sum / static_cast<double>(y.rows()) : 0.0;
    return out;
}

TrialRef trial_ref(std::size_t flat, std::size_t trials_per_condition) {
    return {kAllStimulusClasses.at(flat / trials_per_condition), flat % trials_per_condition};
}

std::vector<std::size_t> uniform_derangement(std::size_t n, Rng& rng) {
    if (n < 2) throw std::invalid_argument("a derangement needs at least two items");
    std::vector<std::size_t> p(n);
    for (;;) {
        std::iota(p.begin(), p.end(), 0);
        rng.shuffle(p);
        bool fixed = false;
        for (std::size_t i = 0; i < n && !fixed; ++i) fixed = p[i] == i;
        if (!fixed) return p;
    }
}

NullPairing make_null_pairing(const PairedSession& session, std::uint64_t seed) {
    const std::size_t n = 4 * session.trials_per_condition();
    if (n < 2) throw std::invalid_argument("null pairing needs a session with at least two trials");
    Rng rng(derive_seed(seed, "null-pairing"));
    return NullPairing{uniform_derangement(n, rng)};
}

namespace {

bool in_split(std::size_t trial, std::size_t n, TrialSplit split, std::size_t held_out) {
    if (held_out >= n && split != TrialSplit::All) {
        throw std::invalid_argument("held-out trial count must be smaller than the trials per condition");
    }
    switch (split) {
        case TrialSplit::All: return true;
        case TrialSplit::Train: return trial + held_out < n;
        case TrialSplit::HeldOut: return trial + held_out >= n;
    }
    return false;
}

}  // namespace

std::vector<TrialPair> session_pairs(const PairedSession& session, TrialSplit split, std::size_t held_out) {
    std::vector<TrialPair> out;
    const std::size_t n = session.trials_per_condition();
    for (auto cls : kAllStimulusClasses) {
        for (std::size_t i = 0; i < n; ++i) {
            if (!in_split(i, n, split, held_out)) continue;
            out.push_back(TrialPair{zscore_rows(session.imagined[index_of(cls)][i].data),
                                    zscore_rows(session.listened[index_of(cls)][i].data), session.subject_id, cls, i});
        }
    }
    return out;
}

std::vector<TrialPair> null_session_pairs(const PairedSession& session, const NullPairing& pairing, TrialSplit split,
                                          std::size_t held_out) {
    const std::size_t n = session.trials_per_condition();
    if (pairing.partner.size() != 4 * n) throw std::invalid_argument("null pairing does not match the session");
    std::vector<TrialPair> out;
    for (std::size_t flat = 0; flat < 4 * n; ++flat) {
        const TrialRef im = trial_ref(flat, n);
        if (!in_split(im.trial, n, split, held_out)) continue;
        const TrialRef li = trial_ref(pairing.partner[flat], n);
        out.push_back(TrialPair{zscore_rows(session.imagined[index_of(im.stimulus_class)][im.trial].data),
                                zscore_rows(session.listened[index_of(li.stimulus_class)][li.trial].data),
                                session.subject_id, li.stimulus_class, im.trial});
    }
    return out;
}

std::uint64_t fold_seed(std::uint64_t seed, std::size_t subject_index, bool null_model) {
    return derive_seed(derive_seed(seed, null_model ? "fold-null" : "fold"), subject_index);
}

TrainedMapping fit_mapping(const MappingSpec& spec, const std::vector<const PairedSession*>& sessions,
                           const LosoOptions& opt, std::uint64_t seed, const NullPairing* null_pairings) {
    if (sessions.empty()) throw std::invalid_argument("fit_mapping needs at least one training session");
    std::vector<TrialPair> train, val;
    for (std::size_t s = 0; s < sessions.size(); ++s) {
        auto pairs = null_pairings ? null_session_pairs(*sessions[s], null_pairings[s], TrialSplit::Train, opt.held_out_trials)
                                   : session_pairs(*sessions[s], TrialSplit::Train, opt.held_out_trials);
        const std::size_t n_train = sessions[s]->trials_per_condition() - opt.held_out_trials;
        for (auto& p : pairs) {
            if (is_neural(spec.kind) && n_train >= 2 && p.trial_index + 1 == n_train) {
                val.push_back(std::move(p));
            } else {
                train.push_back(std::move(p));
            }
        }
    }
    TrainedMapping m = spec.kind == MappingKind::LinearLag ? fit_linear_lag(spec, train)
                                                           : train_mapping(spec, train, val, opt.train, seed);
    m.meta.seed = seed;
    m.meta.training_subjects.clear();
    for (const auto* s : sessions) m.meta.training_subjects.push_back(s->subject_id);
    return m;
}

ChannelCorrelation evaluate_mapping(const TrainedMapping& model, const std::vector<TrialPair>& pairs) {
    ChannelCorrelation out;
    if (pairs.empty()) return out;
    const MappingPredictor predictor(model);
    out.per_channel_r.assign(model.spec.channels, 0.0);
    for (const auto& p : pairs) {
        const auto r = mean_channel_pearson(predictor.predict(p.x), p.y);
        for (std::size_t c = 0; c < r.per_channel_r.size(); ++c) out.per_channel_r[c] += r.per_channel_r[c];
    }
    double sum = 0.0;
    for (double& r : out.per_channel_r) {
        r /= static_cast<double>(pairs.size());
        sum += r;
    }
    out.mean_r = sum / static_cast<double>(out.per_channel_r.size());
    return out;
}

LosoResult run_loso(const std::vector<PairedSession>& sessions, const MappingSpec& spec, const LosoOptions& opt,
                    std::uint64_t seed) {
    if (sessions.size() < 2) throw std::invalid_argument("LOSO needs at least two subjects");
    std::vector<NullPairing> pairings;
    if (opt.include_null) {
        for (std::size_t s = 0; s < sessions.size(); ++s)
            pairings.push_back(make_null_pairing(sessions[s], derive_seed(seed, s)));
    }
    LosoResult result;
    for (std::size_t held = 0; held < sessions.size(); ++held) {
        const auto& test = sessions[held];
        if (!opt.subjects.empty() &&
            std::find(opt.subjects.begin(), opt.subjects.end(), test.subject_id) == opt.subjects.end())
            continue;
        std::vector<const PairedSession*> others;
        std::vector<NullPairing> other_pairings;
        std::vector<TrialPair> train_eval, unseen_eval;
        for (std::size_t s = 0; s < sessions.size(); ++s) {
            if (s == held) continue;
            others.push_back(&sessions[s]);
            if (opt.include_null) other_pairings.push_back(pairings[s]);
            auto tr = session_pairs(sessions[s], TrialSplit::Train, opt.held_out_trials);
            auto ho = session_pairs(sessions[s], TrialSplit::HeldOut, opt.held_out_trials);
            std::move(tr.begin(), tr.end(), std::back_inserter(train_eval));
            std::move(ho.begin(), ho.end(), std::back_inserter(unseen_eval));
        }
        const auto loso_eval = session_pairs(test, TrialSplit::All, opt.held_out_trials);

        for (int variant = 0; variant < (opt.include_null ? 2 : 1); ++variant) {
            const bool is_null = variant == 1;
            try {
                TrainedMapping model = fit_mapping(spec, others, opt, fold_seed(seed, held, is_null),
                                                   is_null ? other_pairings.data() : nullptr);
                const std::pair<EvalCondition, const std::vector<TrialPair>*> sets[] = {
                    {EvalCondition::Train, &train_eval},
                    {EvalCondition::UnseenTrials, &unseen_eval},
                    {EvalCondition::LOSO, &loso_eval}};
                for (const auto& [cond, pairs] : sets) {
                    auto cc = evaluate_mapping(model, *pairs);
                    result.records.push_back(
                        EvalRecord{test.subject_id, cond, spec.kind, is_null, cc.mean_r, std::move(cc.per_channel_r)});
                }
                if (!is_null) result.models.push_back(std::move(model));
            } catch (const std::exception& e) {
                result.failures.push_back(FoldFailure{test.subject_id, spec.kind, is_null, e.what()});
            }
        }
    }
    return result;
}

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : counts(classes, std::vector<std::size_t>(classes, 0)) {}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
    counts.at(truth).at(predicted) += 1;
}

std::size_t ConfusionMatrix::total() const {
    std::size_t n = 0;
    for (const auto& row : counts) n += std::accumulate(row.begin(), row.end(), std::size_t{0});
    return n;
}

double ConfusionMatrix::accuracy() const {
    const std::size_t n = total();
    if (n == 0) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) hit += counts[i][i];
    return static_cast<double>(hit) / static_cast<double>(n);
}

std::vector<std::vector<double>> ConfusionMatrix::probabilities() const {
    std::vector<std::vector<double>> p(counts.size(), std::vector<double>(counts.size(), 0.0));
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double row = static_cast<double>(std::accumulate(counts[i].begin(), counts[i].end(), std::size_t{0}));
        if (row == 0.0) continue;
        for (std::size_t j = 0; j < counts.size(); ++j) p[i][j] = static_cast<double>(counts[i][j]) / row;
    }
    return p;
}

std::array<Matrix, 4> class_templates(const PairedSession& session) {
    std::array<Matrix, 4> out;
    for (auto cls : kAllStimulusClasses) {
        const auto& trials = session.listened[index_of(cls)];
        if (trials.empty()) {
            throw std::invalid_argument("class " + std::string(to_string(cls)) + " has no listened trials");
        }
        Matrix sum = Matrix::Zero(trials[0].data.rows(), trials[0].data.cols());
        for (const auto& t : trials) sum += zscore_rows(t.data);
        out[index_of(cls)] = sum / static_cast<double>(trials.size());
    }
    return out;
}

ClassificationResult correlation_classify(const std::vector<Matrix>& predictions, const std::vector<StimulusClass>& labels,
                                          const std::array<Matrix, 4>& templates) {
    if (predictions.size() != labels.size()) throw std::invalid_argument("correlation_classify: label count mismatch");
    for (const auto& t : templates) {
        if (t.size() == 0) throw std::invalid_argument("correlation_classify: missing class template");
    }
    ClassificationResult out;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        std::array<double, 4> s{};
        std::size_t best = 0;
        for (std::size_t c = 0; c < 4; ++c) {
            s[c] = mean_channel_pearson(predictions[i], templates[c]).mean_r;
            if (s[c] > s[best]) best = c;
        }
        const std::size_t truth = index_of(labels[i]);
        out.four.add(truth, best);
        out.two.add(truth / 2, best / 2);
        out.predicted.push_back(best);
        out.scores.push_back(s);
    }
    return out;
}

std::vector<std::size_t> ensemble_vote(const std::vector<std::vector<std::size_t>>& labels,
                                       const std::vector<std::vector<double>>& scores) {
    if (labels.empty()) throw std::invalid_argument("ensemble_vote needs at least one model");
    if (!scores.empty() && scores.size() != labels.size()) {
        throw std::invalid_argument("ensemble_vote: one score list per model is required");
    }
    const std::size_t n = labels[0].size();
    for (std::size_t m = 0; m < labels.size(); ++m) {
        if (labels[m].size() != n || (!scores.empty() && scores[m].size() != n)) {
            throw std::invalid_argument("ensemble_vote: label lists differ in length");
        }
    }
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::map<std::size_t, std::pair<std::size_t, double>> tally;  // label -> (votes, summed score)
        for (std::size_t m = 0; m < labels.size(); ++m) {
            auto& t = tally[labels[m][i]];
            t.first += 1;
            t.second += scores.empty() ? 0.0 : scores[m][i];
        }
        auto best = tally.begin();
        for (auto it = tally.begin(); it != tally.end(); ++it) {
            if (it->second.first > best->second.first ||
                (it->second.first == best->second.first && it->second.second > best->second.second))
                best = it;
        }
        out[i] = best->first;
    }
    return out;
}

ScalingResult scaling_curve(const std::vector<PairedSession>& sessions, const MappingSpec& spec,
                            const ScalingOptions& opt, std::uint64_t seed) {
    const std::size_t N = sessions.size();
    if (N < 2) throw std::invalid_argument("scaling_curve needs at least two subjects");
    if (opt.subsets == 0) throw std::invalid_argument("scaling_curve needs m >= 1");
    std::vector<std::size_t> ks = opt.ks;
    if (ks.empty())
        for (std::size_t k = 1; k < N; ++k) ks.push_back(k);
    for (std::size_t k : ks) {
        if (k == 0 || k > N - 1) {
            throw std::invalid_argument("scaling_curve: k = " + std::to_string(k) + " outside 1.." + std::to_string(N - 1));
        }
    }
    ScalingResult result;
    for (std::size_t held = 0; held < N; ++held) {
        const auto& test = sessions[held];
        if (!opt.loso.subjects.empty() &&
            std::find(opt.loso.subjects.begin(), opt.loso.subjects.end(), test.subject_id) == opt.loso.subjects.end())
            continue;
        std::vector<std::size_t> others;
        for (std::size_t s = 0; s < N; ++s)
            if (s != held) others.push_back(s);
        const auto test_pairs = session_pairs(test, TrialSplit::All, opt.loso.held_out_trials);
        std::map<std::vector<std::size_t>, double> cache;
        for (std::size_t k : ks) {
            Rng rng(derive_seed(derive_seed(seed, "scaling"), held * 1000003 + k));
            std::vector<double> values;
            for (std::size_t draw = 0; draw < opt.subsets; ++draw) {
                std::vector<std::size_t> pool = others;
                for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
                std::vector<std::size_t> subset(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
                std::sort(subset.begin(), subset.end());
                auto it = cache.find(subset);
                if (it == cache.end()) {
                    try {
                        std::vector<const PairedSession*> train;
                        for (std::size_t s : subset) train.push_back(&sessions[s]);
                        const auto model = fit_mapping(spec, train, opt.loso, fold_seed(seed, held, false));
                        it = cache.emplace(subset, evaluate_mapping(model, test_pairs).mean_r).first;
                    } catch (const std::exception& e) {
                        result.failures.push_back(FoldFailure{test.subject_id, spec.kind, false,
                                                              "k=" + std::to_string(k) + ": " + e.what()});
                        continue;
                    }
                }
                values.push_back(it->second);
            }
            const bool same = std::all_of(values.begin(), values.end(), [&](double v) { return v == values[0]; });
            const double mean_r = values.empty() ? 0.0 : same ? values[0] : stats::mean(values);
            result.rows.push_back(ScalingRow{k, test.subject_id, mean_r, values.size()});
        }
    }
    for (std::size_t k : ks) {
        std::vector<double> vals;
        for (const auto& r : result.rows)
            if (r.k == k && r.subsets_used > 0) vals.push_back(r.mean_r);
        result.summary.push_back(ScalingSummary{k, stats::mean(vals), stats::sample_sd(vals)});
    }
    return result;
}

}  // namespace isd
