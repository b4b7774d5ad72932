#include "isd/full_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "isd/rng.hpp"
#include "isd/signal_prep.hpp"

namespace isd {

std::vector<LabelledWindow> session_word_windows(const PairedSession& session, TrialSource source,
                                                 const Vocabulary& vocab, const WordWindowSpec& spec,
                                                 const std::vector<std::size_t>& trials) {
    std::vector<LabelledWindow> out;
    const auto& lists = source == TrialSource::Imagined ? session.imagined : session.listened;
    for (StimulusClass cls : {StimulusClass::Poem1, StimulusClass::Poem2}) {
        const auto& list = lists[index_of(cls)];
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (!trials.empty() && std::find(trials.begin(), trials.end(), i) == trials.end()) continue;
            const auto extraction = extract_word_windows(zscore_per_channel(list[i]), session.events_for(cls, i), spec);
            for (const auto& w : extraction.windows) {
                const auto idx = vocab.index_of(w.word);
                if (!idx) throw std::invalid_argument("word '" + w.word + "' is not in the vocabulary");
                out.push_back(LabelledWindow{w.window, *idx, session.subject_id});
            }
        }
    }
    return out;
}

DecodeResult decode_imagined(const TrialTensor& imagined, const std::vector<WordEvent>& events,
                             const TrainedMapping& mapping, const TrainedDecoder& decoder, const DecodeOptions& opt) {
    const TrialTensor predicted = zscore_per_channel(forward(mapping, zscore_per_channel(imagined)));
    std::vector<WordEvent> shifted = events;
    if (opt.onset_jitter_sd_s > 0.0) {
        Rng rng(derive_seed(opt.jitter_seed, "onset-jitter"));
        for (auto& e : shifted) e.onset_s += opt.onset_jitter_sd_s * rng.normal();
    }
    const auto extraction = extract_word_windows(predicted, shifted, opt.window);
    std::vector<LabelledWindow> windows;
    for (const auto& w : extraction.windows) {
        const auto idx = decoder.vocabulary.index_of(w.word);
        if (!idx) throw std::invalid_argument("word '" + w.word + "' is not in the decoder vocabulary");
        windows.push_back(LabelledWindow{w.window, *idx, {}});
    }
    DecodeResult out;
    out.skipped = extraction.skipped;
    if (!windows.empty()) out.outcomes = rank_windows(decoder, windows);
    return out;
}

void verify_zero_shot(const std::string& subject_id, const TrainedMapping& mapping, const TrainedDecoder& decoder) {
    auto contains = [&](const std::vector<std::string>& v) {
        return std::find(v.begin(), v.end(), subject_id) != v.end();
    };
    if (contains(mapping.meta.training_subjects)) {
        throw std::logic_error("zero-shot violation: " + subject_id + " is in the mapping training manifest");
    }
    if (contains(decoder.meta.training_subjects)) {
        throw std::logic_error("zero-shot violation: " + subject_id + " is in the decoder training manifest");
    }
}

PipelineRun run_pipeline(const PairedSession& held_out, const TrainedMapping& mapping, const TrainedDecoder& decoder,
                         const DecodeOptions& opt) {
    verify_zero_shot(held_out.subject_id, mapping, decoder);
    PipelineRun run;
    run.subject_id = held_out.subject_id;
    run.mapping = mapping.spec.kind;
    run.encoder = decoder.encoder;
    for (StimulusClass cls : {StimulusClass::Poem1, StimulusClass::Poem2}) {
        const auto& list = held_out.imagined[index_of(cls)];
        for (std::size_t i = 0; i < list.size(); ++i) {
            DecodeOptions trial_opt = opt;
            trial_opt.jitter_seed = derive_seed(opt.jitter_seed, index_of(cls) * list.size() + i);
            auto r = decode_imagined(list[i], held_out.events_for(cls, i), mapping, decoder, trial_opt);
            run.skipped += r.skipped.size();
            for (auto& o : r.outcomes) run.outcomes.push_back(std::move(o));
        }
    }
    if (run.outcomes.empty()) throw std::runtime_error("no decodable word windows for " + held_out.subject_id);
    const std::size_t V = decoder.vocabulary.size();
    run.auc_above_chance_pct = auc_above_chance(run.outcomes, V);
    double total = 0.0;
    for (const auto& o : run.outcomes) total += static_cast<double>(o.rank);
    run.mean_rank = total / static_cast<double>(run.outcomes.size());
    run.vs_uniform = ranks_vs_uniform(run.outcomes, V);
    return run;
}

double auc_above_chance(const std::vector<RankOutcome>& outcomes, std::size_t V, std::size_t K) {
    if (outcomes.empty()) throw std::invalid_argument("auc_above_chance needs at least one outcome");
    if (V < 2) throw std::invalid_argument("auc_above_chance needs a vocabulary of at least two words");
    if (K == 0) K = V;
    if (K > V) throw std::invalid_argument("auc_above_chance: K exceeds the vocabulary size");
    const auto cdf = rank_cdf(outcomes, V).cdf;
    double area = 0.0, best = 0.0;
    for (std::size_t k = 1; k <= K; ++k) {
        const double chance = static_cast<double>(k) / static_cast<double>(V);
        area += cdf[k - 1] - chance;
        best += 1.0 - chance;
    }
    return 100.0 * area / best;
}

stats::TestResult ranks_vs_uniform(const std::vector<RankOutcome>& outcomes, std::size_t V) {
    std::vector<double> observed, uniform;
    for (const auto& o : outcomes) observed.push_back(static_cast<double>(o.rank));
    for (std::size_t k = 1; k <= V; ++k) uniform.push_back(static_cast<double>(k));
    return stats::ranksum(observed, uniform, stats::Alternative::Less);
}

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    if (sa.empty() && sb.empty()) return 1.0;
    std::size_t common = 0;
    for (const auto& w : sa) common += sb.count(w);
    return static_cast<double>(common) / static_cast<double>(sa.size() + sb.size() - common);
}

ConsistencyResult consistency_analysis(const std::vector<std::vector<std::string>>& sets,
                                       const std::vector<std::string>& listened_top, const Vocabulary& vocab,
                                       std::size_t n_null_draws, std::uint64_t seed, std::size_t set_size) {
    if (set_size == 0 || set_size > vocab.size()) throw std::invalid_argument("set size must be in 1..V");
    auto check = [&](const std::vector<std::string>& s, const std::string& what) {
        if (std::set<std::string>(s.begin(), s.end()).size() != set_size || s.size() != set_size) {
            throw std::invalid_argument(what + " must hold exactly " + std::to_string(set_size) + " distinct words");
        }
        for (const auto& w : s)
            if (!vocab.contains(w)) throw std::invalid_argument(what + ": '" + w + "' is not in the vocabulary");
    };
    for (const auto& s : sets) check(s, "top-word set");
    if (!listened_top.empty()) check(listened_top, "listened top-word set");

    ConsistencyResult out;
    for (std::size_t i = 0; i < sets.size(); ++i)
        for (std::size_t j = i + 1; j < sets.size(); ++j) out.pairwise.push_back(jaccard(sets[i], sets[j]));
    if (!listened_top.empty())
        for (const auto& s : sets) out.vs_listened.push_back(jaccard(s, listened_top));

    Rng rng(derive_seed(seed, "jaccard-null"));
    std::vector<std::size_t> pool(vocab.size());
    auto draw = [&] {
        for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
        std::vector<std::string> s;
        for (std::size_t i = 0; i < set_size; ++i) {
            std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
            s.push_back(vocab.word(pool[i]));
        }
        return s;
    };
    out.null.reserve(n_null_draws);
    for (std::size_t d = 0; d < n_null_draws; ++d) {
        const auto a = draw();
        out.null.push_back(jaccard(a, draw()));
    }
    if (!out.null.empty()) {
        if (!out.pairwise.empty())
            out.pairwise_vs_null = stats::ranksum(out.pairwise, out.null, stats::Alternative::Greater);
        if (!out.vs_listened.empty())
            out.listened_vs_null = stats::ranksum(out.vs_listened, out.null, stats::Alternative::Greater);
    }
    return out;
}

}  // namespace isd
