#pragma once

// Zero-shot imagined-word decoding: a frozen mapping turns imagined trials into
// predicted listened trials, whose word windows are scored by a frozen decoder.
// Also the AUC-above-chance summary and the top-20 word consistency analysis.

#include <cstdint>
#include <string>
#include <vector>

#include "isd/contrastive_decoder.hpp"
#include "isd/mapping_eval.hpp"
#include "isd/mapping_models.hpp"
#include "isd/stats.hpp"

namespace isd {

enum class TrialSource : std::uint8_t { Imagined, Listened };

/// Z-scored word windows of a session's poem trials, labelled by `vocab`.
/// `trials` restricts the trial indices (all when empty).
std::vector<LabelledWindow> session_word_windows(const PairedSession& session, TrialSource source,
                                                 const Vocabulary& vocab, const WordWindowSpec& spec,
                                                 const std::vector<std::size_t>& trials = {});

struct DecodeOptions {
    WordWindowSpec window;
    double onset_jitter_sd_s = 0.0;
    std::uint64_t jitter_seed = 0;
};

struct DecodeResult {
    std::vector<RankOutcome> outcomes;
    std::vector<std::string> skipped;
};

/// Maps one imagined trial, z-scores the prediction and ranks every in-bounds word window.
DecodeResult decode_imagined(const TrialTensor& imagined, const std::vector<WordEvent>& events,
                             const TrainedMapping& mapping, const TrainedDecoder& decoder,
                             const DecodeOptions& opt = {});

/// Throws std::logic_error when `subject_id` was used to train either component.
void verify_zero_shot(const std::string& subject_id, const TrainedMapping& mapping, const TrainedDecoder& decoder);

struct PipelineRun {
    std::string subject_id;
    MappingKind mapping = MappingKind::LinearLag;
    EncoderName encoder = EncoderName::Semantic;
    std::vector<RankOutcome> outcomes;
    std::size_t skipped = 0;
    double auc_above_chance_pct = 0.0;
    double mean_rank = 0.0;
    stats::TestResult vs_uniform;  // one-sided rank-sum, lower ranks than uniform
};

/// Decodes every poem trial of a held-out session.
PipelineRun run_pipeline(const PairedSession& held_out, const TrainedMapping& mapping, const TrainedDecoder& decoder,
                         const DecodeOptions& opt = {});

/// Percent of the maximum area between the rank CDF and the chance line over k = 1..K (K = 0 means V).
double auc_above_chance(const std::vector<RankOutcome>& outcomes, std::size_t vocabulary_size, std::size_t K = 0);

/// One-sided rank-sum of observed ranks against the uniform support 1..V.
stats::TestResult ranks_vs_uniform(const std::vector<RankOutcome>& outcomes, std::size_t vocabulary_size);

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b);

struct ConsistencyResult {
    std::vector<double> pairwise;
    std::vector<double> vs_listened;
    std::vector<double> null;
    stats::TestResult pairwise_vs_null;
    stats::TestResult listened_vs_null;
};

/// Jaccard consistency of top-`set_size` word sets against random draws from the vocabulary.
ConsistencyResult consistency_analysis(const std::vector<std::vector<std::string>>& sets,
                                       const std::vector<std::string>& listened_top, const Vocabulary& vocab,
                                       std::size_t n_null_draws = 100000, std::uint64_t seed = 0,
                                       std::size_t set_size = 20);

}  // namespace isd
