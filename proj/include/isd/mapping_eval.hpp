#pragma once

// Mapping evaluation: per-channel correlation, null pairings, leave-one-subject-out
// harness, correlation-template classification, ensemble voting and data scaling.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "isd/core_types.hpp"
#include "isd/mapping_models.hpp"

namespace isd {

enum class EvalCondition : std::uint8_t { Train, UnseenTrials, LOSO };
std::string_view to_string(EvalCondition c);
EvalCondition eval_condition_from_string(std::string_view s);

struct EvalRecord {
    std::string subject_id;  // held-out subject of the fold
    EvalCondition condition = EvalCondition::LOSO;
    MappingKind model = MappingKind::LinearLag;
    bool null_model = false;
    double mean_r = 0.0;
    std::vector<double> per_channel_r;
};

struct ChannelCorrelation {
    double mean_r = 0.0;
    std::vector<double> per_channel_r;
};

/// Per-channel Pearson r (constant channels give 0) and its mean.
ChannelCorrelation mean_channel_pearson(const Matrix& yhat, const Matrix& y);

/// Flat trial index over a session: class-major, index_of(class) * n + trial.
struct TrialRef {
    StimulusClass stimulus_class = StimulusClass::Melody1;
    std::size_t trial = 0;
};
TrialRef trial_ref(std::size_t flat, std::size_t trials_per_condition);

/// Derangement of a session's trial pairs: imagined trial i is paired with
/// listened trial partner[i] != i, whose class label it takes.
struct NullPairing {
    std::vector<std::size_t> partner;
};

/// Uniformly random derangement; throws for sessions with fewer than two trials.
NullPairing make_null_pairing(const PairedSession& session, std::uint64_t seed);
std::vector<std::size_t> uniform_derangement(std::size_t n, Rng& rng);

/// Trials held out from training subjects: the last `held_out` of each condition.
enum class TrialSplit : std::uint8_t { All, Train, HeldOut };

/// Z-scored (imagined, listened) pairs of a session.
std::vector<TrialPair> session_pairs(const PairedSession& session, TrialSplit split, std::size_t held_out);
/// Same, with listened partners taken from a null pairing.
std::vector<TrialPair> null_session_pairs(const PairedSession& session, const NullPairing& pairing,
                                          TrialSplit split, std::size_t held_out);

struct LosoOptions {
    std::size_t held_out_trials = 2;
    bool include_null = true;
    MappingTrainOptions train;
    /// Restricts the folds to these held-out subjects (all when empty).
    std::vector<std::string> subjects;
};

struct FoldFailure {
    std::string subject_id;
    MappingKind model = MappingKind::LinearLag;
    bool null_model = false;
    std::string message;
};

struct LosoResult {
    std::vector<EvalRecord> records;
    std::vector<FoldFailure> failures;
    std::vector<TrainedMapping> models;  // real models, one per successful fold
};

/// Training seed of the fold that holds out `subject_index`.
std::uint64_t fold_seed(std::uint64_t seed, std::size_t subject_index, bool null_model);

/// Fits a mapping on the given sessions (closed form for LinearLag). For neural
/// models the last training trial of every condition is used for early stopping.
TrainedMapping fit_mapping(const MappingSpec& spec, const std::vector<const PairedSession*>& sessions,
                           const LosoOptions& opt, std::uint64_t seed, const NullPairing* null_pairings = nullptr);

/// Mean over trials of the per-channel correlation, averaged per channel.
ChannelCorrelation evaluate_mapping(const TrainedMapping& model, const std::vector<TrialPair>& pairs);

LosoResult run_loso(const std::vector<PairedSession>& sessions, const MappingSpec& spec, const LosoOptions& opt,
                    std::uint64_t seed);

struct ConfusionMatrix {
    std::vector<std::vector<std::size_t>> counts;  // [true][predicted]

    explicit ConfusionMatrix(std::size_t classes = 4);
    std::size_t classes() const noexcept { return counts.size(); }
    void add(std::size_t truth, std::size_t predicted);
    std::size_t total() const;
    double accuracy() const;
    /// Row-normalised; empty rows stay zero.
    std::vector<std::vector<double>> probabilities() const;
};

struct ClassificationResult {
    ConfusionMatrix four{4};
    ConfusionMatrix two{2};  // melody vs poem
    std::vector<std::size_t> predicted;
    std::vector<std::array<double, 4>> scores;  // mean r against each template
};

/// Class means of the z-scored listened trials.
std::array<Matrix, 4> class_templates(const PairedSession& session);

/// Assigns each prediction to the template with the highest mean per-channel r.
ClassificationResult correlation_classify(const std::vector<Matrix>& predictions,
                                          const std::vector<StimulusClass>& labels,
                                          const std::array<Matrix, 4>& templates);

/// Majority vote per trial; ties go to the label with the largest summed
/// score among the models voting for it (then the lowest label).
std::vector<std::size_t> ensemble_vote(const std::vector<std::vector<std::size_t>>& labels,
                                       const std::vector<std::vector<double>>& scores);

struct ScalingOptions {
    std::size_t subsets = 10;     // m
    std::vector<std::size_t> ks;  // empty: 1 .. N-1
    LosoOptions loso;
};

struct ScalingRow {
    std::size_t k = 0;
    std::string subject_id;
    double mean_r = 0.0;  // mean over subsets
    std::size_t subsets_used = 0;
};

struct ScalingSummary {
    std::size_t k = 0;
    double mean = 0.0;
    double sd = 0.0;
};

struct ScalingResult {
    std::vector<ScalingRow> rows;
    std::vector<ScalingSummary> summary;
    std::vector<FoldFailure> failures;
};

ScalingResult scaling_curve(const std::vector<PairedSession>& sessions, const MappingSpec& spec,
                            const ScalingOptions& opt, std::uint64_t seed);

}  // namespace isd
