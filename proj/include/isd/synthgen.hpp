#pragma once

// Synthetic paired imagined/listened recordings with a known imagined->listened
// map, so that mapping recovery and decoding can be checked against ground truth.
//
// Generative model for subject s, trial latent u [L x T]:
//   clean   = A_s u                                   (A_s = A_common + perturbation)
//   imagined = att * K^-1(clean) + sd_im * (I - P_s) n  (P_s projects onto col(A_s))
//   listened = G_s(imagined) + sd_li * n'
//   G_s(x)   = K(P_s x) / att                          (lag_linear)
//            = 0.5 g + 0.5 tanh(g), g = K(P_s x) / att (nonlinear_tanh)
// K is a lag kernel over +/- lag_delta_s with a unit centre tap, shared by all
// subjects. Trial latents mix a class template (circularly shifted by a
// trial-specific offset unless disabled), a trial-specific component and, for
// poems, word signatures placed at the annotated onsets.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "isd/core_types.hpp"
#include "isd/signal_prep.hpp"

namespace isd {

enum class GroundTruthKind : std::uint8_t { LagLinear, NonlinearTanh };
std::string_view to_string(GroundTruthKind k);
GroundTruthKind ground_truth_kind_from_string(std::string_view s);

struct SynthConfig {
    std::size_t n_subjects = 17;
    std::size_t trials_per_condition = kDefaultTrialsPerCondition;
    double duration_s = kDefaultTrialDurationS;
    std::size_t channels = kDefaultChannels;
    double sample_rate_hz = kDefaultSampleRateHz;
    std::size_t latent_dim = 8;
    double noise_sd_listened = 0.3;
    double noise_sd_imagined = 1.0;
    double imagined_attenuation = 0.5;
    GroundTruthKind mapping_kind = GroundTruthKind::LagLinear;
    std::uint64_t seed = 0;

    double subject_perturbation = 0.3;
    double class_share = 0.5;  // fraction of trial-latent variance from the class template
    bool shift_class_template = true;
    double word_amplitude = 1.0;
    double word_spacing_s = 1.0;
    double lag_delta_s = 0.1;
    WordWindowSpec window;

    std::size_t samples() const;
    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
};

struct SubjectGroundTruth {
    std::string subject_id;
    Matrix mixing;      // A_s [C x L]
    Matrix projection;  // P_s [C x C]
};

struct GroundTruth {
    GroundTruthKind kind = GroundTruthKind::LagLinear;
    std::vector<double> kernel;  // taps for lags -H..H
    double attenuation = 0.5;
    double noise_sd_listened = 0.0;
    double noise_sd_imagined = 0.0;
    std::vector<SubjectGroundTruth> subjects;
};

struct SyntheticDataset {
    SynthConfig config;
    std::vector<PairedSession> sessions;
    GroundTruth ground_truth;
    Vocabulary vocabulary;
};

/// Four unit-variance band-limited latents [L x T], indexed by StimulusClass.
/// The two melodies share a common component, as do the two poems.
std::array<Matrix, 4> make_stimulus_latents(const SynthConfig& cfg);

/// Word events for one poem trial on the isochronous grid.
std::vector<WordEvent> make_word_schedule(const SynthConfig& cfg, const Vocabulary& vocab,
                                          StimulusClass poem, std::size_t trial);
std::size_t events_per_poem_trial(const SynthConfig& cfg);

SyntheticDataset generate_dataset(const SynthConfig& cfg);

/// G_s applied to an imagined trial [C x T].
Matrix apply_ground_truth(const GroundTruth& gt, const SubjectGroundTruth& subject, const Matrix& imagined);

/// Applies the lag kernel per channel with zero padding.
Matrix apply_lag_kernel(const std::vector<double>& kernel, const Matrix& x);

/// Word-labelled listened windows drawn directly from the generative model;
/// used to exercise the decoder at controlled SNR.
struct WordWindowFixtureConfig {
    std::size_t channels = 16;
    std::size_t latent_dim = 8;
    double sample_rate_hz = kDefaultSampleRateHz;
    WordWindowSpec window;
    std::size_t windows_per_word = 50;
    double word_amplitude = 2.0;
    double background_sd = 0.5;
    double noise_sd = 0.3;
    std::uint64_t seed = 0;
};

std::vector<LabelledWindow> make_word_window_fixture(const WordWindowFixtureConfig& cfg,
                                                     const Vocabulary& vocab);

/// Independent Gaussian vectors per word (nearly orthogonal for large dim).
EmbeddingTable make_synthetic_embedding_table(const Vocabulary& vocab, EncoderName encoder,
                                              std::size_t dim, std::uint64_t seed);

}  // namespace isd
