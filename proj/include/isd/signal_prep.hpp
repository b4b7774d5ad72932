#pragma once

// Deterministic signal transforms shared by training and evaluation.

#include <string>
#include <vector>

#include "isd/core_types.hpp"

namespace isd {

/// Symmetric lag window of +/- delta_s seconds.
struct LagSpec {
    double delta_s = 0.1;
    double sample_rate_hz = kDefaultSampleRateHz;

    std::size_t half_width() const;  // round(delta_s * sample_rate_hz)
    std::size_t n_lags() const { return 2 * half_width() + 1; }

    friend bool operator==(const LagSpec&, const LagSpec&) = default;
};

/// Word window extent around an onset.
struct WordWindowSpec {
    double pre_s = 0.2;
    double post_s = 0.8;

    std::size_t length(double sample_rate_hz) const;  // round((pre + post) * fs)
    void validate() const;

    friend bool operator==(const WordWindowSpec&, const WordWindowSpec&) = default;
};

/// Per-channel z-score with sample sd; constant channels become zero.
TrialTensor zscore_per_channel(const TrialTensor& x);
Matrix zscore_rows(const Matrix& x);

/// [T x C * n_lags]; column j * C + c holds channel c at sample t + lag_j,
/// lag_j = j - half_width, zero outside the trial.
Matrix build_lag_matrix(const TrialTensor& x, const LagSpec& spec);
Matrix build_lag_matrix(const Matrix& x, std::size_t half_width);

/// lag^T lag for lag = build_lag_matrix(x, half_width), computed from channel
/// cross-correlations with edge corrections.
Matrix lagged_gram(const Matrix& x, std::size_t half_width);
/// lag^T y^T for y [C_out x T].
Matrix lagged_cross(const Matrix& x, const Matrix& y, std::size_t half_width);

struct WordWindow {
    Matrix window;  // [C x W]
    std::string word;
    double onset_s = 0.0;
};

struct WindowExtraction {
    std::vector<WordWindow> windows;
    std::vector<std::string> skipped;  // one reason per rejected event
};

WindowExtraction extract_word_windows(const TrialTensor& trial, const std::vector<WordEvent>& events,
                                      const WordWindowSpec& spec);

/// True where the channel variance (population) is below `var_threshold`.
std::vector<bool> screen_dead_channels(const TrialTensor& x, double var_threshold = 1e-12);

}  // namespace isd
