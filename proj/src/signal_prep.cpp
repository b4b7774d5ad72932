#include "isd/signal_prep.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace isd {

std::size_t LagSpec::half_width() const {
    if (delta_s < 0.0 || !(sample_rate_hz > 0.0)) {
        throw std::invalid_argument("lag spec needs delta >= 0 and a positive sample rate");
    }
    return static_cast<std::size_t>(std::llround(delta_s * sample_rate_hz));
}

std::size_t WordWindowSpec::length(double sample_rate_hz) const {
    return static_cast<std::size_t>(std::llround((pre_s + post_s) * sample_rate_hz));
}

void WordWindowSpec::validate() const {
    if (pre_s < 0.0 || post_s < 0.0 || !(pre_s + post_s > 0.0)) {
        throw std::invalid_argument("word window needs pre, post >= 0 and a positive total length");
    }
}

Matrix zscore_rows(const Matrix& x) {
    const auto T = x.cols();
    if (T < 2) throw std::invalid_argument("z-scoring needs at least two samples");
    Matrix out(x.rows(), T);
    for (Eigen::Index c = 0; c < x.rows(); ++c) {
        const double mean = x.row(c).mean();
        const double ss = (x.row(c).array() - mean).square().sum();
        const double sd = std::sqrt(ss / static_cast<double>(T - 1));
        if (sd > 0.0 && std::isfinite(sd)) {
            out.row(c) = (x.row(c).array() - mean) / sd;
        } else {
            out.row(c).setZero();
        }
    }
    return out;
}

TrialTensor zscore_per_channel(const TrialTensor& x) {
    TrialTensor out = x;
    out.data = zscore_rows(x.data);
    return out;
}

Matrix build_lag_matrix(const Matrix& x, std::size_t half_width) {
    const auto C = x.rows();
    const auto T = x.cols();
    const auto L = static_cast<Eigen::Index>(half_width);
    const Eigen::Index n_lags = 2 * L + 1;
    Matrix out = Matrix::Zero(T, C * n_lags);
    for (Eigen::Index j = 0; j < n_lags; ++j) {
        const Eigen::Index lag = j - L;
        const Eigen::Index t0 = std::max<Eigen::Index>(0, -lag);
        const Eigen::Index t1 = std::min<Eigen::Index>(T, T - lag);
        for (Eigen::Index t = t0; t < t1; ++t) {
            for (Eigen::Index c = 0; c < C; ++c) out(t, j * C + c) = x(c, t + lag);
        }
    }
    return out;
}

Matrix lagged_gram(const Matrix& x, std::size_t half_width) {
    const auto C = x.rows();
    const auto T = x.cols();
    const auto L = static_cast<Eigen::Index>(half_width);
    const Eigen::Index n_lags = 2 * L + 1;
    // R[d + 2L](a, b) = sum_s x_a(s) x_b(s + d)
    std::vector<Matrix> R(static_cast<std::size_t>(4 * L + 1));
    for (Eigen::Index d = -2 * L; d <= 2 * L; ++d) {
        Matrix& r = R[static_cast<std::size_t>(d + 2 * L)];
        const Eigen::Index n = T - std::abs(d);
        if (n <= 0) {
            r = Matrix::Zero(C, C);
        } else if (d >= 0) {
            r = x.leftCols(n) * x.rightCols(n).transpose();
        } else {
            r = x.rightCols(n) * x.leftCols(n).transpose();
        }
    }
    auto at = [&](Eigen::Index c, Eigen::Index s) { return (s >= 0 && s < T) ? x(c, s) : 0.0; };
    Matrix g(C * n_lags, C * n_lags);
    for (Eigen::Index j1 = 0; j1 < n_lags; ++j1) {
        const Eigen::Index l1 = j1 - L;
        // samples s = t + l1 that fall outside t in [0, T)
        const Eigen::Index s0 = l1 >= 0 ? 0 : std::max<Eigen::Index>(0, T + l1);
        const Eigen::Index s1 = l1 >= 0 ? std::min<Eigen::Index>(T, l1) : T;
        for (Eigen::Index j2 = 0; j2 < n_lags; ++j2) {
            const Eigen::Index d = (j2 - L) - l1;
            Matrix block = R[static_cast<std::size_t>(d + 2 * L)];
            for (Eigen::Index s = s0; s < s1; ++s) {
                for (Eigen::Index a = 0; a < C; ++a) {
                    const double xa = x(a, s);
                    if (xa == 0.0) continue;
                    for (Eigen::Index b = 0; b < C; ++b) block(a, b) -= xa * at(b, s + d);
                }
            }
            g.block(j1 * C, j2 * C, C, C) = block;
        }
    }
    return g;
}

Matrix lagged_cross(const Matrix& x, const Matrix& y, std::size_t half_width) {
    const auto C = x.rows();
    const auto T = x.cols();
    const auto L = static_cast<Eigen::Index>(half_width);
    const Eigen::Index n_lags = 2 * L + 1;
    Matrix out = Matrix::Zero(C * n_lags, y.rows());
    for (Eigen::Index j = 0; j < n_lags; ++j) {
        const Eigen::Index lag = j - L;
        const Eigen::Index t0 = std::max<Eigen::Index>(0, -lag);
        const Eigen::Index t1 = std::min<Eigen::Index>(T, T - lag);
        if (t1 <= t0) continue;
        out.middleRows(j * C, C) = x.middleCols(t0 + lag, t1 - t0) * y.middleCols(t0, t1 - t0).transpose();
    }
    return out;
}

Matrix build_lag_matrix(const TrialTensor& x, const LagSpec& spec) {
    return build_lag_matrix(x.data, spec.half_width());
}

WindowExtraction extract_word_windows(const TrialTensor& trial, const std::vector<WordEvent>& events,
                                      const WordWindowSpec& spec) {
    spec.validate();
    const double fs = trial.sample_rate_hz;
    const std::size_t W = spec.length(fs);
    const double duration = trial.duration_s();
    WindowExtraction out;
    for (const auto& e : events) {
        const double start_s = e.onset_s - spec.pre_s;
        const double end_s = e.onset_s + spec.post_s;
        const auto start = std::llround(start_s * fs);
        if (start_s < -1e-9 || start < 0) {
            out.skipped.push_back("word '" + e.word + "' at " + std::to_string(e.onset_s) +
                                  " s: window starts before the trial");
            continue;
        }
        if (end_s > duration + 1e-9 || static_cast<std::size_t>(start) + W > trial.samples()) {
            out.skipped.push_back("word '" + e.word + "' at " + std::to_string(e.onset_s) +
                                  " s: window ends after the trial");
            continue;
        }
        WordWindow w;
        w.window = trial.data.middleCols(start, static_cast<Eigen::Index>(W));
        w.word = e.word;
        w.onset_s = e.onset_s;
        out.windows.push_back(std::move(w));
    }
    return out;
}

std::vector<bool> screen_dead_channels(const TrialTensor& x, double var_threshold) {
    std::vector<bool> mask(x.channels(), false);
    const double T = static_cast<double>(x.samples());
    for (std::size_t c = 0; c < x.channels(); ++c) {
        const auto row = x.data.row(static_cast<Eigen::Index>(c));
        const double mean = row.mean();
        const double var = (row.array() - mean).square().sum() / T;
        mask[c] = var < var_threshold;
    }
    return mask;
}

}  // namespace isd
