#include "isd/synthgen.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "isd/rng.hpp"

namespace isd {

namespace {

constexpr double kMelodySmoothing = 4.0;  // Gaussian smoothing sd in samples
constexpr double kPoemSmoothing = 2.0;
constexpr double kKernelOffCentreMass = 0.4;
constexpr int kInverseTerms = 14;

Matrix gaussian_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

void normalise_rows(Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const double mean = m.row(r).mean();
        m.row(r).array() -= mean;
        const double sd = std::sqrt(m.row(r).squaredNorm() / static_cast<double>(m.cols()));
        if (sd > 0.0) m.row(r) /= sd;
    }
}

/// Gaussian-smoothed white noise, rows normalised to zero mean and unit variance.
Matrix band_limited(std::size_t rows, std::size_t cols, double smoothing, Rng& rng) {
    const auto radius = static_cast<Eigen::Index>(std::ceil(3.0 * smoothing));
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (Eigen::Index k = -radius; k <= radius; ++k) {
        const double v = std::exp(-0.5 * static_cast<double>(k * k) / (smoothing * smoothing));
        taps[static_cast<std::size_t>(k + radius)] = v;
        total += v;
    }
    for (double& t : taps) t /= total;
    const auto C = static_cast<Eigen::Index>(cols);
    Matrix white = gaussian_noise(static_cast<Eigen::Index>(rows), C + 2 * radius, rng);
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(rows), C);
    for (Eigen::Index r = 0; r < out.rows(); ++r)
        for (Eigen::Index t = 0; t < C; ++t) {
            double acc = 0.0;
            for (Eigen::Index k = 0; k <= 2 * radius; ++k) acc += taps[static_cast<std::size_t>(k)] * white(r, t + k);
            out(r, t) = acc;
        }
    normalise_rows(out);
    return out;
}

std::vector<double> make_kernel(const SynthConfig& cfg) {
    const auto H = static_cast<long>(std::llround(cfg.lag_delta_s * cfg.sample_rate_hz));
    std::vector<double> k(static_cast<std::size_t>(2 * H + 1), 0.0);
    k[static_cast<std::size_t>(H)] = 1.0;
    if (H == 0) return k;
    Rng rng(derive_seed(cfg.seed, "lag-kernel"));
    double mass = 0.0;
    for (long l = -H; l <= H; ++l) {
        if (l == 0) continue;
        const double v = rng.normal() * std::exp(-std::abs(static_cast<double>(l)) / (0.5 * static_cast<double>(H) + 1.0));
        k[static_cast<std::size_t>(l + H)] = v;
        mass += std::abs(v);
    }
    for (long l = -H; l <= H; ++l) {
        if (l != 0) k[static_cast<std::size_t>(l + H)] *= kKernelOffCentreMass / mass;
    }
    return k;
}

/// Approximate inverse of the unit-centre lag kernel via a Neumann series.
Matrix apply_inverse_kernel(const std::vector<double>& kernel, const Matrix& x) {
    std::vector<double> off = kernel;
    off[off.size() / 2] = 0.0;
    Matrix term = x;
    Matrix out = x;
    for (int m = 1; m <= kInverseTerms; ++m) {
        term = -apply_lag_kernel(off, term);
        out += term;
    }
    return out;
}

Matrix word_signature(std::uint64_t seed, std::size_t word_index, std::size_t latent_dim, std::size_t length) {
    Rng rng(derive_seed(derive_seed(seed, "word-signature"), word_index));
    Matrix sig = band_limited(latent_dim, length, kPoemSmoothing, rng);
    for (std::size_t t = 0; t < length; ++t) {
        const double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(t) + 0.5) /
                                                 static_cast<double>(length));
        sig.col(static_cast<Eigen::Index>(t)) *= hann;
    }
    const double rms = std::sqrt(sig.squaredNorm() / static_cast<double>(sig.size()));
    if (rms > 0.0) sig /= rms;
    return sig;
}

Matrix circular_shift(const Matrix& m, std::size_t shift) {
    if (shift == 0) return m;
    const auto T = m.cols();
    const auto k = static_cast<Eigen::Index>(shift);
    Matrix out(m.rows(), T);
    out.rightCols(T - k) = m.leftCols(T - k);
    out.leftCols(k) = m.rightCols(k);
    return out;
}

Matrix orthonormal_basis(const Matrix& a) {
    Eigen::MatrixXd dense = a;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(dense);
    const auto k = std::min(a.rows(), a.cols());
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), k);
    return q;
}

std::string subject_name(std::size_t s) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "sub%02zu", s + 1);
    return buf;
}

}  // namespace

std::string_view to_string(GroundTruthKind k) {
    return k == GroundTruthKind::LagLinear ? "lag_linear" : "nonlinear_tanh";
}

GroundTruthKind ground_truth_kind_from_string(std::string_view s) {
    if (s == "lag_linear") return GroundTruthKind::LagLinear;
    if (s == "nonlinear_tanh") return GroundTruthKind::NonlinearTanh;
    throw std::invalid_argument("unknown ground-truth mapping kind '" + std::string(s) + "'");
}

std::size_t SynthConfig::samples() const {
    return static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
}

void SynthConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("invalid synth config: " + m); };
    if (n_subjects == 0) fail("n_subjects must be positive");
    if (trials_per_condition == 0) fail("trials_per_condition must be positive");
    if (channels == 0) fail("channels must be positive");
    if (latent_dim == 0) fail("latent_dim must be positive");
    if (!(sample_rate_hz > 0.0)) fail("sample_rate_hz must be positive");
    if (!(duration_s > 0.0) || samples() < 2) fail("duration must cover at least two samples");
    if (noise_sd_listened < 0.0 || noise_sd_imagined < 0.0) fail("noise sds must be non-negative");
    if (!(imagined_attenuation > 0.0) || imagined_attenuation > 1.0) fail("imagined_attenuation must be in (0, 1]");
    if (subject_perturbation < 0.0) fail("subject_perturbation must be non-negative");
    if (class_share < 0.0 || class_share > 1.0) fail("class_share must be in [0, 1]");
    if (word_amplitude < 0.0) fail("word_amplitude must be non-negative");
    if (!(word_spacing_s > 0.0)) fail("word_spacing_s must be positive");
    if (lag_delta_s < 0.0) fail("lag_delta_s must be non-negative");
    window.validate();
    if (window.pre_s + window.post_s > duration_s) fail("word window longer than the trial");
}

Matrix apply_lag_kernel(const std::vector<double>& kernel, const Matrix& x) {
    const auto H = static_cast<Eigen::Index>(kernel.size() / 2);
    const auto T = x.cols();
    Matrix out = Matrix::Zero(x.rows(), T);
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(kernel.size()); ++j) {
        const double w = kernel[static_cast<std::size_t>(j)];
        if (w == 0.0) continue;
        const Eigen::Index lag = j - H;
        const Eigen::Index t0 = std::max<Eigen::Index>(0, -lag);
        const Eigen::Index t1 = std::min<Eigen::Index>(T, T - lag);
        if (t1 <= t0) continue;
        out.middleCols(t0, t1 - t0) += w * x.middleCols(t0 + lag, t1 - t0);
    }
    return out;
}

std::array<Matrix, 4> make_stimulus_latents(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, "stimulus-latents"));
    const std::size_t L = cfg.latent_dim, T = cfg.samples();
    const double half = std::sqrt(0.5);
    Matrix melody_common = band_limited(L, T, kMelodySmoothing, rng);
    Matrix m1 = band_limited(L, T, kMelodySmoothing, rng);
    Matrix m2 = band_limited(L, T, kMelodySmoothing, rng);
    Matrix poem_common = band_limited(L, T, kPoemSmoothing, rng);
    Matrix p1 = band_limited(L, T, kPoemSmoothing, rng);
    Matrix p2 = band_limited(L, T, kPoemSmoothing, rng);
    std::array<Matrix, 4> out{half * (melody_common + m1), half * (melody_common + m2),
                              half * (poem_common + p1), half * (poem_common + p2)};
    for (auto& m : out) normalise_rows(m);
    return out;
}

std::size_t events_per_poem_trial(const SynthConfig& cfg) {
    const double usable = cfg.duration_s - (cfg.window.pre_s + cfg.window.post_s);
    if (usable < 0.0) return 0;
    return static_cast<std::size_t>(std::floor(usable / cfg.word_spacing_s + 1e-9)) + 1;
}

std::vector<WordEvent> make_word_schedule(const SynthConfig& cfg, const Vocabulary& vocab,
                                          StimulusClass poem, std::size_t trial) {
    if (!is_poem(poem)) return {};
    const std::size_t n = events_per_poem_trial(cfg);
    const std::size_t poem_index = poem == StimulusClass::Poem1 ? 0 : 1;
    std::vector<WordEvent> events;
    events.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t counter = (poem_index * cfg.trials_per_condition + trial) * n + j;
        WordEvent e;
        e.word = vocab.word(counter % vocab.size());
        e.onset_s = cfg.window.pre_s + static_cast<double>(j) * cfg.word_spacing_s;
        e.stimulus_class = poem;
        e.trial_index = trial;
        events.push_back(std::move(e));
    }
    return events;
}

Matrix apply_ground_truth(const GroundTruth& gt, const SubjectGroundTruth& subject, const Matrix& imagined) {
    Matrix projected = subject.projection * imagined;
    Matrix g = apply_lag_kernel(gt.kernel, projected) / gt.attenuation;
    if (gt.kind == GroundTruthKind::NonlinearTanh) {
        g = (0.5 * g.array() + 0.5 * g.array().tanh()).matrix();
    }
    return g;
}

SyntheticDataset generate_dataset(const SynthConfig& cfg) {
    cfg.validate();
    SyntheticDataset ds;
    ds.config = cfg;
    ds.vocabulary = poem_vocabulary();
    const std::size_t C = cfg.channels, L = cfg.latent_dim, T = cfg.samples();
    const auto n_trials = cfg.trials_per_condition;
    const auto stimuli = make_stimulus_latents(cfg);
    const std::size_t sig_len = static_cast<std::size_t>(std::llround(cfg.window.post_s * cfg.sample_rate_hz));

    std::vector<Matrix> signatures;
    if (sig_len > 0) {
        for (std::size_t w = 0; w < ds.vocabulary.size(); ++w)
            signatures.push_back(word_signature(cfg.seed, w, L, sig_len));
    }

    GroundTruth& gt = ds.ground_truth;
    gt.kind = cfg.mapping_kind;
    gt.kernel = make_kernel(cfg);
    gt.attenuation = cfg.imagined_attenuation;
    gt.noise_sd_listened = cfg.noise_sd_listened;
    gt.noise_sd_imagined = cfg.noise_sd_imagined;

    const double scale = 1.0 / std::sqrt(static_cast<double>(L));
    Rng common_rng(derive_seed(cfg.seed, "mixing-common"));
    const Matrix a_common = gaussian_noise(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(L), common_rng) * scale;
    const double class_w = std::sqrt(cfg.class_share);
    const double trial_w = std::sqrt(1.0 - cfg.class_share);

    for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
        const std::uint64_t subject_seed = derive_seed(derive_seed(cfg.seed, "subject"), s);
        Rng mix_rng(derive_seed(subject_seed, "mixing"));
        SubjectGroundTruth sub;
        sub.subject_id = subject_name(s);
        sub.mixing = a_common + gaussian_noise(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(L), mix_rng) *
                                    (scale * cfg.subject_perturbation);
        const Matrix basis = orthonormal_basis(sub.mixing);
        sub.projection = basis * basis.transpose();

        PairedSession session;
        session.subject_id = sub.subject_id;
        for (auto cls : kAllStimulusClasses) {
            const auto c = index_of(cls);
            const double smoothing = is_poem(cls) ? kPoemSmoothing : kMelodySmoothing;
            for (std::size_t i = 0; i < n_trials; ++i) {
                const std::uint64_t trial_seed = derive_seed(subject_seed, c * n_trials + i);
                Rng latent_rng(derive_seed(trial_seed, "latent"));
                Matrix latent = trial_w * band_limited(L, T, smoothing, latent_rng);
                const std::size_t shift = cfg.shift_class_template ? latent_rng.below(T) : 0;
                latent += class_w * circular_shift(stimuli[c], shift);
                if (is_poem(cls)) {
                    for (const auto& e : make_word_schedule(cfg, ds.vocabulary, cls, i)) {
                        if (signatures.empty()) break;
                        const auto start = static_cast<Eigen::Index>(std::llround(e.onset_s * cfg.sample_rate_hz));
                        const auto len = std::min<Eigen::Index>(static_cast<Eigen::Index>(sig_len), static_cast<Eigen::Index>(T) - start);
                        if (len <= 0) continue;
                        const auto w = *ds.vocabulary.index_of(e.word);
                        latent.middleCols(start, len) += cfg.word_amplitude * signatures[w].leftCols(len);
                    }
                    auto events = make_word_schedule(cfg, ds.vocabulary, cls, i);
                    session.word_events.insert(session.word_events.end(), events.begin(), events.end());
                }
                // Inverse kernel applied in latent space (it commutes with the mixing).
                const Matrix clean_imagined =
                    sub.mixing * apply_inverse_kernel(gt.kernel, latent) * cfg.imagined_attenuation;
                Matrix imagined = clean_imagined;
                if (cfg.noise_sd_imagined > 0.0) {
                    Rng noise_rng(derive_seed(trial_seed, "imagined-noise"));
                    Matrix n = gaussian_noise(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(T), noise_rng);
                    n -= basis * (basis.transpose() * n);
                    imagined += cfg.noise_sd_imagined * n;
                }
                Matrix listened = apply_ground_truth(gt, sub, imagined);
                if (cfg.noise_sd_listened > 0.0) {
                    Rng noise_rng(derive_seed(trial_seed, "listened-noise"));
                    listened += cfg.noise_sd_listened *
                                gaussian_noise(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(T), noise_rng);
                }
                const std::string id = sub.subject_id + "/" + std::string(to_string(cls)) + "/" + std::to_string(i);
                session.imagined[c].push_back(TrialTensor{std::move(imagined), cfg.sample_rate_hz, id + "/imagined"});
                session.listened[c].push_back(TrialTensor{std::move(listened), cfg.sample_rate_hz, id + "/listened"});
            }
        }
        ds.sessions.push_back(std::move(session));
        gt.subjects.push_back(std::move(sub));
    }
    return ds;
}

std::vector<LabelledWindow> make_word_window_fixture(const WordWindowFixtureConfig& cfg, const Vocabulary& vocab) {
    cfg.window.validate();
    const std::size_t W = cfg.window.length(cfg.sample_rate_hz);
    const auto pre = static_cast<Eigen::Index>(std::llround(cfg.window.pre_s * cfg.sample_rate_hz));
    const std::size_t sig_len = W - static_cast<std::size_t>(pre);
    Rng rng(derive_seed(cfg.seed, "window-fixture"));
    const Matrix mixing = gaussian_noise(static_cast<Eigen::Index>(cfg.channels),
                                         static_cast<Eigen::Index>(cfg.latent_dim), rng) /
                          std::sqrt(static_cast<double>(cfg.latent_dim));
    std::vector<Matrix> signatures;
    for (std::size_t w = 0; w < vocab.size(); ++w)
        signatures.push_back(word_signature(cfg.seed, w, cfg.latent_dim, sig_len));

    std::vector<LabelledWindow> out;
    out.reserve(vocab.size() * cfg.windows_per_word);
    for (std::size_t rep = 0; rep < cfg.windows_per_word; ++rep) {
        for (std::size_t w = 0; w < vocab.size(); ++w) {
            Matrix latent = cfg.background_sd * band_limited(cfg.latent_dim, W, kPoemSmoothing, rng);
            latent.rightCols(static_cast<Eigen::Index>(sig_len)) += cfg.word_amplitude * signatures[w];
            Matrix sensors = mixing * latent;
            sensors += cfg.noise_sd * gaussian_noise(sensors.rows(), sensors.cols(), rng);
            out.push_back(LabelledWindow{std::move(sensors), w, "fixture"});
        }
    }
    return out;
}

EmbeddingTable make_synthetic_embedding_table(const Vocabulary& vocab, EncoderName encoder, std::size_t dim,
                                              std::uint64_t seed) {
    EmbeddingTable table(encoder, dim);
    Rng rng(derive_seed(derive_seed(seed, "embedding"), static_cast<std::uint64_t>(encoder)));
    for (const auto& w : vocab.words()) {
        std::vector<double> v(dim);
        for (double& x : v) x = rng.normal() / std::sqrt(static_cast<double>(dim));
        table.add(w, std::move(v));
    }
    return table;
}

}  // namespace isd
