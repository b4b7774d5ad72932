#pragma once

// Shared domain types: trials, paired sessions, word events, vocabularies,
// embedding tables, rank outcomes and named parameter stores.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace isd {

/// Row-major real matrix. Trials are stored as [channels x samples].
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr std::size_t kDefaultChannels = 155;
inline constexpr double kDefaultSampleRateHz = 100.0;
inline constexpr double kDefaultTrialDurationS = 27.0;
inline constexpr std::size_t kDefaultTrialsPerCondition = 10;
inline constexpr std::size_t kDefaultVocabularySize = 76;

/// Dense real tensor with a row-major layout.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }
    std::vector<double>& values() noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }

    double& operator[](std::size_t i) noexcept { return values_[i]; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }

    void fill(double v);
    /// Same data, new shape; element count must match.
    Tensor reshaped(std::vector<std::size_t> shape) const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> values_;
};

std::size_t element_count(const std::vector<std::size_t>& shape);
std::string shape_string(const std::vector<std::size_t>& shape);

/// One trial's multichannel time series.
struct TrialTensor {
    Matrix data;  // [C x T]
    double sample_rate_hz = kDefaultSampleRateHz;
    std::string trial_id;

    std::size_t channels() const { return static_cast<std::size_t>(data.rows()); }
    std::size_t samples() const { return static_cast<std::size_t>(data.cols()); }
    double duration_s() const { return static_cast<double>(samples()) / sample_rate_hz; }
};

enum class StimulusClass : std::uint8_t { Melody1 = 0, Melody2 = 1, Poem1 = 2, Poem2 = 3 };

inline constexpr std::array<StimulusClass, 4> kAllStimulusClasses = {
    StimulusClass::Melody1, StimulusClass::Melody2, StimulusClass::Poem1, StimulusClass::Poem2};

std::string_view to_string(StimulusClass s);
StimulusClass stimulus_class_from_string(std::string_view name);
inline std::size_t index_of(StimulusClass s) { return static_cast<std::size_t>(s); }
inline bool is_poem(StimulusClass s) {
    return s == StimulusClass::Poem1 || s == StimulusClass::Poem2;
}

/// Trial-relative word onset annotation.
struct WordEvent {
    std::string word;
    double onset_s = 0.0;
    StimulusClass stimulus_class = StimulusClass::Poem1;
    std::size_t trial_index = 0;

    friend bool operator==(const WordEvent&, const WordEvent&) = default;
};

class Vocabulary {
public:
    Vocabulary() = default;
    /// Throws std::invalid_argument on duplicates or empty words.
    explicit Vocabulary(std::vector<std::string> words);

    std::size_t size() const noexcept { return words_.size(); }
    const std::vector<std::string>& words() const noexcept { return words_; }
    const std::string& word(std::size_t i) const { return words_.at(i); }
    std::optional<std::size_t> index_of(std::string_view w) const;
    bool contains(std::string_view w) const { return index_of(w).has_value(); }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// The 76 content words used by the poem conditions.
const Vocabulary& poem_vocabulary();

/// A subject's aligned imagined/listened trials, indexed by stimulus class.
struct PairedSession {
    std::string subject_id;
    std::array<std::vector<TrialTensor>, 4> imagined;
    std::array<std::vector<TrialTensor>, 4> listened;
    std::vector<WordEvent> word_events;

    std::size_t trials_per_condition() const { return imagined[0].size(); }
    std::vector<WordEvent> events_for(StimulusClass s, std::size_t trial) const;
};

/// Violations of the session invariants; empty when the session is well formed.
/// `vocabulary` is checked only when provided.
std::vector<std::string> validate_session(const PairedSession& s,
                                          const Vocabulary* vocabulary = nullptr,
                                          double window_post_s = 0.8);

enum class EncoderName : std::uint8_t { Semantic, Acoustic, Phonetic, Combined };
std::string_view to_string(EncoderName e);
EncoderName encoder_from_string(std::string_view name);

/// Frozen pretrained word vectors for one encoder strategy.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(EncoderName encoder, std::size_t dim);

    EncoderName encoder() const noexcept { return encoder_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return order_.size(); }
    const std::vector<std::string>& words() const noexcept { return order_; }

    /// Throws on dimension mismatch, non-finite entries or duplicate words.
    void add(const std::string& word, std::vector<double> vec);
    bool contains(std::string_view word) const;
    const std::vector<double>& at(std::string_view word) const;

    /// Problems found when checking the table against a vocabulary.
    std::vector<std::string> validate(const Vocabulary& vocab) const;

    /// Row-wise concatenation; both tables must cover the same words.
    static EmbeddingTable concatenate(const EmbeddingTable& first, const EmbeddingTable& second,
                                      EncoderName name = EncoderName::Combined);

private:
    EncoderName encoder_ = EncoderName::Semantic;
    std::size_t dim_ = 0;
    std::vector<std::string> order_;
    std::unordered_map<std::string, std::vector<double>> vectors_;
};

/// A word window with its vocabulary index.
struct LabelledWindow {
    Matrix window;  // [C x W]
    std::size_t word_index = 0;
    std::string subject_id;
};

/// Per-query retrieval record.
struct RankOutcome {
    std::string true_word;
    std::size_t rank = 0;  // 1-based
    std::vector<double> similarities;
};

/// Ordered name -> tensor store. Names are unique.
class ParameterStore {
public:
    void insert(const std::string& name, Tensor t);
    bool contains(const std::string& name) const { return tensors_.contains(name); }
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    std::size_t total_count() const noexcept;
    std::size_t size() const noexcept { return tensors_.size(); }
    const std::map<std::string, Tensor>& entries() const noexcept { return tensors_; }

    friend bool operator==(const ParameterStore&, const ParameterStore&) = default;

private:
    std::map<std::string, Tensor> tensors_;
};

}  // namespace isd
