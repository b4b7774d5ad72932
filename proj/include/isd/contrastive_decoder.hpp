#pragma once

// Listened-word decoder: a convolutional window encoder and a projection head
// over frozen word vectors, trained jointly with symmetric NT-Xent, plus
// rank-based retrieval metrics.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "isd/core_types.hpp"
#include "isd/nn/layers.hpp"

namespace isd {

struct DecoderSpec {
    std::size_t channels = kDefaultChannels;
    std::size_t window_samples = 100;
    std::size_t embed_dim = 128;
    double temperature = 0.07;
    std::size_t spatial_filters = 64;
    std::size_t temporal_blocks = 3;  // dilations 1, 2, 4, ...
    std::size_t kernel = 3;
    double dropout = 0.1;
    double noise_aug_sd = 0.1;  // relative to each window's sd
    double lr = 3e-4;
    double weight_decay = 1e-4;
    std::size_t batch_size = 64;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    double val_fraction = 0.1;

    void validate() const;

    friend bool operator==(const DecoderSpec&, const DecoderSpec&) = default;
};

struct DecoderMetadata {
    std::uint64_t seed = 0;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    std::vector<double> train_curve;
    std::vector<double> val_curve;
    std::vector<std::string> training_subjects;
};

struct TrainedDecoder {
    DecoderSpec spec;
    EncoderName encoder = EncoderName::Semantic;
    std::size_t word_dim = 0;
    ParameterStore meg_params;
    ParameterStore meg_buffers;
    ParameterStore word_params;
    Vocabulary vocabulary;
    Matrix word_cache;  // [V x embed_dim], row i = vocabulary word i
    DecoderMetadata meta;
};

/// Window encoder network: [B, C, W] -> unit rows [B, embed_dim].
class MegEncoder {
public:
    MegEncoder(const DecoderSpec& spec, Rng& rng);
    nn::Var forward(const nn::Var& x, const nn::Context& ctx);
    nn::ParamSet& params() noexcept { return params_; }

private:
    struct Block {
        nn::Conv1d conv;
        nn::BatchNorm1d bn;
    };
    double dropout_;
    nn::Conv1d spatial_;
    std::vector<Block> blocks_;
    nn::Linear head_;
    nn::ParamSet params_;
};

/// Projection head over frozen word vectors: [B, D] -> unit rows [B, embed_dim].
class WordHead {
public:
    WordHead(std::size_t word_dim, std::size_t embed_dim, Rng& rng);
    nn::Var forward(const nn::Var& x) const;
    nn::ParamSet& params() noexcept { return params_; }

private:
    nn::Linear proj_;
    nn::ParamSet params_;
};

/// Symmetric NT-Xent over unit-norm rows.
double nt_xent(const Matrix& z_meg, const Matrix& z_word, double temperature);

/// Rank of `true_index` under the tie rule: 1 + #strictly greater + #equal at a lower index.
std::size_t rank_of(const std::vector<double>& similarities, std::size_t true_index);

/// Stateful inference wrapper around a trained decoder.
class DecoderModel {
public:
    explicit DecoderModel(const TrainedDecoder& decoder);
    Vector encode(const Matrix& window) const;
    Matrix encode_batch(const std::vector<const Matrix*>& windows) const;
    RankOutcome retrieve(const Matrix& window, const std::string& true_word) const;
    const TrainedDecoder& decoder() const noexcept { return decoder_; }

private:
    TrainedDecoder decoder_;
    std::unique_ptr<MegEncoder> encoder_;
};

Vector meg_encode(const TrainedDecoder& decoder, const Matrix& window);
Vector word_encode(const TrainedDecoder& decoder, const EmbeddingTable& table, const std::string& word);

/// Word embeddings of every vocabulary word [V x embed_dim].
Matrix build_word_cache(const TrainedDecoder& decoder, const EmbeddingTable& table);

/// Trains on listened windows; labels index `vocab`. Throws on non-finite loss.
TrainedDecoder train_decoder(const std::vector<LabelledWindow>& windows, const EmbeddingTable& table,
                             const Vocabulary& vocab, const DecoderSpec& spec, std::uint64_t seed);

RankOutcome rank_retrieve(const TrainedDecoder& decoder, const Matrix& window, const std::string& true_word);
std::vector<RankOutcome> rank_windows(const TrainedDecoder& decoder, const std::vector<LabelledWindow>& windows);

struct RankCdf {
    std::vector<double> cdf;  // cdf[k - 1] = P(rank <= k)
    double recall_at_1 = 0.0;
    double recall_at_5 = 0.0;
    double recall_at_10 = 0.0;
};

RankCdf rank_cdf(const std::vector<RankOutcome>& outcomes, std::size_t vocabulary_size);

struct TopWords {
    std::vector<std::string> words;          // selected, best first
    std::map<std::string, double> median;    // median across encoders of per-encoder medians
    std::vector<std::string> without_outcomes;
};

/// Lowest-k words by median rank, ties broken lexicographically.
TopWords top_k_words(const std::vector<std::vector<RankOutcome>>& per_encoder, const Vocabulary& vocab,
                     std::size_t k = 20);

double median(std::vector<double> v);

}  // namespace isd
