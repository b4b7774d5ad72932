#include "isd/contrastive_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "isd/nn/optim.hpp"
#include "isd/rng.hpp"

namespace isd {

using nn::Var;

void DecoderSpec::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("invalid decoder spec: " + m); };
    if (channels == 0 || window_samples == 0) fail("channels and window length must be positive");
    if (embed_dim == 0) fail("embed_dim must be positive");
    if (!(temperature > 0.0)) fail("temperature must be positive");
    if (spatial_filters == 0 || kernel == 0) fail("filters and kernel must be positive");
    if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
    if (noise_aug_sd < 0.0) fail("noise_aug_sd must be non-negative");
    if (!(lr > 0.0) || weight_decay < 0.0) fail("optimizer settings out of range");
    if (batch_size < 2) fail("batch size must be at least 2");
    if (val_fraction < 0.0 || val_fraction >= 1.0) fail("val_fraction must be in [0, 1)");
}

MegEncoder::MegEncoder(const DecoderSpec& spec, Rng& rng) : dropout_(spec.dropout) {
    const std::size_t F = spec.spatial_filters;
    spatial_ = nn::Conv1d(spec.channels, F, 1, rng);
    for (std::size_t b = 0; b < spec.temporal_blocks; ++b) {
        nn::ConvOptions o;
        o.dilation = std::size_t{1} << b;
        o.pad_left = o.dilation * (spec.kernel - 1) / 2;
        o.pad_right = o.dilation * (spec.kernel - 1) - o.pad_left;
        blocks_.push_back(Block{nn::Conv1d(F, F, spec.kernel, rng, o), nn::BatchNorm1d(F)});
    }
    head_ = nn::Linear(F, spec.embed_dim, rng);
    spatial_.register_into(params_, "spatial");
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        blocks_[b].conv.register_into(params_, "blocks." + std::to_string(b) + ".conv");
        blocks_[b].bn.register_into(params_, "blocks." + std::to_string(b) + ".bn");
    }
    head_.register_into(params_, "head");
}

Var MegEncoder::forward(const Var& x, const nn::Context& ctx) {
    Var h = spatial_(x);
    for (auto& b : blocks_) {
        h = nn::add(h, nn::dropout(nn::gelu(b.bn(b.conv(h), ctx)), dropout_, ctx));
    }
    return nn::l2_normalize(head_(nn::mean_time(h)));
}

WordHead::WordHead(std::size_t word_dim, std::size_t embed_dim, Rng& rng) : proj_(word_dim, embed_dim, rng) {
    proj_.register_into(params_, "proj");
}

Var WordHead::forward(const Var& x) const { return nn::l2_normalize(proj_(x)); }

double nt_xent(const Matrix& z_meg, const Matrix& z_word, double temperature) {
    if (z_meg.rows() != z_word.rows() || z_meg.cols() != z_word.cols()) {
        throw std::invalid_argument("nt_xent: batches differ in shape");
    }
    if (z_meg.rows() == 0) throw std::invalid_argument("nt_xent: empty batch");
    return nn::kernels::nt_xent(z_meg.data(), z_word.data(), static_cast<std::size_t>(z_meg.rows()),
                                static_cast<std::size_t>(z_meg.cols()), temperature, nullptr, nullptr);
}

std::size_t rank_of(const std::vector<double>& similarities, std::size_t true_index) {
    if (true_index >= similarities.size()) throw std::out_of_range("rank_of: true index outside the vocabulary");
    const double s = similarities[true_index];
    std::size_t rank = 1;
    for (std::size_t i = 0; i < similarities.size(); ++i) {
        if (similarities[i] > s || (similarities[i] == s && i < true_index)) ++rank;
    }
    return rank;
}

namespace {

Tensor stack_windows(const std::vector<const Matrix*>& windows) {
    const std::size_t B = windows.size();
    const std::size_t C = static_cast<std::size_t>(windows[0]->rows()), W = static_cast<std::size_t>(windows[0]->cols());
    Tensor t({B, C, W});
    for (std::size_t b = 0; b < B; ++b) {
        if (static_cast<std::size_t>(windows[b]->rows()) != C || static_cast<std::size_t>(windows[b]->cols()) != W) {
            throw std::invalid_argument("decoder windows differ in shape");
        }
        std::copy(windows[b]->data(), windows[b]->data() + C * W, t.data() + b * C * W);
    }
    return t;
}

Matrix to_matrix(const Tensor& t) {
    Matrix m(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
    std::copy(t.data(), t.data() + t.size(), m.data());
    return m;
}

Tensor word_batch(const EmbeddingTable& table, const Vocabulary& vocab, const std::vector<std::size_t>& words) {
    Tensor t({words.size(), table.dim()});
    for (std::size_t b = 0; b < words.size(); ++b) {
        const auto& v = table.at(vocab.word(words[b]));
        std::copy(v.begin(), v.end(), t.data() + b * table.dim());
    }
    return t;
}

void check_window(const DecoderSpec& spec, const Matrix& w) {
    if (static_cast<std::size_t>(w.rows()) != spec.channels || static_cast<std::size_t>(w.cols()) != spec.window_samples) {
        throw std::invalid_argument("decoder expects windows of " + std::to_string(spec.channels) + " x " +
                                    std::to_string(spec.window_samples) + ", got " + std::to_string(w.rows()) + " x " +
                                    std::to_string(w.cols()));
    }
}

/// Packs indices into batches of at most `size` in which no word repeats.
std::vector<std::vector<std::size_t>> unique_word_batches(const std::vector<std::size_t>& order,
                                                          const std::vector<LabelledWindow>& windows, std::size_t size) {
    std::vector<std::vector<std::size_t>> batches;
    std::vector<std::vector<char>> used;
    std::size_t first_open = 0;
    for (std::size_t idx : order) {
        const std::size_t w = windows[idx].word_index;
        std::size_t b = first_open;
        for (; b < batches.size(); ++b) {
            if (batches[b].size() < size && (w >= used[b].size() || !used[b][w])) break;
        }
        if (b == batches.size()) {
            batches.emplace_back();
            used.emplace_back();
        }
        if (used[b].size() <= w) used[b].resize(w + 1, 0);
        used[b][w] = 1;
        batches[b].push_back(idx);
        while (first_open < batches.size() && batches[first_open].size() >= size) ++first_open;
    }
    return batches;
}

}  // namespace

DecoderModel::DecoderModel(const TrainedDecoder& decoder) : decoder_(decoder) {
    Rng rng(0);
    encoder_ = std::make_unique<MegEncoder>(decoder_.spec, rng);
    encoder_->params().load(decoder_.meg_params, decoder_.meg_buffers);
}

Matrix DecoderModel::encode_batch(const std::vector<const Matrix*>& windows) const {
    for (const auto* w : windows) check_window(decoder_.spec, *w);
    nn::NoGradGuard guard;
    Var z = encoder_->forward(nn::constant(stack_windows(windows)), nn::Context{false, nullptr});
    return to_matrix(z->value);
}

Vector DecoderModel::encode(const Matrix& window) const {
    const Matrix z = encode_batch({&window});
    return z.row(0).transpose();
}

RankOutcome DecoderModel::retrieve(const Matrix& window, const std::string& true_word) const {
    const auto idx = decoder_.vocabulary.index_of(true_word);
    if (!idx) throw std::invalid_argument("word '" + true_word + "' is not in the decoder vocabulary");
    const Vector z = encode(window);
    const Vector sims = decoder_.word_cache * z;
    RankOutcome out;
    out.true_word = true_word;
    out.similarities.assign(sims.data(), sims.data() + sims.size());
    out.rank = rank_of(out.similarities, *idx);
    return out;
}

Vector meg_encode(const TrainedDecoder& decoder, const Matrix& window) { return DecoderModel(decoder).encode(window); }

Vector word_encode(const TrainedDecoder& decoder, const EmbeddingTable& table, const std::string& word) {
    if (!table.contains(word)) throw std::invalid_argument("word '" + word + "' is not in the embedding table");
    if (table.dim() != decoder.word_dim) throw std::invalid_argument("embedding table dimension does not match the decoder");
    Rng rng(0);
    WordHead head(decoder.word_dim, decoder.spec.embed_dim, rng);
    head.params().load(decoder.word_params, {});
    nn::NoGradGuard guard;
    const auto& v = table.at(word);
    Var z = head.forward(nn::constant(Tensor({1, v.size()}, v)));
    return Eigen::Map<const Vector>(z->value.data(), static_cast<Eigen::Index>(z->value.size()));
}

Matrix build_word_cache(const TrainedDecoder& decoder, const EmbeddingTable& table) {
    if (table.dim() != decoder.word_dim) throw std::invalid_argument("embedding table dimension does not match the decoder");
    Rng rng(0);
    WordHead head(decoder.word_dim, decoder.spec.embed_dim, rng);
    head.params().load(decoder.word_params, {});
    std::vector<std::size_t> all(decoder.vocabulary.size());
    std::iota(all.begin(), all.end(), 0);
    nn::NoGradGuard guard;
    Var z = head.forward(nn::constant(word_batch(table, decoder.vocabulary, all)));
    return to_matrix(z->value);
}

TrainedDecoder train_decoder(const std::vector<LabelledWindow>& windows, const EmbeddingTable& table,
                             const Vocabulary& vocab, const DecoderSpec& spec, std::uint64_t seed) {
    spec.validate();
    if (windows.size() < 2) throw std::invalid_argument("train_decoder needs at least two windows");
    if (const auto problems = table.validate(vocab); !problems.empty()) {
        throw std::invalid_argument("embedding table: " + problems.front());
    }
    for (const auto& w : windows) {
        check_window(spec, w.window);
        if (w.word_index >= vocab.size()) throw std::invalid_argument("window label outside the vocabulary");
    }

    Rng init_rng(derive_seed(seed, "decoder-init"));
    MegEncoder encoder(spec, init_rng);
    WordHead head(table.dim(), spec.embed_dim, init_rng);
    Rng rng(derive_seed(seed, "decoder-train"));

    // Stratified validation split.
    std::vector<std::vector<std::size_t>> by_word(vocab.size());
    for (std::size_t i = 0; i < windows.size(); ++i) by_word[windows[i].word_index].push_back(i);
    std::vector<std::size_t> train_idx, val_idx;
    for (auto& group : by_word) {
        rng.shuffle(group);
        const auto n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(group.size())));
        for (std::size_t j = 0; j < group.size(); ++j) (j < n_val ? val_idx : train_idx).push_back(group[j]);
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
    const auto val_batches = unique_word_batches(val_idx, windows, spec.batch_size);

    std::vector<double> window_sd(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto& m = windows[i].window;
        const double mu = m.mean();
        window_sd[i] = std::sqrt((m.array() - mu).square().sum() / static_cast<double>(m.size()));
    }

    nn::ParamSet all;
    for (const auto& [n, v] : encoder.params().params()) all.add("meg." + n, v);
    for (const auto& [n, v] : head.params().params()) all.add("word." + n, v);
    nn::AdamW adam(all, {spec.lr, 0.9, 0.999, 1e-8, spec.weight_decay});

    TrainedDecoder out;
    out.spec = spec;
    out.encoder = table.encoder();
    out.word_dim = table.dim();
    out.vocabulary = vocab;
    out.meta.seed = seed;
    for (const auto& w : windows) {
        if (std::find(out.meta.training_subjects.begin(), out.meta.training_subjects.end(), w.subject_id) ==
            out.meta.training_subjects.end())
            out.meta.training_subjects.push_back(w.subject_id);
    }

    auto batch_loss = [&](const std::vector<std::size_t>& batch, const nn::Context& ctx, bool augment) {
        std::vector<const Matrix*> ptrs;
        std::vector<std::size_t> labels;
        for (std::size_t i : batch) {
            ptrs.push_back(&windows[i].window);
            labels.push_back(windows[i].word_index);
        }
        Tensor x = stack_windows(ptrs);
        if (augment && spec.noise_aug_sd > 0.0) {
            const std::size_t per = x.size() / batch.size();
            for (std::size_t b = 0; b < batch.size(); ++b) {
                const double sd = spec.noise_aug_sd * window_sd[batch[b]];
                for (std::size_t k = 0; k < per; ++k) x[b * per + k] += sd * rng.normal();
            }
        }
        Var zm = encoder.forward(nn::constant(std::move(x)), ctx);
        Var zw = head.forward(nn::constant(word_batch(table, vocab, labels)));
        return nn::nt_xent(zm, zw, spec.temperature);
    };

    auto validation_loss = [&]() {
        if (val_batches.empty()) return std::numeric_limits<double>::quiet_NaN();
        nn::NoGradGuard guard;
        double total = 0.0;
        std::size_t n = 0;
        for (const auto& b : val_batches) {
            total += batch_loss(b, nn::Context{false, nullptr}, false)->value[0] * static_cast<double>(b.size());
            n += b.size();
        }
        return total / static_cast<double>(n);
    };

    auto snapshot = [&] {
        out.meg_params = encoder.params().to_store();
        out.meg_buffers = encoder.params().buffers_to_store();
        out.word_params = head.params().to_store();
    };

    double best = validation_loss();
    out.meta.val_curve.push_back(best);
    out.meta.train_curve.push_back(std::numeric_limits<double>::quiet_NaN());
    if (std::isnan(best)) best = std::numeric_limits<double>::infinity();
    snapshot();
    std::size_t since_best = 0;
    for (std::size_t epoch = 0; epoch < spec.max_epochs; ++epoch) {
        adam.set_lr(nn::cosine_lr(spec.lr, 0.0, epoch, spec.max_epochs));
        std::vector<std::size_t> order = train_idx;
        rng.shuffle(order);
        const auto batches = unique_word_batches(order, windows, spec.batch_size);
        double total = 0.0;
        std::size_t seen = 0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            if (batches[bi].size() < 2) continue;
            nn::Context ctx{true, &rng};
            Var loss = batch_loss(batches[bi], ctx, true);
            const double value = loss->value[0];
            if (!std::isfinite(value)) {
                std::ostringstream msg;
                msg << "non-finite decoder loss at epoch " << epoch << ", batch " << bi << " (lr " << adam.lr() << ")";
                throw std::runtime_error(msg.str());
            }
            nn::backward(loss);
            adam.step();
            all.zero_grad();
            total += value * static_cast<double>(batches[bi].size());
            seen += batches[bi].size();
        }
        const double train_loss = seen ? total / static_cast<double>(seen) : 0.0;
        double val_loss = validation_loss();
        if (std::isnan(val_loss)) val_loss = train_loss;
        out.meta.train_curve.push_back(train_loss);
        out.meta.val_curve.push_back(val_loss);
        out.meta.epochs_run = epoch + 1;
        if (val_loss < best) {
            best = val_loss;
            since_best = 0;
            out.meta.best_epoch = epoch + 1;
            snapshot();
        } else if (++since_best >= spec.patience) {
            break;
        }
    }
    out.meta.best_val_loss = best;
    out.word_cache = build_word_cache(out, table);
    return out;
}

RankOutcome rank_retrieve(const TrainedDecoder& decoder, const Matrix& window, const std::string& true_word) {
    return DecoderModel(decoder).retrieve(window, true_word);
}

std::vector<RankOutcome> rank_windows(const TrainedDecoder& decoder, const std::vector<LabelledWindow>& windows) {
    const DecoderModel model(decoder);
    std::vector<RankOutcome> out;
    out.reserve(windows.size());
    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < windows.size(); start += kChunk) {
        const std::size_t end = std::min(windows.size(), start + kChunk);
        std::vector<const Matrix*> ptrs;
        for (std::size_t i = start; i < end; ++i) ptrs.push_back(&windows[i].window);
        const Matrix sims = model.encode_batch(ptrs) * decoder.word_cache.transpose();
        for (std::size_t i = start; i < end; ++i) {
            RankOutcome r;
            r.true_word = decoder.vocabulary.word(windows[i].word_index);
            const auto row = sims.row(static_cast<Eigen::Index>(i - start));
            r.similarities.assign(row.data(), row.data() + row.size());
            r.rank = rank_of(r.similarities, windows[i].word_index);
            out.push_back(std::move(r));
        }
    }
    return out;
}

RankCdf rank_cdf(const std::vector<RankOutcome>& outcomes, std::size_t V) {
    if (outcomes.empty()) throw std::invalid_argument("rank_cdf needs at least one outcome");
    if (V == 0) throw std::invalid_argument("rank_cdf needs a non-empty vocabulary");
    std::vector<std::size_t> hist(V + 1, 0);
    for (const auto& o : outcomes) {
        if (o.rank < 1 || o.rank > V) throw std::invalid_argument("rank outside 1..V");
        ++hist[o.rank];
    }
    RankCdf out;
    out.cdf.resize(V);
    std::size_t acc = 0;
    for (std::size_t k = 1; k <= V; ++k) {
        acc += hist[k];
        out.cdf[k - 1] = static_cast<double>(acc) / static_cast<double>(outcomes.size());
    }
    out.cdf[V - 1] = 1.0;
    auto at = [&](std::size_t k) { return out.cdf[std::min(k, V) - 1]; };
    out.recall_at_1 = at(1);
    out.recall_at_5 = at(5);
    out.recall_at_10 = at(10);
    return out;
}

double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

TopWords top_k_words(const std::vector<std::vector<RankOutcome>>& per_encoder, const Vocabulary& vocab, std::size_t k) {
    TopWords out;
    std::vector<std::pair<double, std::string>> scored;
    for (const auto& word : vocab.words()) {
        std::vector<double> encoder_medians;
        for (const auto& outcomes : per_encoder) {
            std::vector<double> ranks;
            for (const auto& o : outcomes)
                if (o.true_word == word) ranks.push_back(static_cast<double>(o.rank));
            if (!ranks.empty()) encoder_medians.push_back(median(std::move(ranks)));
        }
        if (encoder_medians.empty()) {
            out.without_outcomes.push_back(word);
            continue;
        }
        const double m = median(std::move(encoder_medians));
        out.median[word] = m;
        scored.emplace_back(m, word);
    }
    std::sort(scored.begin(), scored.end());
    for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) out.words.push_back(scored[i].second);
    return out;
}

}  // namespace isd
