#include "isd/mapping_models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "isd/nn/optim.hpp"
#include "isd/rng.hpp"

namespace isd {

using nn::Var;

std::string_view to_string(MappingKind k) {
    switch (k) {
        case MappingKind::LinearLag: return "linear_lag";
        case MappingKind::ShallowMLP: return "mlp";
        case MappingKind::CNN1D: return "cnn1d";
        case MappingKind::UNet1D: return "unet1d";
        case MappingKind::RNN: return "rnn";
        case MappingKind::TCN: return "tcn";
        case MappingKind::Transformer: return "transformer";
    }
    return "?";
}

MappingKind mapping_kind_from_string(std::string_view s) {
    for (auto k : kAllMappingKinds) {
        if (to_string(k) == s) return k;
    }
    throw std::invalid_argument("unknown mapping kind '" + std::string(s) + "'");
}

bool is_neural(MappingKind k) { return k != MappingKind::LinearLag; }

void MappingSpec::validate() const {
    auto fail = [&](const std::string& m) {
        throw std::invalid_argument("invalid " + std::string(to_string(kind)) + " spec: " + m);
    };
    if (channels == 0) fail("channels must be positive");
    if (lambda < 0.0) fail("lambda must be non-negative");
    if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
    lag.half_width();
    switch (kind) {
        case MappingKind::LinearLag:
            if (alpha_grid.empty()) fail("alpha grid is empty");
            for (double a : alpha_grid)
                if (!(a >= 0.0)) fail("alphas must be non-negative");
            if (alpha_grid.size() > 1 && cv_folds < 2) fail("cross-validation needs at least two folds");
            break;
        case MappingKind::ShallowMLP:
            if (mlp_hidden == 0) fail("hidden width must be positive");
            break;
        case MappingKind::CNN1D:
            if (cnn_width == 0 || cnn_kernel == 0 || cnn_kernel % 2 == 0) fail("needs a positive width and odd kernel");
            break;
        case MappingKind::UNet1D:
            if (unet_width1 == 0 || unet_width2 == 0) fail("widths must be positive");
            break;
        case MappingKind::RNN:
            if (rnn_hidden < 2 || rnn_hidden % 2 != 0) fail("hidden size must be even and >= 2");
            break;
        case MappingKind::TCN:
            if (tcn_width == 0 || tcn_kernel == 0) fail("width and kernel must be positive");
            break;
        case MappingKind::Transformer:
            if (tf_model == 0 || tf_heads == 0 || tf_model % tf_heads != 0) fail("model width must divide into heads");
            if (tf_model % 2 != 0) fail("model width must be even for the positional encoding");
            if (tf_layers == 0 || tf_ffn == 0) fail("layers and feed-forward width must be positive");
            break;
    }
}

MappingSpec default_mapping_spec(MappingKind kind, std::size_t channels) {
    MappingSpec s;
    s.kind = kind;
    s.channels = channels;
    return s;
}

namespace {

nn::ConvOptions same_padding(std::size_t kernel, std::size_t dilation) {
    nn::ConvOptions o;
    o.dilation = dilation;
    o.pad_left = dilation * (kernel - 1) / 2;
    o.pad_right = dilation * (kernel - 1) - o.pad_left;
    return o;
}

class LinearLagNet final : public MappingNetwork {
public:
    LinearLagNet(const MappingSpec& s, Rng& rng) {
        const std::size_t L = s.lag.half_width();
        nn::ConvOptions o;
        o.pad_left = L;
        o.pad_right = L;
        lag_ = nn::Conv1d(s.channels, s.channels, 2 * L + 1, rng, o, false);
        lag_.register_into(params_, "lag");
    }
    Var forward(const Var& x, const nn::Context&) override { return lag_(x); }

private:
    nn::Conv1d lag_;
};

class ShallowMlpNet final : public MappingNetwork {
public:
    ShallowMlpNet(const MappingSpec& s, Rng& rng)
        : p_(s.dropout), fc1_(s.channels, s.mlp_hidden, rng), bn1_(s.mlp_hidden),
          fc2_(s.mlp_hidden, s.mlp_hidden, rng), bn2_(s.mlp_hidden), out_(s.mlp_hidden, s.channels, rng) {
        fc1_.register_into(params_, "fc1");
        bn1_.register_into(params_, "bn1");
        fc2_.register_into(params_, "fc2");
        bn2_.register_into(params_, "bn2");
        out_.register_into(params_, "out");
    }
    Var forward(const Var& x, const nn::Context& ctx) override {
        const std::size_t B = x->value.dim(0), C = x->value.dim(1), T = x->value.dim(2);
        Var h = nn::reshape(nn::transpose_last2(x), {B * T, C});
        h = nn::dropout(nn::gelu(bn1_(fc1_(h), ctx)), p_, ctx);
        h = nn::dropout(nn::gelu(bn2_(fc2_(h), ctx)), p_, ctx);
        h = out_(h);
        return nn::transpose_last2(nn::reshape(h, {B, T, C}));
    }

private:
    double p_;
    nn::Linear fc1_;
    nn::BatchNorm1d bn1_;
    nn::Linear fc2_;
    nn::BatchNorm1d bn2_;
    nn::Linear out_;
};

class Cnn1dNet final : public MappingNetwork {
public:
    Cnn1dNet(const MappingSpec& s, Rng& rng) : p_(s.dropout) {
        const std::size_t W = s.cnn_width;
        in_ = nn::Conv1d(s.channels, W, 1, rng);
        in_.register_into(params_, "input");
        const std::size_t dilations[] = {1, 2, 4, 8};
        for (std::size_t b = 0; b < 4; ++b) {
            auto o = same_padding(s.cnn_kernel, dilations[b]);
            o.depthwise = true;
            Block blk{nn::Conv1d(W, W, s.cnn_kernel, rng, o, false), nn::Conv1d(W, W, 1, rng), nn::BatchNorm1d(W)};
            blocks_.push_back(std::move(blk));
        }
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            const std::string pre = "blocks." + std::to_string(b);
            blocks_[b].depthwise.register_into(params_, pre + ".depthwise");
            blocks_[b].pointwise.register_into(params_, pre + ".pointwise");
            blocks_[b].bn.register_into(params_, pre + ".bn");
        }
        out_ = nn::Conv1d(W, s.channels, 1, rng);
        out_.register_into(params_, "out");
    }
    Var forward(const Var& x, const nn::Context& ctx) override {
        Var h = in_(x);
        for (auto& b : blocks_) {
            Var y = nn::dropout(nn::gelu(b.bn(b.pointwise(b.depthwise(h)), ctx)), p_, ctx);
            h = nn::add(h, y);
        }
        return out_(h);
    }

private:
    struct Block {
        nn::Conv1d depthwise;
        nn::Conv1d pointwise;
        nn::BatchNorm1d bn;
    };
    double p_;
    nn::Conv1d in_;
    std::vector<Block> blocks_;
    nn::Conv1d out_;
};

class UNet1dNet final : public MappingNetwork {
public:
    UNet1dNet(const MappingSpec& s, Rng& rng) : p_(s.dropout) {
        const std::size_t w1 = s.unet_width1, w2 = s.unet_width2;
        nn::ConvOptions down;
        down.stride = 2;
        down.pad_left = down.pad_right = 1;
        enc1_ = {nn::Conv1d(s.channels, w1, 3, rng, same_padding(3, 1)), nn::BatchNorm1d(w1)};
        down1_ = {nn::Conv1d(w1, w2, 3, rng, down), nn::BatchNorm1d(w2)};
        down2_ = {nn::Conv1d(w2, w2, 3, rng, down), nn::BatchNorm1d(w2)};
        bottleneck_ = {nn::Conv1d(w2, w2, 3, rng, same_padding(3, 2)), nn::BatchNorm1d(w2)};
        upsample2_ = nn::ConvTranspose1d(w2, w2, 2, 2, rng);
        up2_ = {nn::Conv1d(2 * w2, w2, 3, rng, same_padding(3, 1)), nn::BatchNorm1d(w2)};
        upsample1_ = nn::ConvTranspose1d(w2, w1, 2, 2, rng);
        up1_ = {nn::Conv1d(2 * w1, w1, 3, rng, same_padding(3, 1)), nn::BatchNorm1d(w1)};
        out_ = nn::Conv1d(w1, s.channels, 1, rng);

        enc1_.register_into(params_, "enc1");
        down1_.register_into(params_, "down1");
        down2_.register_into(params_, "down2");
        bottleneck_.register_into(params_, "bottleneck");
        upsample2_.register_into(params_, "upsample2");
        up2_.register_into(params_, "up2");
        upsample1_.register_into(params_, "upsample1");
        up1_.register_into(params_, "up1");
        out_.register_into(params_, "out");
    }
    Var forward(const Var& x, const nn::Context& ctx) override {
        const std::size_t T = x->value.dim(2);
        Var e1 = enc1_(x, ctx);
        Var d1 = down1_(e1, ctx);
        Var d2 = down2_(d1, ctx);
        Var b = nn::dropout(bottleneck_(d2, ctx), p_, ctx);
        Var u2 = nn::resize_time(upsample2_(b), d1->value.dim(2));
        u2 = up2_(nn::concat_channels(u2, d1), ctx);
        Var u1 = nn::resize_time(upsample1_(u2), T);
        u1 = up1_(nn::concat_channels(u1, e1), ctx);
        return out_(u1);
    }

private:
    struct ConvBn {
        nn::Conv1d conv;
        nn::BatchNorm1d bn;
        Var operator()(const Var& x, const nn::Context& ctx) { return nn::gelu(bn(conv(x), ctx)); }
        void register_into(nn::ParamSet& ps, const std::string& pre) {
            conv.register_into(ps, pre + ".conv");
            bn.register_into(ps, pre + ".bn");
        }
    };
    double p_;
    ConvBn enc1_, down1_, down2_, bottleneck_, up2_, up1_;
    nn::ConvTranspose1d upsample2_, upsample1_;
    nn::Conv1d out_;
};

class RnnNet final : public MappingNetwork {
public:
    RnnNet(const MappingSpec& s, Rng& rng) : p_(s.dropout) {
        const std::size_t h = s.rnn_hidden, half = h / 2;
        in_ = nn::Conv1d(s.channels, h, 1, rng);
        in_.register_into(params_, "input");
        for (std::size_t layer = 0; layer < 2; ++layer) {
            fwd_[layer] = nn::GruCell(h, half, rng);
            bwd_[layer] = nn::GruCell(h, half, rng);
            fwd_[layer].register_into(params_, "gru.l" + std::to_string(layer));
            bwd_[layer].register_into(params_, "gru.l" + std::to_string(layer) + "_reverse");
        }
        out_ = nn::Conv1d(h, s.channels, 1, rng);
        out_.register_into(params_, "out");
    }
    Var forward(const Var& x, const nn::Context& ctx) override {
        Var h = in_(x);
        for (std::size_t layer = 0; layer < 2; ++layer) {
            h = nn::concat_channels(fwd_[layer].run(h, false), bwd_[layer].run(h, true));
            if (layer == 0) h = nn::dropout(h, p_, ctx);
        }
        return out_(h);
    }

private:
    double p_;
    nn::Conv1d in_;
    std::array<nn::GruCell, 2> fwd_, bwd_;
    nn::Conv1d out_;
};

class TcnNet final : public MappingNetwork {
public:
    TcnNet(const MappingSpec& s, Rng& rng) : p_(s.dropout) {
        const std::size_t W = s.tcn_width, k = s.tcn_kernel;
        in_ = nn::Conv1d(s.channels, W, 1, rng);
        in_.register_into(params_, "input");
        for (std::size_t b = 0; b < 5; ++b) {
            nn::ConvOptions causal;
            causal.dilation = std::size_t{1} << b;
            causal.pad_left = causal.dilation * (k - 1);
            blocks_.push_back(Block{nn::Conv1d(W, W, k, rng, causal), nn::BatchNorm1d(W),
                                    nn::Conv1d(W, W, k, rng, causal), nn::BatchNorm1d(W)});
        }
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            const std::string pre = "blocks." + std::to_string(b);
            blocks_[b].conv1.register_into(params_, pre + ".conv1");
            blocks_[b].bn1.register_into(params_, pre + ".bn1");
            blocks_[b].conv2.register_into(params_, pre + ".conv2");
            blocks_[b].bn2.register_into(params_, pre + ".bn2");
        }
        out_ = nn::Conv1d(W, s.channels, 1, rng);
        out_.register_into(params_, "out");
    }
    Var forward(const Var& x, const nn::Context& ctx) override {
        Var h = in_(x);
        for (auto& b : blocks_) {
            Var y = nn::dropout(nn::gelu(b.bn1(b.conv1(h), ctx)), p_, ctx);
            y = nn::dropout(nn::gelu(b.bn2(b.conv2(y), ctx)), p_, ctx);
            h = nn::add(h, y);
        }
        return out_(h);
    }

private:
    struct Block {
        nn::Conv1d conv1;
        nn::BatchNorm1d bn1;
        nn::Conv1d conv2;
        nn::BatchNorm1d bn2;
    };
    double p_;
    nn::Conv1d in_;
    std::vector<Block> blocks_;
    nn::Conv1d out_;
};

class TransformerNet final : public MappingNetwork {
public:
    TransformerNet(const MappingSpec& s, Rng& rng) : p_(s.dropout), d_(s.tf_model), heads_(s.tf_heads) {
        in_ = nn::Conv1d(s.channels, d_, 1, rng);
        in_.register_into(params_, "input");
        for (std::size_t l = 0; l < s.tf_layers; ++l) {
            Layer layer;
            layer.ln1 = nn::LayerNorm(d_);
            layer.qkv = nn::Linear(d_, 3 * d_, rng);
            layer.proj = nn::Linear(d_, d_, rng);
            layer.ln2 = nn::LayerNorm(d_);
            layer.ff1 = nn::Linear(d_, s.tf_ffn, rng);
            layer.ff2 = nn::Linear(s.tf_ffn, d_, rng);
            layers_.push_back(std::move(layer));
        }
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const std::string pre = "layers." + std::to_string(l);
            layers_[l].ln1.register_into(params_, pre + ".norm1");
            layers_[l].qkv.register_into(params_, pre + ".attn.in_proj");
            layers_[l].proj.register_into(params_, pre + ".attn.out_proj");
            layers_[l].ln2.register_into(params_, pre + ".norm2");
            layers_[l].ff1.register_into(params_, pre + ".linear1");
            layers_[l].ff2.register_into(params_, pre + ".linear2");
        }
        out_ = nn::Linear(d_, s.channels, rng);
        out_.register_into(params_, "out");
    }
    Var forward(const Var& x, const nn::Context& ctx) override {
        const std::size_t T = x->value.dim(2);
        Var h = nn::add_constant(nn::transpose_last2(in_(x)), positional_encoding(T));
        for (auto& l : layers_) {
            Var a = nn::multi_head_attention(l.ln1(h), l.qkv.weight, l.qkv.bias, l.proj.weight, l.proj.bias, heads_);
            h = nn::add(h, nn::dropout(a, p_, ctx));
            Var f = l.ff2(nn::dropout(nn::gelu(l.ff1(l.ln2(h))), p_, ctx));
            h = nn::add(h, nn::dropout(f, p_, ctx));
        }
        return nn::transpose_last2(out_(h));
    }

private:
    struct Layer {
        nn::LayerNorm ln1;
        nn::Linear qkv;
        nn::Linear proj;
        nn::LayerNorm ln2;
        nn::Linear ff1;
        nn::Linear ff2;
    };
    const Tensor& positional_encoding(std::size_t T) {
        if (pe_.rank() == 2 && pe_.dim(0) == T) return pe_;
        pe_ = Tensor({T, d_});
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t i = 0; i < d_ / 2; ++i) {
                const double freq = std::exp(-std::log(10000.0) * static_cast<double>(2 * i) / static_cast<double>(d_));
                pe_[t * d_ + 2 * i] = std::sin(static_cast<double>(t) * freq);
                pe_[t * d_ + 2 * i + 1] = std::cos(static_cast<double>(t) * freq);
            }
        }
        return pe_;
    }

    double p_;
    std::size_t d_;
    std::size_t heads_;
    nn::Conv1d in_;
    std::vector<Layer> layers_;
    nn::Linear out_;
    Tensor pe_;
};

Tensor to_batch(const std::vector<const Matrix*>& trials, const std::vector<std::size_t>& starts, std::size_t length) {
    const std::size_t B = trials.size(), C = static_cast<std::size_t>(trials[0]->rows());
    Tensor t({B, C, length});
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const double* src = trials[b]->data() + c * static_cast<std::size_t>(trials[b]->cols()) + starts[b];
            std::copy(src, src + length, t.data() + (b * C + c) * length);
        }
    }
    return t;
}

double pearson_rows(const Matrix& a, const Matrix& b, Eigen::Index row) {
    return nn::kernels::pearson(a.row(row).data(), b.row(row).data(), static_cast<std::size_t>(a.cols()));
}

double mean_r(const Matrix& yhat, const Matrix& y) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < y.rows(); ++c) s += pearson_rows(yhat, y, c);
    return s / static_cast<double>(y.rows());
}

Matrix predict_lag(const Matrix& x, const Matrix& w, std::size_t half_width) {
    return (build_lag_matrix(x, half_width) * w).transpose();
}

}  // namespace

std::unique_ptr<MappingNetwork> make_network(const MappingSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(derive_seed(seed, "init"));
    switch (spec.kind) {
        case MappingKind::LinearLag: return std::make_unique<LinearLagNet>(spec, rng);
        case MappingKind::ShallowMLP: return std::make_unique<ShallowMlpNet>(spec, rng);
        case MappingKind::CNN1D: return std::make_unique<Cnn1dNet>(spec, rng);
        case MappingKind::UNet1D: return std::make_unique<UNet1dNet>(spec, rng);
        case MappingKind::RNN: return std::make_unique<RnnNet>(spec, rng);
        case MappingKind::TCN: return std::make_unique<TcnNet>(spec, rng);
        case MappingKind::Transformer: return std::make_unique<TransformerNet>(spec, rng);
    }
    throw std::invalid_argument("unknown mapping kind");
}

std::size_t count_parameters(const MappingSpec& spec) {
    if (spec.kind == MappingKind::LinearLag) {
        return spec.channels * spec.lag.n_lags() * spec.channels;
    }
    return make_network(spec, 0)->params().count();
}

CombinedLoss combined_loss(const Matrix& yhat, const Matrix& y, double lambda) {
    if (yhat.rows() != y.rows() || yhat.cols() != y.cols()) {
        throw std::invalid_argument("combined_loss: shape mismatch");
    }
    if (y.cols() < 2) throw std::invalid_argument("combined_loss: needs at least two samples");
    const auto v = nn::kernels::combined_loss(yhat.data(), y.data(), static_cast<std::size_t>(y.rows()),
                                              static_cast<std::size_t>(y.cols()), lambda, nullptr);
    return {v.loss, v.mse, v.mean_r};
}

RidgeSolver::RidgeSolver(const Matrix& gram, const Matrix& cross) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig{Eigen::MatrixXd(gram)};
    vectors_ = eig.eigenvectors();
    values_ = eig.eigenvalues().cwiseMax(0.0);
    projected_ = vectors_.transpose() * Eigen::MatrixXd(cross);
}

Matrix RidgeSolver::solve(double alpha) const {
    const double tol = values_.size() ? values_.maxCoeff() * 1e-12 * static_cast<double>(values_.size()) : 0.0;
    Eigen::VectorXd inv(values_.size());
    for (Eigen::Index i = 0; i < values_.size(); ++i) {
        const double d = values_[i] + alpha;
        inv[i] = (alpha == 0.0 && values_[i] <= tol) || d <= 0.0 ? 0.0 : 1.0 / d;
    }
    return vectors_ * (inv.asDiagonal() * projected_);
}

Tensor lag_weights_to_conv(const Matrix& w, std::size_t channels, std::size_t n_lags) {
    Tensor t({channels, channels, n_lags});
    for (std::size_t j = 0; j < n_lags; ++j)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t o = 0; o < channels; ++o)
                t[(o * channels + c) * n_lags + j] = w(static_cast<Eigen::Index>(j * channels + c), static_cast<Eigen::Index>(o));
    return t;
}

Matrix conv_to_lag_weights(const Tensor& conv) {
    const std::size_t C = conv.dim(0), K = conv.dim(2);
    Matrix w(static_cast<Eigen::Index>(C * K), static_cast<Eigen::Index>(C));
    for (std::size_t j = 0; j < K; ++j)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t o = 0; o < C; ++o)
                w(static_cast<Eigen::Index>(j * C + c), static_cast<Eigen::Index>(o)) = conv[(o * C + c) * K + j];
    return w;
}

TrainedMapping fit_linear_lag(const MappingSpec& spec, const std::vector<TrialPair>& train) {
    spec.validate();
    if (spec.kind != MappingKind::LinearLag) throw std::invalid_argument("fit_linear_lag needs a linear_lag spec");
    if (train.empty()) throw std::invalid_argument("fit_linear_lag needs at least one training pair");
    const std::size_t C = spec.channels, L = spec.lag.half_width(), n_lags = spec.lag.n_lags();
    const auto F = static_cast<Eigen::Index>(C * n_lags);

    const std::size_t folds = spec.alpha_grid.size() > 1 ? std::min(spec.cv_folds, train.size()) : 1;
    std::vector<Matrix> grams(folds, Matrix::Zero(F, F));
    std::vector<Matrix> crosses(folds, Matrix::Zero(F, static_cast<Eigen::Index>(C)));
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto& p = train[i];
        if (static_cast<std::size_t>(p.x.rows()) != C || p.y.rows() != p.x.rows() || p.y.cols() != p.x.cols()) {
            throw std::invalid_argument("fit_linear_lag: trial shape does not match the spec");
        }
        grams[i % folds] += lagged_gram(p.x, L);
        crosses[i % folds] += lagged_cross(p.x, p.y, L);
    }
    Matrix gram_total = Matrix::Zero(F, F);
    Matrix cross_total = Matrix::Zero(F, static_cast<Eigen::Index>(C));
    for (std::size_t f = 0; f < folds; ++f) {
        gram_total += grams[f];
        cross_total += crosses[f];
    }

    TrainedMapping out;
    out.spec = spec;
    double alpha = spec.alpha_grid.front();
    if (folds >= 2) {
        std::vector<double> scores(spec.alpha_grid.size(), 0.0);
        std::vector<std::size_t> counts(spec.alpha_grid.size(), 0);
        for (std::size_t f = 0; f < folds; ++f) {
            RidgeSolver solver(gram_total - grams[f], cross_total - crosses[f]);
            for (std::size_t a = 0; a < spec.alpha_grid.size(); ++a) {
                const Matrix w = solver.solve(spec.alpha_grid[a]);
                for (std::size_t i = f; i < train.size(); i += folds) {
                    scores[a] += mean_r(predict_lag(train[i].x, w, L), train[i].y);
                    ++counts[a];
                }
            }
        }
        std::size_t best = 0;
        for (std::size_t a = 0; a < scores.size(); ++a) {
            scores[a] /= static_cast<double>(counts[a]);
            if (scores[a] > scores[best]) best = a;
        }
        alpha = spec.alpha_grid[best];
        out.meta.cv_scores = scores;
    }

    RidgeSolver solver(gram_total, cross_total);
    const Matrix w = solver.solve(alpha);
    if (alpha == 0.0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig{Eigen::MatrixXd(gram_total), Eigen::EigenvaluesOnly};
        const auto& ev = eig.eigenvalues();
        out.meta.pseudo_inverse = ev.minCoeff() <= ev.maxCoeff() * 1e-12 * static_cast<double>(ev.size());
    }
    out.meta.alpha = alpha;
    out.params.insert("lag.weight", lag_weights_to_conv(w, C, n_lags));

    double loss = 0.0;
    for (const auto& p : train) loss += combined_loss(predict_lag(p.x, w, L), p.y, spec.lambda).loss;
    out.meta.final_train_loss = loss / static_cast<double>(train.size());
    out.meta.final_val_loss = out.meta.best_val_loss = out.meta.final_train_loss;
    for (const auto& p : train) {
        if (std::find(out.meta.training_subjects.begin(), out.meta.training_subjects.end(), p.subject_id) ==
            out.meta.training_subjects.end())
            out.meta.training_subjects.push_back(p.subject_id);
    }
    return out;
}

TrainedMapping train_mapping(const MappingSpec& spec, const std::vector<TrialPair>& train,
                             const std::vector<TrialPair>& val, const MappingTrainOptions& opt,
                             std::uint64_t seed) {
    spec.validate();
    if (spec.kind == MappingKind::LinearLag) {
        throw std::invalid_argument("train_mapping: linear_lag is fitted in closed form");
    }
    if (train.empty()) throw std::invalid_argument("train_mapping needs at least one training pair");
    if (opt.batch_trials == 0) throw std::invalid_argument("train_mapping: batch size must be positive");
    const std::size_t C = spec.channels;
    std::size_t min_T = static_cast<std::size_t>(train[0].x.cols());
    for (const auto& p : train) {
        if (static_cast<std::size_t>(p.x.rows()) != C || p.y.rows() != p.x.rows() || p.y.cols() != p.x.cols()) {
            throw std::invalid_argument("train_mapping: trial shape does not match the spec");
        }
        min_T = std::min(min_T, static_cast<std::size_t>(p.x.cols()));
    }
    const std::size_t crop = opt.crop_samples == 0 ? min_T : std::min(opt.crop_samples, min_T);
    for (const auto& p : train) {
        if (opt.crop_samples == 0 && static_cast<std::size_t>(p.x.cols()) != crop) {
            throw std::invalid_argument("train_mapping: trials differ in length; set crop_samples");
        }
    }

    auto net = make_network(spec, seed);
    nn::ParamSet& ps = net->params();
    nn::AdamW adam(ps, {opt.lr, 0.9, 0.999, 1e-8, opt.weight_decay});
    Rng rng(derive_seed(seed, "train"));

    TrainedMapping out;
    out.spec = spec;
    out.meta.seed = seed;
    for (const auto& p : train) {
        if (std::find(out.meta.training_subjects.begin(), out.meta.training_subjects.end(), p.subject_id) ==
            out.meta.training_subjects.end())
            out.meta.training_subjects.push_back(p.subject_id);
    }

    auto evaluate = [&](const std::vector<TrialPair>& pairs) {
        nn::NoGradGuard guard;
        nn::Context ctx{false, nullptr};
        double total = 0.0;
        for (const auto& p : pairs) {
            const Tensor x({1, C, static_cast<std::size_t>(p.x.cols())},
                           std::vector<double>(p.x.data(), p.x.data() + p.x.size()));
            Var pred = net->forward(nn::constant(x), ctx);
            total += nn::kernels::combined_loss(pred->value.data(), p.y.data(), C, static_cast<std::size_t>(p.y.cols()),
                                                spec.lambda, nullptr)
                         .loss;
        }
        return total / static_cast<double>(pairs.size());
    };

    double best = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 0; epoch < opt.max_epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += opt.batch_trials) {
            const std::size_t end = std::min(order.size(), start + opt.batch_trials);
            std::vector<const Matrix*> xs, ys;
            std::vector<std::size_t> offsets;
            for (std::size_t i = start; i < end; ++i) {
                const auto& p = train[order[i]];
                xs.push_back(&p.x);
                ys.push_back(&p.y);
                const std::size_t slack = static_cast<std::size_t>(p.x.cols()) - crop;
                offsets.push_back(slack == 0 ? 0 : rng.below(slack + 1));
            }
            nn::Context ctx{true, &rng};
            Var pred = net->forward(nn::constant(to_batch(xs, offsets, crop)), ctx);
            Var loss = nn::combined_loss(pred, to_batch(ys, offsets, crop), spec.lambda);
            const double value = loss->value[0];
            if (!std::isfinite(value)) {
                std::ostringstream msg;
                msg << "non-finite training loss for " << to_string(spec.kind) << " at epoch " << epoch << ", batch "
                    << batches << " (lr " << adam.lr() << ")";
                throw std::runtime_error(msg.str());
            }
            nn::backward(loss);
            adam.step();
            ps.zero_grad();
            epoch_loss += value;
            ++batches;
        }
        epoch_loss /= static_cast<double>(batches);
        const double val_loss = val.empty() ? epoch_loss : evaluate(val);
        if (!std::isfinite(val_loss)) {
            std::ostringstream msg;
            msg << "non-finite validation loss for " << to_string(spec.kind) << " at epoch " << epoch << " (lr "
                << adam.lr() << ")";
            throw std::runtime_error(msg.str());
        }
        out.meta.train_curve.push_back(epoch_loss);
        out.meta.val_curve.push_back(val_loss);
        out.meta.epochs_run = epoch + 1;
        if (val_loss < best) {
            best = val_loss;
            since_best = 0;
            out.params = ps.to_store();
            out.buffers = ps.buffers_to_store();
            out.meta.best_epoch = epoch;
            out.meta.best_checkpoint_losses.push_back(val_loss);
        } else if (++since_best >= opt.patience) {
            break;
        }
    }
    out.meta.best_val_loss = best;
    out.meta.final_train_loss = out.meta.train_curve.back();
    out.meta.final_val_loss = out.meta.val_curve.back();
    return out;
}

MappingPredictor::MappingPredictor(const TrainedMapping& model) : spec_(model.spec), net_(make_network(model.spec, 0)) {
    net_->params().load(model.params, model.buffers);
}

Matrix MappingPredictor::predict(const Matrix& x) const {
    if (static_cast<std::size_t>(x.rows()) != spec_.channels) {
        throw std::invalid_argument("mapping expects " + std::to_string(spec_.channels) + " channels, got " +
                                    std::to_string(x.rows()));
    }
    nn::NoGradGuard guard;
    const std::size_t T = static_cast<std::size_t>(x.cols());
    const Tensor in({1, spec_.channels, T}, std::vector<double>(x.data(), x.data() + x.size()));
    Var out = net_->forward(nn::constant(in), nn::Context{false, nullptr});
    Matrix y(x.rows(), x.cols());
    std::copy(out->value.data(), out->value.data() + out->value.size(), y.data());
    return y;
}

TrialTensor forward(const TrainedMapping& model, const TrialTensor& x) {
    TrialTensor out = x;
    out.data = MappingPredictor(model).predict(x.data);
    return out;
}

TrainedMapping random_mapping(const MappingSpec& spec, std::uint64_t seed) {
    auto net = make_network(spec, seed);
    TrainedMapping out;
    out.spec = spec;
    out.params = net->params().to_store();
    out.buffers = net->params().buffers_to_store();
    out.meta.seed = seed;
    return out;
}

}  // namespace isd
