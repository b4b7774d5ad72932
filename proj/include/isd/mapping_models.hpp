#pragma once

// Imagined -> listened mapping models: a lagged linear read-out fitted in closed
// form and six neural sequence-to-sequence architectures trained by gradient
// descent on the combined MSE + correlation loss.

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "isd/core_types.hpp"
#include "isd/nn/layers.hpp"
#include "isd/signal_prep.hpp"

namespace isd {

enum class MappingKind : std::uint8_t { LinearLag, ShallowMLP, CNN1D, UNet1D, RNN, TCN, Transformer };

inline constexpr std::array<MappingKind, 7> kAllMappingKinds = {
    MappingKind::LinearLag, MappingKind::ShallowMLP, MappingKind::CNN1D,      MappingKind::UNet1D,
    MappingKind::RNN,       MappingKind::TCN,        MappingKind::Transformer};

std::string_view to_string(MappingKind k);
MappingKind mapping_kind_from_string(std::string_view s);
bool is_neural(MappingKind k);

struct MappingSpec {
    MappingKind kind = MappingKind::LinearLag;
    std::size_t channels = kDefaultChannels;
    double lambda = 0.5;
    double dropout = 0.1;
    LagSpec lag;

    std::size_t mlp_hidden = 64;
    std::size_t cnn_width = 64;
    std::size_t cnn_kernel = 5;
    std::size_t unet_width1 = 25;
    std::size_t unet_width2 = 50;
    std::size_t rnn_hidden = 64;  // concatenated size; each direction uses half
    std::size_t tcn_width = 32;
    std::size_t tcn_kernel = 3;
    std::size_t tf_model = 64;
    std::size_t tf_layers = 3;
    std::size_t tf_heads = 4;
    std::size_t tf_ffn = 128;

    std::vector<double> alpha_grid = {1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4};
    std::size_t cv_folds = 5;

    void validate() const;

    friend bool operator==(const MappingSpec&, const MappingSpec&) = default;
};

/// Defaults for `kind` with `channels` sensors.
MappingSpec default_mapping_spec(MappingKind kind, std::size_t channels = kDefaultChannels);

/// A network mapping [B, C, T] to [B, C, T].
class MappingNetwork {
public:
    virtual ~MappingNetwork() = default;
    virtual nn::Var forward(const nn::Var& x, const nn::Context& ctx) = 0;
    nn::ParamSet& params() noexcept { return params_; }
    const nn::ParamSet& params() const noexcept { return params_; }

protected:
    nn::ParamSet params_;
};

/// Freshly initialised network for `spec`; LinearLag is a same-padded
/// convolution with n_lags taps and no bias.
std::unique_ptr<MappingNetwork> make_network(const MappingSpec& spec, std::uint64_t seed);

/// Trainable parameter count of the instantiated architecture.
std::size_t count_parameters(const MappingSpec& spec);

struct MappingMetadata {
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    double final_train_loss = 0.0;
    double final_val_loss = 0.0;
    double best_val_loss = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> train_curve;
    std::vector<double> val_curve;
    std::vector<double> best_checkpoint_losses;  // validation loss at each new best
    double alpha = 0.0;
    bool pseudo_inverse = false;
    std::vector<double> cv_scores;  // mean validation r per alpha
    std::vector<std::string> training_subjects;
};

struct TrainedMapping {
    MappingSpec spec;
    ParameterStore params;
    ParameterStore buffers;
    MappingMetadata meta;
};

/// One aligned (imagined, listened) pair, both z-scored per channel.
struct TrialPair {
    Matrix x;
    Matrix y;
    std::string subject_id;
    StimulusClass stimulus_class = StimulusClass::Melody1;
    std::size_t trial_index = 0;
};

struct CombinedLoss {
    double loss = 0.0;
    double mse = 0.0;
    double mean_r = 0.0;
};

/// MSE over all entries plus lambda * (1 - mean per-channel Pearson r).
CombinedLoss combined_loss(const Matrix& yhat, const Matrix& y, double lambda);

/// Ridge solution W [C * n_lags x C] for one alpha, reusing an
/// eigendecomposition of the Gram matrix.
class RidgeSolver {
public:
    RidgeSolver(const Matrix& gram, const Matrix& cross);
    Matrix solve(double alpha) const;

private:
    Eigen::MatrixXd vectors_;
    Eigen::VectorXd values_;
    Eigen::MatrixXd projected_;  // V^T X^T Y
};

/// Closed-form lagged ridge regression; alpha chosen from spec.alpha_grid by
/// k-fold cross-validation over trials (a single-value grid skips the search).
TrainedMapping fit_linear_lag(const MappingSpec& spec, const std::vector<TrialPair>& train);

/// Converts between the ridge layout [C * n_lags x C] and the convolution
/// weight [C, C, n_lags].
Tensor lag_weights_to_conv(const Matrix& w, std::size_t channels, std::size_t n_lags);
Matrix conv_to_lag_weights(const Tensor& conv);

struct MappingTrainOptions {
    double lr = 1e-3;
    double weight_decay = 1e-2;
    std::size_t batch_trials = 8;
    std::size_t max_epochs = 200;
    std::size_t patience = 20;
    std::size_t crop_samples = 0;  // 0 trains on full trials
};

/// Mini-batch AdamW with early stopping on validation loss; returns the best
/// checkpoint. Throws std::runtime_error on a non-finite loss.
TrainedMapping train_mapping(const MappingSpec& spec, const std::vector<TrialPair>& train,
                             const std::vector<TrialPair>& val, const MappingTrainOptions& opt,
                             std::uint64_t seed);

/// Inference wrapper holding an instantiated network.
class MappingPredictor {
public:
    explicit MappingPredictor(const TrainedMapping& model);
    Matrix predict(const Matrix& x) const;

private:
    MappingSpec spec_;
    std::unique_ptr<MappingNetwork> net_;
};

TrialTensor forward(const TrainedMapping& model, const TrialTensor& x);

/// A model with freshly initialised parameters (random-mapping control).
TrainedMapping random_mapping(const MappingSpec& spec, std::uint64_t seed);

}  // namespace isd
