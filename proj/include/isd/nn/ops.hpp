#pragma once

// Differentiable operations. Sequence tensors use the [batch, channels, time]
// layout; the attention path uses [batch, time, features].

#include <cstddef>

#include "isd/nn/autograd.hpp"

namespace isd::nn {

struct ConvOptions {
    std::size_t stride = 1;
    std::size_t dilation = 1;
    std::size_t pad_left = 0;
    std::size_t pad_right = 0;
    bool depthwise = false;  // one filter per channel, weight [C, 1, K]
};

/// x [B, Cin, T], w [Cout, Cin, K] (or [C, 1, K] depthwise), b [Cout] or null.
Var conv1d(const Var& x, const Var& w, const Var& b, const ConvOptions& opt);

/// x [B, Cin, T], w [Cin, Cout, K] -> [B, Cout, (T-1)*stride + K].
Var conv_transpose1d(const Var& x, const Var& w, const Var& b, std::size_t stride);

struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Normalises over every axis except axis 1 of a [N, C] or [B, C, T] tensor.
/// Training mode uses batch statistics and updates `state`; evaluation mode
/// uses the running statistics.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training);

/// Normalises over the last axis.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

Var gelu(const Var& x);
Var dropout(const Var& x, double p, const Context& ctx);

Var add(const Var& a, const Var& b);
/// Adds a constant that broadcasts over leading axes (c.size() must divide x.size()).
Var add_constant(const Var& x, const Tensor& c);
Var reshape(const Var& x, std::vector<std::size_t> shape);

/// [B, C1, T] ++ [B, C2, T] -> [B, C1 + C2, T].
Var concat_channels(const Var& a, const Var& b);
/// Crops or zero-pads the end of the time axis of [B, C, T].
Var resize_time(const Var& x, std::size_t length);
/// [B, C, T] -> [B, C].
Var mean_time(const Var& x);
/// [B, A, C] -> [B, C, A].
Var transpose_last2(const Var& x);

/// Applies w [Out, In] and b [Out] to the last axis of x.
Var linear(const Var& x, const Var& w, const Var& b);

/// x [B, T, D]; w_qkv [3D, D], b_qkv [3D], w_out [D, D], b_out [D].
Var multi_head_attention(const Var& x, const Var& w_qkv, const Var& b_qkv, const Var& w_out,
                         const Var& b_out, std::size_t heads);

/// Single-direction GRU over time. x [B, In, T] -> [B, H, T]; gate order (r, z, n).
Var gru(const Var& x, const Var& w_ih, const Var& w_hh, const Var& b_ih, const Var& b_hh,
        bool reverse);

/// Row-wise L2 normalisation of [N, D].
Var l2_normalize(const Var& x);

/// MSE + lambda * (1 - mean per-row Pearson r); rows are all leading axes,
/// the last axis is time.
Var combined_loss(const Var& prediction, const Tensor& target, double lambda);

/// Symmetric NT-Xent over [B, D] batches of unit vectors.
Var nt_xent(const Var& meg, const Var& word, double temperature);

/// sum_i x_i * w_i.
Var weighted_sum(const Var& x, const Tensor& weights);

namespace kernels {

struct CombinedLossValue {
    double loss = 0.0;
    double mse = 0.0;
    double mean_r = 0.0;
};

/// Shared by the autograd op and the plain evaluation function. `grad`, when
/// non-null, receives d(loss)/d(prediction).
CombinedLossValue combined_loss(const double* prediction, const double* target, std::size_t rows,
                                std::size_t samples, double lambda, double* grad);

/// Pearson correlation of two series; 0 when either is constant.
double pearson(const double* a, const double* b, std::size_t n);

/// Returns the loss and, optionally, gradients w.r.t. both batches.
double nt_xent(const double* meg, const double* word, std::size_t batch, std::size_t dim,
               double temperature, double* grad_meg, double* grad_word);

}  // namespace kernels

}  // namespace isd::nn
