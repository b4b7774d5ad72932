#pragma once

#include <string>
#include <utility>
#include <vector>

#include "isd/nn/ops.hpp"

namespace isd::nn {

/// Named trainable parameters plus batch-norm buffers of one model.
/// Buffers are referenced by address, so modules must stay in place after
/// registration (models are held behind unique_ptr).
class ParamSet {
public:
    void add(const std::string& name, const Var& v);
    void add_buffers(const std::string& name, BatchNormState* state);

    const std::vector<std::pair<std::string, Var>>& params() const noexcept { return params_; }
    std::size_t count() const noexcept;

    ParameterStore to_store() const;
    ParameterStore buffers_to_store() const;
    /// Copies values in; every registered name must be present with a matching shape.
    void load(const ParameterStore& params, const ParameterStore& buffers);

    void zero_grad();

private:
    std::vector<std::pair<std::string, Var>> params_;
    std::vector<std::pair<std::string, BatchNormState*>> buffers_;
};

struct Linear {
    Var weight;  // [out, in]
    Var bias;    // [out] or null
    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
    Var operator()(const Var& x) const { return linear(x, weight, bias); }
    void register_into(ParamSet& ps, const std::string& prefix) const;
};

struct Conv1d {
    Var weight;  // [out, in, k] or [c, 1, k]
    Var bias;
    ConvOptions options;
    Conv1d() = default;
    Conv1d(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng, ConvOptions opt = {},
           bool with_bias = true);
    Var operator()(const Var& x) const { return conv1d(x, weight, bias, options); }
    void register_into(ParamSet& ps, const std::string& prefix) const;
};

struct ConvTranspose1d {
    Var weight;  // [in, out, k]
    Var bias;
    std::size_t stride = 1;
    ConvTranspose1d() = default;
    ConvTranspose1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng);
    Var operator()(const Var& x) const { return conv_transpose1d(x, weight, bias, stride); }
    void register_into(ParamSet& ps, const std::string& prefix) const;
};

struct BatchNorm1d {
    Var gamma;
    Var beta;
    BatchNormState state;
    BatchNorm1d() = default;
    explicit BatchNorm1d(std::size_t channels);
    Var operator()(const Var& x, const Context& ctx) { return batch_norm(x, gamma, beta, state, ctx.training); }
    void register_into(ParamSet& ps, const std::string& prefix);
};

struct LayerNorm {
    Var gamma;
    Var beta;
    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim);
    Var operator()(const Var& x) const { return layer_norm(x, gamma, beta); }
    void register_into(ParamSet& ps, const std::string& prefix) const;
};

/// One direction of a GRU layer with PyTorch-style parameters.
struct GruCell {
    Var w_ih, w_hh, b_ih, b_hh;
    GruCell() = default;
    GruCell(std::size_t in, std::size_t hidden, Rng& rng);
    Var run(const Var& x, bool reverse) const { return gru(x, w_ih, w_hh, b_ih, b_hh, reverse); }
    void register_into(ParamSet& ps, const std::string& prefix) const;
};

/// Uniform(-bound, bound) tensor.
Tensor uniform_tensor(std::vector<std::size_t> shape, double bound, Rng& rng);

}  // namespace isd::nn
