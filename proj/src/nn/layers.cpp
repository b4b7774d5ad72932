#include "isd/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace isd::nn {

Tensor uniform_tensor(std::vector<std::size_t> shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = (2.0 * rng.uniform() - 1.0) * bound;
    return t;
}

void ParamSet::add(const std::string& name, const Var& v) {
    if (!v) return;
    for (const auto& [n, _] : params_) {
        if (n == name) throw std::invalid_argument("duplicate parameter '" + name + "'");
    }
    params_.emplace_back(name, v);
}

void ParamSet::add_buffers(const std::string& name, BatchNormState* state) {
    buffers_.emplace_back(name, state);
}

std::size_t ParamSet::count() const noexcept {
    std::size_t n = 0;
    for (const auto& [_, v] : params_) n += v->value.size();
    return n;
}

ParameterStore ParamSet::to_store() const {
    ParameterStore s;
    for (const auto& [name, v] : params_) s.insert(name, v->value);
    return s;
}

ParameterStore ParamSet::buffers_to_store() const {
    ParameterStore s;
    for (const auto& [name, st] : buffers_) {
        s.insert(name + ".running_mean", st->running_mean);
        s.insert(name + ".running_var", st->running_var);
    }
    return s;
}

void ParamSet::load(const ParameterStore& params, const ParameterStore& buffers) {
    for (auto& [name, v] : params_) {
        const Tensor& t = params.at(name);
        if (t.shape() != v->value.shape()) {
            throw std::invalid_argument("parameter '" + name + "' has shape " + shape_string(t.shape()) +
                                        ", model expects " + shape_string(v->value.shape()));
        }
        v->value = t;
    }
    for (auto& [name, st] : buffers_) {
        st->running_mean = buffers.at(name + ".running_mean");
        st->running_var = buffers.at(name + ".running_var");
    }
}

void ParamSet::zero_grad() {
    for (auto& [_, v] : params_) {
        if (v->grad.size() == v->value.size()) v->grad.fill(0.0);
    }
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = parameter(uniform_tensor({out, in}, bound, rng));
    if (with_bias) bias = parameter(uniform_tensor({out}, bound, rng));
}

void Linear::register_into(ParamSet& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
}

Conv1d::Conv1d(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng, ConvOptions opt,
               bool with_bias)
    : options(opt) {
    const std::size_t per_filter = opt.depthwise ? 1 : in;
    const double bound = 1.0 / std::sqrt(static_cast<double>(per_filter * kernel));
    weight = parameter(uniform_tensor({out, per_filter, kernel}, bound, rng));
    if (with_bias) bias = parameter(uniform_tensor({out}, bound, rng));
}

void Conv1d::register_into(ParamSet& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
}

ConvTranspose1d::ConvTranspose1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t s,
                                 Rng& rng)
    : stride(s) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(out * kernel));
    weight = parameter(uniform_tensor({in, out, kernel}, bound, rng));
    bias = parameter(uniform_tensor({out}, bound, rng));
}

void ConvTranspose1d::register_into(ParamSet& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
}

BatchNorm1d::BatchNorm1d(std::size_t channels)
    : gamma(parameter(Tensor({channels}, 1.0))), beta(parameter(Tensor({channels}, 0.0))) {
    state.running_mean = Tensor({channels}, 0.0);
    state.running_var = Tensor({channels}, 1.0);
}

void BatchNorm1d::register_into(ParamSet& ps, const std::string& prefix) {
    ps.add(prefix + ".weight", gamma);
    ps.add(prefix + ".bias", beta);
    ps.add_buffers(prefix, &state);
}

LayerNorm::LayerNorm(std::size_t dim)
    : gamma(parameter(Tensor({dim}, 1.0))), beta(parameter(Tensor({dim}, 0.0))) {}

void LayerNorm::register_into(ParamSet& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", gamma);
    ps.add(prefix + ".bias", beta);
}

GruCell::GruCell(std::size_t in, std::size_t hidden, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    w_ih = parameter(uniform_tensor({3 * hidden, in}, bound, rng));
    w_hh = parameter(uniform_tensor({3 * hidden, hidden}, bound, rng));
    b_ih = parameter(uniform_tensor({3 * hidden}, bound, rng));
    b_hh = parameter(uniform_tensor({3 * hidden}, bound, rng));
}

void GruCell::register_into(ParamSet& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight_ih", w_ih);
    ps.add(prefix + ".weight_hh", w_hh);
    ps.add(prefix + ".bias_ih", b_ih);
    ps.add(prefix + ".bias_hh", b_hh);
}

}  // namespace isd::nn
