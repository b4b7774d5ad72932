#include "isd/nn/optim.hpp"

#include <cmath>
#include <numbers>

namespace isd::nn {

AdamW::AdamW(const ParamSet& params, AdamWOptions opt) : opt_(opt) {
    for (const auto& [_, v] : params.params()) {
        params_.push_back(v);
        m_.emplace_back(v->value.size(), 0.0);
        v_.emplace_back(v->value.size(), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
        Node& node = *params_[p];
        if (node.grad.size() != node.value.size()) continue;
        auto& m = m_[p];
        auto& v = v_[p];
        const double decay = 1.0 - opt_.lr * opt_.weight_decay;
        for (std::size_t i = 0; i < node.value.size(); ++i) {
            const double g = node.grad[i];
            m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
            v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            node.value[i] = node.value[i] * decay - opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
        }
    }
}

double cosine_lr(double base, double floor, std::size_t epoch, std::size_t total) {
    if (total <= 1) return base;
    const double frac = static_cast<double>(epoch) / static_cast<double>(total - 1);
    return floor + 0.5 * (base - floor) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace isd::nn
