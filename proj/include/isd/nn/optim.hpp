#pragma once

#include <vector>

#include "isd/nn/layers.hpp"

namespace isd::nn {

struct AdamWOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

/// Adam with decoupled weight decay.
class AdamW {
public:
    AdamW(const ParamSet& params, AdamWOptions opt);

    void step();
    void set_lr(double lr) noexcept { opt_.lr = lr; }
    double lr() const noexcept { return opt_.lr; }
    std::size_t steps() const noexcept { return t_; }

private:
    std::vector<Var> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamWOptions opt_;
    std::size_t t_ = 0;
};

/// Cosine annealing from `base` to `floor` over `total` epochs.
double cosine_lr(double base, double floor, std::size_t epoch, std::size_t total);

}  // namespace isd::nn
