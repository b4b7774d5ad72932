#pragma once

// Minimal reverse-mode differentiation over layer-level operations. Each op
// records its parents and a closure that pushes the output gradient back.

#include <functional>
#include <memory>
#include <vector>

#include "isd/core_types.hpp"
#include "isd/rng.hpp"

namespace isd::nn {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    /// Gradient buffer, zero-initialised on first access.
    Tensor& grad_buffer();
    const std::vector<std::size_t>& shape() const { return value.shape(); }
};

Var constant(Tensor t);
Var parameter(Tensor t);

/// Creates the result node of an op. `requires_grad` is inherited from parents.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// While alive, ops record no graph (inference).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Seeds d(root)/d(root) = 1 (root must be a scalar) and propagates.
void backward(const Var& root);

/// Forward-pass context shared by every module call.
struct Context {
    bool training = false;
    Rng* rng = nullptr;  // required when training with dropout
};

}  // namespace isd::nn
