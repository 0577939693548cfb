#pragma once

#include <functional>
#include <map>
#include <string>

#include "eak/tensor.hpp"

namespace eak {

/// Named tensors, keyed by role ("U", "V", "W", "X", "layer0.weight", ...).
using TensorMap = std::map<std::string, Matrix>;

/// Scalar loss plus the gradient of that scalar with respect to every
/// differentiable input. Locked inputs have no entry.
struct LossResult {
    double value = 0.0;
    TensorMap grads;
};

using LossEvaluator = std::function<LossResult(const TensorMap& inputs)>;

/// Compares every analytic gradient the evaluator reports against central
/// differences (f(x + eps) - f(x - eps)) / (2 eps), one coordinate at a time.
///
/// The error for a role is max_k |g_k - fd_k| / (max_k |fd_k| + 1e-8), i.e.
/// the worst absolute deviation measured against the scale of that role's
/// gradient. Throws NonFiniteLoss if any evaluation is not finite.
std::map<std::string, double> grad_check(const LossEvaluator& evaluate, const TensorMap& inputs,
                                         double epsilon = 1e-5);

/// Largest value in a grad_check result (0 when empty).
double max_error(const std::map<std::string, double>& errors) noexcept;

} // namespace eak
