#include "eak/gradient.hpp"

#include <algorithm>
#include <cmath>

namespace eak {

namespace {

double evaluate_value(const LossEvaluator& evaluate, const TensorMap& inputs) {
    const double v = evaluate(inputs).value;
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteLoss, "loss evaluated to a non-finite value");
    return v;
}

} // namespace

std::map<std::string, double> grad_check(const LossEvaluator& evaluate, const TensorMap& inputs, double epsilon) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
        throw Error(ErrorCode::InvalidConfig, "grad_check epsilon must lie in [1e-7, 1e-3]");
    }
    const LossResult analytic = evaluate(inputs);
    if (!std::isfinite(analytic.value)) throw Error(ErrorCode::NonFiniteLoss, "loss at the base point");

    std::map<std::string, double> errors;
    TensorMap probe = inputs;
    for (const auto& [role, grad] : analytic.grads) {
        auto it = probe.find(role);
        if (it == probe.end()) throw Error(ErrorCode::ShapeMismatch, "gradient for unknown input '" + role + "'");
        if (!grad.same_shape(it->second)) {
            throw Error(ErrorCode::ShapeMismatch, "gradient shape differs from input '" + role + "'");
        }
        auto values = it->second.data();
        double worst_diff = 0.0;
        double fd_scale = 0.0;
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double saved = values[k];
            values[k] = saved + epsilon;
            const double plus = evaluate_value(evaluate, probe);
            values[k] = saved - epsilon;
            const double minus = evaluate_value(evaluate, probe);
            values[k] = saved;
            const double fd = (plus - minus) / (2.0 * epsilon);
            worst_diff = std::max(worst_diff, std::abs(grad.data()[k] - fd));
            fd_scale = std::max(fd_scale, std::abs(fd));
        }
        errors[role] = worst_diff / (fd_scale + 1e-8);
    }
    return errors;
}

double max_error(const std::map<std::string, double>& errors) noexcept {
    double worst = 0.0;
    for (const auto& [_, e] : errors) worst = std::max(worst, e);
    return worst;
}

} // namespace eak
