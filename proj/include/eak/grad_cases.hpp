#pragma once

#include <string>
#include <vector>

#include "eak/gradient.hpp"

namespace eak {

/// A small random problem for grad_check: one loss (or a head feeding
/// ArcMargin) with its inputs drawn from a seed.
struct GradCase {
    std::string name;
    LossEvaluator evaluate;
    TensorMap inputs;
};

/// info_nce, arc_margin, ml_arc_margin, mc_arc_margin, combined_loss,
/// head_linear, head_mlp1
std::vector<std::string> grad_case_names();

/// Throws InvalidConfig for an unknown name.
GradCase make_grad_case(const std::string& name, std::uint64_t seed);

} // namespace eak
