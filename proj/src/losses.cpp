#include "eak/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace eak {

namespace {

constexpr double kCosClamp = 1.0 - 1e-7;

struct UnitRows {
    Matrix unit;
    std::vector<double> norms;
};

UnitRows unit_rows(const Matrix& m) {
    UnitRows out{l2_normalize_rows(m), row_norms(m)};
    return out;
}

/// d/dx of x/|x| applied to an upstream gradient g: (g - (g.x^) x^) / |x|.
Matrix unit_backward(const UnitRows& rows, const Matrix& grad_unit) {
    Matrix out(grad_unit.rows(), grad_unit.cols());
    for (std::size_t r = 0; r < grad_unit.rows(); ++r) {
        auto x = rows.unit.row(r);
        auto g = grad_unit.row(r);
        const double proj = dot(g, x);
        const double inv = 1.0 / rows.norms[r];
        auto o = out.row(r);
        for (std::size_t c = 0; c < o.size(); ++c) o[c] = (g[c] - proj * x[c]) * inv;
    }
    return out;
}

/// One margin-softmax term over a row of cosines. `positive` gets the
/// margin; entries flagged in `excluded` are left out of the denominator.
/// Returns the term value and accumulates weight * dterm/dcos into grad.
double margin_term(std::span<const double> cosines, std::size_t positive, const std::vector<char>* excluded,
                   const ArcMarginConfig& cfg, double weight, std::span<double> grad) {
    const auto margined = apply_margin(cosines[positive], cfg.m);
    const double z_pos = cfg.s * margined.value;
    auto included = [&](std::size_t j) { return j == positive || excluded == nullptr || !(*excluded)[j]; };

    double z_max = z_pos;
    for (std::size_t j = 0; j < cosines.size(); ++j) {
        if (j != positive && included(j)) z_max = std::max(z_max, cfg.s * cosines[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < cosines.size(); ++j) {
        if (!included(j)) continue;
        const double z = j == positive ? z_pos : cfg.s * cosines[j];
        sum += std::exp(z - z_max);
    }
    const double log_sum = std::log(sum) + z_max;

    for (std::size_t j = 0; j < cosines.size(); ++j) {
        if (!included(j)) continue;
        if (j == positive) {
            const double p = std::exp(z_pos - log_sum);
            grad[j] += weight * cfg.s * (p - 1.0) * margined.derivative;
        } else {
            grad[j] += weight * cfg.s * std::exp(cfg.s * cosines[j] - log_sum);
        }
    }
    return log_sum - z_pos;
}

void check_finite(const LossResult& r) {
    if (!std::isfinite(r.value)) throw Error(ErrorCode::NonFiniteLoss, "loss value");
    for (const auto& [role, g] : r.grads) {
        if (!all_finite(g)) throw Error(ErrorCode::NonFiniteLoss, "gradient for " + role);
    }
}

void check_class_inputs(const Matrix& u, const Matrix& w) {
    if (u.cols() != w.cols()) {
        throw Error(ErrorCode::ShapeMismatch, "embedding dim " + std::to_string(u.cols()) + " vs class weight dim " +
                                                  std::to_string(w.cols()));
    }
    if (w.rows() < 2) throw Error(ErrorCode::ShapeMismatch, "need at least two classes");
    if (u.rows() == 0) throw Error(ErrorCode::BatchTooSmall, "empty batch");
}

void check_label(int label, std::size_t classes) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
        throw Error(ErrorCode::LabelOutOfRange,
                    "label " + std::to_string(label) + " with " + std::to_string(classes) + " classes");
    }
}

/// Shared tail of the class-weight losses: map the cosine gradient back to
/// the raw embeddings and class weights.
LossResult finish_class_loss(double value, const UnitRows& uu, const UnitRows& ww, const Matrix& grad_cos) {
    LossResult out;
    out.value = value;
    out.grads["U"] = unit_backward(uu, matmul(grad_cos, ww.unit));
    out.grads["W"] = unit_backward(ww, matmul_tn(grad_cos, uu.unit));
    check_finite(out);
    return out;
}

} // namespace

void validate(const InfoNCEConfig& cfg) {
    if (!(cfg.tau > 0.0) || !std::isfinite(cfg.tau)) throw Error(ErrorCode::InvalidConfig, "tau must be > 0");
}

void validate(const ArcMarginConfig& cfg) {
    if (!(cfg.s > 0.0) || !std::isfinite(cfg.s)) throw Error(ErrorCode::InvalidConfig, "s must be > 0");
    if (!(cfg.m >= 0.0 && cfg.m < std::numbers::pi)) throw Error(ErrorCode::InvalidConfig, "m must lie in [0, pi)");
}

void validate(const CombinedConfig& cfg) {
    if (!(cfg.lambda1 >= 0.0) || !(cfg.lambda2 >= 0.0) || !(cfg.lambda1 + cfg.lambda2 > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "lambdas must be >= 0 with a positive sum");
    }
}

MarginedCosine apply_margin(double cosine, double m) noexcept {
    if (m == 0.0) return {cosine, 1.0};
    if (cosine <= std::cos(std::numbers::pi - m)) return {cosine - m * std::sin(m), 1.0};
    const bool clamped = cosine > kCosClamp || cosine < -kCosClamp;
    const double c = std::clamp(cosine, -kCosClamp, kCosClamp);
    const double sin_theta = std::sqrt(1.0 - c * c);
    const double value = c * std::cos(m) - sin_theta * std::sin(m);
    const double derivative = clamped ? 0.0 : std::cos(m) + std::sin(m) * c / sin_theta;
    return {value, derivative};
}

LossResult info_nce(const Matrix& u, const Matrix& v, const InfoNCEConfig& cfg) {
    validate(cfg);
    if (!u.same_shape(v)) throw Error(ErrorCode::ShapeMismatch, "u and v must have the same shape");
    const std::size_t n = u.rows();
    if (n < 2) throw Error(ErrorCode::BatchTooSmall, "contrastive loss needs N >= 2");

    const UnitRows uu = unit_rows(u);
    const UnitRows vv = unit_rows(v);
    Matrix logits = matmul_nt(uu.unit, vv.unit);
    for (double& x : logits.data()) x /= cfg.tau;

    const double inv_n = 1.0 / static_cast<double>(n);
    Matrix grad_logits(n, n);
    double value = 0.0;

    // image -> text: softmax over each row
    for (std::size_t i = 0; i < n; ++i) {
        auto row = logits.row(i);
        const double z_max = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double z : row) sum += std::exp(z - z_max);
        const double lse = std::log(sum) + z_max;
        value += (lse - row[i]) * inv_n;
        for (std::size_t j = 0; j < n; ++j) grad_logits(i, j) += std::exp(row[j] - lse) * inv_n;
        grad_logits(i, i) -= inv_n;
    }
    // text -> image: softmax over each column
    for (std::size_t j = 0; j < n; ++j) {
        double z_max = logits(0, j);
        for (std::size_t i = 1; i < n; ++i) z_max = std::max(z_max, logits(i, j));
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += std::exp(logits(i, j) - z_max);
        const double lse = std::log(sum) + z_max;
        value += (lse - logits(j, j)) * inv_n;
        for (std::size_t i = 0; i < n; ++i) grad_logits(i, j) += std::exp(logits(i, j) - lse) * inv_n;
        grad_logits(j, j) -= inv_n;
    }

    for (double& g : grad_logits.data()) g /= cfg.tau;
    LossResult out;
    out.value = value;
    out.grads["U"] = unit_backward(uu, matmul(grad_logits, vv.unit));
    out.grads["V"] = unit_backward(vv, matmul_tn(grad_logits, uu.unit));
    check_finite(out);
    return out;
}

LossResult arc_margin(const Matrix& u, const Matrix& w, std::span<const int> labels, const ArcMarginConfig& cfg) {
    validate(cfg);
    check_class_inputs(u, w);
    if (labels.size() != u.rows()) throw Error(ErrorCode::ShapeMismatch, "one label per row required");
    for (int l : labels) check_label(l, w.rows());

    const UnitRows uu = unit_rows(u);
    const UnitRows ww = unit_rows(w);
    const Matrix cos = matmul_nt(uu.unit, ww.unit);
    Matrix grad_cos(cos.rows(), cos.cols());
    const double weight = 1.0 / static_cast<double>(u.rows());
    double value = 0.0;
    for (std::size_t i = 0; i < u.rows(); ++i) {
        value += weight * margin_term(cos.row(i), static_cast<std::size_t>(labels[i]), nullptr, cfg, weight,
                                      grad_cos.row(i));
    }
    return finish_class_loss(value, uu, ww, grad_cos);
}

LossResult ml_arc_margin(const Matrix& u, const Matrix& w, const std::vector<std::vector<int>>& label_sets,
                         const ArcMarginConfig& cfg) {
    validate(cfg);
    check_class_inputs(u, w);
    if (label_sets.size() != u.rows()) throw Error(ErrorCode::ShapeMismatch, "one label set per row required");
    for (std::size_t i = 0; i < label_sets.size(); ++i) {
        if (label_sets[i].empty()) throw Error(ErrorCode::EmptyLabelSet, "row " + std::to_string(i));
        for (int l : label_sets[i]) check_label(l, w.rows());
    }

    const UnitRows uu = unit_rows(u);
    const UnitRows ww = unit_rows(w);
    const Matrix cos = matmul_nt(uu.unit, ww.unit);
    Matrix grad_cos(cos.rows(), cos.cols());
    const double inv_n = 1.0 / static_cast<double>(u.rows());
    double value = 0.0;
    for (std::size_t i = 0; i < u.rows(); ++i) {
        const double weight = inv_n / static_cast<double>(label_sets[i].size());
        for (int l : label_sets[i]) {
            value += weight * margin_term(cos.row(i), static_cast<std::size_t>(l), nullptr, cfg, weight,
                                          grad_cos.row(i));
        }
    }
    return finish_class_loss(value, uu, ww, grad_cos);
}

LossResult mc_arc_margin(const Matrix& u, const CaptionBatch& captions, const ArcMarginConfig& cfg,
                         const MultiCaptionOptions& options) {
    validate(cfg);
    const std::size_t n = u.rows();
    const std::size_t p = captions.text_matrix.rows();
    if (p > 0 && captions.text_matrix.cols() != u.cols()) {
        throw Error(ErrorCode::ShapeMismatch, "caption dim differs from embedding dim");
    }
    if (captions.owner.size() != p) throw Error(ErrorCode::ShapeMismatch, "one owner per caption row required");
    if (captions.positives.size() != n) throw Error(ErrorCode::ShapeMismatch, "one positive list per image");
    for (std::size_t row = 0; row < p; ++row) {
        if (captions.owner[row] >= n) {
            throw Error(ErrorCode::OwnershipViolation, "caption row " + std::to_string(row) + " has no valid owner");
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t row : captions.positives[i]) {
            if (row >= p || captions.owner[row] != i) {
                throw Error(ErrorCode::OwnershipViolation,
                            "image " + std::to_string(i) + " lists caption row " + std::to_string(row));
            }
        }
    }

    LossResult out;
    out.grads["U"] = Matrix(u.rows(), u.cols());
    std::size_t captioned = 0;
    for (const auto& pos : captions.positives) captioned += pos.empty() ? 0 : 1;
    if (captioned == 0) return out;

    const UnitRows uu = unit_rows(u);
    const Matrix text_unit = l2_normalize_rows(captions.text_matrix);
    const Matrix cos = matmul_nt(uu.unit, text_unit);
    Matrix grad_cos(n, p);
    const double inv_images = 1.0 / static_cast<double>(captioned);
    std::vector<char> excluded(p, 0);
    double value = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& pos = captions.positives[i];
        if (pos.empty()) continue;
        const double weight = inv_images / static_cast<double>(pos.size());
        if (options.exclude_own_captions) {
            for (std::size_t row = 0; row < p; ++row) excluded[row] = captions.owner[row] == i;
        }
        for (std::size_t row : pos) {
            value += weight * margin_term(cos.row(i), row, options.exclude_own_captions ? &excluded : nullptr, cfg,
                                          weight, grad_cos.row(i));
        }
    }
    out.value = value;
    out.grads["U"] = unit_backward(uu, matmul(grad_cos, text_unit));
    check_finite(out);
    return out;
}

LossResult combined_loss(const LossResult& arc, const LossResult& mc, const CombinedConfig& cfg) {
    validate(cfg);
    LossResult out;
    out.value = cfg.lambda1 * arc.value + cfg.lambda2 * mc.value;
    for (const auto& [role, g] : arc.grads) {
        Matrix scaled = g;
        for (double& x : scaled.data()) x *= cfg.lambda1;
        out.grads.emplace(role, std::move(scaled));
    }
    for (const auto& [role, g] : mc.grads) {
        auto it = out.grads.find(role);
        if (it == out.grads.end()) {
            Matrix scaled = g;
            for (double& x : scaled.data()) x *= cfg.lambda2;
            out.grads.emplace(role, std::move(scaled));
            continue;
        }
        if (!it->second.same_shape(g)) throw Error(ErrorCode::ShapeMismatch, "gradient shapes differ for " + role);
        auto dst = it->second.data();
        auto src = g.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += cfg.lambda2 * src[k];
    }
    return out;
}

} // namespace eak
