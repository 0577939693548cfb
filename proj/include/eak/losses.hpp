#pragma once

#include <span>
#include <vector>

#include "eak/gradient.hpp"
#include "eak/tensor.hpp"

namespace eak {

struct InfoNCEConfig {
    double tau = 0.07;
};

struct ArcMarginConfig {
    double s = 64.0;
    double m = 0.5;
};

struct CombinedConfig {
    double lambda1 = 0.5;
    double lambda2 = 0.5;
};

/// All caption embeddings of one batch. Row p belongs to image owner[p];
/// positives[i] lists the rows owned by image i (possibly none).
struct CaptionBatch {
    Matrix text_matrix;
    std::vector<std::size_t> owner;
    std::vector<std::vector<std::size_t>> positives;
};

struct MultiCaptionOptions {
    /// Drop an image's other captions from the denominator of each of its
    /// positive terms. Off reproduces the literal all-other-captions form.
    bool exclude_own_captions = false;
};

void validate(const InfoNCEConfig& cfg);
void validate(const ArcMarginConfig& cfg);
void validate(const CombinedConfig& cfg);

/// Symmetric contrastive loss over a batch of N matched pairs:
///   L = -1/N sum_i log softmax_j(u_i.v_j / tau)[i] - 1/N sum_i log softmax_j(u_j.v_i / tau)[i]
/// Rows of u and v are L2-normalized internally; gradients ("U", "V") are
/// with respect to the raw rows.
LossResult info_nce(const Matrix& u, const Matrix& v, const InfoNCEConfig& cfg);

/// Additive angular margin softmax over class weights w (K x d):
///   L = -1/N sum_i log e^{s phi(cos_iy)} / (e^{s phi(cos_iy)} + sum_{j != y} e^{s cos_ij})
/// where cos_ij = <u_i/|u_i|, w_j/|w_j|> and phi(c) = cos(acos(c) + m).
/// Past theta + m > pi, phi(c) = c - m sin(m) keeps the logit monotone.
/// Gradients: "U", "W".
LossResult arc_margin(const Matrix& u, const Matrix& w, std::span<const int> labels, const ArcMarginConfig& cfg);

/// Multi-label variant: one margin term per true label, averaged per sample.
/// Each term's denominator runs over every class other than that label,
/// including the sample's other true labels. Gradients: "U", "W".
LossResult ml_arc_margin(const Matrix& u, const Matrix& w, const std::vector<std::vector<int>>& label_sets,
                         const ArcMarginConfig& cfg);

/// Multi-caption variant: each image's own captions are the positive
/// directions, every other caption row of the batch a negative. Per image
/// the C_i terms are averaged; images with C_i = 0 are skipped and the
/// outer mean divides by the number of captioned images (value 0 if none).
/// The caption side is treated as locked: only "U" is returned.
LossResult mc_arc_margin(const Matrix& u, const CaptionBatch& captions, const ArcMarginConfig& cfg,
                         const MultiCaptionOptions& options = {});

/// lambda1 * arc + lambda2 * mc, gradients weighted per role.
LossResult combined_loss(const LossResult& arc, const LossResult& mc, const CombinedConfig& cfg);

/// The margin-adjusted true-class cosine and its derivative.
struct MarginedCosine {
    double value;
    double derivative;
};
MarginedCosine apply_margin(double cosine, double m) noexcept;

} // namespace eak
