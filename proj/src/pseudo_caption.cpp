#include "eak/pseudo_caption.hpp"

#include <algorithm>
#include <cmath>

namespace eak {

void validate(const PseudoCaptionConfig& cfg) {
    if (cfg.k < 1) throw Error(ErrorCode::InvalidConfig, "caption k must be >= 1");
    if (!(cfg.threshold >= -1.0 && cfg.threshold <= 1.0)) {
        throw Error(ErrorCode::InvalidConfig, "caption threshold must lie in [-1, 1]");
    }
}

std::vector<MultiCaptionRecord> assign_pseudo_captions(const EmbeddingSet& images, const CaptionPool& pool,
                                                       const PseudoCaptionConfig& cfg) {
    validate(cfg);
    if (!images.labels) throw Error(ErrorCode::MissingLabels, "pseudo-captioning needs labeled images");
    if (images.dim() != pool.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "image dim " + std::to_string(images.dim()) + " vs pool dim " +
                                                      std::to_string(pool.dim()));
    }
    if (pool.caption_ids.size() != pool.size()) {
        throw Error(ErrorCode::MetadataRowCountMismatch, "caption pool ids do not match its rows");
    }

    std::vector<MultiCaptionRecord> records(images.size());
    if (images.size() == 0) return records;
    const Matrix image_unit = l2_normalize_rows(images.matrix);
    const Matrix pool_unit = pool.size() == 0 ? Matrix(0, pool.dim()) : l2_normalize_rows(pool.matrix);
    const std::size_t k = std::min(cfg.k, pool.size());

    parallel_for(images.size(), [&](std::size_t i) {
        auto& rec = records[i];
        rec.image_id = images.ids[i];
        rec.class_label = (*images.labels)[i];
        if (k == 0) return;
        std::vector<double> scores(pool.size());
        for (std::size_t j = 0; j < pool.size(); ++j) scores[j] = dot(image_unit.row(i), pool_unit.row(j));
        for (std::size_t j : top_k(scores, k)) {
            if (scores[j] < cfg.threshold) break;
            rec.captions.push_back({pool.caption_ids[j], scores[j]});
        }
    });
    return records;
}

} // namespace eak
