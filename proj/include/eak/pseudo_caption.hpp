#pragma once

#include <vector>

#include "eak/embedding_store.hpp"

namespace eak {

struct PseudoCaptionConfig {
    std::size_t k = 10;
    double threshold = 0.27;
};

void validate(const PseudoCaptionConfig& cfg);

/// For every image, the k pool captions with the highest cosine similarity
/// (ties to the lower pool row), minus those scoring strictly below the
/// threshold. Images keep their record even when nothing survives. Output
/// follows the input image order.
std::vector<MultiCaptionRecord> assign_pseudo_captions(const EmbeddingSet& images, const CaptionPool& pool,
                                                       const PseudoCaptionConfig& cfg = {});

} // namespace eak
