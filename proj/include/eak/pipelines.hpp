#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "eak/embedding_store.hpp"
#include "eak/eval.hpp"
#include "eak/heads.hpp"
#include "eak/losses.hpp"

namespace eak {

enum class Strategy { GprFt, Realign, Mcip };

std::string_view to_string(Strategy s) noexcept;
Strategy strategy_from_string(std::string_view name);

/// Components a pipeline may be told to leave untouched.
struct LockFlags {
    bool image_head = false;
    bool text_head = false;
    bool class_weights = false;
};

struct TrainConfig {
    Strategy strategy = Strategy::GprFt;
    std::size_t epochs = 1;
    std::size_t batch_size = 64;
    /// Required; there is no universally good value.
    double learning_rate = std::numeric_limits<double>::quiet_NaN();
    double weight_decay = 1e-3;
    std::uint64_t seed = 0;
    ArcMarginConfig arc;
    InfoNCEConfig info_nce;
    CombinedConfig combined;
    MultiCaptionOptions multi_caption;
    LockFlags locks;
};

void validate(const TrainConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
/// Fields absent from `j` keep the values already in `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct TrainReport {
    std::vector<double> epoch_losses;
    std::vector<std::vector<EvalReport>> snapshots;
    /// Parameter checksums after training, keyed by component.
    std::map<std::string, std::string> checksums;
    /// Checksums of every locked tensor, before and after the run.
    std::map<std::string, std::string> locked_before;
    std::map<std::string, std::string> locked_after;
    nlohmann::json config;

    bool locks_held() const { return locked_before == locked_after; }
};

nlohmann::json to_json(const TrainReport& report);

/// Called after every epoch when set; its reports land in TrainReport::snapshots.
using EpochSnapshot = std::function<std::vector<EvalReport>(std::size_t epoch)>;

/// Seeded shuffle of 0..n-1 cut into consecutive batches. With drop_short
/// a trailing batch smaller than batch_size is discarded.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, SeededRng& rng,
                                                   bool drop_short);

/// Retrieval fine-tuning: head and class weights trained with ArcMargin on
/// labeled base embeddings. Short final batches are kept.
TrainReport train_gpr_ft(const EmbeddingSet& base_images, ProjectionHead& head, ClassWeightMatrix& weights,
                         const TrainConfig& cfg, const EpochSnapshot& snapshot = {});

/// Re-alignment: image_embs (precomputed, locked) go through image_projector,
/// base_texts through text_head; InfoNCE over row-paired batches.
/// locks.image_head keeps the image projector fixed as well.
TrainReport train_realign(const EmbeddingSet& image_embs, const EmbeddingSet& base_texts,
                          ProjectionHead& image_projector, ProjectionHead& text_head, const TrainConfig& cfg,
                          const EpochSnapshot& snapshot = {});

/// Multi-caption image pairing: lambda1 * ArcMargin(head(x), W) +
/// lambda2 * MCArcMargin(head(x), captions of the batch images). The pool
/// is read-only. Short final batches are dropped while lambda2 > 0.
TrainReport train_mcip(const EmbeddingSet& base_images, const CaptionPool& pool, ProjectionHead& head,
                       ClassWeightMatrix& weights, const TrainConfig& cfg, const EpochSnapshot& snapshot = {});

/// CaptionBatch for a batch of image rows: every assigned caption of those
/// images, in image order, looked up in the pool.
CaptionBatch assemble_caption_batch(const EmbeddingSet& images, std::span<const std::size_t> batch,
                                    const CaptionPool& pool);

} // namespace eak
