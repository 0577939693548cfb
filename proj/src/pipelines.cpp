#include "eak/pipelines.hpp"

#include <cmath>
#include <numeric>
#include <unordered_map>

namespace eak {

namespace {

using json = nlohmann::json;

using PoolIndex = std::unordered_map<std::string_view, std::size_t>;

PoolIndex index_pool(const CaptionPool& pool) {
    if (pool.caption_ids.size() != pool.size()) {
        throw Error(ErrorCode::MetadataRowCountMismatch, "caption pool ids do not match its rows");
    }
    PoolIndex index;
    index.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) index.emplace(pool.caption_ids[i], i);
    return index;
}

CaptionBatch assemble(const EmbeddingSet& images, std::span<const std::size_t> batch, const CaptionPool& pool,
                      const PoolIndex& index) {
    CaptionBatch cb;
    cb.positives.resize(batch.size());
    std::vector<std::size_t> pool_rows;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        for (const auto& ref : (*images.captions)[batch[b]]) {
            auto it = index.find(ref.id);
            if (it == index.end()) throw Error(ErrorCode::UnknownCaptionId, ref.id);
            cb.positives[b].push_back(pool_rows.size());
            cb.owner.push_back(b);
            pool_rows.push_back(it->second);
        }
    }
    cb.text_matrix = pool_rows.empty() ? Matrix(0, pool.dim()) : select_rows(pool.matrix, pool_rows);
    return cb;
}

/// The optimizer's view of one training run: a fixed list of parameter
/// tensors (locked components are simply never registered).
class ParameterSet {
public:
    void add(std::vector<Matrix*> params) {
        for (Matrix* p : params) m_params.push_back(p);
    }
    bool empty() const { return m_params.empty(); }
    const std::vector<Matrix*>& params() const { return m_params; }

private:
    std::vector<Matrix*> m_params;
};

AdamWState make_optimizer(const TrainConfig& cfg) {
    AdamWState state;
    state.config.lr = cfg.learning_rate;
    state.config.weight_decay = cfg.weight_decay;
    return state;
}

TrainReport start_report(const TrainConfig& cfg) {
    TrainReport report;
    report.config = to_json(cfg);
    return report;
}

void check_epoch_loss(double loss, std::size_t epoch) {
    if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch));
}

} // namespace

std::string_view to_string(Strategy s) noexcept {
    switch (s) {
    case Strategy::GprFt: return "gpr_ft";
    case Strategy::Realign: return "realign";
    case Strategy::Mcip: return "mcip";
    }
    return "unknown";
}

Strategy strategy_from_string(std::string_view name) {
    if (name == "gpr_ft") return Strategy::GprFt;
    if (name == "realign") return Strategy::Realign;
    if (name == "mcip") return Strategy::Mcip;
    throw Error(ErrorCode::InvalidConfig, "unknown strategy '" + std::string(name) + "'");
}

void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw Error(ErrorCode::InvalidConfig, "epochs must be >= 1");
    if (cfg.batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
    if (cfg.strategy != Strategy::GprFt && cfg.batch_size < 2) {
        throw Error(ErrorCode::InvalidConfig, "contrastive strategies need batch_size >= 2");
    }
    if (std::isnan(cfg.learning_rate)) throw Error(ErrorCode::InvalidConfig, "learning_rate is required");
    if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
        throw Error(ErrorCode::InvalidConfig, "learning_rate must be finite and >= 0");
    }
    if (!(cfg.weight_decay >= 0.0)) throw Error(ErrorCode::InvalidConfig, "weight_decay must be >= 0");
    validate(cfg.arc);
    validate(cfg.info_nce);
    validate(cfg.combined);
}

json to_json(const TrainConfig& cfg) {
    json j;
    j["strategy"] = std::string(to_string(cfg.strategy));
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["learning_rate"] = std::isnan(cfg.learning_rate) ? json(nullptr) : json(cfg.learning_rate);
    j["weight_decay"] = cfg.weight_decay;
    j["seed"] = cfg.seed;
    j["arc"] = {{"s", cfg.arc.s}, {"m", cfg.arc.m}};
    j["info_nce"] = {{"tau", cfg.info_nce.tau}};
    j["combined"] = {{"lambda1", cfg.combined.lambda1}, {"lambda2", cfg.combined.lambda2}};
    j["exclude_own_captions"] = cfg.multi_caption.exclude_own_captions;
    j["locks"] = {{"image_head", cfg.locks.image_head},
                  {"text_head", cfg.locks.text_head},
                  {"class_weights", cfg.locks.class_weights}};
    return j;
}

TrainConfig train_config_from_json(const json& j, TrainConfig cfg) {
    try {
        if (j.contains("strategy")) cfg.strategy = strategy_from_string(j.at("strategy").get<std::string>());
        if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<std::size_t>();
        if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<std::size_t>();
        if (j.contains("learning_rate") && !j.at("learning_rate").is_null()) {
            cfg.learning_rate = j.at("learning_rate").get<double>();
        }
        if (j.contains("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("arc")) {
            const auto& a = j.at("arc");
            if (a.contains("s")) cfg.arc.s = a.at("s").get<double>();
            if (a.contains("m")) cfg.arc.m = a.at("m").get<double>();
        }
        if (j.contains("info_nce") && j.at("info_nce").contains("tau")) {
            cfg.info_nce.tau = j.at("info_nce").at("tau").get<double>();
        }
        if (j.contains("combined")) {
            const auto& c = j.at("combined");
            if (c.contains("lambda1")) cfg.combined.lambda1 = c.at("lambda1").get<double>();
            if (c.contains("lambda2")) cfg.combined.lambda2 = c.at("lambda2").get<double>();
        }
        if (j.contains("exclude_own_captions")) {
            cfg.multi_caption.exclude_own_captions = j.at("exclude_own_captions").get<bool>();
        }
        if (j.contains("locks")) {
            const auto& l = j.at("locks");
            if (l.contains("image_head")) cfg.locks.image_head = l.at("image_head").get<bool>();
            if (l.contains("text_head")) cfg.locks.text_head = l.at("text_head").get<bool>();
            if (l.contains("class_weights")) cfg.locks.class_weights = l.at("class_weights").get<bool>();
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, e.what());
    }
    return cfg;
}

json to_json(const TrainReport& report) {
    json j;
    j["epoch_losses"] = report.epoch_losses;
    j["checksums"] = report.checksums;
    j["locked_before"] = report.locked_before;
    j["locked_after"] = report.locked_after;
    j["locks_held"] = report.locks_held();
    if (!report.snapshots.empty()) {
        json snaps = json::array();
        for (const auto& epoch : report.snapshots) {
            json e = json::array();
            for (const auto& r : epoch) e.push_back(to_json(r));
            snaps.push_back(std::move(e));
        }
        j["snapshots"] = std::move(snaps);
    }
    j["config"] = report.config;
    return j;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, SeededRng& rng,
                                                   bool drop_short) {
    if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        if (drop_short && end - start < batch_size) break;
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

CaptionBatch assemble_caption_batch(const EmbeddingSet& images, std::span<const std::size_t> batch,
                                    const CaptionPool& pool) {
    if (!images.captions) throw Error(ErrorCode::MissingCaptions, "image set has no caption assignments");
    return assemble(images, batch, pool, index_pool(pool));
}

TrainReport train_gpr_ft(const EmbeddingSet& base_images, ProjectionHead& head, ClassWeightMatrix& weights,
                         const TrainConfig& cfg, const EpochSnapshot& snapshot) {
    validate(cfg);
    if (!base_images.labels) throw Error(ErrorCode::MissingLabels, "retrieval fine-tuning needs class labels");
    if (head.in_dim() != base_images.dim()) throw Error(ErrorCode::ShapeMismatch, "head input dim");
    if (head.out_dim() != weights.dim()) throw Error(ErrorCode::ShapeMismatch, "head output vs class weight dim");
    if (base_images.size() == 0) throw Error(ErrorCode::BatchTooSmall, "no training rows");

    TrainReport report = start_report(cfg);
    if (cfg.locks.image_head) report.locked_before["image_head"] = head.checksum();
    if (cfg.locks.class_weights) report.locked_before["class_weights"] = checksum_hex(weights.w);

    SeededRng rng(cfg.seed);
    AdamWState optimizer = make_optimizer(cfg);
    const auto& labels = *base_images.labels;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = make_batches(base_images.size(), cfg.batch_size, rng, false);
        double total = 0.0;
        for (const auto& batch : batches) {
            const auto fwd = head_forward(head, select_rows(base_images.matrix, batch));
            std::vector<int> batch_labels;
            for (std::size_t i : batch) batch_labels.push_back(labels[i]);
            LossResult loss = arc_margin(fwd.output, weights.w, batch_labels, cfg.arc);
            total += loss.value;

            ParameterSet params;
            std::vector<Matrix> grads;
            if (!cfg.locks.image_head) {
                auto back = head_backward(head, fwd.cache, loss.grads.at("U"));
                params.add(head.mutable_parameters());
                for (auto& g : back.param_grads) grads.push_back(std::move(g));
            }
            if (!cfg.locks.class_weights) {
                params.add({&weights.w});
                grads.push_back(std::move(loss.grads.at("W")));
            }
            if (!params.empty()) adamw_step(params.params(), grads, optimizer);
        }
        report.epoch_losses.push_back(total / static_cast<double>(batches.size()));
        check_epoch_loss(report.epoch_losses.back(), epoch);
        if (snapshot) report.snapshots.push_back(snapshot(epoch));
    }

    report.checksums["image_head"] = head.checksum();
    report.checksums["class_weights"] = checksum_hex(weights.w);
    if (cfg.locks.image_head) report.locked_after["image_head"] = head.checksum();
    if (cfg.locks.class_weights) report.locked_after["class_weights"] = checksum_hex(weights.w);
    return report;
}

TrainReport train_realign(const EmbeddingSet& image_embs, const EmbeddingSet& base_texts,
                          ProjectionHead& image_projector, ProjectionHead& text_head, const TrainConfig& cfg,
                          const EpochSnapshot& snapshot) {
    validate(cfg);
    if (image_embs.size() != base_texts.size()) {
        throw Error(ErrorCode::PairingMismatch, std::to_string(image_embs.size()) + " images vs " +
                                                    std::to_string(base_texts.size()) + " texts");
    }
    if (image_projector.in_dim() != image_embs.dim()) throw Error(ErrorCode::ShapeMismatch, "image projector input");
    if (text_head.in_dim() != base_texts.dim()) throw Error(ErrorCode::ShapeMismatch, "text head input");
    if (image_projector.out_dim() != text_head.out_dim()) {
        throw Error(ErrorCode::ShapeMismatch, "image and text heads must share the joint dimension");
    }
    if (image_embs.size() < cfg.batch_size) {
        throw Error(ErrorCode::BatchTooSmall, "fewer pairs than one full batch");
    }

    TrainReport report = start_report(cfg);
    report.locked_before["image_embeddings"] = checksum_hex(image_embs.matrix);
    if (cfg.locks.image_head) report.locked_before["image_projector"] = image_projector.checksum();
    if (cfg.locks.text_head) report.locked_before["text_head"] = text_head.checksum();

    SeededRng rng(cfg.seed);
    AdamWState optimizer = make_optimizer(cfg);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = make_batches(image_embs.size(), cfg.batch_size, rng, true);
        double total = 0.0;
        for (const auto& batch : batches) {
            const auto u = head_forward(image_projector, select_rows(image_embs.matrix, batch));
            const auto v = head_forward(text_head, select_rows(base_texts.matrix, batch));
            LossResult loss = info_nce(u.output, v.output, cfg.info_nce);
            total += loss.value;

            ParameterSet params;
            std::vector<Matrix> grads;
            if (!cfg.locks.image_head) {
                auto back = head_backward(image_projector, u.cache, loss.grads.at("U"));
                params.add(image_projector.mutable_parameters());
                for (auto& g : back.param_grads) grads.push_back(std::move(g));
            }
            if (!cfg.locks.text_head) {
                auto back = head_backward(text_head, v.cache, loss.grads.at("V"));
                params.add(text_head.mutable_parameters());
                for (auto& g : back.param_grads) grads.push_back(std::move(g));
            }
            if (!params.empty()) adamw_step(params.params(), grads, optimizer);
        }
        report.epoch_losses.push_back(total / static_cast<double>(batches.size()));
        check_epoch_loss(report.epoch_losses.back(), epoch);
        if (snapshot) report.snapshots.push_back(snapshot(epoch));
    }

    report.checksums["image_projector"] = image_projector.checksum();
    report.checksums["text_head"] = text_head.checksum();
    report.locked_after["image_embeddings"] = checksum_hex(image_embs.matrix);
    if (cfg.locks.image_head) report.locked_after["image_projector"] = image_projector.checksum();
    if (cfg.locks.text_head) report.locked_after["text_head"] = text_head.checksum();
    return report;
}

TrainReport train_mcip(const EmbeddingSet& base_images, const CaptionPool& pool, ProjectionHead& head,
                       ClassWeightMatrix& weights, const TrainConfig& cfg, const EpochSnapshot& snapshot) {
    validate(cfg);
    if (!base_images.labels) throw Error(ErrorCode::MissingLabels, "MCIP needs class labels");
    if (!base_images.captions) throw Error(ErrorCode::MissingCaptions, "MCIP needs caption assignments");
    if (head.in_dim() != base_images.dim()) throw Error(ErrorCode::ShapeMismatch, "head input dim");
    if (head.out_dim() != weights.dim()) throw Error(ErrorCode::ShapeMismatch, "head output vs class weight dim");
    if (pool.size() > 0 && pool.dim() != head.out_dim()) {
        throw Error(ErrorCode::ShapeMismatch, "caption pool dim must equal the joint dimension");
    }
    if (base_images.size() == 0) throw Error(ErrorCode::BatchTooSmall, "no training rows");

    const PoolIndex index = index_pool(pool);
    bool any_caption = false;
    for (const auto& caps : *base_images.captions) {
        for (const auto& ref : caps) {
            if (!index.contains(ref.id)) throw Error(ErrorCode::UnknownCaptionId, ref.id);
            any_caption = true;
        }
    }
    if (!any_caption) throw Error(ErrorCode::MissingCaptions, "no image has a caption assignment");

    const bool use_captions = cfg.combined.lambda2 > 0.0;
    if (use_captions && base_images.size() < cfg.batch_size) {
        throw Error(ErrorCode::BatchTooSmall, "fewer images than one full batch");
    }

    TrainReport report = start_report(cfg);
    report.locked_before["caption_pool"] = checksum_hex(pool.matrix);
    if (cfg.locks.image_head) report.locked_before["image_head"] = head.checksum();
    if (cfg.locks.class_weights) report.locked_before["class_weights"] = checksum_hex(weights.w);

    SeededRng rng(cfg.seed);
    AdamWState optimizer = make_optimizer(cfg);
    const auto& labels = *base_images.labels;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = make_batches(base_images.size(), cfg.batch_size, rng, use_captions);
        double total = 0.0;
        for (const auto& batch : batches) {
            const auto fwd = head_forward(head, select_rows(base_images.matrix, batch));
            std::vector<int> batch_labels;
            for (std::size_t i : batch) batch_labels.push_back(labels[i]);
            const LossResult arc = arc_margin(fwd.output, weights.w, batch_labels, cfg.arc);
            LossResult mc;
            if (use_captions) {
                mc = mc_arc_margin(fwd.output, assemble(base_images, batch, pool, index), cfg.arc, cfg.multi_caption);
            }
            LossResult loss = combined_loss(arc, mc, cfg.combined);
            total += loss.value;

            ParameterSet params;
            std::vector<Matrix> grads;
            if (!cfg.locks.image_head) {
                auto back = head_backward(head, fwd.cache, loss.grads.at("U"));
                params.add(head.mutable_parameters());
                for (auto& g : back.param_grads) grads.push_back(std::move(g));
            }
            if (!cfg.locks.class_weights) {
                params.add({&weights.w});
                grads.push_back(std::move(loss.grads.at("W")));
            }
            if (!params.empty()) adamw_step(params.params(), grads, optimizer);
        }
        report.epoch_losses.push_back(total / static_cast<double>(batches.size()));
        check_epoch_loss(report.epoch_losses.back(), epoch);
        if (snapshot) report.snapshots.push_back(snapshot(epoch));
    }

    report.checksums["image_head"] = head.checksum();
    report.checksums["class_weights"] = checksum_hex(weights.w);
    report.locked_after["caption_pool"] = checksum_hex(pool.matrix);
    if (cfg.locks.image_head) report.locked_after["image_head"] = head.checksum();
    if (cfg.locks.class_weights) report.locked_after["class_weights"] = checksum_hex(weights.w);
    return report;
}

} // namespace eak
