#include "eak/grad_cases.hpp"

#include <algorithm>

#include "eak/heads.hpp"
#include "eak/losses.hpp"

namespace eak {

namespace {

constexpr std::size_t kRows = 6;
constexpr std::size_t kDim = 8;
constexpr std::size_t kClasses = 5;

std::vector<int> random_labels(std::size_t n, SeededRng& rng) {
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.below(kClasses));
    return labels;
}

std::vector<std::vector<int>> random_label_sets(std::size_t n, SeededRng& rng) {
    std::vector<std::vector<int>> sets(n);
    for (auto& s : sets) {
        const std::size_t count = 1 + rng.below(3);
        while (s.size() < count) {
            const int l = static_cast<int>(rng.below(kClasses));
            if (std::find(s.begin(), s.end(), l) == s.end()) s.push_back(l);
        }
        std::sort(s.begin(), s.end());
    }
    return sets;
}

// Between 0 and 3 captions per image, at least one image captioned.
CaptionBatch random_captions(std::size_t n, SeededRng& rng) {
    CaptionBatch cb;
    cb.positives.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t count = rng.below(4);
        if (i == 0 && count == 0) count = 1;
        for (std::size_t c = 0; c < count; ++c) {
            cb.positives[i].push_back(cb.owner.size());
            cb.owner.push_back(i);
        }
    }
    cb.text_matrix = rng.gaussian(cb.owner.size(), kDim);
    return cb;
}

} // namespace

std::vector<std::string> grad_case_names() {
    return {"info_nce", "arc_margin", "ml_arc_margin", "mc_arc_margin", "combined_loss", "head_linear", "head_mlp1"};
}

GradCase make_grad_case(const std::string& name, std::uint64_t seed) {
    SeededRng rng(seed);
    GradCase c;
    c.name = name;
    const ArcMarginConfig arc;
    if (name == "info_nce") {
        c.inputs["U"] = rng.gaussian(kRows, kDim);
        c.inputs["V"] = rng.gaussian(kRows, kDim);
        c.evaluate = [](const TensorMap& in) { return info_nce(in.at("U"), in.at("V"), InfoNCEConfig{}); };
    } else if (name == "arc_margin") {
        c.inputs["U"] = rng.gaussian(kRows, kDim);
        c.inputs["W"] = rng.gaussian(kClasses, kDim);
        c.evaluate = [labels = random_labels(kRows, rng), arc](const TensorMap& in) {
            return arc_margin(in.at("U"), in.at("W"), labels, arc);
        };
    } else if (name == "ml_arc_margin") {
        c.inputs["U"] = rng.gaussian(kRows, kDim);
        c.inputs["W"] = rng.gaussian(kClasses, kDim);
        c.evaluate = [sets = random_label_sets(kRows, rng), arc](const TensorMap& in) {
            return ml_arc_margin(in.at("U"), in.at("W"), sets, arc);
        };
    } else if (name == "mc_arc_margin") {
        c.inputs["U"] = rng.gaussian(kRows, kDim);
        c.evaluate = [cb = random_captions(kRows, rng), arc](const TensorMap& in) {
            return mc_arc_margin(in.at("U"), cb, arc);
        };
    } else if (name == "combined_loss") {
        c.inputs["U"] = rng.gaussian(kRows, kDim);
        c.inputs["W"] = rng.gaussian(kClasses, kDim);
        auto labels = random_labels(kRows, rng);
        c.evaluate = [labels, cb = random_captions(kRows, rng), arc](const TensorMap& in) {
            const auto a = arc_margin(in.at("U"), in.at("W"), labels, arc);
            const auto m = mc_arc_margin(in.at("U"), cb, arc);
            return combined_loss(a, m, CombinedConfig{});
        };
    } else if (name == "head_linear" || name == "head_mlp1") {
        HeadSpec spec;
        spec.kind = name == "head_linear" ? HeadKind::Linear : HeadKind::Mlp1;
        spec.in_dim = kDim;
        spec.out_dim = kDim;
        const ProjectionHead head = init_head(spec, rng);
        const Matrix x = rng.gaussian(kRows, kDim);
        Matrix w = rng.gaussian(kClasses, kDim);
        auto labels = random_labels(kRows, rng);
        c.inputs = head_inputs(head, x);
        c.evaluate = head_loss_evaluator(head, [w = std::move(w), labels, arc](const Matrix& u) {
            return arc_margin(u, w, labels, arc);
        });
    } else {
        throw Error(ErrorCode::InvalidConfig, "unknown gradient check '" + name + "'");
    }
    return c;
}

} // namespace eak
