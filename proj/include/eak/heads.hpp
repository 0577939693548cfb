#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eak/embedding_store.hpp"
#include "eak/gradient.hpp"
#include "eak/tensor.hpp"

namespace eak {

enum class HeadKind { Linear, Mlp1 };

std::string_view to_string(HeadKind kind) noexcept;
HeadKind head_kind_from_string(std::string_view name);

struct HeadSpec {
    HeadKind kind = HeadKind::Linear;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    /// Hidden width for mlp1; 0 means out_dim.
    std::size_t hidden_dim = 0;
    bool bias = true;
};

/// y = x W + b, with W stored in_dim x out_dim and b as a 1 x out_dim row.
struct Layer {
    Matrix weight;
    Matrix bias;

    bool has_bias() const noexcept { return !bias.empty(); }
    bool operator==(const Layer&) const = default;
};

/// Trainable projection standing in for an image or text projector.
///
///   linear: y = x W0 + b0
///   mlp1:   y = gelu(x W0 + b0) W1 + b1
///
/// with the tanh form of GELU, which is smooth everywhere:
///   gelu(h) = 0.5 h (1 + tanh(sqrt(2/pi) (h + 0.044715 h^3)))
class ProjectionHead {
public:
    ProjectionHead();
    ProjectionHead(HeadKind kind, std::vector<Layer> layers);
    // Copies get a fresh instance id so caches never cross between them.
    ProjectionHead(const ProjectionHead& other);
    ProjectionHead& operator=(const ProjectionHead& other);
    ProjectionHead(ProjectionHead&&) noexcept = default;
    ProjectionHead& operator=(ProjectionHead&&) noexcept = default;

    HeadKind kind() const noexcept { return m_kind; }
    std::size_t in_dim() const noexcept;
    std::size_t out_dim() const noexcept;
    const std::vector<Layer>& layers() const noexcept { return m_layers; }

    /// Parameter tensors in a fixed order: layer0.weight, layer0.bias, ...
    std::vector<std::string> parameter_names() const;
    std::vector<const Matrix*> parameters() const;
    /// Mutable access bumps the generation, invalidating earlier caches.
    std::vector<Matrix*> mutable_parameters();

    std::uint64_t generation() const noexcept { return m_generation; }
    std::uint64_t instance_id() const noexcept { return m_instance; }

    /// Checksum over every parameter tensor.
    std::string checksum() const;

    bool operator==(const ProjectionHead& other) const {
        return m_kind == other.m_kind && m_layers == other.m_layers;
    }

private:
    HeadKind m_kind = HeadKind::Linear;
    std::vector<Layer> m_layers;
    std::uint64_t m_generation = 0;
    std::uint64_t m_instance = 0;

    friend ProjectionHead with_parameters(const ProjectionHead&, const TensorMap&);
};

struct HeadCache {
    std::uint64_t instance = 0;
    std::uint64_t generation = 0;
    Matrix input;
    Matrix pre_activation;
    Matrix hidden;
};

struct HeadForward {
    Matrix output;
    HeadCache cache;
};

struct HeadBackward {
    std::vector<Matrix> param_grads;
    Matrix input_grad;
};

HeadForward head_forward(const ProjectionHead& head, const Matrix& x);

/// Throws StaleCache if the cache was produced by a different head or
/// before the head's parameters were last modified.
HeadBackward head_backward(const ProjectionHead& head, const HeadCache& cache, const Matrix& upstream_grad);

/// Seeded uniform init with bound 1/sqrt(fan_in) for each layer.
ProjectionHead init_head(const HeadSpec& spec, SeededRng& rng);

/// Linear head with identity weights and zero bias: the pretrained,
/// already-aligned state of a projector.
ProjectionHead identity_head(std::size_t dim, bool bias = true);

/// Copy of `head` with parameters replaced by the entries of `params`
/// named as in parameter_names().
ProjectionHead with_parameters(const ProjectionHead& head, const TensorMap& params);

/// Applies the head to every row; ids and labels are carried over.
EmbeddingSet apply_head(const ProjectionHead& head, const EmbeddingSet& set);

/// Evaluator for grad_check over a head composed with a downstream loss.
/// Inputs: "X" plus every parameter name. `downstream` receives the head
/// output and must return the loss with its gradient under role "U".
LossEvaluator head_loss_evaluator(const ProjectionHead& head, std::function<LossResult(const Matrix&)> downstream);

TensorMap head_inputs(const ProjectionHead& head, const Matrix& x);

/// The ArcMargin classification layer: K class vectors of dimension d,
/// stored raw and normalized inside the losses.
struct ClassWeightMatrix {
    Matrix w;

    std::size_t classes() const noexcept { return w.rows(); }
    std::size_t dim() const noexcept { return w.cols(); }
};

ClassWeightMatrix init_class_weights(std::size_t classes, std::size_t dim, SeededRng& rng);

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-3;
};

struct AdamWState {
    AdamWConfig config;
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    std::uint64_t step = 0;
};

/// One decoupled-weight-decay step on every parameter:
///   m = b1 m + (1 - b1) g;  v = b2 v + (1 - b2) g^2
///   p -= lr * (m / (1 - b1^t) / (sqrt(v / (1 - b2^t)) + eps) + wd * p)
/// Moments are created on the first call.
void adamw_step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads, AdamWState& state);

// ---------------------------------------------------------------------------
// Head checkpoints
//
//   magic "HDC1", u32 version = 1, u32 kind (0 linear, 1 mlp1), u32 layer count,
//   then per layer: u32 in_dim, u32 out_dim, u32 has_bias;
//   then per layer: in*out float32 weights row-major, out float32 bias values.
// Little-endian throughout. "<path>.json" records kind, dims and any extra
// fields the caller passes (seed, training config).
// ---------------------------------------------------------------------------

void save_head(const ProjectionHead& head, const std::filesystem::path& path,
               const nlohmann::json& extra = nlohmann::json::object());
ProjectionHead load_head(const std::filesystem::path& path);

} // namespace eak
