#include "eak/heads.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "byte_io.hpp"

namespace eak {

namespace {

using namespace detail;

std::uint64_t next_instance_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

constexpr double kGeluScale = 0.7978845608028654; // sqrt(2 / pi)
constexpr double kGeluCubic = 0.044715;

double gelu(double h) {
    return 0.5 * h * (1.0 + std::tanh(kGeluScale * (h + kGeluCubic * h * h * h)));
}

double gelu_derivative(double h) {
    const double t = std::tanh(kGeluScale * (h + kGeluCubic * h * h * h));
    return 0.5 * (1.0 + t) + 0.5 * h * (1.0 - t * t) * kGeluScale * (1.0 + 3.0 * kGeluCubic * h * h);
}

Matrix affine(const Matrix& x, const Layer& layer) {
    Matrix out = matmul(x, layer.weight);
    if (layer.has_bias()) {
        auto b = layer.bias.row(0);
        for (std::size_t r = 0; r < out.rows(); ++r) {
            auto o = out.row(r);
            for (std::size_t c = 0; c < o.size(); ++c) o[c] += b[c];
        }
    }
    return out;
}

Matrix column_sums(const Matrix& g) {
    Matrix out(1, g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) out(0, c) += row[c];
    }
    return out;
}

Layer uniform_layer(std::size_t in, std::size_t out, bool bias, SeededRng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Layer layer;
    layer.weight = Matrix(in, out);
    for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
    if (bias) {
        layer.bias = Matrix(1, out);
        for (double& b : layer.bias.data()) b = rng.uniform(-bound, bound);
    }
    return layer;
}

constexpr std::uint8_t kHeadMagic[4] = {'H', 'D', 'C', '1'};
constexpr std::uint32_t kHeadVersion = 1;

} // namespace

std::string_view to_string(HeadKind kind) noexcept {
    return kind == HeadKind::Linear ? "linear" : "mlp1";
}

HeadKind head_kind_from_string(std::string_view name) {
    if (name == "linear") return HeadKind::Linear;
    if (name == "mlp1") return HeadKind::Mlp1;
    throw Error(ErrorCode::InvalidSpec, "unknown head kind '" + std::string(name) + "'");
}

ProjectionHead::ProjectionHead() : m_instance(next_instance_id()) {}

ProjectionHead::ProjectionHead(HeadKind kind, std::vector<Layer> layers)
    : m_kind(kind), m_layers(std::move(layers)), m_instance(next_instance_id()) {
    const std::size_t expected = kind == HeadKind::Linear ? 1 : 2;
    if (m_layers.size() != expected) {
        throw Error(ErrorCode::InvalidSpec, std::string(to_string(kind)) + " head needs " +
                                                std::to_string(expected) + " layer(s)");
    }
    for (std::size_t i = 0; i < m_layers.size(); ++i) {
        const auto& l = m_layers[i];
        if (l.weight.rows() == 0 || l.weight.cols() == 0) throw Error(ErrorCode::InvalidSpec, "empty layer");
        if (l.has_bias() && (l.bias.rows() != 1 || l.bias.cols() != l.weight.cols())) {
            throw Error(ErrorCode::ShapeMismatch, "bias shape of layer " + std::to_string(i));
        }
        if (i > 0 && m_layers[i - 1].weight.cols() != l.weight.rows()) {
            throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(i) + " does not chain");
        }
    }
}

ProjectionHead::ProjectionHead(const ProjectionHead& other)
    : m_kind(other.m_kind), m_layers(other.m_layers), m_generation(other.m_generation),
      m_instance(next_instance_id()) {}

ProjectionHead& ProjectionHead::operator=(const ProjectionHead& other) {
    if (this != &other) {
        m_kind = other.m_kind;
        m_layers = other.m_layers;
        ++m_generation;
    }
    return *this;
}

std::size_t ProjectionHead::in_dim() const noexcept {
    return m_layers.empty() ? 0 : m_layers.front().weight.rows();
}

std::size_t ProjectionHead::out_dim() const noexcept {
    return m_layers.empty() ? 0 : m_layers.back().weight.cols();
}

std::vector<std::string> ProjectionHead::parameter_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < m_layers.size(); ++i) {
        names.push_back("layer" + std::to_string(i) + ".weight");
        if (m_layers[i].has_bias()) names.push_back("layer" + std::to_string(i) + ".bias");
    }
    return names;
}

std::vector<const Matrix*> ProjectionHead::parameters() const {
    std::vector<const Matrix*> out;
    for (const auto& l : m_layers) {
        out.push_back(&l.weight);
        if (l.has_bias()) out.push_back(&l.bias);
    }
    return out;
}

std::vector<Matrix*> ProjectionHead::mutable_parameters() {
    ++m_generation;
    std::vector<Matrix*> out;
    for (auto& l : m_layers) {
        out.push_back(&l.weight);
        if (l.has_bias()) out.push_back(&l.bias);
    }
    return out;
}

std::string ProjectionHead::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Matrix* p : parameters()) {
        const std::uint64_t c = eak::checksum(*p);
        for (int b = 0; b < 8; ++b) {
            h ^= (c >> (8 * b)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

HeadForward head_forward(const ProjectionHead& head, const Matrix& x) {
    if (x.cols() != head.in_dim()) {
        throw Error(ErrorCode::ShapeMismatch,
                    "head expects " + std::to_string(head.in_dim()) + "-d input, got " + std::to_string(x.cols()));
    }
    HeadForward out;
    out.cache.instance = head.instance_id();
    out.cache.generation = head.generation();
    out.cache.input = x;
    const auto& layers = head.layers();
    if (head.kind() == HeadKind::Linear) {
        out.output = affine(x, layers[0]);
        return out;
    }
    out.cache.pre_activation = affine(x, layers[0]);
    out.cache.hidden = out.cache.pre_activation;
    for (double& v : out.cache.hidden.data()) v = gelu(v);
    out.output = affine(out.cache.hidden, layers[1]);
    return out;
}

HeadBackward head_backward(const ProjectionHead& head, const HeadCache& cache, const Matrix& upstream_grad) {
    if (cache.instance != head.instance_id() || cache.generation != head.generation()) {
        throw Error(ErrorCode::StaleCache, "cache does not belong to the current head parameters");
    }
    if (upstream_grad.rows() != cache.input.rows() || upstream_grad.cols() != head.out_dim()) {
        throw Error(ErrorCode::ShapeMismatch, "upstream gradient must be N x out_dim");
    }
    const auto& layers = head.layers();
    HeadBackward out;
    auto push_layer_grads = [&](const Layer& layer, const Matrix& layer_input, const Matrix& g) {
        out.param_grads.push_back(matmul_tn(layer_input, g));
        if (layer.has_bias()) out.param_grads.push_back(column_sums(g));
    };

    if (head.kind() == HeadKind::Linear) {
        push_layer_grads(layers[0], cache.input, upstream_grad);
        out.input_grad = matmul_nt(upstream_grad, layers[0].weight);
        return out;
    }

    Matrix grad_hidden = matmul_nt(upstream_grad, layers[1].weight);
    auto pre = cache.pre_activation.data();
    auto gh = grad_hidden.data();
    for (std::size_t k = 0; k < gh.size(); ++k) gh[k] *= gelu_derivative(pre[k]);

    push_layer_grads(layers[0], cache.input, grad_hidden);
    std::vector<Matrix> second;
    second.push_back(matmul_tn(cache.hidden, upstream_grad));
    if (layers[1].has_bias()) second.push_back(column_sums(upstream_grad));
    for (auto& g : second) out.param_grads.push_back(std::move(g));
    out.input_grad = matmul_nt(grad_hidden, layers[0].weight);
    return out;
}

ProjectionHead init_head(const HeadSpec& spec, SeededRng& rng) {
    if (spec.in_dim == 0 || spec.out_dim == 0) throw Error(ErrorCode::InvalidSpec, "head dims must be >= 1");
    std::vector<Layer> layers;
    if (spec.kind == HeadKind::Linear) {
        layers.push_back(uniform_layer(spec.in_dim, spec.out_dim, spec.bias, rng));
    } else {
        const std::size_t hidden = spec.hidden_dim == 0 ? spec.out_dim : spec.hidden_dim;
        layers.push_back(uniform_layer(spec.in_dim, hidden, spec.bias, rng));
        layers.push_back(uniform_layer(hidden, spec.out_dim, spec.bias, rng));
    }
    return ProjectionHead(spec.kind, std::move(layers));
}

ProjectionHead identity_head(std::size_t dim, bool bias) {
    if (dim == 0) throw Error(ErrorCode::InvalidSpec, "head dims must be >= 1");
    Layer layer{Matrix::identity(dim), bias ? Matrix(1, dim) : Matrix()};
    return ProjectionHead(HeadKind::Linear, {std::move(layer)});
}

ProjectionHead with_parameters(const ProjectionHead& head, const TensorMap& params) {
    ProjectionHead out = head;
    const auto names = out.parameter_names();
    auto slots = out.mutable_parameters();
    for (std::size_t i = 0; i < names.size(); ++i) {
        auto it = params.find(names[i]);
        if (it == params.end()) continue;
        if (!it->second.same_shape(*slots[i])) throw Error(ErrorCode::ShapeMismatch, "parameter " + names[i]);
        *slots[i] = it->second;
    }
    return out;
}

EmbeddingSet apply_head(const ProjectionHead& head, const EmbeddingSet& set) {
    EmbeddingSet out = set;
    out.matrix = head_forward(head, set.matrix).output;
    return out;
}

TensorMap head_inputs(const ProjectionHead& head, const Matrix& x) {
    TensorMap inputs;
    inputs["X"] = x;
    const auto names = head.parameter_names();
    const auto params = head.parameters();
    for (std::size_t i = 0; i < names.size(); ++i) inputs[names[i]] = *params[i];
    return inputs;
}

LossEvaluator head_loss_evaluator(const ProjectionHead& head, std::function<LossResult(const Matrix&)> downstream) {
    return [head, downstream = std::move(downstream)](const TensorMap& inputs) {
        const ProjectionHead h = with_parameters(head, inputs);
        const auto fwd = head_forward(h, inputs.at("X"));
        const LossResult loss = downstream(fwd.output);
        const auto back = head_backward(h, fwd.cache, loss.grads.at("U"));
        LossResult out;
        out.value = loss.value;
        out.grads["X"] = back.input_grad;
        const auto names = h.parameter_names();
        for (std::size_t i = 0; i < names.size(); ++i) out.grads[names[i]] = back.param_grads[i];
        return out;
    };
}

ClassWeightMatrix init_class_weights(std::size_t classes, std::size_t dim, SeededRng& rng) {
    if (classes < 2 || dim == 0) throw Error(ErrorCode::InvalidSpec, "need >= 2 classes and dim >= 1");
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    ClassWeightMatrix out{Matrix(classes, dim)};
    for (double& w : out.w.data()) w = rng.uniform(-bound, bound);
    return out;
}

void adamw_step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads, AdamWState& state) {
    const auto& cfg = state.config;
    if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw Error(ErrorCode::InvalidConfig, "learning rate must be >= 0");
    if (!(cfg.weight_decay >= 0.0)) throw Error(ErrorCode::InvalidConfig, "weight decay must be >= 0");
    if (params.size() != grads.size()) throw Error(ErrorCode::ShapeMismatch, "one gradient per parameter");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->same_shape(grads[i])) {
            throw Error(ErrorCode::ShapeMismatch, "gradient " + std::to_string(i) + " shape");
        }
    }
    if (state.first_moment.empty() && state.step == 0) {
        for (const Matrix* p : params) {
            state.first_moment.emplace_back(p->rows(), p->cols());
            state.second_moment.emplace_back(p->rows(), p->cols());
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw Error(ErrorCode::ShapeMismatch, "optimizer state tracks a different parameter list");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!state.first_moment[i].same_shape(*params[i])) {
            throw Error(ErrorCode::ShapeMismatch, "optimizer moment " + std::to_string(i) + " shape");
        }
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(cfg.beta1, t);
    const double correction2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i]->data();
        auto g = grads[i].data();
        auto m = state.first_moment[i].data();
        auto v = state.second_moment[i].data();
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            const double m_hat = m[k] / correction1;
            const double v_hat = v[k] / correction2;
            p[k] -= cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p[k]);
        }
    }
}

void save_head(const ProjectionHead& head, const std::filesystem::path& path, const nlohmann::json& extra) {
    std::vector<std::uint8_t> bytes(std::begin(kHeadMagic), std::end(kHeadMagic));
    put_u32(bytes, kHeadVersion);
    put_u32(bytes, head.kind() == HeadKind::Linear ? 0U : 1U);
    put_u32(bytes, static_cast<std::uint32_t>(head.layers().size()));
    for (const auto& l : head.layers()) {
        put_u32(bytes, static_cast<std::uint32_t>(l.weight.rows()));
        put_u32(bytes, static_cast<std::uint32_t>(l.weight.cols()));
        put_u32(bytes, l.has_bias() ? 1U : 0U);
    }
    for (const auto& l : head.layers()) {
        for (double v : l.weight.data()) put_u32(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        for (double v : l.bias.data()) put_u32(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    write_bytes(path, bytes);

    nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
    meta["kind"] = std::string(to_string(head.kind()));
    meta["in_dim"] = head.in_dim();
    meta["out_dim"] = head.out_dim();
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : head.layers()) {
        layers.push_back({{"in", l.weight.rows()}, {"out", l.weight.cols()}, {"bias", l.has_bias()}});
    }
    meta["layers"] = std::move(layers);
    std::ofstream out(path.string() + ".json", std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string() + ".json");
    out << meta.dump(2) << '\n';
}

ProjectionHead load_head(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    if (bytes.size() < 4 || !std::equal(std::begin(kHeadMagic), std::end(kHeadMagic), bytes.begin())) {
        throw Error(ErrorCode::BadMagic, path.string());
    }
    std::size_t pos = 4;
    auto need = [&](std::size_t n) {
        if (bytes.size() - pos < n) throw Error(ErrorCode::TruncatedFile, path.string());
    };
    auto read_u32 = [&] {
        need(4);
        const auto v = get_u32(bytes.data() + pos);
        pos += 4;
        return v;
    };
    if (read_u32() != kHeadVersion) throw Error(ErrorCode::UnsupportedVersion, path.string());
    const std::uint32_t kind_code = read_u32();
    if (kind_code > 1) throw Error(ErrorCode::InvalidSpec, "unknown head kind code");
    const std::uint32_t count = read_u32();
    if (count > 16) throw Error(ErrorCode::InvalidSpec, "implausible layer count");
    struct Dims {
        std::uint32_t in, out, bias;
    };
    std::vector<Dims> dims;
    for (std::uint32_t i = 0; i < count; ++i) dims.push_back({read_u32(), read_u32(), read_u32()});

    auto read_matrix = [&](std::size_t rows, std::size_t cols) {
        need(rows * cols * 4);
        Matrix m(rows, cols);
        for (double& v : m.data()) v = static_cast<double>(std::bit_cast<float>(read_u32()));
        return m;
    };
    std::vector<Layer> layers;
    for (const auto& d : dims) {
        Layer l;
        l.weight = read_matrix(d.in, d.out);
        if (d.bias) l.bias = read_matrix(1, d.out);
        layers.push_back(std::move(l));
    }
    if (pos != bytes.size()) throw Error(ErrorCode::IoError, "trailing bytes in " + path.string());
    return ProjectionHead(kind_code == 0 ? HeadKind::Linear : HeadKind::Mlp1, std::move(layers));
}

} // namespace eak
