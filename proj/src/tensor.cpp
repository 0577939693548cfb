#include "eak/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <thread>

namespace eak {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::ZeroNormRow: return "ZeroNormRow";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::KOutOfRange: return "KOutOfRange";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::MetadataRowCountMismatch: return "MetadataRowCountMismatch";
    case ErrorCode::MalformedMetadata: return "MalformedMetadata";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::EmptyLabelSet: return "EmptyLabelSet";
    case ErrorCode::OwnershipViolation: return "OwnershipViolation";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MissingLabels: return "MissingLabels";
    case ErrorCode::PairingMismatch: return "PairingMismatch";
    case ErrorCode::MissingCaptions: return "MissingCaptions";
    case ErrorCode::UnknownCaptionId: return "UnknownCaptionId";
    case ErrorCode::NoRelevantItems: return "NoRelevantItems";
    case ErrorCode::UnknownMatchId: return "UnknownMatchId";
    case ErrorCode::KExceedsTrainSize: return "KExceedsTrainSize";
    case ErrorCode::ClassCountMismatch: return "ClassCountMismatch";
    }
    return "Unknown";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : m_rows(rows), m_cols(cols), m_data(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : m_rows(rows), m_cols(cols), m_data(std::move(data)) {
    if (m_data.size() != rows * cols) {
        throw Error(ErrorCode::ShapeMismatch, "matrix data length " + std::to_string(m_data.size()) +
                                                  " != " + std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw Error(ErrorCode::ShapeMismatch, "ragged row list");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm2(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

std::vector<double> row_norms(const Matrix& m) {
    std::vector<double> out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) out[r] = norm2(m.row(r));
    return out;
}

Matrix l2_normalize_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double n = norm2(m.row(r));
        if (!(n > 1e-12)) {
            throw Error(ErrorCode::ZeroNormRow, "row " + std::to_string(r));
        }
        auto src = m.row(r);
        auto dst = out.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) dst[c] = src[c] / n;
    }
    return out;
}

Matrix similarity_matrix(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "similarity of " + std::to_string(a.cols()) + "-d and " + std::to_string(b.cols()) + "-d rows");
    }
    Matrix out(a.rows(), b.rows());
    parallel_for(a.rows(), [&](std::size_t i) {
        auto ai = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(ai, b.row(j));
    });
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw Error(ErrorCode::ShapeMismatch, "matmul inner dimension");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto o = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            auto bk = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * bk[j];
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw Error(ErrorCode::ShapeMismatch, "matmul_tn row count");
    Matrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        auto ak = a.row(k);
        auto bk = b.row(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = ak[i];
            if (aki == 0.0) continue;
            auto o = out.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aki * bk[j];
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw Error(ErrorCode::ShapeMismatch, "matmul_nt column count");
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
    }
    return out;
}

namespace {

bool ranks_before(std::span<const double> scores, std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
}

} // namespace

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
    if (k < 1 || k > scores.size()) {
        throw Error(ErrorCode::KOutOfRange,
                    "k=" + std::to_string(k) + " for " + std::to_string(scores.size()) + " scores");
    }
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto cmp = [&](std::size_t a, std::size_t b) { return ranks_before(scores, a, b); };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), cmp);
    idx.resize(k);
    return idx;
}

std::vector<std::size_t> rank_descending(std::span<const double> scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return ranks_before(scores, a, b); });
    return idx;
}

Matrix select_rows(const Matrix& m, std::span<const std::size_t> indices) {
    Matrix out(indices.size(), m.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= m.rows()) throw Error(ErrorCode::ShapeMismatch, "row index out of range");
        std::copy_n(m.row(indices[i]).begin(), m.cols(), out.row(i).begin());
    }
    return out;
}

Matrix quantize_f32(const Matrix& m) {
    Matrix out = m;
    for (double& v : out.data()) v = static_cast<double>(static_cast<float>(v));
    return out;
}

bool all_finite(const Matrix& m) noexcept {
    return std::all_of(m.data().begin(), m.data().end(), [](double v) { return std::isfinite(v); });
}

std::uint64_t checksum(const Matrix& m) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t word) {
        for (int b = 0; b < 8; ++b) {
            h ^= (word >> (8 * b)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    };
    mix(m.rows());
    mix(m.cols());
    for (double v : m.data()) mix(std::bit_cast<std::uint64_t>(v));
    return h;
}

std::string checksum_hex(const Matrix& m) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(checksum(m)));
    return buf;
}

double SeededRng::uniform() {
    return static_cast<double>(m_engine() >> 11) * 0x1.0p-53;
}

double SeededRng::normal() {
    // 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::uint64_t SeededRng::below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = m_engine();
    while (x >= limit) x = m_engine();
    return x % n;
}

Matrix SeededRng::gaussian(std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = stddev * normal();
    return m;
}

std::size_t worker_count() {
    if (const char* env = std::getenv("EAK_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v >= 1) return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

} // namespace eak
