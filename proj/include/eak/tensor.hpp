#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "eak/error.hpp"

namespace eak {

/// Dense row-major matrix of doubles. All loss and gradient math runs in
/// double precision; float32 only appears at the file boundary.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return m_rows; }
    std::size_t cols() const noexcept { return m_cols; }
    std::size_t size() const noexcept { return m_data.size(); }
    bool empty() const noexcept { return m_data.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return m_data[r * m_cols + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return m_data[r * m_cols + c]; }

    std::span<double> row(std::size_t r) noexcept { return {m_data.data() + r * m_cols, m_cols}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {m_data.data() + r * m_cols, m_cols};
    }

    std::span<double> data() noexcept { return m_data; }
    std::span<const double> data() const noexcept { return m_data; }

    bool same_shape(const Matrix& other) const noexcept {
        return m_rows == other.m_rows && m_cols == other.m_cols;
    }

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<double> m_data;
};

double dot(std::span<const double> a, std::span<const double> b) noexcept;
double norm2(std::span<const double> a) noexcept;

/// Rows scaled to unit Euclidean norm. Throws ZeroNormRow for any row with
/// norm <= 1e-12.
Matrix l2_normalize_rows(const Matrix& m);

/// Euclidean norm of every row.
std::vector<double> row_norms(const Matrix& m);

/// output(i, j) = dot(a_i, b_j). Inputs are expected row-normalized when the
/// result is read as cosine similarity.
Matrix similarity_matrix(const Matrix& a, const Matrix& b);

/// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// Indices of the k largest scores, descending; ties go to the lower index.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);

/// Full descending ranking with the same tie rule as top_k.
std::vector<std::size_t> rank_descending(std::span<const double> scores);

Matrix select_rows(const Matrix& m, std::span<const std::size_t> indices);

/// Round every entry through float32.
Matrix quantize_f32(const Matrix& m);

bool all_finite(const Matrix& m) noexcept;

/// FNV-1a over the raw IEEE-754 bytes plus the shape. Used to prove that
/// locked tensors are bit-identical before and after training.
std::uint64_t checksum(const Matrix& m) noexcept;
std::string checksum_hex(const Matrix& m);

/// Deterministic generator: std::mt19937_64 (its output sequence is fixed
/// by the C++ standard) with hand-written uniform/normal transforms, since
/// the std distributions are implementation-defined.
///   uniform()  = (next >> 11) * 2^-53                  in [0, 1)
///   normal()   = Box-Muller over two uniforms, cosine branch only
///   below(n)   = rejection sampling on the top of the 64-bit range
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : m_seed(seed), m_engine(seed) {}

    std::uint64_t seed() const noexcept { return m_seed; }
    std::uint64_t next_u64() { return m_engine(); }
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    std::uint64_t below(std::uint64_t n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    Matrix gaussian(std::size_t rows, std::size_t cols, double stddev = 1.0);

private:
    std::uint64_t m_seed;
    std::mt19937_64 m_engine;
};

/// Number of worker threads for embarrassingly parallel loops. Honors
/// EAK_THREADS; defaults to the hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) across worker_count() threads. Each index is
/// visited exactly once; callers write results into per-index slots so the
/// outcome does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn);

} // namespace eak

#include "eak/detail/parallel.hpp"
