#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eak/tensor.hpp"

namespace eak {

struct CaptionRef {
    std::string id;
    double score = 0.0;

    bool operator==(const CaptionRef&) const = default;
};

/// N x d embedding rows with per-row identity and optional labels. Rows are
/// kept unnormalized; consumers normalize explicitly.
struct EmbeddingSet {
    Matrix matrix;
    std::vector<std::string> ids;
    std::optional<std::vector<int>> labels;
    std::optional<std::vector<std::vector<int>>> label_sets;
    std::optional<std::vector<std::vector<CaptionRef>>> captions;
    std::optional<std::vector<std::string>> texts;

    std::size_t size() const noexcept { return matrix.rows(); }
    std::size_t dim() const noexcept { return matrix.cols(); }

    bool operator==(const EmbeddingSet&) const = default;
};

/// Text embeddings of a caption collection, one row per caption.
struct CaptionPool {
    Matrix matrix;
    std::vector<std::string> caption_ids;
    std::optional<std::vector<std::string>> texts;

    std::size_t size() const noexcept { return matrix.rows(); }
    std::size_t dim() const noexcept { return matrix.cols(); }
};

/// One image with its class label and the captions that survived the
/// similarity filter, in descending score order.
struct MultiCaptionRecord {
    std::string image_id;
    int class_label = 0;
    std::vector<CaptionRef> captions;
};

// ---------------------------------------------------------------------------
// File format
//
//   offset  size  field
//   0       4     magic "EMB1" (45 4D 42 31)
//   4       4     u32 version = 1
//   8       8     u64 row count N
//   16      4     u32 dim d
//   20      1     u8 dtype = 0 (float32)
//   21      3     zero padding
//   24      4*N*d float32 row-major
//
// All integers and floats little-endian. Row metadata lives next to the
// matrix in "<path>.meta.jsonl", one JSON object per row in row order:
//   {"id": str, "label"?: int, "labels"?: [int], "captions"?: [{"id", "score"}],
//    "text"?: str}
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

std::filesystem::path metadata_path(const std::filesystem::path& path);

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet load_embeddings(const std::filesystem::path& path);

void save_caption_pool(const CaptionPool& pool, const std::filesystem::path& path);
CaptionPool load_caption_pool(const std::filesystem::path& path);

CaptionPool to_caption_pool(const EmbeddingSet& set);
EmbeddingSet to_embedding_set(const CaptionPool& pool);

enum class FindingKind { DuplicateId, NonFiniteEntry, ZeroNormRow, NegativeLabel, MetadataLength };

struct Finding {
    FindingKind kind;
    std::size_t row = 0;
    std::string detail;
};

struct ValidationReport {
    std::vector<Finding> findings;
    bool ok() const noexcept { return findings.empty(); }
};

std::string_view to_string(FindingKind kind) noexcept;

ValidationReport validate(const EmbeddingSet& set);

/// Copy of the selected rows with all per-row metadata carried along.
EmbeddingSet subset(const EmbeddingSet& set, std::span<const std::size_t> rows);

/// Writes the records into the set's caption field. Records must be in row
/// order and carry matching image ids.
void attach_captions(EmbeddingSet& images, const std::vector<MultiCaptionRecord>& records);
std::vector<MultiCaptionRecord> caption_records(const EmbeddingSet& images);

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    std::size_t num_classes = 20;
    std::size_t samples_per_class = 30;
    std::size_t dim = 64;
    double image_noise = 0.25;
    double text_noise = 0.25;
    double misalignment_rotation_angle = 0.0;
    std::uint64_t seed = 0;
    /// Extra noisy text rows per class forming a caption pool (0 = none).
    std::size_t captions_per_class = 0;
};

struct SyntheticData {
    EmbeddingSet image_set;
    EmbeddingSet text_set;
    EmbeddingSet class_text_set;
    CaptionPool caption_pool;
};

/// Class prototypes p_c are random unit vectors. With R a rotation by the
/// misalignment angle inside a random 2-d plane and g standard normal per
/// component:
///   image row = normalize(p_c + image_noise * g)
///   text row  = normalize(R p_c + text_noise * g')
///   class text row c = R p_c
///   pool row  = normalize(R p_c + text_noise * g'')
/// Rows are emitted class-major. The pool is drawn after everything else so
/// enabling it leaves the other three sets unchanged.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Seeded shuffle of 0..n-1; the first round(train_fraction * n) indices
/// form the training split.
Split split_train_test(std::size_t n, double train_fraction, std::uint64_t seed);

} // namespace eak
