#include "eak/embedding_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "byte_io.hpp"

namespace eak {

namespace {

using json = nlohmann::json;
using namespace detail;

constexpr std::array<std::uint8_t, 4> kMagic = {0x45, 0x4D, 0x42, 0x31};
constexpr std::size_t kHeaderSize = 24;
constexpr std::uint8_t kDtypeF32 = 0;

ErrorCode error_for(FindingKind kind) {
    switch (kind) {
    case FindingKind::DuplicateId: return ErrorCode::DuplicateId;
    case FindingKind::NonFiniteEntry: return ErrorCode::InvalidSpec;
    case FindingKind::ZeroNormRow: return ErrorCode::ZeroNormRow;
    case FindingKind::NegativeLabel: return ErrorCode::LabelOutOfRange;
    case FindingKind::MetadataLength: return ErrorCode::MetadataRowCountMismatch;
    }
    return ErrorCode::InvalidSpec;
}

json row_metadata(const EmbeddingSet& set, std::size_t r) {
    json j;
    j["id"] = set.ids[r];
    if (set.labels) j["label"] = (*set.labels)[r];
    if (set.label_sets) j["labels"] = (*set.label_sets)[r];
    if (set.captions) {
        json caps = json::array();
        for (const auto& c : (*set.captions)[r]) caps.push_back({{"id", c.id}, {"score", c.score}});
        j["captions"] = std::move(caps);
    }
    if (set.texts) j["text"] = (*set.texts)[r];
    return j;
}

void require_all_or_none(std::size_t present, std::size_t total, const char* field) {
    if (present != 0 && present != total) {
        throw Error(ErrorCode::MalformedMetadata,
                    std::string("field '") + field + "' present on " + std::to_string(present) + " of " +
                        std::to_string(total) + " rows");
    }
}

} // namespace

std::filesystem::path metadata_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".meta.jsonl");
}

std::string_view to_string(FindingKind kind) noexcept {
    switch (kind) {
    case FindingKind::DuplicateId: return "DuplicateId";
    case FindingKind::NonFiniteEntry: return "NonFiniteEntry";
    case FindingKind::ZeroNormRow: return "ZeroNormRow";
    case FindingKind::NegativeLabel: return "NegativeLabel";
    case FindingKind::MetadataLength: return "MetadataLength";
    }
    return "Unknown";
}

ValidationReport validate(const EmbeddingSet& set) {
    ValidationReport report;
    const std::size_t n = set.matrix.rows();
    auto check_len = [&](std::size_t len, const char* field) {
        if (len != n) {
            report.findings.push_back({FindingKind::MetadataLength, 0,
                                       std::string(field) + " has " + std::to_string(len) + " entries for " +
                                           std::to_string(n) + " rows"});
        }
    };
    check_len(set.ids.size(), "ids");
    if (set.labels) check_len(set.labels->size(), "labels");
    if (set.label_sets) check_len(set.label_sets->size(), "label_sets");
    if (set.captions) check_len(set.captions->size(), "captions");
    if (set.texts) check_len(set.texts->size(), "texts");

    std::unordered_set<std::string_view> seen;
    for (std::size_t r = 0; r < set.ids.size(); ++r) {
        if (!seen.insert(set.ids[r]).second) {
            report.findings.push_back({FindingKind::DuplicateId, r, set.ids[r]});
        }
    }
    for (std::size_t r = 0; r < n; ++r) {
        auto row = set.matrix.row(r);
        if (!std::all_of(row.begin(), row.end(), [](double v) { return std::isfinite(v); })) {
            report.findings.push_back({FindingKind::NonFiniteEntry, r, "row contains NaN or Inf"});
        } else if (!(norm2(row) > 1e-12)) {
            report.findings.push_back({FindingKind::ZeroNormRow, r, "row norm <= 1e-12"});
        }
    }
    if (set.labels) {
        for (std::size_t r = 0; r < set.labels->size(); ++r) {
            if ((*set.labels)[r] < 0) {
                report.findings.push_back({FindingKind::NegativeLabel, r, std::to_string((*set.labels)[r])});
            }
        }
    }
    if (set.label_sets) {
        for (std::size_t r = 0; r < set.label_sets->size(); ++r) {
            for (int l : (*set.label_sets)[r]) {
                if (l < 0) report.findings.push_back({FindingKind::NegativeLabel, r, std::to_string(l)});
            }
        }
    }
    return report;
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
    const auto report = validate(set);
    if (!report.ok()) {
        const auto& f = report.findings.front();
        throw Error(error_for(f.kind), "refusing to save: row " + std::to_string(f.row) + ": " + f.detail);
    }
    if (set.dim() > std::numeric_limits<std::uint32_t>::max()) {
        throw Error(ErrorCode::InvalidSpec, "dimension does not fit in u32");
    }

    std::vector<std::uint8_t> bytes;
    bytes.reserve(kHeaderSize + 4 * set.matrix.size());
    for (std::uint8_t b : kMagic) bytes.push_back(b);
    put_u32(bytes, kEmbeddingFormatVersion);
    put_u64(bytes, set.size());
    put_u32(bytes, static_cast<std::uint32_t>(set.dim()));
    bytes.push_back(kDtypeF32);
    bytes.insert(bytes.end(), 3, 0);
    for (double v : set.matrix.data()) put_u32(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    write_bytes(path, bytes);

    std::ofstream meta(metadata_path(path), std::ios::trunc);
    if (!meta) throw Error(ErrorCode::IoError, "cannot write " + metadata_path(path).string());
    for (std::size_t r = 0; r < set.size(); ++r) meta << row_metadata(set, r).dump() << '\n';
    if (!meta) throw Error(ErrorCode::IoError, "short write to " + metadata_path(path).string());
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
        throw Error(ErrorCode::BadMagic, path.string());
    }
    if (bytes.size() < kHeaderSize) throw Error(ErrorCode::TruncatedFile, "header of " + path.string());
    const std::uint32_t version = get_u32(bytes.data() + 4);
    if (version != kEmbeddingFormatVersion) {
        throw Error(ErrorCode::UnsupportedVersion, std::to_string(version));
    }
    const std::uint64_t n = get_u64(bytes.data() + 8);
    const std::uint32_t d = get_u32(bytes.data() + 16);
    if (bytes[20] != kDtypeF32) throw Error(ErrorCode::UnsupportedDtype, std::to_string(bytes[20]));

    const std::uint64_t payload = bytes.size() - kHeaderSize;
    if (d != 0 && n > payload / 4 / d) {
        throw Error(ErrorCode::TruncatedFile, "expected " + std::to_string(n) + "x" + std::to_string(d) +
                                                  " floats in " + path.string());
    }
    if (payload != n * d * 4) throw Error(ErrorCode::IoError, "trailing bytes in " + path.string());

    EmbeddingSet set;
    std::vector<double> data(static_cast<std::size_t>(n * d));
    const std::uint8_t* p = bytes.data() + kHeaderSize;
    for (auto& v : data) {
        v = static_cast<double>(std::bit_cast<float>(get_u32(p)));
        p += 4;
    }
    set.matrix = Matrix(static_cast<std::size_t>(n), d, std::move(data));

    std::ifstream meta(metadata_path(path));
    if (!meta) throw Error(ErrorCode::IoError, "missing sidecar " + metadata_path(path).string());
    std::vector<json> rows;
    std::string line;
    while (std::getline(meta, line)) {
        if (line.empty()) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::MalformedMetadata, e.what());
        }
    }
    if (rows.size() != n) {
        throw Error(ErrorCode::MetadataRowCountMismatch,
                    std::to_string(rows.size()) + " records for " + std::to_string(n) + " rows");
    }

    std::size_t with_label = 0, with_labels = 0, with_captions = 0, with_text = 0;
    for (const auto& r : rows) {
        with_label += r.contains("label");
        with_labels += r.contains("labels");
        with_captions += r.contains("captions");
        with_text += r.contains("text");
    }
    require_all_or_none(with_label, rows.size(), "label");
    require_all_or_none(with_labels, rows.size(), "labels");
    require_all_or_none(with_captions, rows.size(), "captions");
    require_all_or_none(with_text, rows.size(), "text");

    try {
        for (const auto& r : rows) set.ids.push_back(r.at("id").get<std::string>());
        if (with_label) {
            set.labels.emplace();
            for (const auto& r : rows) set.labels->push_back(r.at("label").get<int>());
        }
        if (with_labels) {
            set.label_sets.emplace();
            for (const auto& r : rows) set.label_sets->push_back(r.at("labels").get<std::vector<int>>());
        }
        if (with_captions) {
            set.captions.emplace();
            for (const auto& r : rows) {
                std::vector<CaptionRef> caps;
                for (const auto& c : r.at("captions")) {
                    caps.push_back({c.at("id").get<std::string>(), c.at("score").get<double>()});
                }
                set.captions->push_back(std::move(caps));
            }
        }
        if (with_text) {
            set.texts.emplace();
            for (const auto& r : rows) set.texts->push_back(r.at("text").get<std::string>());
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedMetadata, e.what());
    }

    std::unordered_set<std::string_view> seen;
    for (const auto& id : set.ids) {
        if (!seen.insert(id).second) throw Error(ErrorCode::DuplicateId, id);
    }
    return set;
}

CaptionPool to_caption_pool(const EmbeddingSet& set) {
    return CaptionPool{set.matrix, set.ids, set.texts};
}

EmbeddingSet to_embedding_set(const CaptionPool& pool) {
    EmbeddingSet set;
    set.matrix = pool.matrix;
    set.ids = pool.caption_ids;
    set.texts = pool.texts;
    return set;
}

void save_caption_pool(const CaptionPool& pool, const std::filesystem::path& path) {
    save_embeddings(to_embedding_set(pool), path);
}

CaptionPool load_caption_pool(const std::filesystem::path& path) {
    return to_caption_pool(load_embeddings(path));
}

EmbeddingSet subset(const EmbeddingSet& set, std::span<const std::size_t> rows) {
    EmbeddingSet out;
    out.matrix = select_rows(set.matrix, rows);
    auto pick = [&](const auto& src) {
        std::remove_cvref_t<decltype(src)> dst;
        dst.reserve(rows.size());
        for (std::size_t r : rows) dst.push_back(src[r]);
        return dst;
    };
    out.ids = pick(set.ids);
    if (set.labels) out.labels = pick(*set.labels);
    if (set.label_sets) out.label_sets = pick(*set.label_sets);
    if (set.captions) out.captions = pick(*set.captions);
    if (set.texts) out.texts = pick(*set.texts);
    return out;
}

void attach_captions(EmbeddingSet& images, const std::vector<MultiCaptionRecord>& records) {
    if (records.size() != images.size()) {
        throw Error(ErrorCode::MetadataRowCountMismatch,
                    std::to_string(records.size()) + " caption records for " + std::to_string(images.size()) +
                        " images");
    }
    std::vector<std::vector<CaptionRef>> caps;
    caps.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].image_id != images.ids[i]) {
            throw Error(ErrorCode::MalformedMetadata,
                        "record " + std::to_string(i) + " is for '" + records[i].image_id + "', row is '" +
                            images.ids[i] + "'");
        }
        caps.push_back(records[i].captions);
    }
    images.captions = std::move(caps);
}

std::vector<MultiCaptionRecord> caption_records(const EmbeddingSet& images) {
    if (!images.captions) throw Error(ErrorCode::MissingCaptions, "image set has no caption assignments");
    if (!images.labels) throw Error(ErrorCode::MissingLabels, "image set has no labels");
    std::vector<MultiCaptionRecord> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        out.push_back({images.ids[i], (*images.labels)[i], (*images.captions)[i]});
    }
    return out;
}

namespace {

std::string padded_id(const char* prefix, std::size_t i, int width) {
    std::string digits = std::to_string(i);
    if (static_cast<int>(digits.size()) < width) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
    return std::string(prefix) + digits;
}

/// Rotation by `angle` inside span{a, b} (a, b orthonormal); identity on the
/// orthogonal complement.
void rotate_in_plane(std::span<double> x, std::span<const double> a, std::span<const double> b, double angle) {
    const double xa = dot(x, a);
    const double xb = dot(x, b);
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double ra = c * xa - s * xb;
    const double rb = s * xa + c * xb;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += (ra - xa) * a[i] + (rb - xb) * b[i];
}

void normalize_in_place(std::span<double> x) {
    const double n = norm2(x);
    for (double& v : x) v /= n;
}

void add_noise_and_normalize(std::span<double> row, std::span<const double> center, double noise, SeededRng& rng) {
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = center[i] + noise * rng.normal();
    normalize_in_place(row);
}

} // namespace

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes < 2 || spec.dim < 8 || spec.samples_per_class < 1) {
        throw Error(ErrorCode::InvalidSpec, "need num_classes >= 2, dim >= 8, samples_per_class >= 1");
    }
    if (!(spec.image_noise >= 0.0) || !(spec.text_noise >= 0.0) || !std::isfinite(spec.misalignment_rotation_angle)) {
        throw Error(ErrorCode::InvalidSpec, "noise levels must be >= 0 and the angle finite");
    }
    const std::size_t k = spec.num_classes;
    const std::size_t d = spec.dim;
    const std::size_t n = k * spec.samples_per_class;
    SeededRng rng(spec.seed);

    Matrix prototypes = rng.gaussian(k, d);
    for (std::size_t c = 0; c < k; ++c) {
        while (!(norm2(prototypes.row(c)) > 1e-6)) {
            for (double& v : prototypes.row(c)) v = rng.normal();
        }
        normalize_in_place(prototypes.row(c));
    }

    // Random rotation plane via Gram-Schmidt on two gaussian vectors.
    std::vector<double> a(d), b(d);
    for (double& v : a) v = rng.normal();
    normalize_in_place(a);
    for (double& v : b) v = rng.normal();
    const double ab = dot(a, b);
    for (std::size_t i = 0; i < d; ++i) b[i] -= ab * a[i];
    normalize_in_place(b);

    Matrix rotated = prototypes;
    for (std::size_t c = 0; c < k; ++c) rotate_in_plane(rotated.row(c), a, b, spec.misalignment_rotation_angle);

    SyntheticData out;
    const int width = static_cast<int>(std::to_string(std::max(n, k * spec.captions_per_class)).size());
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i / spec.samples_per_class);

    out.image_set.matrix = Matrix(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        add_noise_and_normalize(out.image_set.matrix.row(i), prototypes.row(static_cast<std::size_t>(labels[i])),
                                spec.image_noise, rng);
        out.image_set.ids.push_back(padded_id("img_", i, width));
    }
    out.image_set.labels = labels;

    out.text_set.matrix = Matrix(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        add_noise_and_normalize(out.text_set.matrix.row(i), rotated.row(static_cast<std::size_t>(labels[i])),
                                spec.text_noise, rng);
        out.text_set.ids.push_back(padded_id("txt_", i, width));
    }
    out.text_set.labels = labels;

    out.class_text_set.matrix = rotated;
    std::vector<int> class_labels(k);
    for (std::size_t c = 0; c < k; ++c) {
        out.class_text_set.ids.push_back(padded_id("class_", c, static_cast<int>(std::to_string(k).size())));
        class_labels[c] = static_cast<int>(c);
    }
    out.class_text_set.labels = std::move(class_labels);

    const std::size_t p = k * spec.captions_per_class;
    out.caption_pool.matrix = Matrix(p, d);
    for (std::size_t i = 0; i < p; ++i) {
        add_noise_and_normalize(out.caption_pool.matrix.row(i), rotated.row(i / spec.captions_per_class),
                                spec.text_noise, rng);
        out.caption_pool.caption_ids.push_back(padded_id("cap_", i, width));
    }
    return out;
}

Split split_train_test(std::size_t n, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
        throw Error(ErrorCode::InvalidSpec, "train fraction must lie in [0, 1]");
    }
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    SeededRng rng(seed);
    rng.shuffle(perm);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    Split split;
    split.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    return split;
}

} // namespace eak
