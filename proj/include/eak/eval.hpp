#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "eak/embedding_store.hpp"

namespace eak {

/// query id -> ids of the gallery items relevant to it
using RelevanceMap = std::map<std::string, std::set<std::string>>;

/// Same-label relevance between two labeled sets.
RelevanceMap relevance_by_label(const EmbeddingSet& queries, const EmbeddingSet& gallery);

/// Mean over queries of average precision. Gallery items are ranked by
/// cosine similarity (ties to the lower gallery row). With self_exclude the
/// gallery entry sharing the query's id is removed from its ranking.
double mean_average_precision(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                              const RelevanceMap& relevance, bool self_exclude = true);

/// Fraction of queries whose matching gallery id ranks within the top k.
double recall_at_k(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                   const std::map<std::string, std::string>& true_match, std::size_t k);

/// Majority vote over the k most similar training rows. A tie between
/// classes goes to the tied class whose best-ranked member is nearest.
double knn_classify(const EmbeddingSet& train, const EmbeddingSet& test, std::size_t k = 21);

/// Predicted label = row index of the most similar class text (ties to the
/// lower label).
double zero_shot_classify(const EmbeddingSet& images, const EmbeddingSet& class_texts);

/// Mean cosine similarity of row-paired embeddings.
double alignment_score(const EmbeddingSet& u, const EmbeddingSet& v);

struct EvalReport {
    std::string task;
    std::string metric;
    double value = 0.0;
    nlohmann::json config = nlohmann::json::object();
};

nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);

/// Everything the benchmark needs, already mapped into the joint space.
/// texts are row-paired with test_images.
struct BenchmarkInputs {
    EmbeddingSet train_images;
    EmbeddingSet test_images;
    EmbeddingSet test_texts;
    EmbeddingSet class_texts;
};

enum class Task { I2I, Knn, ZeroShot, T2I, Alignment };

std::string_view to_string(Task task) noexcept;
Task task_from_string(std::string_view name);
std::vector<Task> all_tasks();

struct BenchmarkParams {
    std::vector<Task> tasks = all_tasks();
    std::size_t knn_k = 21;
    std::size_t recall_k = 5;
};

/// One report per requested task, in task order, followed by "avg": the
/// unweighted mean over the I2I, k-NN, zero-shot and T2I values present.
std::vector<EvalReport> run_benchmark(const BenchmarkInputs& inputs, const BenchmarkParams& params);

/// Text table: one row per named run, columns I2I / k-NN / Zero-Shot / T2I /
/// Align / AVG, values in percent.
std::string render_table(const std::vector<std::pair<std::string, std::vector<EvalReport>>>& runs);

} // namespace eak
