#include "eak/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_map>

namespace eak {

namespace {

void check_dims(const EmbeddingSet& a, const EmbeddingSet& b) {
    if (a.dim() != b.dim()) {
        throw Error(ErrorCode::DimensionMismatch,
                    std::to_string(a.dim()) + "-d vs " + std::to_string(b.dim()) + "-d embeddings");
    }
}

const std::vector<int>& require_labels(const EmbeddingSet& set, const char* what) {
    if (!set.labels) throw Error(ErrorCode::MissingLabels, std::string(what) + " set has no labels");
    return *set.labels;
}

std::unordered_map<std::string_view, std::size_t> index_ids(const EmbeddingSet& set) {
    std::unordered_map<std::string_view, std::size_t> out;
    out.reserve(set.ids.size());
    for (std::size_t i = 0; i < set.ids.size(); ++i) out.emplace(set.ids[i], i);
    return out;
}

double mean(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

} // namespace

RelevanceMap relevance_by_label(const EmbeddingSet& queries, const EmbeddingSet& gallery) {
    const auto& ql = require_labels(queries, "query");
    const auto& gl = require_labels(gallery, "gallery");
    std::map<int, std::set<std::string>> by_label;
    for (std::size_t j = 0; j < gallery.size(); ++j) by_label[gl[j]].insert(gallery.ids[j]);
    RelevanceMap out;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        auto it = by_label.find(ql[i]);
        out[queries.ids[i]] = it == by_label.end() ? std::set<std::string>{} : it->second;
    }
    return out;
}

double mean_average_precision(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                              const RelevanceMap& relevance, bool self_exclude) {
    check_dims(queries, gallery);
    if (queries.size() == 0) throw Error(ErrorCode::NoRelevantItems, "no queries");
    const Matrix q = l2_normalize_rows(queries.matrix);
    const Matrix g = l2_normalize_rows(gallery.matrix);
    std::vector<double> ap(queries.size());

    parallel_for(queries.size(), [&](std::size_t i) {
        const std::string& qid = queries.ids[i];
        auto rel_it = relevance.find(qid);
        if (rel_it == relevance.end()) throw Error(ErrorCode::NoRelevantItems, qid);
        const auto& relevant = rel_it->second;

        std::vector<double> scores(gallery.size());
        for (std::size_t j = 0; j < gallery.size(); ++j) scores[j] = dot(q.row(i), g.row(j));
        std::size_t total_relevant = 0;
        for (std::size_t j = 0; j < gallery.size(); ++j) {
            if (self_exclude && gallery.ids[j] == qid) continue;
            total_relevant += relevant.count(gallery.ids[j]);
        }
        if (total_relevant == 0) throw Error(ErrorCode::NoRelevantItems, qid);

        std::size_t rank = 0, hits = 0;
        double precision_sum = 0.0;
        for (std::size_t j : rank_descending(scores)) {
            if (self_exclude && gallery.ids[j] == qid) continue;
            ++rank;
            if (relevant.count(gallery.ids[j])) {
                ++hits;
                precision_sum += static_cast<double>(hits) / static_cast<double>(rank);
                if (hits == total_relevant) break;
            }
        }
        ap[i] = precision_sum / static_cast<double>(total_relevant);
    });
    return mean(ap);
}

double recall_at_k(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                   const std::map<std::string, std::string>& true_match, std::size_t k) {
    check_dims(queries, gallery);
    if (k < 1 || k > gallery.size()) {
        throw Error(ErrorCode::KOutOfRange, "recall k=" + std::to_string(k) + " for gallery of " +
                                                std::to_string(gallery.size()));
    }
    const auto gallery_index = index_ids(gallery);
    std::vector<std::size_t> match(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        auto m = true_match.find(queries.ids[i]);
        if (m == true_match.end()) throw Error(ErrorCode::UnknownMatchId, "no match for " + queries.ids[i]);
        auto g = gallery_index.find(m->second);
        if (g == gallery_index.end()) throw Error(ErrorCode::UnknownMatchId, m->second);
        match[i] = g->second;
    }
    const Matrix q = l2_normalize_rows(queries.matrix);
    const Matrix g = l2_normalize_rows(gallery.matrix);
    std::vector<double> hit(queries.size());
    parallel_for(queries.size(), [&](std::size_t i) {
        const std::size_t m = match[i];
        const double target = dot(q.row(i), g.row(m));
        std::size_t ahead = 0;
        for (std::size_t j = 0; j < gallery.size() && ahead < k; ++j) {
            if (j == m) continue;
            const double s = dot(q.row(i), g.row(j));
            if (s > target || (s == target && j < m)) ++ahead;
        }
        hit[i] = ahead < k ? 1.0 : 0.0;
    });
    return mean(hit);
}

double knn_classify(const EmbeddingSet& train, const EmbeddingSet& test, std::size_t k) {
    check_dims(train, test);
    const auto& train_labels = require_labels(train, "train");
    const auto& test_labels = require_labels(test, "test");
    if (k < 1) throw Error(ErrorCode::KOutOfRange, "k-NN needs k >= 1");
    if (k > train.size()) {
        throw Error(ErrorCode::KExceedsTrainSize,
                    "k=" + std::to_string(k) + " with " + std::to_string(train.size()) + " training rows");
    }
    const Matrix tr = l2_normalize_rows(train.matrix);
    const Matrix te = l2_normalize_rows(test.matrix);
    std::vector<double> correct(test.size());
    parallel_for(test.size(), [&](std::size_t i) {
        std::vector<double> scores(train.size());
        for (std::size_t j = 0; j < train.size(); ++j) scores[j] = dot(te.row(i), tr.row(j));
        const auto neighbors = top_k(scores, k);
        std::map<int, std::size_t> votes;
        for (std::size_t j : neighbors) ++votes[train_labels[j]];
        std::size_t best = 0;
        for (const auto& [_, c] : votes) best = std::max(best, c);
        // neighbors are rank-ordered, so the first tied class met is the winner
        int predicted = train_labels[neighbors.front()];
        for (std::size_t j : neighbors) {
            if (votes[train_labels[j]] == best) {
                predicted = train_labels[j];
                break;
            }
        }
        correct[i] = predicted == test_labels[i] ? 1.0 : 0.0;
    });
    return mean(correct);
}

double zero_shot_classify(const EmbeddingSet& images, const EmbeddingSet& class_texts) {
    check_dims(images, class_texts);
    const auto& labels = require_labels(images, "image");
    if (class_texts.labels) {
        for (std::size_t c = 0; c < class_texts.size(); ++c) {
            if ((*class_texts.labels)[c] != static_cast<int>(c)) {
                throw Error(ErrorCode::ClassCountMismatch, "class text row " + std::to_string(c) + " carries label " +
                                                               std::to_string((*class_texts.labels)[c]));
            }
        }
    }
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= class_texts.size()) {
            throw Error(ErrorCode::ClassCountMismatch,
                        "label " + std::to_string(l) + " with " + std::to_string(class_texts.size()) + " class texts");
        }
    }
    if (images.size() == 0) return 0.0;
    const Matrix x = l2_normalize_rows(images.matrix);
    const Matrix t = l2_normalize_rows(class_texts.matrix);
    std::vector<double> correct(images.size());
    parallel_for(images.size(), [&](std::size_t i) {
        std::vector<double> scores(class_texts.size());
        for (std::size_t c = 0; c < class_texts.size(); ++c) scores[c] = dot(x.row(i), t.row(c));
        const auto best = top_k(scores, 1).front();
        correct[i] = static_cast<int>(best) == labels[i] ? 1.0 : 0.0;
    });
    return mean(correct);
}

double alignment_score(const EmbeddingSet& u, const EmbeddingSet& v) {
    if (u.size() != v.size()) {
        throw Error(ErrorCode::PairingMismatch,
                    std::to_string(u.size()) + " rows paired with " + std::to_string(v.size()));
    }
    check_dims(u, v);
    if (u.size() == 0) return 0.0;
    const Matrix a = l2_normalize_rows(u.matrix);
    const Matrix b = l2_normalize_rows(v.matrix);
    std::vector<double> cos(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) cos[i] = dot(a.row(i), b.row(i));
    return mean(cos);
}

nlohmann::json to_json(const EvalReport& report) {
    return {{"task", report.task}, {"metric", report.metric}, {"value", report.value}, {"config", report.config}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.task = j.at("task").get<std::string>();
    r.metric = j.at("metric").get<std::string>();
    r.value = j.at("value").get<double>();
    if (j.contains("config")) r.config = j.at("config");
    return r;
}

std::string_view to_string(Task task) noexcept {
    switch (task) {
    case Task::I2I: return "i2i";
    case Task::Knn: return "knn";
    case Task::ZeroShot: return "zero_shot";
    case Task::T2I: return "t2i";
    case Task::Alignment: return "alignment";
    }
    return "unknown";
}

Task task_from_string(std::string_view name) {
    for (Task t : all_tasks()) {
        if (to_string(t) == name) return t;
    }
    throw Error(ErrorCode::InvalidConfig, "unknown task '" + std::string(name) + "'");
}

std::vector<Task> all_tasks() { return {Task::I2I, Task::Knn, Task::ZeroShot, Task::T2I, Task::Alignment}; }

std::vector<EvalReport> run_benchmark(const BenchmarkInputs& in, const BenchmarkParams& params) {
    std::vector<EvalReport> reports;
    std::vector<double> averaged;
    for (Task task : params.tasks) {
        EvalReport r;
        r.task = std::string(to_string(task));
        switch (task) {
        case Task::I2I:
            r.metric = "mAP";
            r.value = mean_average_precision(in.test_images, in.test_images,
                                             relevance_by_label(in.test_images, in.test_images), true);
            r.config = {{"queries", in.test_images.size()}, {"self_exclude", true}};
            break;
        case Task::Knn:
            r.metric = "accuracy";
            r.value = knn_classify(in.train_images, in.test_images, params.knn_k);
            r.config = {{"k", params.knn_k}, {"train", in.train_images.size()}, {"test", in.test_images.size()}};
            break;
        case Task::ZeroShot:
            r.metric = "accuracy";
            r.value = zero_shot_classify(in.test_images, in.class_texts);
            r.config = {{"classes", in.class_texts.size()}, {"test", in.test_images.size()}};
            break;
        case Task::T2I: {
            if (in.test_texts.size() != in.test_images.size()) {
                throw Error(ErrorCode::PairingMismatch, "texts must be row-paired with test images");
            }
            std::map<std::string, std::string> match;
            for (std::size_t i = 0; i < in.test_texts.size(); ++i) match[in.test_texts.ids[i]] = in.test_images.ids[i];
            r.metric = "recall@" + std::to_string(params.recall_k);
            r.value = recall_at_k(in.test_texts, in.test_images, match, params.recall_k);
            r.config = {{"k", params.recall_k}, {"queries", in.test_texts.size()}};
            break;
        }
        case Task::Alignment:
            r.metric = "mean_cosine";
            r.value = alignment_score(in.test_images, in.test_texts);
            r.config = {{"pairs", in.test_images.size()}};
            break;
        }
        if (task != Task::Alignment) averaged.push_back(r.value);
        reports.push_back(std::move(r));
    }
    if (!averaged.empty()) {
        EvalReport avg;
        avg.task = "avg";
        avg.metric = "mean";
        avg.value = mean(averaged);
        avg.config = {{"tasks", averaged.size()}};
        reports.push_back(std::move(avg));
    }
    return reports;
}

std::string render_table(const std::vector<std::pair<std::string, std::vector<EvalReport>>>& runs) {
    const std::vector<std::pair<std::string, std::string>> columns = {
        {"i2i", "I2I"}, {"knn", "k-NN"}, {"zero_shot", "Zero-Shot"}, {"t2i", "T2I"}, {"alignment", "Align"},
        {"avg", "AVG"}};
    std::size_t name_width = 5;
    for (const auto& [name, _] : runs) name_width = std::max(name_width, name.size());

    std::string out;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(name_width), "Model");
    out += buf;
    for (const auto& [_, title] : columns) {
        std::snprintf(buf, sizeof buf, " | %9s", title.c_str());
        out += buf;
    }
    out += '\n';
    out += std::string(name_width, '-');
    for (std::size_t c = 0; c < columns.size(); ++c) out += "-+-" + std::string(9, '-');
    out += '\n';
    for (const auto& [name, reports] : runs) {
        std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(name_width), name.c_str());
        out += buf;
        for (const auto& [task, _] : columns) {
            auto it = std::find_if(reports.begin(), reports.end(), [&](const EvalReport& r) { return r.task == task; });
            if (it == reports.end()) {
                std::snprintf(buf, sizeof buf, " | %9s", "-");
            } else {
                std::snprintf(buf, sizeof buf, " | %9.1f", 100.0 * it->value);
            }
            out += buf;
        }
        out += '\n';
    }
    return out;
}

} // namespace eak
