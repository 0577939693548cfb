#include <doctest.h>

#include <cmath>

#include "eak/eval.hpp"
#include "oracles.hpp"

using namespace eak;

namespace {

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no eak::Error thrown");
    return ErrorCode::IoError;
}

EmbeddingSet make_set(Matrix m, const std::string& prefix, std::vector<int> labels = {}) {
    EmbeddingSet s;
    s.matrix = std::move(m);
    for (std::size_t i = 0; i < s.size(); ++i) s.ids.push_back(prefix + std::to_string(i));
    if (!labels.empty()) s.labels = std::move(labels);
    return s;
}

std::vector<int> random_labels(std::size_t n, std::size_t k, SeededRng& rng) {
    std::vector<int> l(n);
    for (auto& v : l) v = static_cast<int>(rng.below(k));
    return l;
}

// Random instance with every class present at least twice.
EmbeddingSet clustered(std::size_t n, std::size_t classes, std::size_t dim, SeededRng& rng, const std::string& prefix) {
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
    rng.shuffle(labels);
    const Matrix centers = rng.gaussian(classes, dim);
    Matrix m = rng.gaussian(n, dim, 0.8);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < dim; ++c) m(i, c) += centers(static_cast<std::size_t>(labels[i]), c);
    return make_set(std::move(m), prefix, labels);
}

Matrix random_orthogonal(std::size_t d, SeededRng& rng) {
    Matrix q = rng.gaussian(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            const double p = dot(q.row(i), q.row(j));
            for (std::size_t c = 0; c < d; ++c) q(i, c) -= p * q(j, c);
        }
        const double n = norm2(q.row(i));
        for (std::size_t c = 0; c < d; ++c) q(i, c) /= n;
    }
    return q;
}

EmbeddingSet transformed(const EmbeddingSet& s, const Matrix& q) {
    EmbeddingSet out = s;
    out.matrix = matmul(s.matrix, q);
    return out;
}

EmbeddingSet rescaled(const EmbeddingSet& s, SeededRng& rng) {
    EmbeddingSet out = s;
    for (std::size_t r = 0; r < s.size(); ++r) {
        const double a = rng.uniform(0.1, 10.0);
        for (double& v : out.matrix.row(r)) v *= a;
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// mAP

TEST_CASE("average precision of a hand-ranked list") {
    // gallery ranked g0 (relevant), g1 (not), g2 (relevant) for query q
    const auto q = make_set(Matrix::from_rows({{1, 0}}), "q");
    const auto g = make_set(Matrix::from_rows({{1, 0}, {0.9, 0.2}, {0.5, 0.6}}), "g");
    const RelevanceMap rel = {{"q0", {"g0", "g2"}}};
    CHECK(mean_average_precision(q, g, rel, false) == doctest::Approx(0.5 * (1.0 + 2.0 / 3.0)).epsilon(1e-12));
    CHECK(mean_average_precision(q, g, rel, false) == doctest::Approx(0.833333).epsilon(1e-6));
}

TEST_CASE("mAP is 1 when everything is relevant") {
    SeededRng rng(1);
    const auto s = clustered(12, 1, 4, rng, "x");
    CHECK(mean_average_precision(s, s, relevance_by_label(s, s)) == 1.0);
}

TEST_CASE("mAP excludes the query itself") {
    const auto s = make_set(Matrix::from_rows({{1, 0}, {0.99, 0.1}, {0, 1}, {0.1, 0.99}}), "x", {0, 1, 0, 1});
    // without exclusion each query ranks itself first
    const auto rel = relevance_by_label(s, s);
    CHECK(mean_average_precision(s, s, rel, true) < mean_average_precision(s, s, rel, false));
}

TEST_CASE("mAP matches the brute-force oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SeededRng rng(seed);
        const auto gallery = clustered(40, 5, 6, rng, "g");
        const auto queries = clustered(30, 5, 6, rng, "q");
        const auto rel = relevance_by_label(queries, gallery);
        CHECK(std::abs(mean_average_precision(queries, gallery, rel, false) -
                       oracle::mean_average_precision(queries, gallery, rel, false)) < 1e-12);
        const auto self = relevance_by_label(gallery, gallery);
        CHECK(std::abs(mean_average_precision(gallery, gallery, self, true) -
                       oracle::mean_average_precision(gallery, gallery, self, true)) < 1e-12);
    }
}

TEST_CASE("mAP errors") {
    const auto s = make_set(Matrix::from_rows({{1, 0}, {0, 1}}), "x", {0, 1});
    CHECK(code_of([&] { mean_average_precision(s, s, relevance_by_label(s, s), true); }) == ErrorCode::NoRelevantItems);
    CHECK(code_of([&] { mean_average_precision(s, s, RelevanceMap{}, false); }) == ErrorCode::NoRelevantItems);
    const auto other = make_set(Matrix(2, 3, 1.0), "y", {0, 1});
    CHECK(code_of([&] { mean_average_precision(s, other, RelevanceMap{}, false); }) == ErrorCode::DimensionMismatch);
}

// ---------------------------------------------------------------------------
// Recall@K

TEST_CASE("recall@k trivial cases") {
    SeededRng rng(2);
    const auto g = make_set(rng.gaussian(10, 4), "g");
    auto q = g;
    q.ids.clear();
    std::map<std::string, std::string> match;
    for (std::size_t i = 0; i < 10; ++i) {
        q.ids.push_back("q" + std::to_string(i));
        match["q" + std::to_string(i)] = g.ids[i];
    }
    CHECK(recall_at_k(q, g, match, 1) == 1.0);
    const auto other = make_set(rng.gaussian(10, 4), "q");
    CHECK(recall_at_k(other, g, match, 10) == 1.0);
}

TEST_CASE("recall@k matches the full-sort oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SeededRng rng(seed);
        const auto g = make_set(rng.gaussian(50, 6), "g");
        const auto q = make_set(rng.gaussian(30, 6), "q");
        std::map<std::string, std::string> match;
        for (std::size_t i = 0; i < 30; ++i) match[q.ids[i]] = g.ids[rng.below(50)];
        for (std::size_t k : {1, 5, 17}) {
            CHECK(std::abs(recall_at_k(q, g, match, k) - oracle::recall_at_k(q, g, match, k)) < 1e-12);
        }
    }
}

TEST_CASE("recall@k errors") {
    const auto g = make_set(Matrix::from_rows({{1, 0}, {0, 1}}), "g");
    const auto q = make_set(Matrix::from_rows({{1, 0}}), "q");
    CHECK(code_of([&] { recall_at_k(q, g, {{"q0", "nope"}}, 1); }) == ErrorCode::UnknownMatchId);
    CHECK(code_of([&] { recall_at_k(q, g, {}, 1); }) == ErrorCode::UnknownMatchId);
    CHECK(code_of([&] { recall_at_k(q, g, {{"q0", "g0"}}, 3); }) == ErrorCode::KOutOfRange);
    CHECK(code_of([&] { recall_at_k(q, g, {{"q0", "g0"}}, 0); }) == ErrorCode::KOutOfRange);
}

// ---------------------------------------------------------------------------
// k-NN

TEST_CASE("k-NN defaults and unanimity") {
    CHECK(BenchmarkParams{}.knn_k == 21);
    SeededRng rng(3);
    Matrix m = rng.gaussian(21, 3, 0.01);
    for (std::size_t r = 0; r < 21; ++r) m(r, 0) += 1.0;
    const auto train = make_set(m, "t", std::vector<int>(21, 4));
    const auto test = make_set(Matrix::from_rows({{1, 0, 0}}), "q", {4});
    CHECK(knn_classify(train, test) == 1.0);
}

TEST_CASE("a 2 vs 2 tie goes to the class of the nearest neighbour") {
    const auto train = make_set(Matrix::from_rows({{1, 0.30}, {1, 0.10}, {1, 0.40}, {1, 0.20}, {-1, 0}}), "t",
                                {0, 1, 1, 0, 0});
    // ranks: t1 (class 1), t3 (0), t0 (0), t2 (1)
    const auto test1 = make_set(Matrix::from_rows({{1, 0}}), "q", {1});
    CHECK(knn_classify(train, test1, 4) == 1.0);
    const auto test0 = make_set(Matrix::from_rows({{1, 0}}), "q", {0});
    CHECK(knn_classify(train, test0, 4) == 0.0);
}

TEST_CASE("k-NN matches the brute-force oracle and k = 1 is nearest neighbour") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SeededRng rng(seed);
        const auto train = clustered(60, 4, 5, rng, "t");
        const auto test = clustered(25, 4, 5, rng, "q");
        for (std::size_t k : {1, 4, 21}) {
            CHECK(std::abs(knn_classify(train, test, k) - oracle::knn_classify(train, test, k)) < 1e-12);
        }
        const Matrix tu = l2_normalize_rows(test.matrix), ru = l2_normalize_rows(train.matrix);
        std::size_t correct = 0;
        for (std::size_t q = 0; q < test.size(); ++q) {
            std::size_t best = 0;
            for (std::size_t t = 1; t < train.size(); ++t) {
                if (dot(tu.row(q), ru.row(t)) > dot(tu.row(q), ru.row(best))) best = t;
            }
            correct += (*train.labels)[best] == (*test.labels)[q];
        }
        CHECK(knn_classify(train, test, 1) == static_cast<double>(correct) / 25.0);
    }
}

TEST_CASE("k-NN errors") {
    const auto train = make_set(Matrix::from_rows({{1, 0}, {0, 1}}), "t", {0, 1});
    const auto test = make_set(Matrix::from_rows({{1, 0}}), "q", {0});
    CHECK(code_of([&] { knn_classify(train, test, 3); }) == ErrorCode::KExceedsTrainSize);
    CHECK(code_of([&] { knn_classify(train, make_set(Matrix::from_rows({{1, 0}}), "q"), 1); }) ==
          ErrorCode::MissingLabels);
}

// ---------------------------------------------------------------------------
// Zero-shot

TEST_CASE("zero-shot trivial cases") {
    const auto classes = make_set(Matrix::identity(3), "c");
    const auto images = make_set(Matrix::identity(3), "i", {0, 1, 2});
    CHECK(zero_shot_classify(images, classes) == 1.0);
    const auto between = make_set(Matrix::from_rows({{1, 1, 0}}), "i", {0});
    CHECK(zero_shot_classify(between, classes) == 1.0);
    const auto between1 = make_set(Matrix::from_rows({{1, 1, 0}}), "i", {1});
    CHECK(zero_shot_classify(between1, classes) == 0.0);
}

TEST_CASE("zero-shot matches the argmax oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SeededRng rng(seed);
        const auto classes = make_set(rng.gaussian(6, 5), "c");
        Matrix m = rng.gaussian(30, 5, 0.7);
        const auto labels = random_labels(30, 6, rng);
        for (std::size_t i = 0; i < 30; ++i)
            for (std::size_t c = 0; c < 5; ++c) m(i, c) += classes.matrix(static_cast<std::size_t>(labels[i]), c);
        const auto images = make_set(m, "i", labels);
        CHECK(std::abs(zero_shot_classify(images, classes) - oracle::zero_shot_classify(images, classes)) < 1e-12);
    }
}

TEST_CASE("zero-shot errors") {
    const auto classes = make_set(Matrix::identity(2), "c");
    CHECK(code_of([&] { zero_shot_classify(make_set(Matrix::identity(2), "i", {0, 2}), classes); }) ==
          ErrorCode::ClassCountMismatch);
    auto relabeled = classes;
    relabeled.labels = std::vector<int>{1, 0};
    CHECK(code_of([&] { zero_shot_classify(make_set(Matrix::identity(2), "i", {0, 1}), relabeled); }) ==
          ErrorCode::ClassCountMismatch);
}

// ---------------------------------------------------------------------------
// Alignment

TEST_CASE("alignment score") {
    SeededRng rng(5);
    const auto u = make_set(rng.gaussian(8, 4), "u");
    CHECK(alignment_score(u, u) == doctest::Approx(1.0).epsilon(1e-12));
    auto neg = u;
    for (double& v : neg.matrix.data()) v = -v;
    CHECK(alignment_score(u, neg) == doctest::Approx(-1.0).epsilon(1e-12));
    const auto v = make_set(rng.gaussian(8, 4), "v");
    double sum = 0.0;
    for (std::size_t i = 0; i < 8; ++i) sum += dot(u.matrix.row(i), v.matrix.row(i)) / norm2(u.matrix.row(i)) / norm2(v.matrix.row(i));
    CHECK(alignment_score(u, v) == doctest::Approx(sum / 8.0).epsilon(1e-12));
    CHECK(code_of([&] { alignment_score(u, make_set(rng.gaussian(7, 4), "v")); }) == ErrorCode::PairingMismatch);
}

// ---------------------------------------------------------------------------
// Invariances

TEST_CASE("metrics ignore per-row scale and a shared rotation") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SeededRng rng(seed);
        const auto train = clustered(40, 4, 6, rng, "t");
        const auto test = clustered(20, 4, 6, rng, "q");
        const auto classes = make_set(rng.gaussian(4, 6), "c");
        std::map<std::string, std::string> match;
        for (std::size_t i = 0; i < test.size(); ++i) match[test.ids[i]] = train.ids[i];
        const auto rel = relevance_by_label(test, train);

        auto all = [&](const EmbeddingSet& tr, const EmbeddingSet& te, const EmbeddingSet& cl) {
            return std::vector<double>{mean_average_precision(te, tr, rel, false), recall_at_k(te, tr, match, 5),
                                       knn_classify(tr, te, 5), zero_shot_classify(te, cl)};
        };
        const auto base = all(train, test, classes);
        const auto scaled = all(rescaled(train, rng), rescaled(test, rng), rescaled(classes, rng));
        const Matrix q = random_orthogonal(6, rng);
        const auto rotated = all(transformed(train, q), transformed(test, q), transformed(classes, q));
        for (std::size_t i = 0; i < base.size(); ++i) {
            CHECK(scaled[i] == base[i]);
            CHECK(std::abs(rotated[i] - base[i]) < 1e-9);
        }
    }
}

// ---------------------------------------------------------------------------
// Benchmark and reports

TEST_CASE("benchmark runs every task and averages four of them") {
    SeededRng rng(6);
    BenchmarkInputs in;
    in.train_images = clustered(40, 4, 6, rng, "tr");
    in.test_images = clustered(24, 4, 6, rng, "te");
    in.test_texts = make_set(rng.gaussian(24, 6), "tx");
    in.class_texts = make_set(rng.gaussian(4, 6), "c");
    BenchmarkParams params;
    params.knn_k = 5;
    const auto reports = run_benchmark(in, params);
    REQUIRE(reports.size() == 6);
    CHECK(reports[0].task == "i2i");
    CHECK(reports[1].task == "knn");
    CHECK(reports[2].task == "zero_shot");
    CHECK(reports[3].task == "t2i");
    CHECK(reports[3].metric == "recall@5");
    CHECK(reports[4].task == "alignment");
    CHECK(reports[5].task == "avg");
    CHECK(reports[5].value ==
          doctest::Approx((reports[0].value + reports[1].value + reports[2].value + reports[3].value) / 4.0));

    params.tasks = {Task::Knn};
    const auto one = run_benchmark(in, params);
    REQUIRE(one.size() == 2);
    CHECK(one[1].value == one[0].value);
}

TEST_CASE("reports serialize and render") {
    EvalReport r{"i2i", "mAP", 0.4567, {{"queries", 10}}};
    const auto back = eval_report_from_json(to_json(r));
    CHECK(back.task == r.task);
    CHECK(back.metric == r.metric);
    CHECK(back.value == r.value);
    CHECK(back.config == r.config);

    const std::string table = render_table({{"baseline", {r}}, {"tuned", {{"t2i", "recall@5", 0.5, {}}}}});
    CHECK(table.find("I2I") != std::string::npos);
    CHECK(table.find("Zero-Shot") != std::string::npos);
    CHECK(table.find("45.7") != std::string::npos);
    CHECK(table.find("50.0") != std::string::npos);
    CHECK(table.find("tuned") != std::string::npos);
    CHECK(code_of([] { task_from_string("nope"); }) == ErrorCode::InvalidConfig);
    for (Task t : all_tasks()) CHECK(task_from_string(to_string(t)) == t);
}
