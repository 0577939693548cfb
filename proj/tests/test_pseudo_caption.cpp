#include <doctest.h>

#include <cmath>

#include "eak/pseudo_caption.hpp"
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

EmbeddingSet labeled(Matrix m) {
    EmbeddingSet s;
    s.matrix = std::move(m);
    for (std::size_t i = 0; i < s.size(); ++i) s.ids.push_back("img" + std::to_string(i));
    s.labels = std::vector<int>(s.size(), 0);
    return s;
}

CaptionPool pool_of(Matrix m) {
    CaptionPool p;
    p.matrix = std::move(m);
    for (std::size_t i = 0; i < p.size(); ++i) p.caption_ids.push_back("cap" + std::to_string(i));
    return p;
}

void check_against_oracle(const EmbeddingSet& images, const CaptionPool& pool, const PseudoCaptionConfig& cfg) {
    const auto got = assign_pseudo_captions(images, pool, cfg);
    const auto want = oracle::pseudo_captions(images, pool, cfg.k, cfg.threshold);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].image_id == images.ids[i]);
        CHECK(got[i].class_label == (*images.labels)[i]);
        REQUIRE(got[i].captions.size() == want[i].size());
        for (std::size_t c = 0; c < want[i].size(); ++c) {
            CHECK(got[i].captions[c].id == want[i][c].id);
            CHECK(got[i].captions[c].score == want[i][c].score);
        }
    }
}

} // namespace

TEST_CASE("defaults") {
    const PseudoCaptionConfig cfg;
    CHECK(cfg.k == 10);
    CHECK(cfg.threshold == 0.27);
}

TEST_CASE("random instances match the exhaustive scan") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SeededRng rng(seed);
        const auto images = labeled(rng.gaussian(20, 6));
        const auto pool = pool_of(rng.gaussian(200, 6));
        check_against_oracle(images, pool, {});
        check_against_oracle(images, pool, PseudoCaptionConfig{3, -1.0});
        check_against_oracle(images, pool, PseudoCaptionConfig{200, 0.5});
    }
}

TEST_CASE("ties go to the lower pool row") {
    const auto images = labeled(Matrix::from_rows({{1, 0}}));
    // rows 0, 2, 3 share the same direction
    const auto pool = pool_of(Matrix::from_rows({{2, 0}, {0, 1}, {1, 0}, {5, 0}, {1, 1}}));
    const auto recs = assign_pseudo_captions(images, pool, PseudoCaptionConfig{2, 0.0});
    REQUIRE(recs[0].captions.size() == 2);
    CHECK(recs[0].captions[0].id == "cap0");
    CHECK(recs[0].captions[1].id == "cap2");
}

TEST_CASE("threshold boundary is strict") {
    const double angle_below = std::acos(0.2699999);
    const auto images = labeled(Matrix::from_rows({{1, 0}}));
    const auto below = pool_of(Matrix::from_rows({{std::cos(angle_below), std::sin(angle_below)}}));
    const auto recs = assign_pseudo_captions(images, below, {});
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].captions.empty());

    // a score equal to the threshold survives
    const auto same = pool_of(Matrix::from_rows({{1, 0}}));
    CHECK(assign_pseudo_captions(images, same, PseudoCaptionConfig{10, 1.0})[0].captions.size() == 1);
}

TEST_CASE("properties over random instances") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SeededRng rng(seed);
        const auto images = labeled(rng.gaussian(15, 4));
        const auto pool = pool_of(rng.gaussian(60, 4));
        std::vector<std::size_t> previous;
        for (double thr : {-1.0, -0.2, 0.0, 0.27, 0.5, 0.9}) {
            const auto recs = assign_pseudo_captions(images, pool, PseudoCaptionConfig{10, thr});
            std::vector<std::size_t> counts;
            for (const auto& r : recs) {
                CHECK(r.captions.size() <= 10);
                for (std::size_t c = 0; c < r.captions.size(); ++c) {
                    CHECK(r.captions[c].score >= thr);
                    if (c > 0) CHECK(r.captions[c].score <= r.captions[c - 1].score);
                }
                counts.push_back(r.captions.size());
            }
            for (std::size_t i = 0; i < previous.size(); ++i) CHECK(counts[i] <= previous[i]);
            previous = counts;
        }
    }
}

TEST_CASE("pool order only matters through ties") {
    SeededRng rng(3);
    const auto images = labeled(rng.gaussian(10, 5));
    const auto pool = pool_of(rng.gaussian(40, 5));
    std::vector<std::size_t> perm(40);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    CaptionPool shuffled;
    shuffled.matrix = select_rows(pool.matrix, perm);
    for (std::size_t i : perm) shuffled.caption_ids.push_back(pool.caption_ids[i]);
    const auto a = assign_pseudo_captions(images, pool, {});
    const auto b = assign_pseudo_captions(images, shuffled, {});
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].captions.size() == b[i].captions.size());
        for (std::size_t c = 0; c < a[i].captions.size(); ++c) CHECK(a[i].captions[c].id == b[i].captions[c].id);
    }
}

TEST_CASE("duplicate caption texts stay distinct") {
    const auto images = labeled(Matrix::from_rows({{1, 0}}));
    CaptionPool pool = pool_of(Matrix::from_rows({{1, 0.1}, {1, 0.1}}));
    pool.texts = std::vector<std::string>{"a dog", "a dog"};
    CHECK(assign_pseudo_captions(images, pool, {})[0].captions.size() == 2);
}

TEST_CASE("pseudo-caption errors") {
    const auto images = labeled(Matrix::from_rows({{1, 0}}));
    CHECK(code_of([&] { assign_pseudo_captions(images, pool_of(Matrix(2, 3, 1.0)), {}); }) ==
          ErrorCode::DimensionMismatch);
    EmbeddingSet unlabeled = images;
    unlabeled.labels.reset();
    CHECK(code_of([&] { assign_pseudo_captions(unlabeled, pool_of(Matrix(2, 2, 1.0)), {}); }) ==
          ErrorCode::MissingLabels);
    CHECK(code_of([&] { validate(PseudoCaptionConfig{0, 0.27}); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([&] { validate(PseudoCaptionConfig{10, 1.5}); }) == ErrorCode::InvalidConfig);
}
