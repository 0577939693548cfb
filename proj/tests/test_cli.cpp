#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "eak/cli.hpp"
#include "eak/embedding_store.hpp"
#include "eak/heads.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result eak_run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = eak::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const char* root = std::getenv("EAK_TEST_TMP");
    fs::path dir = fs::path(root ? root : fs::temp_directory_path().string()) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream(p) << text;
}

std::string s(const fs::path& p) { return p.string(); }

// Small dataset shared by the flows below.
fs::path gen_small(const std::string& name, const std::string& seed = "7") {
    const fs::path dir = scratch(name);
    const auto r = eak_run({"gen", "--seed", seed, "--classes", "5", "--per-class", "12", "--dim", "8", "--train-fraction", "0.5", "--angle",
                            "0.4", "--captions-per-class", "3", "--out", s(dir / "data")});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return dir;
}

} // namespace

TEST_CASE("gen writes a complete, reproducible dataset") {
    const fs::path a = gen_small("gen_a");
    const fs::path b = gen_small("gen_b");
    for (const char* f : {"images.emb", "texts.emb", "class_texts.emb", "captions.emb", "split.json", "gen.json"}) {
        REQUIRE(fs::exists(a / "data" / f));
        CHECK(slurp(a / "data" / f) == slurp(b / "data" / f));
    }
    const auto images = eak::load_embeddings(a / "data" / "images.emb");
    CHECK(images.size() == 60);
    CHECK(images.dim() == 8);
    REQUIRE(images.labels);
    CHECK(images.ids.front() == "img_00");
    const json split = json::parse(slurp(a / "data" / "split.json"));
    CHECK(split.at("train").size() == 30);
    CHECK(split.at("test").size() == 30);
    CHECK(split.at("seed") == 7);

    const fs::path c = gen_small("gen_c", "8");
    CHECK(slurp(a / "data" / "images.emb") != slurp(c / "data" / "images.emb"));
}

TEST_CASE("caption attaches pseudo-captions") {
    const fs::path dir = gen_small("caption");
    const auto r = eak_run({"caption", "--data", s(dir / "data"), "--k", "2", "--threshold", "0.0", "--out",
                            s(dir / "captioned.emb")});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const json summary = json::parse(r.out);
    const auto images = eak::load_embeddings(dir / "captioned.emb");
    REQUIRE(images.captions);
    std::size_t total = 0;
    for (const auto& caps : *images.captions) {
        CHECK(caps.size() <= 2);
        total += caps.size();
    }
    CHECK(summary.at("captions_assigned") == total);
    CHECK(summary.at("config").at("k") == 2);
}

TEST_CASE("train, eval and report flow") {
    const fs::path dir = gen_small("flow");
    const std::string data = s(dir / "data");

    auto r = eak_run({"train", "--data", data, "--strategy", "gpr_ft", "--lr", "0.01", "--epochs", "3",
                      "--batch-size", "8", "--out", s(dir / "gpr")});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(fs::exists(dir / "gpr" / "image_head.hdc"));
    CHECK(fs::exists(dir / "gpr" / "class_weights.emb"));
    const json report = json::parse(slurp(dir / "gpr" / "train_report.json"));
    CHECK(report.at("epoch_losses").size() == 3);
    CHECK(report.at("config").at("learning_rate") == 0.01);

    r = eak_run({"train", "--data", data, "--strategy", "realign", "--lr", "0.001", "--epochs", "2", "--batch-size",
                 "8", "--image-head", s(dir / "gpr" / "image_head.hdc"), "--out", s(dir / "realign")});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    for (const char* f : {"image_head.hdc", "image_projector.hdc", "text_head.hdc"}) CHECK(fs::exists(dir / "realign" / f));
    // the stage-one head is carried through untouched
    CHECK(eak::load_head(dir / "realign" / "image_head.hdc") == eak::load_head(dir / "gpr" / "image_head.hdc"));

    r = eak_run({"caption", "--data", data, "--out", s(dir / "captioned.emb")});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    r = eak_run({"train", "--data", data, "--images", s(dir / "captioned.emb"), "--strategy", "mcip", "--lr", "0.01",
                 "--epochs", "2", "--batch-size", "8", "--out", s(dir / "mcip")});
    REQUIRE_MESSAGE(r.code == 0, r.err);

    r = eak_run({"eval", "--data", data, "--out", s(dir / "base.json")});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const json base = json::parse(slurp(dir / "base.json"));
    CHECK(base.at("run") == "baseline");
    CHECK(base.at("reports").size() == 6);
    CHECK(json::parse(r.out) == base);

    r = eak_run({"eval", "--data", data, "--model", s(dir / "realign"), "--tasks", "t2i,alignment", "--out",
                 s(dir / "realign.json")});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const json re = json::parse(slurp(dir / "realign.json"));
    CHECK(re.at("run") == "realign");
    CHECK(re.at("reports").size() == 3);  // t2i, alignment, avg over t2i
    CHECK(re.at("train_config").at("strategy") == "realign");
    CHECK(re.at("seed") == 7);

    r = eak_run({"report", "--format", "table", s(dir / "base.json"), s(dir / "realign.json")});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("baseline") != std::string::npos);
    CHECK(r.out.find("realign") != std::string::npos);
    r = eak_run({"report", s(dir / "base.json")});
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out).size() == 1);
}

TEST_CASE("training twice gives byte-identical outputs") {
    const fs::path dir = gen_small("repeat");
    for (const char* out : {"m1", "m2"}) {
        const auto r = eak_run({"train", "--data", s(dir / "data"), "--strategy", "gpr_ft", "--lr", "0.01",
                                "--epochs", "2", "--batch-size", "8", "--head", "mlp1", "--hidden-dim", "6", "--out",
                                s(dir / out)});
        REQUIRE_MESSAGE(r.code == 0, r.err);
    }
    for (const char* f : {"image_head.hdc", "class_weights.emb"}) CHECK(slurp(dir / "m1" / f) == slurp(dir / "m2" / f));
    const json a = json::parse(slurp(dir / "m1" / "train_report.json"));
    const json b = json::parse(slurp(dir / "m2" / "train_report.json"));
    CHECK(a.at("epoch_losses") == b.at("epoch_losses"));
    CHECK(a.at("checksums") == b.at("checksums"));
}

TEST_CASE("flags override the config file") {
    const fs::path dir = gen_small("config");
    write(dir / "cfg.json", R"({"strategy": "gpr_ft", "learning_rate": 0.5, "epochs": 4, "arc": {"m": 0.3}})");
    const auto r = eak_run({"train", "--config", s(dir / "cfg.json"), "--data", s(dir / "data"), "--lr", "0.02",
                            "--batch-size", "8", "--out", s(dir / "m")});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const json cfg = json::parse(slurp(dir / "m" / "train_report.json")).at("config");
    CHECK(cfg.at("learning_rate") == 0.02);
    CHECK(cfg.at("epochs") == 4);
    CHECK(cfg.at("arc").at("m") == 0.3);
    CHECK(cfg.at("arc").at("s") == 64.0);
}

TEST_CASE("configuration errors exit with 1") {
    const fs::path dir = gen_small("errors");
    const std::string data = s(dir / "data");
    write(dir / "bad.json", R"({"learning_rate": 0.1, "arc": {"margin": 0.3}})");
    auto r = eak_run({"train", "--config", s(dir / "bad.json"), "--data", data});
    CHECK(r.code == 1);
    CHECK(r.err.find("arc.margin") != std::string::npos);

    r = eak_run({"train", "--data", data, "--strategy", "gpr_ft"});
    CHECK(r.code == 1);
    CHECK(r.err.find("learning_rate") != std::string::npos);

    CHECK(eak_run({"train", "--data", data, "--strategy", "sgd", "--lr", "0.1"}).code == 1);
    CHECK(eak_run({"train", "--data", data, "--strategy", "realign", "--lr", "0.1", "--batch-size", "1"}).code == 1);
    CHECK(eak_run({"frobnicate"}).code == 1);
    CHECK(eak_run({}).code == 1);
    CHECK(eak_run({"eval", "--data", data, "--tasks", "speed"}).code == 1);
    CHECK(eak_run({"eval", "--data", s(dir / "nowhere")}).code == 1);
    CHECK(eak_run({"caption", "--images", s(dir / "missing.emb"), "--pool", data + "/captions.emb", "--out",
                   s(dir / "x.emb")})
              .code == 1);
    CHECK(eak_run({"gradcheck", "--eps", "0.5"}).code == 1);
}

TEST_CASE("corrupt files are runtime errors") {
    const fs::path dir = gen_small("corrupt");
    std::string bytes = slurp(dir / "data" / "images.emb");
    bytes[0] = 'X';
    std::ofstream(dir / "bad.emb", std::ios::binary) << bytes;
    const auto r = eak_run({"caption", "--images", s(dir / "bad.emb"), "--pool", s(dir / "data" / "captions.emb"),
                            "--out", s(dir / "x.emb")});
    CHECK(r.code == 2);
    CHECK(r.err.find("BadMagic") != std::string::npos);
}

TEST_CASE("gradcheck reports every loss") {
    const auto r = eak_run({"gradcheck", "--seeds", "2"});
    REQUIRE_MESSAGE(r.code == 0, r.out);
    const json j = json::parse(r.out);
    CHECK(j.at("pass") == true);
    CHECK(j.at("max_rel_error").get<double>() < 1e-5);
    CHECK(j.at("checks").size() == 14);
    CHECK(eak_run({"gradcheck", "--loss", "no_such_loss"}).code == 1);

    const auto table = eak_run({"gradcheck", "--loss", "arc_margin", "--format", "table"});
    CHECK(table.code == 0);
    CHECK(table.out.find("PASS") != std::string::npos);
}

TEST_CASE("help exits cleanly") {
    const auto r = eak_run({"--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("gradcheck") != std::string::npos);
}
