#include "eak/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "eak/embedding_store.hpp"
#include "eak/eval.hpp"
#include "eak/grad_cases.hpp"
#include "eak/heads.hpp"
#include "eak/pipelines.hpp"
#include "eak/pseudo_caption.hpp"

namespace eak::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Exit status returned by a command that ran but whose outcome is negative
// (a failed gradient check).
constexpr int kCheckFailed = 1;

int exit_code_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::IoError:
    case ErrorCode::BadMagic:
    case ErrorCode::UnsupportedVersion:
    case ErrorCode::UnsupportedDtype:
    case ErrorCode::TruncatedFile:
    case ErrorCode::MetadataRowCountMismatch:
    case ErrorCode::MalformedMetadata:
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::StaleCache:
        return 2;
    default:
        return 1;
    }
}

// ---------------------------------------------------------------------------
// Resolved configuration: defaults, then the --config file, then flags.

void check_known_keys(const json& defaults, const json& given, const std::string& prefix) {
    if (!given.is_object()) throw UsageError("config " + (prefix.empty() ? "file" : prefix) + " must be an object");
    for (const auto& [key, value] : given.items()) {
        if (!defaults.contains(key)) throw UsageError("unknown config key '" + prefix + key + "'");
        if (defaults.at(key).is_object()) check_known_keys(defaults.at(key), value, prefix + key + ".");
    }
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError(path.string() + ": " + e.what());
    }
}

class Resolver {
public:
    explicit Resolver(json defaults) : m_config(std::move(defaults)) {}

    void load_file(const std::string& path) {
        if (path.empty()) return;
        const json given = read_json_file(path);
        check_known_keys(m_config, given, "");
        m_config.merge_patch(given);
    }

    template <typename T>
    void flag(const CLI::Option* opt, const std::string& pointer, const T& value) {
        if (opt->count() > 0) m_config[json::json_pointer(pointer)] = value;
    }

    const json& config() const { return m_config; }

    template <typename T>
    T get(const std::string& pointer) const {
        try {
            return m_config.at(json::json_pointer(pointer)).get<T>();
        } catch (const json::exception& e) {
            throw UsageError("config " + pointer + ": " + e.what());
        }
    }

private:
    json m_config;
};

void require_file(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw UsageError("missing input file " + path.string());
}

void require_dir(const fs::path& path) {
    if (!fs::is_directory(path)) throw UsageError("missing directory " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Dataset directory: images.emb, texts.emb, class_texts.emb, captions.emb,
// split.json

struct Dataset {
    EmbeddingSet images;
    EmbeddingSet texts;
    EmbeddingSet class_texts;
    Split split;
    json split_info;
};

Split read_split(const json& j, std::size_t n) {
    Split split;
    try {
        split.train = j.at("train").get<std::vector<std::size_t>>();
        split.test = j.at("test").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
        throw UsageError(std::string("split.json: ") + e.what());
    }
    for (const auto* part : {&split.train, &split.test}) {
        for (std::size_t i : *part) {
            if (i >= n) throw UsageError("split.json index " + std::to_string(i) + " out of range");
        }
    }
    return split;
}

Dataset load_dataset(const fs::path& dir, const std::string& images_override) {
    require_dir(dir);
    const fs::path images_path = images_override.empty() ? dir / "images.emb" : fs::path(images_override);
    for (const auto& p : {images_path, dir / "texts.emb", dir / "class_texts.emb", dir / "split.json"}) require_file(p);
    Dataset d;
    d.images = load_embeddings(images_path);
    d.texts = load_embeddings(dir / "texts.emb");
    d.class_texts = load_embeddings(dir / "class_texts.emb");
    d.split_info = read_json_file(dir / "split.json");
    d.split = read_split(d.split_info, d.images.size());
    if (d.texts.size() != d.images.size()) {
        throw Error(ErrorCode::PairingMismatch, "images.emb and texts.emb differ in row count");
    }
    return d;
}

// ---------------------------------------------------------------------------
// Model directory: image_head.hdc, image_projector.hdc, text_head.hdc,
// class_weights.emb, train_report.json. Missing heads are identity maps.

struct Model {
    ProjectionHead image_head;
    ProjectionHead image_projector;
    ProjectionHead text_head;
    json train_config;
};

ProjectionHead load_or_identity(const fs::path& path, std::size_t dim) {
    return fs::exists(path) ? load_head(path) : identity_head(dim);
}

Model load_model(const std::string& dir, std::size_t image_dim, std::size_t text_dim) {
    Model m;
    if (dir.empty()) {
        m.image_head = identity_head(image_dim);
        m.image_projector = identity_head(image_dim);
        m.text_head = identity_head(text_dim);
        m.train_config = nullptr;
        return m;
    }
    require_dir(dir);
    m.image_head = load_or_identity(fs::path(dir) / "image_head.hdc", image_dim);
    m.image_projector = load_or_identity(fs::path(dir) / "image_projector.hdc", m.image_head.out_dim());
    m.text_head = load_or_identity(fs::path(dir) / "text_head.hdc", text_dim);
    const fs::path report = fs::path(dir) / "train_report.json";
    m.train_config = fs::exists(report) ? read_json_file(report).value("config", json(nullptr)) : json(nullptr);
    return m;
}

// ---------------------------------------------------------------------------
// gen

int cmd_gen(const Resolver& r, const std::string& out_dir, std::ostream& out) {
    SyntheticSpec spec;
    spec.num_classes = r.get<std::size_t>("/classes");
    spec.samples_per_class = r.get<std::size_t>("/per_class");
    spec.dim = r.get<std::size_t>("/dim");
    spec.image_noise = r.get<double>("/image_noise");
    spec.text_noise = r.get<double>("/text_noise");
    spec.misalignment_rotation_angle = r.get<double>("/angle");
    spec.captions_per_class = r.get<std::size_t>("/captions_per_class");
    spec.seed = r.get<std::uint64_t>("/seed");
    const double train_fraction = r.get<double>("/train_fraction");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw UsageError("train_fraction must lie in (0, 1)");

    const SyntheticData data = gen_synthetic(spec);
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    std::vector<std::string> files = {"images.emb", "texts.emb", "class_texts.emb"};
    save_embeddings(data.image_set, dir / "images.emb");
    save_embeddings(data.text_set, dir / "texts.emb");
    save_embeddings(data.class_text_set, dir / "class_texts.emb");
    if (spec.captions_per_class > 0) {
        save_caption_pool(data.caption_pool, dir / "captions.emb");
        files.push_back("captions.emb");
    }
    const Split split = split_train_test(data.image_set.size(), train_fraction, spec.seed);
    json split_json = {{"seed", spec.seed}, {"train_fraction", train_fraction}, {"train", split.train},
                       {"test", split.test}};
    write_text(dir / "split.json", dump(split_json));
    files.push_back("split.json");

    json summary = {{"command", "gen"}, {"seed", spec.seed}, {"config", r.config()}, {"files", files}};
    write_text(dir / "gen.json", dump(summary));
    out << dump(summary);
    return 0;
}

// ---------------------------------------------------------------------------
// caption

int cmd_caption(const Resolver& r, const std::string& images_path, const std::string& pool_path,
                const std::string& out_path, std::ostream& out) {
    require_file(images_path);
    require_file(pool_path);
    PseudoCaptionConfig cfg;
    cfg.k = r.get<std::size_t>("/k");
    cfg.threshold = r.get<double>("/threshold");
    validate(cfg);

    EmbeddingSet images = load_embeddings(images_path);
    const CaptionPool pool = load_caption_pool(pool_path);
    const auto records = assign_pseudo_captions(images, pool, cfg);
    attach_captions(images, records);
    save_embeddings(images, out_path);

    std::size_t total = 0;
    std::size_t empty = 0;
    for (const auto& rec : records) {
        total += rec.captions.size();
        if (rec.captions.empty()) ++empty;
    }
    json summary = {{"command", "caption"},
                    {"config", r.config()},
                    {"inputs", {{"images", images_path}, {"pool", pool_path}}},
                    {"output", out_path},
                    {"images", records.size()},
                    {"captions_assigned", total},
                    {"images_without_captions", empty},
                    {"mean_captions_per_image",
                     records.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(records.size())}};
    out << dump(summary);
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainPaths {
    std::string data;
    std::string images;
    std::string pool;
    std::string image_head;
    std::string out;
};

ClassWeightMatrix initial_weights(const EmbeddingSet& images, std::size_t dim, SeededRng& rng) {
    if (!images.labels) throw Error(ErrorCode::MissingLabels, "training images carry no labels");
    int max_label = -1;
    for (int l : *images.labels) max_label = std::max(max_label, l);
    if (max_label < 0) throw Error(ErrorCode::MissingLabels, "no class labels found");
    return init_class_weights(static_cast<std::size_t>(max_label) + 1, dim, rng);
}

ProjectionHead initial_head(const Resolver& r, std::size_t in_dim, std::size_t out_dim, SeededRng& rng) {
    const HeadKind kind = head_kind_from_string(r.get<std::string>("/head"));
    if (kind == HeadKind::Linear && in_dim == out_dim) return identity_head(in_dim);
    HeadSpec spec;
    spec.kind = kind;
    spec.in_dim = in_dim;
    spec.out_dim = out_dim;
    spec.hidden_dim = r.get<std::size_t>("/hidden_dim");
    return init_head(spec, rng);
}

void save_weights(const ClassWeightMatrix& w, const fs::path& path) {
    EmbeddingSet set;
    set.matrix = w.w;
    for (std::size_t c = 0; c < w.classes(); ++c) {
        std::ostringstream id;
        id << "class_" << std::setw(static_cast<int>(std::to_string(w.classes()).size())) << std::setfill('0') << c;
        set.ids.push_back(id.str());
    }
    save_embeddings(set, path);
}

int cmd_train(const Resolver& r, const TrainPaths& paths, bool table, std::ostream& out) {
    TrainConfig cfg;
    try {
        cfg = train_config_from_json(r.config());
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    validate(cfg);
    if (paths.out.empty()) throw UsageError("--out is required");
    const Dataset data = load_dataset(paths.data, paths.images);
    const EmbeddingSet train_images = subset(data.images, data.split.train);
    const EmbeddingSet train_texts = subset(data.texts, data.split.train);
    if (!paths.image_head.empty()) require_file(paths.image_head);

    SeededRng init_rng(cfg.seed);
    const json extra = {{"seed", cfg.seed}, {"train_config", r.config()}};
    const fs::path dir(paths.out);
    TrainReport report;
    std::vector<std::string> files;

    if (cfg.strategy == Strategy::Realign) {
        const ProjectionHead image_head =
            paths.image_head.empty() ? identity_head(data.images.dim()) : load_head(paths.image_head);
        const EmbeddingSet image_embs = apply_head(image_head, train_images);
        ProjectionHead projector = initial_head(r, image_head.out_dim(), data.texts.dim(), init_rng);
        ProjectionHead text_head = initial_head(r, data.texts.dim(), data.texts.dim(), init_rng);
        report = train_realign(image_embs, train_texts, projector, text_head, cfg);
        fs::create_directories(dir);
        save_head(image_head, dir / "image_head.hdc", extra);
        save_head(projector, dir / "image_projector.hdc", extra);
        save_head(text_head, dir / "text_head.hdc", extra);
        files = {"image_head.hdc", "image_projector.hdc", "text_head.hdc"};
    } else {
        ProjectionHead head = paths.image_head.empty()
                                  ? initial_head(r, data.images.dim(), data.images.dim(), init_rng)
                                  : load_head(paths.image_head);
        ClassWeightMatrix weights = initial_weights(train_images, head.out_dim(), init_rng);
        if (cfg.strategy == Strategy::GprFt) {
            report = train_gpr_ft(train_images, head, weights, cfg);
        } else {
            const fs::path pool_path = paths.pool.empty() ? fs::path(paths.data) / "captions.emb" : fs::path(paths.pool);
            require_file(pool_path);
            const CaptionPool pool = load_caption_pool(pool_path);
            report = train_mcip(train_images, pool, head, weights, cfg);
        }
        fs::create_directories(dir);
        save_head(head, dir / "image_head.hdc", extra);
        save_weights(weights, dir / "class_weights.emb");
        files = {"image_head.hdc", "class_weights.emb"};
    }

    json j = to_json(report);
    j["config"] = r.config();
    j["seed"] = cfg.seed;
    j["inputs"] = {{"data", paths.data}, {"images", paths.images}, {"pool", paths.pool},
                   {"image_head", paths.image_head}};
    files.push_back("train_report.json");
    j["files"] = files;
    write_text(dir / "train_report.json", dump(j));

    if (table) {
        std::ostringstream s;
        s << "strategy " << to_string(cfg.strategy) << "  seed " << cfg.seed << "\n";
        for (std::size_t e = 0; e < report.epoch_losses.size(); ++e) {
            s << "epoch " << std::setw(3) << e << "  loss " << std::setprecision(10) << report.epoch_losses[e]
              << "\n";
        }
        s << "locks held: " << (report.locks_held() ? "yes" : "no") << "\n";
        out << s.str();
    } else {
        out << dump(j);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// eval

std::vector<Task> parse_tasks(const json& value) {
    std::vector<std::string> names;
    if (value.is_string()) {
        std::stringstream ss(value.get<std::string>());
        for (std::string item; std::getline(ss, item, ',');) {
            if (!item.empty()) names.push_back(item);
        }
    } else if (value.is_array()) {
        names = value.get<std::vector<std::string>>();
    } else {
        throw UsageError("tasks must be a string or an array");
    }
    if (names.size() == 1 && names[0] == "all") return all_tasks();
    std::vector<Task> tasks;
    for (const auto& n : names) {
        try {
            tasks.push_back(task_from_string(n));
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
    }
    if (tasks.empty()) throw UsageError("no tasks selected");
    return tasks;
}

int cmd_eval(const Resolver& r, const std::string& data_dir, const std::string& model_dir,
             const std::string& out_path, bool table, std::ostream& out) {
    BenchmarkParams params;
    params.tasks = parse_tasks(r.config().at("tasks"));
    params.knn_k = r.get<std::size_t>("/knn_k");
    params.recall_k = r.get<std::size_t>("/recall_k");
    const Dataset data = load_dataset(data_dir, "");
    const Model model = load_model(model_dir, data.images.dim(), data.texts.dim());

    auto images = [&](const std::vector<std::size_t>& rows) {
        return apply_head(model.image_projector, apply_head(model.image_head, subset(data.images, rows)));
    };
    BenchmarkInputs inputs;
    inputs.train_images = images(data.split.train);
    inputs.test_images = images(data.split.test);
    inputs.test_texts = apply_head(model.text_head, subset(data.texts, data.split.test));
    inputs.class_texts = apply_head(model.text_head, data.class_texts);
    const auto reports = run_benchmark(inputs, params);

    std::string name = r.get<std::string>("/name");
    if (name.empty()) name = model_dir.empty() ? "baseline" : fs::path(model_dir).lexically_normal().filename().string();
    if (name.empty()) name = fs::path(model_dir).lexically_normal().parent_path().filename().string();

    json j;
    j["run"] = name;
    j["seed"] = data.split_info.value("seed", json(nullptr));
    j["config"] = r.config();
    j["train_config"] = model.train_config;
    j["inputs"] = {{"data", data_dir}, {"model", model_dir}};
    j["reports"] = json::array();
    for (const auto& rep : reports) j["reports"].push_back(to_json(rep));
    if (!out_path.empty()) write_text(out_path, dump(j));
    out << (table ? render_table({{name, reports}}) : dump(j));
    return 0;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const std::vector<std::string>& files, bool table, std::ostream& out) {
    if (files.empty()) throw UsageError("report needs at least one eval output file");
    for (const auto& f : files) require_file(f);
    std::vector<std::pair<std::string, std::vector<EvalReport>>> runs;
    json all = json::array();
    for (const auto& f : files) {
        const json j = read_json_file(f);
        std::vector<EvalReport> reports;
        try {
            for (const auto& rep : j.at("reports")) reports.push_back(eval_report_from_json(rep));
            runs.emplace_back(j.value("run", fs::path(f).stem().string()), std::move(reports));
        } catch (const json::exception& e) {
            throw UsageError(f + ": " + e.what());
        }
        all.push_back(j);
    }
    out << (table ? render_table(runs) : dump(all));
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const Resolver& r, bool table, std::ostream& out) {
    const std::string loss = r.get<std::string>("/loss");
    const auto seed = r.get<std::uint64_t>("/seed");
    const auto seeds = r.get<std::size_t>("/seeds");
    const double epsilon = r.get<double>("/epsilon");
    if (seeds < 1) throw UsageError("seeds must be >= 1");
    std::vector<std::string> names = loss == "all" ? grad_case_names() : std::vector<std::string>{loss};

    constexpr double kTolerance = 1e-5;
    json checks = json::array();
    double worst = 0.0;
    std::ostringstream text;
    for (const auto& name : names) {
        for (std::size_t s = 0; s < seeds; ++s) {
            const GradCase c = make_grad_case(name, seed + s);
            const auto errors = grad_check(c.evaluate, c.inputs, epsilon);
            const double err = max_error(errors);
            worst = std::max(worst, err);
            checks.push_back({{"loss", name}, {"seed", seed + s}, {"errors", errors}, {"max_rel_error", err}});
            text << std::left << std::setw(16) << name << " seed " << std::setw(6) << seed + s << " max rel err "
                 << std::scientific << std::setprecision(3) << err << "\n";
        }
    }
    const bool pass = worst < kTolerance;
    json j = {{"command", "gradcheck"}, {"seed", seed},        {"config", r.config()}, {"checks", checks},
              {"max_rel_error", worst}, {"tolerance", kTolerance}, {"pass", pass}};
    if (table) {
        text << (pass ? "PASS" : "FAIL") << "  max rel err " << std::scientific << std::setprecision(3) << worst
             << "\n";
        out << text.str();
    } else {
        out << dump(j);
    }
    return pass ? 0 : kCheckFailed;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Joint text/image embedding toolkit", "eak"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    std::string config_path;
    std::string format = "json";
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file; flags override its values");
        sub->add_option("--format", format, "Output format")->check(CLI::IsMember({"table", "json"}));
    };

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
    std::uint64_t seed = 0;
    std::size_t classes = 0, per_class = 0, dim = 0, captions_per_class = 0;
    double image_noise = 0, text_noise = 0, angle = 0, train_fraction = 0;
    std::string out_arg;
    add_common(gen);
    auto* g_seed = gen->add_option("--seed", seed);
    auto* g_classes = gen->add_option("--classes", classes);
    auto* g_per = gen->add_option("--per-class", per_class);
    auto* g_dim = gen->add_option("--dim", dim);
    auto* g_in = gen->add_option("--image-noise", image_noise);
    auto* g_tn = gen->add_option("--text-noise", text_noise);
    auto* g_angle = gen->add_option("--angle", angle, "Misalignment rotation angle in radians");
    auto* g_caps = gen->add_option("--captions-per-class", captions_per_class);
    auto* g_frac = gen->add_option("--train-fraction", train_fraction);
    gen->add_option("--out", out_arg, "Output directory")->required();

    // caption
    auto* caption = app.add_subcommand("caption", "Assign pseudo-captions from a caption pool");
    std::string images_arg, pool_arg, data_arg;
    std::size_t k = 0;
    double threshold = 0;
    add_common(caption);
    caption->add_option("--data", data_arg, "Dataset directory (supplies default --images and --pool)");
    caption->add_option("--images", images_arg);
    caption->add_option("--pool", pool_arg);
    auto* c_k = caption->add_option("--k", k);
    auto* c_thr = caption->add_option("--threshold", threshold);
    caption->add_option("--out", out_arg, "Output embedding file")->required();

    // train
    auto* train = app.add_subcommand("train", "Train heads with one of the fine-tuning strategies");
    TrainPaths tp;
    std::string strategy, head_kind;
    std::size_t epochs = 0, batch_size = 0, hidden_dim = 0;
    double lr = 0, wd = 0, lambda1 = 0, lambda2 = 0, tau = 0, scale = 0, margin = 0;
    bool lock_image = false, lock_text = false, lock_weights = false, exclude_own = false;
    add_common(train);
    train->add_option("--data", tp.data, "Dataset directory")->required();
    train->add_option("--images", tp.images, "Image embedding file overriding <data>/images.emb");
    train->add_option("--pool", tp.pool, "Caption pool overriding <data>/captions.emb");
    train->add_option("--image-head", tp.image_head, "Starting image head checkpoint");
    train->add_option("--out", tp.out, "Model output directory");
    auto* t_strategy = train->add_option("--strategy", strategy)->check(CLI::IsMember({"gpr_ft", "realign", "mcip"}));
    auto* t_seed = train->add_option("--seed", seed);
    auto* t_lr = train->add_option("--lr", lr);
    auto* t_wd = train->add_option("--wd", wd);
    auto* t_epochs = train->add_option("--epochs", epochs);
    auto* t_batch = train->add_option("--batch-size", batch_size);
    auto* t_l1 = train->add_option("--lambda1", lambda1);
    auto* t_l2 = train->add_option("--lambda2", lambda2);
    auto* t_tau = train->add_option("--tau", tau);
    auto* t_s = train->add_option("--s", scale);
    auto* t_m = train->add_option("--m", margin);
    auto* t_head = train->add_option("--head", head_kind)->check(CLI::IsMember({"linear", "mlp1"}));
    auto* t_hidden = train->add_option("--hidden-dim", hidden_dim);
    auto* t_li = train->add_flag("--lock-image-head", lock_image);
    auto* t_lt = train->add_flag("--lock-text-head", lock_text);
    auto* t_lw = train->add_flag("--lock-class-weights", lock_weights);
    auto* t_ex = train->add_flag("--exclude-own-captions", exclude_own);

    // eval
    auto* eval = app.add_subcommand("eval", "Run the evaluation benchmark");
    std::string model_arg, tasks_arg, name_arg;
    std::size_t knn_k = 0, recall_k = 0;
    add_common(eval);
    eval->add_option("--data", data_arg, "Dataset directory")->required();
    eval->add_option("--model", model_arg, "Model directory (identity heads when omitted)");
    auto* e_tasks = eval->add_option("--tasks", tasks_arg, "all or a comma list of i2i,knn,zero_shot,t2i,alignment");
    auto* e_knn = eval->add_option("--knn-k", knn_k);
    auto* e_rk = eval->add_option("--recall-k", recall_k);
    auto* e_name = eval->add_option("--name", name_arg, "Run name in tables");
    eval->add_option("--out", out_arg, "Also write the JSON report here");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
    std::string loss_arg;
    std::size_t seeds = 0;
    double epsilon = 0;
    add_common(gradcheck);
    auto* gc_loss = gradcheck->add_option("--loss", loss_arg);
    auto* gc_seed = gradcheck->add_option("--seed", seed);
    auto* gc_seeds = gradcheck->add_option("--seeds", seeds, "Number of consecutive seeds");
    auto* gc_eps = gradcheck->add_option("--eps", epsilon);

    // report
    auto* report = app.add_subcommand("report", "Render saved eval outputs side by side");
    std::vector<std::string> report_files;
    add_common(report);
    report->add_option("files", report_files, "Eval output JSON files");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return 0;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        err << app.help();
        return 1;
    }

    const bool table = format == "table";
    try {
        if (gen->parsed()) {
            Resolver r(json{{"seed", 0},
                            {"classes", 20},
                            {"per_class", 30},
                            {"dim", 64},
                            {"image_noise", 0.25},
                            {"text_noise", 0.25},
                            {"angle", 0.0},
                            {"captions_per_class", 5},
                            {"train_fraction", 0.8}});
            r.load_file(config_path);
            r.flag(g_seed, "/seed", seed);
            r.flag(g_classes, "/classes", classes);
            r.flag(g_per, "/per_class", per_class);
            r.flag(g_dim, "/dim", dim);
            r.flag(g_in, "/image_noise", image_noise);
            r.flag(g_tn, "/text_noise", text_noise);
            r.flag(g_angle, "/angle", angle);
            r.flag(g_caps, "/captions_per_class", captions_per_class);
            r.flag(g_frac, "/train_fraction", train_fraction);
            return cmd_gen(r, out_arg, out);
        }
        if (caption->parsed()) {
            Resolver r(json{{"k", 10}, {"threshold", 0.27}});
            r.load_file(config_path);
            r.flag(c_k, "/k", k);
            r.flag(c_thr, "/threshold", threshold);
            if (images_arg.empty() && !data_arg.empty()) images_arg = (fs::path(data_arg) / "images.emb").string();
            if (pool_arg.empty() && !data_arg.empty()) pool_arg = (fs::path(data_arg) / "captions.emb").string();
            if (images_arg.empty() || pool_arg.empty()) throw UsageError("caption needs --images and --pool (or --data)");
            return cmd_caption(r, images_arg, pool_arg, out_arg, out);
        }
        if (train->parsed()) {
            json defaults = to_json(TrainConfig{});
            defaults["head"] = "linear";
            defaults["hidden_dim"] = 0;
            Resolver r(std::move(defaults));
            r.load_file(config_path);
            r.flag(t_strategy, "/strategy", strategy);
            r.flag(t_seed, "/seed", seed);
            r.flag(t_lr, "/learning_rate", lr);
            r.flag(t_wd, "/weight_decay", wd);
            r.flag(t_epochs, "/epochs", epochs);
            r.flag(t_batch, "/batch_size", batch_size);
            r.flag(t_l1, "/combined/lambda1", lambda1);
            r.flag(t_l2, "/combined/lambda2", lambda2);
            r.flag(t_tau, "/info_nce/tau", tau);
            r.flag(t_s, "/arc/s", scale);
            r.flag(t_m, "/arc/m", margin);
            r.flag(t_head, "/head", head_kind);
            r.flag(t_hidden, "/hidden_dim", hidden_dim);
            r.flag(t_li, "/locks/image_head", lock_image);
            r.flag(t_lt, "/locks/text_head", lock_text);
            r.flag(t_lw, "/locks/class_weights", lock_weights);
            r.flag(t_ex, "/exclude_own_captions", exclude_own);
            return cmd_train(r, tp, table, out);
        }
        if (eval->parsed()) {
            Resolver r(json{{"tasks", "all"}, {"knn_k", 21}, {"recall_k", 5}, {"name", ""}});
            r.load_file(config_path);
            r.flag(e_tasks, "/tasks", tasks_arg);
            r.flag(e_knn, "/knn_k", knn_k);
            r.flag(e_rk, "/recall_k", recall_k);
            r.flag(e_name, "/name", name_arg);
            return cmd_eval(r, data_arg, model_arg, out_arg, table, out);
        }
        if (gradcheck->parsed()) {
            Resolver r(json{{"loss", "all"}, {"seed", 0}, {"seeds", 1}, {"epsilon", 1e-5}});
            r.load_file(config_path);
            r.flag(gc_loss, "/loss", loss_arg);
            r.flag(gc_seed, "/seed", seed);
            r.flag(gc_seeds, "/seeds", seeds);
            r.flag(gc_eps, "/epsilon", epsilon);
            return cmd_gradcheck(r, table, out);
        }
        if (report->parsed()) {
            if (!config_path.empty()) throw UsageError("report takes no config file");
            return cmd_report(report_files, table, out);
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

} // namespace eak::cli
