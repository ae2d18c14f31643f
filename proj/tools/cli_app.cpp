// SPDX-License-Identifier: Apache-2.0
#include "cli_app.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "pasta/analytics.hpp"
#include "pasta/core_model.hpp"
#include "pasta/dpo_engine.hpp"
#include "pasta/error.hpp"
#include "pasta/hashing.hpp"
#include "pasta/model_backend.hpp"
#include "pasta/pair_factory.hpp"
#include "pasta/prompt_library.hpp"
#include "pasta/verifier.hpp"

namespace pasta::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr std::string_view kVersion = "0.1.0";

/// Configuration problems; reported with exit status 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- options

struct FactoryOpts {
    std::size_t queries_per_video = 10;
    std::size_t adversaries_per_query = 3;
    std::size_t dense_cap = 32;
    double sparse_fps = 1.0;
    int max_edge = 448;
    std::string frames = "files";
};

struct GenerateOpts {
    std::string videos, out, report, backend_config, templates, record, corpus;
    std::uint64_t seed = 0;
    FactoryOpts factory;
};

struct VerifyOpts {
    std::string candidates, out, rejects, stats, judge_config, backend_config, audit, templates;
    std::uint64_t seed = 0;
    std::size_t max_regen = 1;
    FactoryOpts factory;
};

struct PartitionOpts {
    std::string dataset, out_dir;
};

struct DataOpts {
    std::string dataset, synthetic;
    std::size_t feature_dim = 0;
    double separability = 1.0;
    double lambda = 0.1;
    std::string weights = "1,1,1";
    std::uint64_t seed = 0;
    bool use_reference = false;
};

struct TrainOpts {
    DataOpts data;
    double lr = 1.0;
    std::size_t steps = 500;
    std::string optimizer = "gd";
    std::size_t batch_size = 0;
    std::string init, metrics_out, params_out;
};

struct CheckGradOpts {
    DataOpts data;
    std::size_t points = 5;
    double eps = 1e-5;
    double tolerance = 1e-6;
    std::string out;
};

struct AnalyzeOpts {
    std::string kind, input, out, baseline = "Qwen2.5-VL", phrases, judge_config, templates;
    bool judged = false;
    std::uint64_t seed = 0;
};

struct EvalAdvOpts {
    std::string videos, out, report, backend_config, generator_config, judge_config, templates,
        phrases;
    bool judged = false;
    std::uint64_t seed = 0;
    std::size_t dense_cap = 32;
    int max_edge = 448;
    std::string frames = "files";
};

struct Options {
    std::string config;
    bool quiet = false;
    GenerateOpts generate;
    GenerateOpts replay;
    VerifyOpts verify;
    PartitionOpts partition;
    TrainOpts train;
    CheckGradOpts check_grad;
    AnalyzeOpts analyze;
    EvalAdvOpts eval_adv;
};

const std::set<std::string> kPathOptions = {
    "videos", "out", "report", "backend-config", "templates", "record", "corpus", "candidates",
    "rejects", "stats", "judge-config", "audit", "dataset", "out-dir", "init", "metrics-out",
    "params-out", "input", "generator-config"};

void add_factory_options(CLI::App* sub, FactoryOpts& f) {
    sub->add_option("--queries-per-video", f.queries_per_video, "Queries generated per video")
        ->capture_default_str();
    sub->add_option("--adversaries-per-query", f.adversaries_per_query,
                    "Adversarial responses per query (1-5)")
        ->capture_default_str();
    sub->add_option("--dense-cap", f.dense_cap, "Frame cap for dense sampling")->capture_default_str();
    sub->add_option("--sparse-fps", f.sparse_fps, "Frames per second for sparse sampling")
        ->capture_default_str();
    sub->add_option("--max-edge", f.max_edge, "Longest frame edge after downscaling, pixels")
        ->capture_default_str();
    sub->add_option("--frames", f.frames, "Frame payloads: files | placeholder")
        ->check(CLI::IsMember({"files", "placeholder"}))
        ->capture_default_str();
}

void add_generate_options(CLI::App* sub, GenerateOpts& g, bool replay) {
    if (replay) {
        sub->add_option("--corpus", g.corpus, "Recorded replay corpus (JSON lines)")->required();
    }
    sub->add_option("--videos", g.videos, "Directory of *.manifest frame manifests")->required();
    sub->add_option("--out", g.out, "Candidate pairs output (JSON lines)")->required();
    sub->add_option("--report", g.report, "Run report (default <out>.report.json)");
    if (!replay) {
        sub->add_option("--backend-config", g.backend_config,
                        "Backend config JSON (default: mock backend)");
        sub->add_option("--record", g.record, "Append every completion to this replay corpus");
    }
    sub->add_option("--seed", g.seed, "Mock backend seed")->capture_default_str();
    sub->add_option("--templates", g.templates, "Prompt template directory");
    add_factory_options(sub, g.factory);
}

void add_data_options(CLI::App* sub, DataOpts& d) {
    sub->add_option("--dataset", d.dataset, "Retained dataset (JSON lines)");
    sub->add_option("--synthetic", d.synthetic,
                    "Planted-separable synthetic set, pairs per mode as s,t,c");
    sub->add_option("--feature-dim", d.feature_dim,
                    "Feature dimension (default 64 for datasets, 8 for synthetic)");
    sub->add_option("--separability", d.separability, "Synthetic margin under the planted policy")
        ->capture_default_str();
    sub->add_option("--lambda", d.lambda, "Scale inside the sigmoid")->capture_default_str();
    sub->add_option("--weights", d.weights, "Partition weights a,b,g")->capture_default_str();
    sub->add_option("--seed", d.seed, "Seed for data, batches and probes")->capture_default_str();
    sub->add_flag("--use-reference", d.use_reference, "Subtract a frozen initial-policy reference");
}

// ---------------------------------------------------------------- config file and env

std::string env_name(std::string_view option) {
    std::string out = "PASTA_";
    for (char c : option) {
        out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    return out;
}

std::string normalize_key(std::string key) {
    std::replace(key.begin(), key.end(), '_', '-');
    return key;
}

struct FileValue {
    std::string value;
    bool used = false;
};

/// Keys from the config file, by (section, name). Section "" holds global keys.
std::map<std::pair<std::string, std::string>, FileValue> read_config_file(const std::string& path) {
    std::map<std::pair<std::string, std::string>, FileValue> out;
    if (path.empty()) return out;
    std::ifstream in(path);
    if (!in) throw UsageError("config file not found: " + path);
    CLI::ConfigTOML parser;
    std::vector<CLI::ConfigItem> items;
    try {
        items = parser.from_config(in);
    } catch (const CLI::Error& e) {
        throw UsageError("config file " + path + ": " + e.what());
    }
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--" || item.inputs.empty()) continue;
        std::string section;
        for (const auto& p : item.parents) section += (section.empty() ? "" : ".") + p;
        std::string value;
        for (const auto& v : item.inputs) value += (value.empty() ? "" : ",") + v;
        out[{normalize_key(section), normalize_key(item.name)}] = FileValue{value, false};
    }
    return out;
}

std::vector<std::string> as_args(const CLI::Option* opt, const std::string& value) {
    return {"--" + opt->get_lnames().front() + "=" + value};
}

// Values from the file come first and environment values second so that
// the last occurrence wins: flag > environment > file.
std::vector<std::string> injected_args(CLI::App* sub,
                                       std::map<std::pair<std::string, std::string>, FileValue>& file) {
    std::vector<std::string> from_file;
    std::vector<std::string> from_env;
    for (const CLI::Option* opt : sub->get_options()) {
        if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
        const std::string& name = opt->get_lnames().front();
        for (const std::string& section : {std::string(), sub->get_name()}) {
            auto it = file.find({section, name});
            if (it == file.end()) continue;
            it->second.used = true;
            auto a = as_args(opt, it->second.value);
            from_file.insert(from_file.end(), a.begin(), a.end());
        }
        if (const char* v = std::getenv(env_name(name).c_str()); v != nullptr && *v != '\0') {
            auto a = as_args(opt, v);
            from_env.insert(from_env.end(), a.begin(), a.end());
        }
    }
    from_file.insert(from_file.end(), from_env.begin(), from_env.end());
    return from_file;
}

// ---------------------------------------------------------------- run context

struct Context {
    std::ostream& err;
    bool quiet = false;
    std::string subcommand;
    CLI::App* sub = nullptr;

    void info(const std::string& msg) const {
        if (!quiet) err << "[pasta] " << msg << '\n';
    }
    void warn(const std::string& msg) const { err << "[pasta] warning: " << msg << '\n'; }
};

json effective_config(const CLI::App* sub) {
    json cfg = json::object();
    for (const CLI::Option* opt : sub->get_options()) {
        if (opt->get_lnames().empty() && opt->get_name().empty()) continue;
        const std::string name =
            opt->get_lnames().empty() ? opt->get_name() : opt->get_lnames().front();
        if (name == "help") continue;
        std::string value;
        if (opt->count() > 0) {
            const auto& results = opt->results();
            value = results.empty() ? "true" : results.back();
        } else {
            value = opt->get_default_str();
        }
        if (kPathOptions.contains(name) && !value.empty()) {
            value = fs::path(value).filename().string();
        }
        cfg[name] = value;
    }
    return cfg;
}

struct FileHash {
    std::string name;
    std::string sha256;
};

std::vector<FileHash> hash_inputs(const fs::path& p) {
    std::vector<FileHash> out;
    if (p.empty() || !fs::exists(p)) return out;
    if (fs::is_directory(p)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(p)) {
            if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            out.push_back({p.filename().string() + "/" + f.filename().string(), sha256_file(f)});
        }
    } else {
        out.push_back({p.filename().string(), sha256_file(p)});
    }
    return out;
}

void write_manifest(const Context& ctx, const fs::path& primary,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
    const json cfg = effective_config(ctx.sub);
    json m;
    m["tool"] = "pasta";
    m["version"] = kVersion;
    m["subcommand"] = ctx.subcommand;
    m["config_hash"] = sha256_hex(cfg.dump());
    m["config"] = cfg;
    json in = json::array();
    for (const auto& p : inputs) {
        for (const auto& h : hash_inputs(p)) in.push_back({{"path", h.name}, {"sha256", h.sha256}});
    }
    m["inputs"] = std::move(in);
    json out = json::array();
    for (const auto& p : outputs) {
        for (const auto& h : hash_inputs(p)) out.push_back({{"path", h.name}, {"sha256", h.sha256}});
    }
    m["outputs"] = std::move(out);
    const fs::path path = primary.string() + ".manifest.json";
    write_text(path, m.dump(2) + "\n");
    ctx.info("manifest " + path.string());
}

std::string or_default(const std::string& value, const std::string& primary, std::string_view suffix) {
    return value.empty() ? primary + std::string(suffix) : value;
}

void require_exists(const std::string& path, std::string_view what) {
    if (path.empty() || !fs::exists(path)) {
        throw UsageError(std::string(what) + " not found: " + path);
    }
}

// Wraps configuration validation so that invalid values exit with status 2.
template <typename F>
auto validated(F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::InvalidValue) throw UsageError(e.what());
        throw;
    }
}

PromptLibrary load_prompts(const std::string& dir) {
    if (dir.empty()) return PromptLibrary::load_default();
    require_exists(dir, "template directory");
    return PromptLibrary::load(dir);
}

std::unique_ptr<ChatBackend> backend_from(const std::string& config_path, std::uint64_t seed) {
    BackendConfig cfg = BackendConfig::mock(seed);
    if (!config_path.empty()) {
        require_exists(config_path, "backend config");
        cfg = validated([&] { return BackendConfig::from_file(config_path); });
    }
    return validated([&] { return make_backend(cfg); });
}

FactoryConfig factory_config(const FactoryOpts& f) {
    FactoryConfig c;
    c.queries_per_video = f.queries_per_video;
    c.adversaries_per_query = f.adversaries_per_query;
    c.dense_cap = f.dense_cap;
    c.sparse_fps = f.sparse_fps;
    c.max_edge_px = f.max_edge;
    validated([&] {
        c.validate();
        return 0;
    });
    return c;
}

FrameLoader frame_loader(const std::string& kind, int max_edge) {
    return kind == "placeholder" ? placeholder_frame_loader() : file_frame_loader(max_edge);
}

std::vector<VideoRef> load_videos(const std::string& dir) {
    require_exists(dir, "video manifest directory");
    auto videos = load_video_directory(dir);
    if (videos.empty()) throw UsageError("no *.manifest files in " + dir);
    return videos;
}

// ---------------------------------------------------------------- subcommands

int cmd_generate(const Context& ctx, const GenerateOpts& o, bool replay) {
    const auto videos = load_videos(o.videos);
    const FactoryConfig fc = factory_config(o.factory);
    std::unique_ptr<ChatBackend> backend;
    if (replay) {
        require_exists(o.corpus, "replay corpus");
        BackendConfig cfg = BackendConfig::mock(o.seed);
        cfg.replay_path = o.corpus;
        cfg.replay_strict = true;
        backend = make_backend(cfg);
    } else {
        backend = backend_from(o.backend_config, o.seed);
        if (!o.record.empty()) backend->record_to(o.record);
    }
    const PromptLibrary prompts = load_prompts(o.templates);
    PairFactory factory(*backend, prompts, fc, frame_loader(o.factory.frames, o.factory.max_edge));

    ctx.info(fmt::format("generating candidates for {} video(s) with {}", videos.size(), backend->id()));
    const BuildResult result = factory.build_candidates(videos);
    const std::string report = or_default(o.report, o.out, ".report.json");
    write_candidates(o.out, result.candidates);
    write_text(report, result.report.to_json() + "\n");
    ctx.info(fmt::format("{} of {} expected candidates written to {}", result.report.emitted_candidates,
                         result.report.expected_candidates, o.out));

    std::vector<fs::path> inputs{o.videos};
    if (replay) inputs.emplace_back(o.corpus);
    if (!o.backend_config.empty()) inputs.emplace_back(o.backend_config);
    std::vector<fs::path> outputs{o.out, report};
    if (!o.record.empty()) outputs.emplace_back(o.record);
    write_manifest(ctx, o.out, inputs, outputs);

    if (!result.report.failures.empty()) {
        json e;
        e["error"] = {{"code", "STAGE_FAILURE"},
                      {"failures", result.report.failures.size()},
                      {"missing_candidates",
                       result.report.expected_candidates - result.report.emitted_candidates},
                      {"report", report}};
        ctx.err << e.dump() << '\n';
        return kExitStageFailure;
    }
    return kExitOk;
}

int cmd_verify(const Context& ctx, const VerifyOpts& o) {
    require_exists(o.candidates, "candidates file");
    const auto candidates = read_candidates(o.candidates);
    if (candidates.empty()) throw UsageError("candidates file is empty: " + o.candidates);
    const PromptLibrary prompts = load_prompts(o.templates);
    auto judge = backend_from(o.judge_config, o.seed);

    FilterPolicy policy;
    policy.max_regen = o.max_regen;
    std::unique_ptr<ChatBackend> generator;
    std::unique_ptr<PairFactory> factory;
    std::map<fs::path, std::optional<VideoRef>> video_cache;
    if (o.max_regen > 0) {
        generator = backend_from(o.backend_config, o.seed);
        FactoryConfig fc = factory_config(o.factory);
        factory = std::make_unique<PairFactory>(*generator, prompts, fc,
                                                frame_loader(o.factory.frames, o.factory.max_edge));
        policy.regenerate = [&](const CandidatePair& pair, std::size_t attempt) -> std::optional<ResponseRecord> {
            auto [it, fresh] = video_cache.try_emplace(pair.video.frame_manifest);
            if (fresh) {
                try {
                    it->second = load_video_manifest(pair.video.frame_manifest);
                } catch (const Error& e) {
                    ctx.warn("cannot regenerate for " + pair.video.video_id + ": " + e.what());
                }
            }
            if (!it->second) return std::nullopt;
            try {
                return factory->generate_adversary(*it->second, pair.query, pair.adversary_index, attempt);
            } catch (const Error& e) {
                ctx.warn("regeneration failed for " + pair.pair_id() + ": " + e.what());
                return std::nullopt;
            }
        };
    }

    ctx.info(fmt::format("verifying {} candidate(s) with {}", candidates.size(), judge->id()));
    const FilterResult result = filter_dataset(candidates, *judge, prompts, policy);
    const std::string rejects = or_default(o.rejects, o.out, ".rejects.jsonl");
    const std::string stats = or_default(o.stats, o.out, ".stats.json");
    write_dataset(o.out, result.retained);
    std::vector<std::string> reject_lines;
    for (const auto& r : result.rejects) reject_lines.push_back(serialize(r));
    write_lines(rejects, reject_lines);
    write_text(stats, result.stats.to_json() + "\n");
    ctx.info(fmt::format("retained {} of {} ({:.1f}%)", result.stats.retained, result.stats.candidates,
                         100.0 * result.stats.retention_rate()));

    std::vector<fs::path> outputs{o.out, rejects, stats};
    if (!o.audit.empty()) {
        if (result.retained.empty()) {
            ctx.warn("no retained pairs to audit");
        } else {
            const auto report = targeting_accuracy(result.retained, *judge, prompts);
            write_text(o.audit, report.to_json() + "\n");
            write_text(o.audit + ".txt", report.to_text());
            outputs.emplace_back(o.audit);
            outputs.emplace_back(o.audit + ".txt");
        }
    }
    std::vector<fs::path> inputs{o.candidates};
    if (!o.judge_config.empty()) inputs.emplace_back(o.judge_config);
    write_manifest(ctx, o.out, inputs, outputs);
    return kExitOk;
}

int cmd_partition(const Context& ctx, const PartitionOpts& o) {
    require_exists(o.dataset, "dataset file");
    const auto records = read_dataset(o.dataset);
    const PartitionedDataset parts = partition(records);
    std::vector<fs::path> outputs;
    for (FailureMode m : kAllModes) {
        const fs::path path = fs::path(o.out_dir) / (std::string(to_string(m)) + ".jsonl");
        write_dataset(path, parts[m]);
        for (const auto& line : read_lines(path)) validate_record(line, m);
        outputs.push_back(path);
        ctx.info(fmt::format("{}: {} record(s)", to_string(m), parts[m].size()));
    }
    write_manifest(ctx, fs::path(o.out_dir) / "partition", {o.dataset}, outputs);
    return kExitOk;
}

std::array<std::size_t, 3> parse_sizes(const std::string& text) {
    std::array<std::size_t, 3> sizes{};
    std::stringstream ss(text);
    std::string part;
    std::size_t i = 0;
    while (std::getline(ss, part, ',')) {
        if (i >= 3) throw UsageError("--synthetic takes three sizes s,t,c");
        try {
            std::size_t used = 0;
            sizes[i] = std::stoull(part, &used);
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw UsageError("--synthetic: not a count: '" + part + "'");
        }
        ++i;
    }
    if (i != 3) throw UsageError("--synthetic takes three sizes s,t,c");
    return sizes;
}

DpoConfig dpo_config(const DataOpts& d) {
    DpoConfig c;
    c.lambda_scale = d.lambda;
    c.seed = d.seed;
    c.use_reference = d.use_reference;
    std::vector<double> w;
    std::stringstream ss(d.weights);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            w.push_back(std::stod(part));
        } catch (const std::exception&) {
            throw UsageError("--weights: not a number: '" + part + "'");
        }
    }
    if (w.size() != 3) throw UsageError("--weights takes three values a,b,g");
    c.alpha = w[0];
    c.beta_w = w[1];
    c.gamma = w[2];
    return c;
}

DpoDataset load_dpo_data(const DataOpts& d) {
    if (d.dataset.empty() == d.synthetic.empty()) {
        throw UsageError("give exactly one of --dataset or --synthetic");
    }
    if (!d.synthetic.empty()) {
        SyntheticSpec spec;
        spec.pairs_per_mode = parse_sizes(d.synthetic);
        spec.feature_dim = d.feature_dim == 0 ? 8 : d.feature_dim;
        spec.seed = d.seed;
        spec.separability = d.separability;
        return validated([&] { return make_synthetic_dataset(spec).data; });
    }
    require_exists(d.dataset, "dataset file");
    const auto records = read_dataset(d.dataset);
    return featurize(partition(records), d.feature_dim == 0 ? 64 : d.feature_dim);
}

int cmd_train(const Context& ctx, const TrainOpts& o) {
    DpoConfig cfg = dpo_config(o.data);
    cfg.learning_rate = o.lr;
    cfg.steps = o.steps;
    cfg.batch_size = o.batch_size;
    cfg.optimizer = o.optimizer == "adam" ? Optimizer::Adam : Optimizer::GradientDescent;
    validated([&] {
        cfg.validate();
        return 0;
    });
    const DpoDataset data = load_dpo_data(o.data);
    PolicyParams init(data.feature_dim);
    if (!o.init.empty()) {
        require_exists(o.init, "initial policy");
        std::ifstream in(o.init);
        std::stringstream buf;
        buf << in.rdbuf();
        init = PolicyParams::from_json(buf.str());
    }
    ctx.info(fmt::format("training on {} pair(s), dim {}, {} step(s)", data.size(), data.feature_dim, cfg.steps));
    const TrainResult result = validated([&] { return train(data, cfg, init); });
    const std::string params = or_default(o.params_out, o.metrics_out, ".theta.json");
    write_text(o.metrics_out, metrics_csv(result.metrics));
    write_text(params, result.params.to_json() + "\n");
    const auto& last = result.metrics.back();
    ctx.info(fmt::format("step {}: loss {:.6f}, reward accuracy {:.4f}, margin {:.6f}", last.step,
                         last.loss, last.reward_accuracy, last.reward_margin));

    std::vector<fs::path> inputs;
    if (!o.data.dataset.empty()) inputs.emplace_back(o.data.dataset);
    if (!o.init.empty()) inputs.emplace_back(o.init);
    write_manifest(ctx, o.metrics_out, inputs, {o.metrics_out, params});
    if (result.diverged) {
        ctx.err << json{{"error", {{"code", "DIVERGED"}, {"last_step", last.step}}}}.dump() << '\n';
        return kExitStageFailure;
    }
    return kExitOk;
}

int cmd_check_grad(const Context& ctx, const CheckGradOpts& o) {
    const DpoConfig cfg = dpo_config(o.data);
    validated([&] {
        cfg.validate();
        return 0;
    });
    const DpoDataset data = load_dpo_data(o.data);
    std::mt19937_64 rng(o.data.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const PolicyParams reference(data.feature_dim);
    double worst = 0.0;
    json points = json::array();
    for (std::size_t i = 0; i < o.points; ++i) {
        PolicyParams theta(data.feature_dim);
        for (auto& v : theta.theta) v = normal(rng);
        const auto check = check_gradient(theta, data, cfg, o.eps, cfg.use_reference ? &reference : nullptr);
        worst = std::max(worst, check.max_rel_error);
        points.push_back({{"max_relative_error", check.max_rel_error},
                          {"max_absolute_error", check.max_abs_error}});
    }
    const bool pass = worst < o.tolerance;
    json report;
    report["max_relative_error"] = worst;
    report["tolerance"] = o.tolerance;
    report["eps"] = o.eps;
    report["pass"] = pass;
    report["points"] = std::move(points);
    write_text(o.out, report.dump(2) + "\n");
    ctx.err << fmt::format("max_relative_error={:.3e} tolerance={:.1e} {}\n", worst, o.tolerance,
                           pass ? "PASS" : "FAIL");
    std::vector<fs::path> inputs;
    if (!o.data.dataset.empty()) inputs.emplace_back(o.data.dataset);
    write_manifest(ctx, o.out, inputs, {o.out});
    return pass ? kExitOk : kExitStageFailure;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

RejectionRule rejection_rule(const std::string& phrases) {
    if (phrases.empty()) return RejectionRule();
    std::vector<std::string> list;
    std::stringstream ss(phrases);
    std::string part;
    while (std::getline(ss, part, ';')) list.push_back(part);
    return validated([&] { return RejectionRule(list); });
}

int cmd_analyze(const Context& ctx, const AnalyzeOpts& o) {
    require_exists(o.input, "analysis input");
    const std::string text = read_file(o.input);
    const std::string summary = o.out + ".summary.txt";
    std::vector<fs::path> outputs{o.out, summary};
    if (o.kind == "gain") {
        const auto scores = parse_scores_csv(text);
        const auto report = gain_report(scores, o.baseline);
        const std::string ratios = o.out + ".ratios.csv";
        write_text(o.out, report.to_csv());
        write_text(ratios, report.ratios_csv());
        write_text(summary, report.summary());
        outputs.emplace_back(ratios);
    } else if (o.kind == "scaling") {
        const auto curves = scaling_report(parse_scores_csv(text));
        write_text(o.out, scaling_csv(curves));
        std::string s;
        for (const auto& c : curves) {
            s += fmt::format("{} / {}: {} point(s), {} degradation(s)\n", c.method, c.benchmark,
                             c.points.size(), c.degradations.size());
            for (std::size_t i : c.degradations) {
                s += fmt::format("  drop between n={} and n={}\n", c.points[i - 1].n_pairs, c.points[i].n_pairs);
            }
        }
        write_text(summary, s);
    } else {
        const auto items = parse_adversarial_jsonl(text);
        AdversarialReport report;
        if (o.judged) {
            auto judge = backend_from(o.judge_config, o.seed);
            report = adversarial_eval_judged(items, *judge, load_prompts(o.templates));
        } else {
            report = adversarial_eval(items, rejection_rule(o.phrases));
        }
        write_text(o.out, report.to_csv());
        write_text(summary, report.summary());
    }
    ctx.info("wrote " + o.out);
    write_manifest(ctx, o.out, {o.input}, outputs);
    return kExitOk;
}

int cmd_eval_adversarial(const Context& ctx, const EvalAdvOpts& o) {
    const auto videos = load_videos(o.videos);
    auto answerer = backend_from(o.backend_config, o.seed);
    auto generator = o.generator_config.empty() ? backend_from(o.backend_config, o.seed)
                                                : backend_from(o.generator_config, o.seed);
    const PromptLibrary prompts = load_prompts(o.templates);
    const FrameLoader loader = frame_loader(o.frames, o.max_edge);

    std::vector<AdversarialResponse> responses;
    std::size_t failures = 0;
    for (const auto& video : videos) {
        std::vector<std::string> frames;
        for (std::size_t idx : select_frames(video, SamplingMode::Dense, static_cast<double>(o.dense_cap))) {
            frames.push_back(loader(video, idx));
        }
        const Completion gen = generator->complete(qa_generation_request(prompts, video, frames));
        std::vector<AdversarialQuestion> questions;
        try {
            if (!gen.ok()) throw Error(ErrorCode::StageFailure, gen.failure->message);
            questions = parse_adversarial_qa(*gen.text);
        } catch (const Error& e) {
            ctx.warn("question generation failed for " + video.video_id + ": " + e.what());
            ++failures;
            continue;
        }
        std::vector<ChatRequest> requests;
        for (const auto& q : questions) requests.push_back(answer_request(video, q, frames));
        const auto answers = answerer->complete_batch(requests);
        for (std::size_t i = 0; i < questions.size(); ++i) {
            if (!answers[i].ok()) {
                ctx.warn("answer failed for " + video.video_id + ": " + answers[i].failure->message);
                ++failures;
                continue;
            }
            responses.push_back(AdversarialResponse{questions[i].mode, questions[i].kind, *answers[i].text,
                                                    questions[i].text, video.video_id});
        }
    }
    std::vector<std::string> lines;
    for (const auto& r : responses) lines.push_back(serialize(r));
    write_lines(o.out, lines);

    AdversarialReport report;
    if (o.judged) {
        auto judge = backend_from(o.judge_config, o.seed);
        report = adversarial_eval_judged(responses, *judge, prompts);
    } else {
        report = adversarial_eval(responses, rejection_rule(o.phrases));
    }
    const std::string report_path = or_default(o.report, o.out, ".report.csv");
    write_text(report_path, report.to_csv());
    ctx.info(fmt::format("{} response(s) scored", responses.size()));
    write_manifest(ctx, o.out, {o.videos}, {o.out, report_path});
    if (failures > 0) {
        ctx.err << json{{"error", {{"code", "STAGE_FAILURE"}, {"failures", failures}}}}.dump() << '\n';
        return kExitStageFailure;
    }
    return kExitOk;
}

// ---------------------------------------------------------------- app

void build_app(CLI::App& app, Options& o) {
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--config", o.config, "TOML config file (flat keys or [subcommand] sections)");
    app.add_flag("--quiet,-q", o.quiet, "Only log warnings and errors");

    auto* gen = app.add_subcommand("generate", "Generate candidate preference pairs");
    add_generate_options(gen, o.generate, false);

    auto* rep = app.add_subcommand("replay", "Regenerate candidates strictly from a recorded corpus");
    add_generate_options(rep, o.replay, true);

    auto* ver = app.add_subcommand("verify", "Filter candidates with a judge model");
    ver->add_option("--candidates", o.verify.candidates, "Candidate pairs (JSON lines)")->required();
    ver->add_option("--out", o.verify.out, "Retained dataset output")->required();
    ver->add_option("--rejects", o.verify.rejects, "Rejects with reasons (default <out>.rejects.jsonl)");
    ver->add_option("--stats", o.verify.stats, "Retention statistics (default <out>.stats.json)");
    ver->add_option("--judge-config", o.verify.judge_config, "Judge backend config (default: mock)");
    ver->add_option("--backend-config", o.verify.backend_config,
                    "Generator backend for regeneration (default: mock)");
    ver->add_option("--max-regen", o.verify.max_regen, "Regeneration rounds per discarded adversary")
        ->capture_default_str();
    ver->add_option("--audit", o.verify.audit, "Write a failure-mode targeting audit of retained pairs");
    ver->add_option("--seed", o.verify.seed, "Mock backend seed")->capture_default_str();
    ver->add_option("--templates", o.verify.templates, "Prompt template directory");
    add_factory_options(ver, o.verify.factory);

    auto* part = app.add_subcommand("partition", "Split a retained dataset by failure mode");
    part->add_option("--dataset", o.partition.dataset, "Retained dataset (JSON lines)")->required();
    part->add_option("--out-dir", o.partition.out_dir, "Directory for the three partition files")->required();

    auto* tr = app.add_subcommand("train", "Train the linear-softmax policy");
    add_data_options(tr, o.train.data);
    tr->add_option("--lr", o.train.lr, "Learning rate")->capture_default_str();
    tr->add_option("--steps", o.train.steps, "Optimizer steps")->capture_default_str();
    tr->add_option("--optimizer", o.train.optimizer, "gd | adam")
        ->check(CLI::IsMember({"gd", "adam"}))
        ->capture_default_str();
    tr->add_option("--batch-size", o.train.batch_size, "Pairs per partition per step; 0 = full batch")
        ->capture_default_str();
    tr->add_option("--init", o.train.init, "Initial policy JSON (default: zeros)");
    tr->add_option("--metrics-out", o.train.metrics_out, "Metrics CSV")->required();
    tr->add_option("--params-out", o.train.params_out, "Trained policy JSON (default <metrics-out>.theta.json)");

    auto* cg = app.add_subcommand("check-grad", "Compare analytic and finite-difference gradients");
    add_data_options(cg, o.check_grad.data);
    cg->add_option("--points", o.check_grad.points, "Random policies to probe")->capture_default_str();
    cg->add_option("--eps", o.check_grad.eps, "Central-difference step")->capture_default_str();
    cg->add_option("--tolerance", o.check_grad.tolerance, "Maximum relative error")->capture_default_str();
    cg->add_option("--out", o.check_grad.out, "Report JSON")->required();

    auto* an = app.add_subcommand("analyze", "Gain, scaling or adversarial-QA reports");
    an->add_option("kind", o.analyze.kind, "gain | scaling | adversarial")
        ->required()
        ->check(CLI::IsMember({"gain", "scaling", "adversarial"}));
    an->add_option("--input", o.analyze.input, "Scores CSV or adversarial responses (JSON lines)")->required();
    an->add_option("--out", o.analyze.out, "Report CSV")->required();
    an->add_option("--baseline", o.analyze.baseline, "Baseline method name")->capture_default_str();
    an->add_option("--phrases", o.analyze.phrases, "Rejection phrases separated by ';'");
    an->add_flag("--judged", o.analyze.judged, "Score adversarial questions with a judge model");
    an->add_option("--judge-config", o.analyze.judge_config, "Judge backend config (default: mock)");
    an->add_option("--templates", o.analyze.templates, "Prompt template directory");
    an->add_option("--seed", o.analyze.seed, "Mock backend seed")->capture_default_str();

    auto* ev = app.add_subcommand("eval-adversarial", "Generate adversarial QA, answer it, and score it");
    ev->add_option("--videos", o.eval_adv.videos, "Directory of *.manifest frame manifests")->required();
    ev->add_option("--out", o.eval_adv.out, "Responses output (JSON lines)")->required();
    ev->add_option("--report", o.eval_adv.report, "Report CSV (default <out>.report.csv)");
    ev->add_option("--backend-config", o.eval_adv.backend_config, "Model under test (default: mock)");
    ev->add_option("--generator-config", o.eval_adv.generator_config,
                   "Question generator (default: the model under test)");
    ev->add_option("--judge-config", o.eval_adv.judge_config, "Judge backend config (default: mock)");
    ev->add_flag("--judged", o.eval_adv.judged, "Score adversarial questions with a judge model");
    ev->add_option("--phrases", o.eval_adv.phrases, "Rejection phrases separated by ';'");
    ev->add_option("--seed", o.eval_adv.seed, "Mock backend seed")->capture_default_str();
    ev->add_option("--templates", o.eval_adv.templates, "Prompt template directory");
    ev->add_option("--dense-cap", o.eval_adv.dense_cap, "Frames sent with each question")->capture_default_str();
    ev->add_option("--max-edge", o.eval_adv.max_edge, "Longest frame edge, pixels")->capture_default_str();
    ev->add_option("--frames", o.eval_adv.frames, "files | placeholder")
        ->check(CLI::IsMember({"files", "placeholder"}))
        ->capture_default_str();

    for (CLI::App* sub : app.get_subcommands({})) {
        for (CLI::Option* opt : sub->get_options()) {
            opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        }
    }
}

void print_error(std::ostream& err, std::string_view code, std::string_view message) {
    err << json{{"error", {{"code", code}, {"message", message}}}}.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"VideoPASTA preference-data pipeline", "pasta"};
    Options o;
    build_app(app, o);

    // Locate --config and the subcommand so file and environment values can be
    // placed ahead of the user's own flags.
    std::string config_path;
    std::optional<std::size_t> sub_index;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const auto& a = args[i];
        if (a == "--config" && i + 1 < args.size()) {
            config_path = args[++i];
        } else if (a.starts_with("--config=")) {
            config_path = a.substr(9);
        } else if (!a.starts_with('-')) {
            sub_index = i;
            break;
        }
    }
    if (config_path.empty()) {
        if (const char* env = std::getenv("PASTA_CONFIG"); env != nullptr) config_path = env;
    }

    std::vector<std::string> full = args;
    try {
        auto file = read_config_file(config_path);
        if (sub_index) {
            CLI::App* sub = nullptr;
            try {
                sub = app.get_subcommand(args[*sub_index]);
            } catch (const CLI::OptionNotFound&) {
                sub = nullptr;
            }
            if (sub != nullptr) {
                const auto extra = injected_args(sub, file);
                full.insert(full.begin() + static_cast<std::ptrdiff_t>(*sub_index) + 1, extra.begin(),
                            extra.end());
                for (const auto& [key, value] : file) {
                    const auto subs = app.get_subcommands({});
                    const bool foreign_section =
                        !key.first.empty() && key.first != sub->get_name() &&
                        std::any_of(subs.begin(), subs.end(),
                                    [&](const CLI::App* s) { return s->get_name() == key.first; });
                    if (!value.used && !foreign_section && !(key.first.empty() && (key.second == "quiet"))) {
                        throw UsageError("unknown config key '" +
                                         (key.first.empty() ? key.second : key.first + "." + key.second) +
                                         "' for " + sub->get_name());
                    }
                }
            }
        }
    } catch (const UsageError& e) {
        print_error(err, "USAGE", e.what());
        return kExitUsage;
    }

    std::vector<std::string> reversed(full.rbegin(), full.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        print_error(err, "USAGE", e.what());
        err << "run 'pasta --help' for usage\n";
        return kExitUsage;
    }

    Context ctx{err, o.quiet, {}, nullptr};
    ctx.sub = app.get_subcommands().front();
    ctx.subcommand = ctx.sub->get_name();
    try {
        if (ctx.subcommand == "generate") return cmd_generate(ctx, o.generate, false);
        if (ctx.subcommand == "replay") return cmd_generate(ctx, o.replay, true);
        if (ctx.subcommand == "verify") return cmd_verify(ctx, o.verify);
        if (ctx.subcommand == "partition") return cmd_partition(ctx, o.partition);
        if (ctx.subcommand == "train") return cmd_train(ctx, o.train);
        if (ctx.subcommand == "check-grad") return cmd_check_grad(ctx, o.check_grad);
        if (ctx.subcommand == "analyze") return cmd_analyze(ctx, o.analyze);
        if (ctx.subcommand == "eval-adversarial") return cmd_eval_adversarial(ctx, o.eval_adv);
    } catch (const UsageError& e) {
        print_error(err, "USAGE", e.what());
        return kExitUsage;
    } catch (const Error& e) {
        print_error(err, to_string(e.code()), e.what());
        return kExitStageFailure;
    } catch (const std::exception& e) {
        print_error(err, "INTERNAL", e.what());
        return kExitStageFailure;
    }
    print_error(err, "USAGE", "unknown subcommand");
    return kExitUsage;
}

}  // namespace pasta::cli
