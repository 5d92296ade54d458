#include "sscd/cli.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "sscd/decoding.hpp"
#include "sscd/errors.hpp"
#include "sscd/io.hpp"
#include "sscd/st_graph.hpp"
#include "sscd/training.hpp"
#include "sscd/verify.hpp"

namespace sscd {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// Collects JSON-lines metrics for stdout or a metrics file.
class MetricsSink {
public:
    MetricsSink(std::ostream& out, std::optional<std::string> path) : out_(out), path_(std::move(path)) {}

    void emit(const json& record) {
        const std::string line = record.dump() + "\n";
        if (path_) {
            buffer_ += line;
        } else {
            out_ << line;
        }
    }

    void flush() {
        if (path_) atomic_write(*path_, buffer_);
    }

private:
    std::ostream& out_;
    std::optional<std::string> path_;
    std::string buffer_;
};

std::vector<TokenId> parse_token_list(const std::string& text) {
    std::vector<TokenId> ids;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        TokenId v = 0;
        const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
        if (res.ec != std::errc{} || res.ptr != item.data() + item.size()) {
            throw ConfigError("bad token id '" + item + "'");
        }
        ids.push_back(v);
    }
    return ids;
}

// Flags shared by the subcommands that resolve a RunConfig.
struct ConfigFlags {
    std::optional<std::string> config_path;
    std::optional<std::size_t> feature_dim, model_dim, vocab_size, hidden_dim;
    std::optional<std::uint64_t> surrogate_seed;
    std::optional<double> lambda, tau, lr, warmup_ratio, weight_decay;
    std::optional<std::size_t> epochs, batch_size, grad_accum;
    std::optional<std::string> lr_preset;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> span_policy;
    bool normalize_features = false;
    bool lt_on_raw = false;
    std::optional<double> alpha, beta;
    std::optional<std::size_t> max_tokens;
    std::optional<std::string> mode;
    std::optional<std::uint64_t> sample_seed;

    void add_model(CLI::App* app) {
        app->add_option("--config", config_path, "JSON run configuration");
        app->add_option("--feature-dim", feature_dim, "Feature dimension d");
        app->add_option("--model-dim", model_dim, "Surrogate width d_lm");
        app->add_option("--vocab", vocab_size, "Vocabulary size");
        app->add_option("--surrogate-seed", surrogate_seed, "Seed of the frozen surrogate");
        app->add_option("--tau", tau, "Walk temperature");
        app->add_option("--lambda", lambda, "Weight of the semantic loss");
        app->add_option("--span-policy", span_policy, "literal or retrace");
        app->add_flag("--normalize-features", normalize_features, "L2-normalize nodes before affinities");
    }

    void add_train(CLI::App* app) {
        app->add_option("--hidden-dim", hidden_dim, "Disruptor hidden width (0 = d/2)");
        app->add_option("--epochs", epochs);
        app->add_option("--batch-size", batch_size);
        app->add_option("--grad-accum", grad_accum);
        app->add_option("--lr", lr);
        app->add_option("--lr-preset", lr_preset, "desk, video-llava or llava-next-video")
            ->check(CLI::IsMember({"desk", "video-llava", "llava-next-video"}));
        app->add_option("--warmup-ratio", warmup_ratio);
        app->add_option("--weight-decay", weight_decay);
        app->add_option("--seed", seed, "Training seed");
        app->add_flag("--lt-on-raw", lt_on_raw, "Ablation: evaluate L_T on raw features");
    }

    void add_decode(CLI::App* app) {
        app->add_option("--alpha", alpha, "Contrastive strength");
        app->add_option("--beta", beta, "Plausibility threshold in [0, 1]");
        app->add_option("--max-tokens", max_tokens);
        app->add_option("--mode", mode, "greedy or sample");
        app->add_option("--sample-seed", sample_seed);
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (config_path) cfg = load_run_config(*config_path, cfg);
        if (feature_dim) cfg.dims.feature_dim = *feature_dim;
        if (model_dim) cfg.dims.model_dim = *model_dim;
        if (vocab_size) cfg.dims.vocab_size = *vocab_size;
        if (hidden_dim) cfg.train.hidden_dim = *hidden_dim;
        if (surrogate_seed) cfg.surrogate_seed = *surrogate_seed;
        if (lambda) cfg.train.lambda = *lambda;
        if (tau) cfg.train.temperature = *tau;
        if (epochs) cfg.train.epochs = *epochs;
        if (batch_size) cfg.train.batch_size = *batch_size;
        if (grad_accum) cfg.train.grad_accum = *grad_accum;
        if (lr_preset) {
            if (*lr_preset == "desk") cfg.train.lr = kDeskLearningRate;
            else if (*lr_preset == "video-llava") cfg.train.lr = kVideoLlavaLearningRate;
            else cfg.train.lr = kLlavaNextVideoLearningRate;
        }
        if (lr) cfg.train.lr = *lr;
        if (warmup_ratio) cfg.train.warmup_ratio = *warmup_ratio;
        if (weight_decay) cfg.train.weight_decay = *weight_decay;
        if (seed) cfg.train.seed = *seed;
        if (span_policy) cfg.train.span_policy = parse_span_policy(*span_policy);
        if (normalize_features) cfg.train.normalize_features = true;
        if (lt_on_raw) cfg.train.lt_on_raw = true;
        if (alpha) cfg.decoding.alpha = *alpha;
        if (beta) cfg.decoding.beta = *beta;
        if (max_tokens) cfg.decoding.max_tokens = *max_tokens;
        if (mode) cfg.decoding.mode = parse_decode_mode(*mode);
        if (sample_seed) cfg.decoding.sample_seed = *sample_seed;
        cfg.validate();
        return cfg;
    }
};

// Where a single (features, prompt[, answer]) input comes from.
struct InputFlags {
    std::optional<std::string> data;
    std::optional<std::string> record;
    std::optional<std::string> features;
    std::optional<std::string> prompt;
    std::optional<std::string> answer;

    void add(CLI::App* app, bool with_answer) {
        app->add_option("--data", data, "Dataset (JSON lines)");
        app->add_option("--record", record, "Record id or 0-based index within --data");
        app->add_option("--features", features, "Feature file");
        app->add_option("--prompt", prompt, "Comma-separated prompt token ids");
        if (with_answer) app->add_option("--answer", answer, "Comma-separated answer token ids (ending in EOS=1)");
    }

    TrainingExample load(std::size_t vocab_size, bool need_answer) const {
        if (data) {
            if (features || prompt || answer) throw ConfigError("use either --data/--record or --features/--prompt");
            const auto records = read_dataset(*data);
            if (records.empty()) throw ConfigError("dataset is empty");
            const DatasetRecord* chosen = &records.front();
            if (record) {
                chosen = nullptr;
                for (const auto& r : records) {
                    if (r.id == *record) chosen = &r;
                }
                if (!chosen) {
                    std::size_t index = 0;
                    const auto res = std::from_chars(record->data(), record->data() + record->size(), index);
                    if (res.ec != std::errc{} || res.ptr != record->data() + record->size() || index >= records.size()) {
                        throw ConfigError("no record '" + *record + "' in " + *data);
                    }
                    chosen = &records[index];
                }
            }
            return load_example(*chosen, fs::path(*data).parent_path(), vocab_size);
        }
        if (!features) throw ConfigError("an input needs --data or --features");
        TrainingExample ex;
        ex.features = read_features(*features);
        ex.prompt = {prompt ? parse_token_list(*prompt) : std::vector<TokenId>{kBos}, TokenRole::prompt};
        validate_tokens(ex.prompt, vocab_size);
        if (need_answer) {
            if (!answer) throw ConfigError("--answer is required with --features");
            ex.answer = {parse_token_list(*answer), TokenRole::answer};
            if (ex.answer.ids.empty()) throw ConfigError("--answer must not be empty");
            validate_tokens(ex.answer, vocab_size);
        }
        return ex;
    }
};

struct Models {
    SurrogateParams surrogate;
    DisruptorParams disruptor;
};

Models load_models(const std::optional<std::string>& checkpoint, const RunConfig& cfg, bool zero_disruptor_flag) {
    Models m;
    if (checkpoint) {
        const Checkpoint ckpt = read_checkpoint(*checkpoint);
        m.surrogate = ckpt.surrogate;
        m.disruptor = ckpt.disruptor;
    } else {
        m.surrogate = init_surrogate(cfg.dims.feature_dim, cfg.dims.model_dim, cfg.dims.vocab_size, cfg.surrogate_seed);
        const std::size_t dh = cfg.train.hidden_dim == 0 ? default_hidden_dim(cfg.dims.feature_dim) : cfg.train.hidden_dim;
        m.disruptor = zero_disruptor(cfg.dims.feature_dim, dh);
    }
    if (zero_disruptor_flag) m.disruptor = zero_disruptor(m.disruptor.feature_dim(), m.disruptor.hidden_dim());
    return m;
}

json loss_json(const LossBreakdown& loss) {
    return json{{"step", loss.step}, {"l_t", loss.l_t}, {"l_s", loss.l_s}, {"total", loss.total}};
}

// ---------------------------------------------------------------------------

struct GenOptions {
    std::string out_dir;
    std::size_t count = 50;
    SyntheticSpec spec;
    std::uint64_t seed = 0;
};

int cmd_gen_synthetic(const GenOptions& opt, std::ostream& out) {
    opt.spec.validate();
    if (opt.count == 0) throw ConfigError("--count must be >= 1");
    const fs::path dir(opt.out_dir);
    fs::create_directories(dir / "features");
    std::vector<DatasetRecord> records;
    for (std::size_t i = 0; i < opt.count; ++i) {
        std::ostringstream id;
        id << "rec_" << std::setw(4) << std::setfill('0') << i;
        const TrainingExample ex = gen_synthetic(opt.spec, derive_seed(opt.seed, static_cast<std::uint64_t>(i)));
        const std::string rel = "features/" + id.str() + ".sscdf";
        write_features(dir / rel, ex.features);
        records.push_back({id.str(), rel, ex.prompt.ids, ex.answer.ids});
    }
    write_dataset(dir / "dataset.jsonl", records);
    out << json{{"event", "gen-synthetic"},
                {"dataset", (dir / "dataset.jsonl").string()},
                {"count", opt.count},
                {"frames", opt.spec.frames},
                {"tokens", opt.spec.tokens},
                {"dim", opt.spec.dim},
                {"rho", opt.spec.rho},
                {"seed", opt.seed},
                {"key_seed", opt.spec.key_seed}}
               .dump()
        << "\n";
    return kExitOk;
}

struct TrainOptions {
    std::string data;
    std::string out;
    std::optional<std::string> metrics;
};

int cmd_train(const TrainOptions& opt, const ConfigFlags& flags, std::ostream& out) {
    const RunConfig cfg = flags.resolve();
    const auto records = read_dataset(opt.data);
    if (records.empty()) throw ConfigError("training dataset is empty");
    std::vector<TrainingExample> dataset;
    for (const auto& r : records) {
        dataset.push_back(load_example(r, fs::path(opt.data).parent_path(), cfg.dims.vocab_size));
        if (dataset.back().features.dim() != cfg.dims.feature_dim) {
            throw ConfigError("record '" + r.id + "' has feature dim " + std::to_string(dataset.back().features.dim()) +
                              ", config says " + std::to_string(cfg.dims.feature_dim));
        }
    }
    const SurrogateParams sp =
        init_surrogate(cfg.dims.feature_dim, cfg.dims.model_dim, cfg.dims.vocab_size, cfg.surrogate_seed);

    MetricsSink sink(out, opt.metrics);
    json config_record = run_config_to_json(cfg);
    config_record["event"] = "config";
    sink.emit(config_record);

    const TrainResult result = train(dataset, sp, cfg.train, [&](const TrainStep& step) {
        json rec = loss_json(step.loss);
        rec["event"] = "step";
        rec["lr"] = step.lr;
        rec["grad_norm"] = step.grad_norm;
        sink.emit(rec);
    });

    Checkpoint ckpt;
    ckpt.temperature = cfg.train.temperature;
    ckpt.lambda = cfg.train.lambda;
    ckpt.span_policy = cfg.train.span_policy;
    ckpt.normalize_features = cfg.train.normalize_features;
    ckpt.train_seed = cfg.train.seed;
    ckpt.surrogate = sp;
    ckpt.disruptor = result.params;
    ckpt.optimizer = result.optimizer;
    write_checkpoint(opt.out, ckpt);

    json done{{"event", "done"}, {"checkpoint", opt.out}, {"steps", result.history.size()}};
    if (!result.history.empty()) {
        done["initial_total"] = result.history.front().loss.total;
        done["final_total"] = result.history.back().loss.total;
    }
    sink.emit(done);
    sink.flush();
    return kExitOk;
}

struct LossOptions {
    std::optional<std::string> checkpoint;
    bool zero_disruptor = false;
    InputFlags input;
};

int cmd_compute_losses(const LossOptions& opt, const ConfigFlags& flags, std::ostream& out) {
    RunConfig cfg = flags.resolve();
    if (opt.checkpoint) {
        // The checkpoint's graph settings apply unless overridden on the command line.
        const Checkpoint ckpt = read_checkpoint(*opt.checkpoint);
        if (!flags.tau && !flags.config_path) cfg.train.temperature = ckpt.temperature;
        if (!flags.lambda && !flags.config_path) cfg.train.lambda = ckpt.lambda;
        if (!flags.span_policy && !flags.config_path) cfg.train.span_policy = ckpt.span_policy;
        if (!flags.normalize_features && !flags.config_path) cfg.train.normalize_features = ckpt.normalize_features;
    }
    const Models models = load_models(opt.checkpoint, cfg, opt.zero_disruptor);
    const TrainingExample ex = opt.input.load(models.surrogate.dims().vocab_size, true);

    const Tensor3 h_neg = disrupt(ex.features, models.disruptor);
    const SpanSchedule schedule = make_schedule(ex.features.frames(), cfg.train.span_policy);
    const auto graph = cfg.train.graph_options();
    const SpatiotemporalLoss lt = spatiotemporal_loss(cfg.train.lt_on_raw ? ex.features : h_neg,
                                                      cfg.train.temperature, schedule, graph);
    const SpatiotemporalLoss lt_raw = spatiotemporal_loss(ex.features, cfg.train.temperature, schedule, graph);
    LossBreakdown loss;
    loss.l_t = lt.value;
    loss.l_s = semantic_loss(h_neg, ex.prompt, ex.answer, models.surrogate);
    loss.total = loss.l_t + cfg.train.lambda * loss.l_s;

    json rec = loss_json(loss);
    rec["event"] = "losses";
    rec["lambda"] = cfg.train.lambda;
    rec["temperature"] = cfg.train.temperature;
    rec["span_policy"] = to_string(cfg.train.span_policy);
    rec["l_t_raw"] = lt_raw.value;
    rec["l_s_raw"] = semantic_loss(ex.features, ex.prompt, ex.answer, models.surrogate);
    json spans = json::array();
    for (const auto& c : lt.per_span) spans.push_back({{"k", c.k}, {"z", c.z}, {"value", c.value}});
    rec["per_span"] = spans;
    out << rec.dump() << "\n";
    return kExitOk;
}

struct DecodeOptions {
    std::optional<std::string> checkpoint;
    bool baseline_only = false;
    bool zero_disruptor = false;
    InputFlags input;
};

int cmd_decode(const DecodeOptions& opt, const ConfigFlags& flags, std::ostream& out) {
    const RunConfig cfg = flags.resolve();
    const Models models = load_models(opt.checkpoint, cfg, opt.zero_disruptor);
    const TrainingExample ex = opt.input.load(models.surrogate.dims().vocab_size, false);

    const DecodeResult base = baseline_decode(ex.features, ex.prompt, models.surrogate, cfg.decoding);
    json rec{{"event", "decode"},
             {"alpha", cfg.decoding.alpha},
             {"beta", cfg.decoding.beta},
             {"mode", to_string(cfg.decoding.mode)},
             {"baseline_tokens", base.tokens.ids}};
    if (opt.baseline_only) {
        rec["tokens"] = base.tokens.ids;
        rec["variant"] = "baseline";
    } else {
        const DecodeResult result = decode(ex.features, ex.prompt, models.disruptor, models.surrogate, cfg.decoding);
        rec["tokens"] = result.tokens.ids;
        rec["variant"] = "sscd";
        json steps = json::array();
        for (const auto& s : result.steps) {
            steps.push_back({{"token", s.token}, {"retained", s.retained}, {"kl", s.kl_calibrated_vs_baseline}});
        }
        rec["steps"] = steps;
    }
    out << rec.dump() << "\n";
    return kExitOk;
}

int cmd_verify(std::uint64_t seed, std::ostream& out) {
    bool all = true;
    for (const auto& r : run_oracle_suite(seed)) {
        all = all && r.passed;
        out << json{{"event", "check"},
                    {"name", r.name},
                    {"passed", r.passed},
                    {"measured", r.measured},
                    {"tolerance", r.tolerance},
                    {"detail", r.detail}}
                   .dump()
            << "\n";
    }
    out << json{{"event", "verify"}, {"passed", all}}.dump() << "\n";
    return all ? kExitOk : kExitFailure;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
    const Checkpoint ckpt = read_checkpoint(path);
    const auto dims = ckpt.surrogate.dims();
    const auto flat = ckpt.disruptor.flatten();
    json rec{{"event", "checkpoint"},
             {"path", path},
             {"format_version", ckpt.format_version},
             {"feature_dim", dims.feature_dim},
             {"model_dim", dims.model_dim},
             {"vocab_size", dims.vocab_size},
             {"hidden_dim", ckpt.disruptor.hidden_dim()},
             {"temperature", ckpt.temperature},
             {"lambda", ckpt.lambda},
             {"span_policy", to_string(ckpt.span_policy)},
             {"normalize_features", ckpt.normalize_features},
             {"surrogate_seed", ckpt.surrogate.seed},
             {"train_seed", ckpt.train_seed},
             {"disruptor_parameters", ckpt.disruptor.parameter_count()},
             {"surrogate_parameters", ckpt.surrogate.parameter_count()},
             {"disruptor_l2", std::sqrt(dot(flat, flat))},
             {"optimizer_step", ckpt.optimizer ? json(ckpt.optimizer->step) : json(nullptr)}};
    out << rec.dump() << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Spatiotemporal-semantic contrastive decoding at desk scale", "sscd"};
    app.require_subcommand(1);

    GenOptions gen;
    auto* gen_cmd = app.add_subcommand("gen-synthetic", "Write a synthetic dataset of AR(1) feature videos");
    gen_cmd->add_option("--out", gen.out_dir, "Output directory")->required();
    gen_cmd->add_option("--count", gen.count);
    gen_cmd->add_option("--frames", gen.spec.frames);
    gen_cmd->add_option("--tokens", gen.spec.tokens);
    gen_cmd->add_option("--dim", gen.spec.dim);
    gen_cmd->add_option("--rho", gen.spec.rho);
    gen_cmd->add_option("--scale", gen.spec.scale, "Per-entry std (0 = 1/sqrt(dim))");
    gen_cmd->add_option("--vocab", gen.spec.vocab_size);
    gen_cmd->add_option("--prompt-len", gen.spec.prompt_len);
    gen_cmd->add_option("--answer-len", gen.spec.answer_len);
    gen_cmd->add_option("--seed", gen.seed);
    gen_cmd->add_option("--key-seed", gen.spec.key_seed);

    TrainOptions train_opt;
    ConfigFlags train_flags;
    auto* train_cmd = app.add_subcommand("train", "Train the disruptor against a frozen surrogate");
    train_cmd->add_option("--data", train_opt.data, "Dataset (JSON lines)")->required();
    train_cmd->add_option("--out", train_opt.out, "Checkpoint path")->required();
    train_cmd->add_option("--metrics", train_opt.metrics, "Write metrics here instead of stdout");
    train_flags.add_model(train_cmd);
    train_flags.add_train(train_cmd);

    LossOptions loss_opt;
    ConfigFlags loss_flags;
    auto* loss_cmd = app.add_subcommand("compute-losses", "Print L_T, L_S and per-span cycle scores for one input");
    loss_cmd->add_option("--checkpoint", loss_opt.checkpoint);
    loss_cmd->add_flag("--zero-disruptor", loss_opt.zero_disruptor, "Replace the disruptor with all-zero weights");
    loss_opt.input.add(loss_cmd, true);
    loss_flags.add_model(loss_cmd);
    loss_cmd->add_flag("--lt-on-raw", loss_flags.lt_on_raw);

    DecodeOptions dec_opt;
    ConfigFlags dec_flags;
    auto* dec_cmd = app.add_subcommand("decode", "Decode with and without contrastive calibration");
    dec_cmd->add_option("--checkpoint", dec_opt.checkpoint);
    dec_cmd->add_flag("--baseline", dec_opt.baseline_only, "Vanilla decoding only");
    dec_cmd->add_flag("--zero-disruptor", dec_opt.zero_disruptor, "Replace the disruptor with all-zero weights");
    dec_opt.input.add(dec_cmd, false);
    dec_cmd->add_option("--config", dec_flags.config_path, "JSON run configuration");
    dec_cmd->add_option("--feature-dim", dec_flags.feature_dim);
    dec_cmd->add_option("--model-dim", dec_flags.model_dim);
    dec_cmd->add_option("--vocab", dec_flags.vocab_size);
    dec_cmd->add_option("--surrogate-seed", dec_flags.surrogate_seed);
    dec_flags.add_decode(dec_cmd);

    std::uint64_t verify_seed = 0;
    auto* verify_cmd = app.add_subcommand("verify", "Run the oracle suite");
    verify_cmd->add_option("--seed", verify_seed);

    std::string inspect_path;
    auto* inspect_cmd = app.add_subcommand("inspect-checkpoint", "Summarize a checkpoint");
    inspect_cmd->add_option("--checkpoint", inspect_path)->required();

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    try {
        if (*gen_cmd) return cmd_gen_synthetic(gen, out);
        if (*train_cmd) return cmd_train(train_opt, train_flags, out);
        if (*loss_cmd) return cmd_compute_losses(loss_opt, loss_flags, out);
        if (*dec_cmd) return cmd_decode(dec_opt, dec_flags, out);
        if (*verify_cmd) return cmd_verify(verify_seed, out);
        if (*inspect_cmd) return cmd_inspect(inspect_path, out);
    } catch (const IoError& e) {
        err << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::invalid_argument& e) {
        err << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace sscd
