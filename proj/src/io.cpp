#include "sscd/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <system_error>

#include "sscd/errors.hpp"

namespace sscd {

namespace {

using json = nlohmann::json;

constexpr char kFeatureMagic[4] = {'S', 'S', 'C', 'D'};
constexpr char kCheckpointMagic[4] = {'S', 'S', 'C', 'K'};

class ByteWriter {
public:
    void bytes(const char* data, std::size_t n) { out_.insert(out_.end(), data, data + n); }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void f64s(std::span<const double> values) {
        for (double v : values) f64(v);
    }

    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> data, const char* what) : data_(data), what_(what) {}

    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) {
            throw IoError(IoErrorCode::truncated, std::string(what_) + " ends after " + std::to_string(data_.size()) +
                                                      " bytes");
        }
    }
    bool magic(const char (&expected)[4]) {
        need(4);
        const bool ok = std::memcmp(data_.data() + pos_, expected, 4) == 0;
        pos_ += 4;
        return ok;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    void f64s(std::span<double> out) {
        need(8 * out.size());
        for (double& v : out) v = f64();
    }
    void finish() const {
        if (pos_ != data_.size()) {
            throw IoError(IoErrorCode::trailing_bytes,
                          std::string(what_) + " has " + std::to_string(data_.size() - pos_) + " unexpected bytes");
        }
    }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
    const char* what_;
};

std::uint32_t to_u32(std::size_t v, const char* field) {
    if (v > 0xffffffffULL) throw ShapeError(std::string(field) + " does not fit in u32");
    return static_cast<std::uint32_t>(v);
}

std::vector<TokenId> token_list(const json& j, const char* field) {
    if (!j.contains(field) || !j.at(field).is_array()) {
        throw IoError(IoErrorCode::malformed_record, std::string("record field '") + field + "' must be an array");
    }
    std::vector<TokenId> ids;
    for (const auto& v : j.at(field)) {
        if (!v.is_number_integer()) {
            throw IoError(IoErrorCode::malformed_record, std::string("record field '") + field + "' holds a non-integer");
        }
        ids.push_back(v.get<TokenId>());
    }
    return ids;
}

template <typename T>
T get_field(const json& value, const std::string& key) {
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (!value.is_boolean()) throw ConfigError("");
        } else if constexpr (std::is_integral_v<T>) {
            if (!value.is_number_unsigned() && !(value.is_number_integer() && value.get<std::int64_t>() >= 0)) {
                throw ConfigError("");
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!value.is_number()) throw ConfigError("");
        } else {
            if (!value.is_string()) throw ConfigError("");
        }
        return value.get<T>();
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t feature_file_size(std::size_t frames, std::size_t tokens, std::size_t dim) noexcept {
    return kFeatureHeaderBytes + 4 * frames * tokens * dim;
}

std::vector<std::uint8_t> encode_features(const Tensor3& tensor) {
    ByteWriter w;
    w.bytes(kFeatureMagic, 4);
    w.u32(kFeatureFormatVersion);
    w.u32(to_u32(tensor.frames(), "T"));
    w.u32(to_u32(tensor.tokens(), "N"));
    w.u32(to_u32(tensor.dim(), "d"));
    for (double v : tensor.data()) w.f32(static_cast<float>(v));
    return w.take();
}

Tensor3 decode_features(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "feature file");
    if (!r.magic(kFeatureMagic)) throw IoError(IoErrorCode::bad_magic, "not a feature file");
    const std::uint32_t version = r.u32();
    if (version != kFeatureFormatVersion) {
        throw IoError(IoErrorCode::version_mismatch, "feature format version " + std::to_string(version));
    }
    const std::size_t frames = r.u32();
    const std::size_t tokens = r.u32();
    const std::size_t dim = r.u32();
    const std::size_t count = frames * tokens * dim;
    // Header is validated against the real payload length before allocating.
    if (r.remaining() < 4 * count) {
        throw IoError(IoErrorCode::truncated, "feature payload has " + std::to_string(r.remaining()) +
                                                  " bytes, header promises " + std::to_string(4 * count));
    }
    std::vector<double> data(count);
    for (double& v : data) v = static_cast<double>(r.f32());
    r.finish();
    return Tensor3(frames, tokens, dim, std::move(data));
}

void write_features(const std::filesystem::path& path, const Tensor3& tensor) {
    atomic_write(path, encode_features(tensor));
}

Tensor3 read_features(const std::filesystem::path& path) { return decode_features(read_file(path)); }

Tensor3 round_to_float(const Tensor3& tensor) {
    Tensor3 out = tensor;
    for (double& v : out.data()) v = static_cast<double>(static_cast<float>(v));
    return out;
}

// ---------------------------------------------------------------------------

json record_to_json(const DatasetRecord& record) {
    return json{{"id", record.id}, {"features", record.feature_path}, {"prompt", record.prompt},
                {"answer", record.answer}};
}

DatasetRecord record_from_json(const json& j) {
    if (!j.is_object()) throw IoError(IoErrorCode::malformed_record, "record must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (key != "id" && key != "features" && key != "prompt" && key != "answer") {
            throw IoError(IoErrorCode::malformed_record, "unknown record field '" + key + "'");
        }
    }
    if (!j.contains("id") || !j.at("id").is_string() || !j.contains("features") || !j.at("features").is_string()) {
        throw IoError(IoErrorCode::malformed_record, "record needs string fields 'id' and 'features'");
    }
    DatasetRecord r;
    r.id = j.at("id").get<std::string>();
    r.feature_path = j.at("features").get<std::string>();
    r.prompt = token_list(j, "prompt");
    r.answer = token_list(j, "answer");
    if (r.answer.empty() || r.answer.back() != kEos) {
        throw IoError(IoErrorCode::malformed_record, "record '" + r.id + "': answer must end with EOS");
    }
    return r;
}

std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(IoErrorCode::open_failed, path.string());
    std::vector<DatasetRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw IoError(IoErrorCode::malformed_record, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        records.push_back(record_from_json(j));
    }
    return records;
}

void write_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
    std::string text;
    for (const auto& r : records) text += record_to_json(r).dump() + "\n";
    atomic_write(path, text);
}

TrainingExample load_example(const DatasetRecord& record, const std::filesystem::path& base_dir,
                             std::size_t vocab_size) {
    std::filesystem::path feature_path(record.feature_path);
    if (feature_path.is_relative()) feature_path = base_dir / feature_path;
    TrainingExample ex;
    ex.features = read_features(feature_path);
    ex.prompt = {record.prompt, TokenRole::prompt};
    ex.answer = {record.answer, TokenRole::answer};
    validate_tokens(ex.prompt, vocab_size);
    validate_tokens(ex.answer, vocab_size);
    return ex;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    ckpt.surrogate.validate();
    ckpt.disruptor.validate();
    const SurrogateDims dims = ckpt.surrogate.dims();
    if (ckpt.disruptor.feature_dim() != dims.feature_dim) {
        throw ShapeError("checkpoint disruptor and surrogate disagree on the feature dim");
    }
    ByteWriter w;
    w.bytes(kCheckpointMagic, 4);
    w.u32(ckpt.format_version);
    w.u32(to_u32(dims.feature_dim, "d"));
    w.u32(to_u32(dims.model_dim, "d_lm"));
    w.u32(to_u32(dims.vocab_size, "vocab"));
    w.u32(to_u32(ckpt.disruptor.hidden_dim(), "d_h"));
    w.f64(ckpt.temperature);
    w.f64(ckpt.lambda);
    w.u32(ckpt.span_policy == SpanPolicy::literal ? 0 : 1);
    w.u32(ckpt.normalize_features ? 1 : 0);
    w.u64(ckpt.surrogate.seed);
    w.u64(ckpt.train_seed);
    w.f64s(ckpt.disruptor.flatten());
    w.f64s(ckpt.surrogate.embed.data());
    w.f64s(ckpt.surrogate.proj.data());
    w.f64s(ckpt.surrogate.mix.data());
    w.f64s(ckpt.surrogate.out.data());
    if (ckpt.optimizer) {
        const AdamState& opt = *ckpt.optimizer;
        const std::size_t n = ckpt.disruptor.parameter_count();
        if (opt.m.size() != n || opt.v.size() != n) throw ShapeError("optimizer state length mismatch");
        w.u32(1);
        w.u64(opt.step);
        w.f64s(opt.m);
        w.f64s(opt.v);
    } else {
        w.u32(0);
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "checkpoint");
    if (!r.magic(kCheckpointMagic)) throw IoError(IoErrorCode::bad_magic, "not a checkpoint");
    Checkpoint ckpt;
    ckpt.format_version = r.u32();
    if (ckpt.format_version != kCheckpointFormatVersion) {
        throw IoError(IoErrorCode::version_mismatch, "checkpoint format version " + std::to_string(ckpt.format_version));
    }
    const std::size_t d = r.u32();
    const std::size_t d_lm = r.u32();
    const std::size_t vocab = r.u32();
    const std::size_t d_h = r.u32();
    ckpt.temperature = r.f64();
    ckpt.lambda = r.f64();
    const std::uint32_t policy = r.u32();
    if (policy > 1) throw IoError(IoErrorCode::malformed_record, "unknown span policy code");
    ckpt.span_policy = policy == 0 ? SpanPolicy::literal : SpanPolicy::retrace;
    const std::uint32_t normalize = r.u32();
    if (normalize > 1) throw IoError(IoErrorCode::malformed_record, "bad normalize flag");
    ckpt.normalize_features = normalize == 1;
    ckpt.surrogate.seed = r.u64();
    ckpt.train_seed = r.u64();

    // Size check before allocating anything proportional to the header dims.
    const double expected = 8.0 * (static_cast<double>(d) * d_h * 2 + d_h + d) +
                            8.0 * (static_cast<double>(vocab) * d_lm + static_cast<double>(d) * d_lm +
                                   static_cast<double>(d_lm) * d_lm + static_cast<double>(d_lm) * vocab) +
                            4.0;
    if (static_cast<double>(r.remaining()) < expected) {
        throw IoError(IoErrorCode::truncated, "checkpoint parameter block is incomplete");
    }

    ckpt.disruptor = zero_disruptor(d, d_h);
    std::vector<double> flat(ckpt.disruptor.parameter_count());
    r.f64s(flat);
    ckpt.disruptor.assign_flat(flat);
    ckpt.surrogate.embed = Matrix(vocab, d_lm);
    ckpt.surrogate.proj = Matrix(d, d_lm);
    ckpt.surrogate.mix = Matrix(d_lm, d_lm);
    ckpt.surrogate.out = Matrix(d_lm, vocab);
    r.f64s(ckpt.surrogate.embed.data());
    r.f64s(ckpt.surrogate.proj.data());
    r.f64s(ckpt.surrogate.mix.data());
    r.f64s(ckpt.surrogate.out.data());
    const std::uint32_t has_opt = r.u32();
    if (has_opt > 1) throw IoError(IoErrorCode::malformed_record, "bad optimizer flag");
    if (has_opt == 1) {
        AdamState opt;
        opt.step = r.u64();
        opt.m.resize(flat.size());
        opt.v.resize(flat.size());
        r.f64s(opt.m);
        r.f64s(opt.v);
        ckpt.optimizer = std::move(opt);
    }
    r.finish();
    ckpt.surrogate.validate();
    ckpt.disruptor.validate();
    return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    atomic_write(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

// ---------------------------------------------------------------------------

void RunConfig::validate() const {
    if (dims.feature_dim < 2 || dims.model_dim < 2) throw ConfigError("feature_dim and model_dim must be >= 2");
    if (dims.vocab_size < 4) throw ConfigError("vocab_size must be >= 4");
    train.validate();
    decoding.validate();
}

RunConfig apply_config_json(RunConfig cfg, const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key == "feature_dim") cfg.dims.feature_dim = get_field<std::size_t>(value, key);
        else if (key == "model_dim") cfg.dims.model_dim = get_field<std::size_t>(value, key);
        else if (key == "vocab_size") cfg.dims.vocab_size = get_field<std::size_t>(value, key);
        else if (key == "hidden_dim") cfg.train.hidden_dim = get_field<std::size_t>(value, key);
        else if (key == "surrogate_seed") cfg.surrogate_seed = get_field<std::uint64_t>(value, key);
        else if (key == "lambda") cfg.train.lambda = get_field<double>(value, key);
        else if (key == "temperature") cfg.train.temperature = get_field<double>(value, key);
        else if (key == "epochs") cfg.train.epochs = get_field<std::size_t>(value, key);
        else if (key == "batch_size") cfg.train.batch_size = get_field<std::size_t>(value, key);
        else if (key == "grad_accum") cfg.train.grad_accum = get_field<std::size_t>(value, key);
        else if (key == "lr") cfg.train.lr = get_field<double>(value, key);
        else if (key == "warmup_ratio") cfg.train.warmup_ratio = get_field<double>(value, key);
        else if (key == "weight_decay") cfg.train.weight_decay = get_field<double>(value, key);
        else if (key == "seed") cfg.train.seed = get_field<std::uint64_t>(value, key);
        else if (key == "span_policy") cfg.train.span_policy = parse_span_policy(get_field<std::string>(value, key));
        else if (key == "normalize_features") cfg.train.normalize_features = get_field<bool>(value, key);
        else if (key == "lt_on_raw") cfg.train.lt_on_raw = get_field<bool>(value, key);
        else if (key == "alpha") cfg.decoding.alpha = get_field<double>(value, key);
        else if (key == "beta") cfg.decoding.beta = get_field<double>(value, key);
        else if (key == "max_tokens") cfg.decoding.max_tokens = get_field<std::size_t>(value, key);
        else if (key == "mode") cfg.decoding.mode = parse_decode_mode(get_field<std::string>(value, key));
        else if (key == "sample_seed") cfg.decoding.sample_seed = get_field<std::uint64_t>(value, key);
        else throw ConfigError("unknown config key '" + key + "'");
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError(IoErrorCode::open_failed, path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return apply_config_json(std::move(base), j);
}

json run_config_to_json(const RunConfig& cfg) {
    return json{
        {"feature_dim", cfg.dims.feature_dim},
        {"model_dim", cfg.dims.model_dim},
        {"vocab_size", cfg.dims.vocab_size},
        {"hidden_dim", cfg.train.hidden_dim},
        {"surrogate_seed", cfg.surrogate_seed},
        {"lambda", cfg.train.lambda},
        {"temperature", cfg.train.temperature},
        {"epochs", cfg.train.epochs},
        {"batch_size", cfg.train.batch_size},
        {"grad_accum", cfg.train.grad_accum},
        {"lr", cfg.train.lr},
        {"warmup_ratio", cfg.train.warmup_ratio},
        {"weight_decay", cfg.train.weight_decay},
        {"seed", cfg.train.seed},
        {"span_policy", to_string(cfg.train.span_policy)},
        {"normalize_features", cfg.train.normalize_features},
        {"lt_on_raw", cfg.train.lt_on_raw},
        {"alpha", cfg.decoding.alpha},
        {"beta", cfg.decoding.beta},
        {"max_tokens", cfg.decoding.max_tokens},
        {"mode", to_string(cfg.decoding.mode)},
        {"sample_seed", cfg.decoding.sample_seed},
    };
}

// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
    if (frames < 2 || tokens < 2 || dim < 2) throw ConfigError("synthetic dims need T, N, d >= 2");
    if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must be in [0, 1)");
    if (!(scale >= 0.0) || !std::isfinite(scale)) throw ConfigError("scale must be >= 0");
    if (vocab_size < 4) throw ConfigError("vocab_size must be >= 4");
    if (prompt_len < 1) throw ConfigError("prompt_len must be >= 1");
}

TrainingExample gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    const double s = spec.scale > 0.0 ? spec.scale : 1.0 / std::sqrt(static_cast<double>(spec.dim));
    const double innovation = std::sqrt(1.0 - spec.rho * spec.rho);

    Rng feature_rng(derive_seed(seed, "synthetic.features"));
    Tensor3 h(spec.frames, spec.tokens, spec.dim);
    for (std::size_t n = 0; n < spec.tokens; ++n)
        for (std::size_t c = 0; c < spec.dim; ++c) h(0, n, c) = s * feature_rng.normal();
    for (std::size_t t = 1; t < spec.frames; ++t)
        for (std::size_t n = 0; n < spec.tokens; ++n)
            for (std::size_t c = 0; c < spec.dim; ++c)
                h(t, n, c) = spec.rho * h(t - 1, n, c) + innovation * s * feature_rng.normal();
    h = round_to_float(h);

    std::vector<double> mean(spec.dim, 0.0);
    const double norm = 1.0 / static_cast<double>(spec.frames * spec.tokens);
    for (std::size_t t = 0; t < spec.frames; ++t)
        for (std::size_t n = 0; n < spec.tokens; ++n)
            for (std::size_t c = 0; c < spec.dim; ++c) mean[c] += norm * h(t, n, c);

    TrainingExample ex;
    ex.features = std::move(h);
    ex.prompt.role = TokenRole::prompt;
    ex.answer.role = TokenRole::answer;
    const std::size_t content = spec.vocab_size - 3;

    Rng prompt_rng(derive_seed(seed, "synthetic.prompt"));
    ex.prompt.ids.push_back(kBos);
    for (std::size_t i = 1; i < spec.prompt_len; ++i) {
        ex.prompt.ids.push_back(static_cast<TokenId>(3 + prompt_rng.uniform_int(content)));
    }

    for (std::size_t i = 0; i < spec.answer_len; ++i) {
        const Matrix key = seeded_gaussian(spec.dim, content, derive_seed(derive_seed(spec.key_seed, "synthetic.key"), i));
        std::size_t best = 0;
        double best_score = 0.0;
        for (std::size_t j = 0; j < content; ++j) {
            double score = 0.0;
            for (std::size_t c = 0; c < spec.dim; ++c) score += mean[c] * key(c, j);
            if (j == 0 || score > best_score) {
                best = j;
                best_score = score;
            }
        }
        ex.answer.ids.push_back(static_cast<TokenId>(3 + best));
    }
    ex.answer.ids.push_back(kEos);
    return ex;
}

// ---------------------------------------------------------------------------

void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError(IoErrorCode::open_failed, tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError(IoErrorCode::write_failed, tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError(IoErrorCode::write_failed, path.string() + ": " + ec.message());
}

void atomic_write(const std::filesystem::path& path, const std::string& text) {
    atomic_write(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoErrorCode::open_failed, path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace sscd
