#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "sscd/decoding.hpp"
#include "sscd/disruptor.hpp"
#include "sscd/surrogate.hpp"
#include "sscd/tensor.hpp"
#include "sscd/training.hpp"

namespace sscd {

// ---------------------------------------------------------------------------
// Feature files
//
//   offset  size  field
//   0       4     magic "SSCD"
//   4       4     format version (u32 LE, currently 1)
//   8       4     T (u32 LE)
//   12      4     N (u32 LE)
//   16      4     d (u32 LE)
//   20      4*T*N*d  binary32 LE payload, frame-major then token-major
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kFeatureFormatVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 20;

std::size_t feature_file_size(std::size_t frames, std::size_t tokens, std::size_t dim) noexcept;

/// Values are narrowed to binary32.
std::vector<std::uint8_t> encode_features(const Tensor3& tensor);
Tensor3 decode_features(std::span<const std::uint8_t> bytes);

void write_features(const std::filesystem::path& path, const Tensor3& tensor);
Tensor3 read_features(const std::filesystem::path& path);

/// Rounds every entry to the nearest binary32 value.
Tensor3 round_to_float(const Tensor3& tensor);

// ---------------------------------------------------------------------------
// Dataset records: one JSON object per line,
//   {"id": "...", "features": "<path>", "prompt": [ids], "answer": [ids]}
// Relative feature paths resolve against the dataset file's directory.
// ---------------------------------------------------------------------------

struct DatasetRecord {
    std::string id;
    std::string feature_path;
    std::vector<TokenId> prompt;
    std::vector<TokenId> answer;

    bool operator==(const DatasetRecord&) const = default;
};

nlohmann::json record_to_json(const DatasetRecord& record);
DatasetRecord record_from_json(const nlohmann::json& j);

std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records);

/// Loads the referenced features and checks token ids against the vocabulary.
TrainingExample load_example(const DatasetRecord& record, const std::filesystem::path& base_dir,
                             std::size_t vocab_size);

// ---------------------------------------------------------------------------
// Checkpoints (binary, little-endian; doubles stored as IEEE-754 binary64)
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
    std::uint32_t format_version = kCheckpointFormatVersion;
    double temperature = kDefaultTemperature;
    double lambda = 5.0;
    SpanPolicy span_policy = SpanPolicy::retrace;
    bool normalize_features = false;
    std::uint64_t train_seed = 0;
    SurrogateParams surrogate;
    DisruptorParams disruptor;
    std::optional<AdamState> optimizer;

    bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Run configuration: defaults < JSON config file < CLI flags.
// ---------------------------------------------------------------------------

struct RunConfig {
    SurrogateDims dims;
    std::uint64_t surrogate_seed = 0;
    TrainConfig train;
    DecodingConfig decoding;

    void validate() const;
};

/// Applies the keys of `j` on top of `base`. Unknown keys are a ConfigError.
RunConfig apply_config_json(RunConfig base, const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});
nlohmann::json run_config_to_json(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    std::size_t frames = 8;
    std::size_t tokens = 4;
    std::size_t dim = 16;
    double rho = 0.9;              // AR(1) correlation between consecutive frames
    double scale = 0.0;            // per-entry std; 0 selects 1/sqrt(dim)
    std::size_t vocab_size = 64;
    std::size_t prompt_len = 4;    // includes the leading BOS
    std::size_t answer_len = 3;    // content tokens; EOS is appended
    std::uint64_t key_seed = 0;    // shared answer rule across a dataset

    void validate() const;
};

/// h_1 ~ N(0, s^2), h_{k+1} = rho h_k + sqrt(1 - rho^2) eps. Answer token i
/// is 3 + argmax_j (m · K_i)_j, where m is the mean feature vector and K_i a
/// fixed key derived from key_seed. Features are rounded to binary32.
TrainingExample gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Writes the bytes to a temporary sibling then renames it into place.
void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void atomic_write(const std::filesystem::path& path, const std::string& text);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace sscd
