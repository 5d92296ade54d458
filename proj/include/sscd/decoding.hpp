#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sscd/disruptor.hpp"
#include "sscd/surrogate.hpp"
#include "sscd/tensor.hpp"

namespace sscd {

enum class DecodeMode { greedy, sample };

const char* to_string(DecodeMode mode) noexcept;
DecodeMode parse_decode_mode(const std::string& name);

struct DecodingConfig {
    double alpha = 0.8;
    double beta = 0.1;
    std::size_t max_tokens = 512;
    DecodeMode mode = DecodeMode::greedy;
    std::uint64_t sample_seed = 0;

    void validate() const;
};

/// Constrained next-token distribution: zero outside `retained`.
struct StepDistribution {
    std::vector<TokenId> retained;  // ascending ids
    std::vector<double> probs;      // aligned with retained
    std::vector<double> logits;     // calibrated logits, aligned with retained
    std::size_t vocab_size = 0;

    /// Dense vector over the whole vocabulary.
    std::vector<double> dense() const;
    /// Highest-scoring retained token (by calibrated logit); lowest id wins ties.
    TokenId argmax() const;
    /// Inverse-CDF draw over retained tokens in ascending id order.
    TokenId sample(double u) const;
};

/// f_pos + alpha (f_pos - f_neg), i.e. (1 + alpha) f_pos - alpha f_neg.
std::vector<double> calibrated_logits(std::span<const double> f_pos, std::span<const double> f_neg, double alpha);

/// {t : p_base[t] >= beta * max p_base}.
std::vector<TokenId> plausibility_set(std::span<const double> p_base, double beta);

StepDistribution sscd_step(std::span<const double> f_pos, std::span<const double> f_neg, const DecodingConfig& cfg);

/// KL(p || q) over dense vectors; terms with p = 0 contribute nothing.
double kl_divergence(std::span<const double> p, std::span<const double> q);

struct StepDiagnostics {
    TokenId token = 0;
    std::size_t retained = 0;
    double kl_calibrated_vs_baseline = 0.0;
};

struct DecodeResult {
    TokenSequence tokens{{}, TokenRole::generated};
    std::vector<StepDiagnostics> steps;
};

DecodeResult decode(const Tensor3& h, const TokenSequence& prompt, const DisruptorParams& dp,
                    const SurrogateParams& sp, const DecodingConfig& cfg);

/// Contrastive decoding against explicitly supplied negative features.
DecodeResult decode_with_negative(const Tensor3& h, const Tensor3& h_neg, const TokenSequence& prompt,
                                  const SurrogateParams& sp, const DecodingConfig& cfg);

/// Vanilla autoregressive decoding on the positive branch only.
DecodeResult baseline_decode(const Tensor3& h, const TokenSequence& prompt, const SurrogateParams& sp,
                             const DecodingConfig& cfg);

}  // namespace sscd
