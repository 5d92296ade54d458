#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sscd/tensor.hpp"

namespace sscd {

using TokenId = std::int32_t;

inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kPad = 2;

enum class TokenRole { prompt, answer, generated };

struct TokenSequence {
    std::vector<TokenId> ids;
    TokenRole role = TokenRole::prompt;
};

struct SurrogateDims {
    std::size_t feature_dim = 16;  // d
    std::size_t model_dim = 32;    // d_lm
    std::size_t vocab_size = 64;

    bool operator==(const SurrogateDims&) const = default;
};

/// Frozen stand-in for the projector and the language model head.
///
/// logits = outᵀ · tanh(mix · (v + p)), where v is a frame-weighted mean of
/// the projected visual tokens (frame k of T weighted 2k/(T+1)) and p is the
/// mean of the prompt+prefix embeddings, token at position q weighted
/// 1/(q+1). Both weightings make the model order-sensitive.
struct SurrogateParams {
    Matrix embed;  // vocab x d_lm
    Matrix proj;   // d x d_lm
    Matrix mix;    // d_lm x d_lm
    Matrix out;    // d_lm x vocab
    std::uint64_t seed = 0;

    SurrogateDims dims() const noexcept { return {proj.rows(), proj.cols(), embed.rows()}; }
    std::size_t parameter_count() const noexcept {
        return embed.size() + proj.size() + mix.size() + out.size();
    }
    /// Throws if shapes are inconsistent or any value is non-finite.
    void validate() const;

    bool operator==(const SurrogateParams&) const = default;
};

/// Projected visual tokens, (frames*tokens) x d_lm, frame-major.
struct VisualTokens {
    Matrix tokens;
    std::size_t frames = 0;
    std::size_t per_frame = 0;
};

SurrogateParams init_surrogate(std::size_t d, std::size_t d_lm, std::size_t vocab_size, std::uint64_t seed);

void validate_tokens(const TokenSequence& seq, std::size_t vocab_size);

VisualTokens project(const Tensor3& h, const SurrogateParams& params);

std::vector<double> logits(const VisualTokens& z, const TokenSequence& prompt, const TokenSequence& prefix,
                           const SurrogateParams& params);

double sequence_log_likelihood(const VisualTokens& z, const TokenSequence& prompt, const TokenSequence& answer,
                               const SurrogateParams& params);

/// Log-likelihood and its gradient with respect to the visual tokens.
struct TokenLikelihoodGrad {
    double value = 0.0;
    Matrix grad;  // same shape as z.tokens
};

TokenLikelihoodGrad sequence_log_likelihood_grad(const VisualTokens& z, const TokenSequence& prompt,
                                                 const TokenSequence& answer, const SurrogateParams& params);

/// Log-likelihood and its gradient with respect to the raw features `h`
/// (through the frozen projector).
struct LikelihoodGrad {
    double value = 0.0;
    Tensor3 grad;
};

LikelihoodGrad sequence_log_likelihood_grad(const Tensor3& h, const TokenSequence& prompt,
                                            const TokenSequence& answer, const SurrogateParams& params);

/// Weight applied to frame k (1-based) of `frames` when pooling visual tokens.
double frame_weight(std::size_t k, std::size_t frames) noexcept;

}  // namespace sscd
