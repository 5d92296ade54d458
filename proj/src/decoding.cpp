#include "sscd/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sscd/errors.hpp"

namespace sscd {

namespace {

TokenId first_argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return static_cast<TokenId>(best);
}

}  // namespace

const char* to_string(DecodeMode mode) noexcept { return mode == DecodeMode::greedy ? "greedy" : "sample"; }

DecodeMode parse_decode_mode(const std::string& name) {
    if (name == "greedy") return DecodeMode::greedy;
    if (name == "sample") return DecodeMode::sample;
    throw ConfigError("unknown decode mode '" + name + "' (expected greedy or sample)");
}

void DecodingConfig::validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a finite value >= 0");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must be in [0, 1]");
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
}

std::vector<double> StepDistribution::dense() const {
    std::vector<double> out(vocab_size, 0.0);
    for (std::size_t i = 0; i < retained.size(); ++i) out[static_cast<std::size_t>(retained[i])] = probs[i];
    return out;
}

TokenId StepDistribution::argmax() const {
    const std::vector<double>& score = logits.size() == probs.size() ? logits : probs;
    std::size_t best = 0;
    for (std::size_t i = 1; i < score.size(); ++i) {
        if (score[i] > score[best]) best = i;
    }
    return retained[best];
}

TokenId StepDistribution::sample(double u) const {
    double cumulative = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        cumulative += probs[i];
        if (u < cumulative) return retained[i];
    }
    // u landed in the rounding slack above the final cumulative sum.
    for (std::size_t i = probs.size(); i-- > 0;) {
        if (probs[i] > 0.0) return retained[i];
    }
    return retained.back();
}

std::vector<double> calibrated_logits(std::span<const double> f_pos, std::span<const double> f_neg, double alpha) {
    if (f_pos.size() != f_neg.size()) throw ShapeError("calibrated_logits: logit vectors differ in length");
    std::vector<double> out(f_pos.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f_pos[i] + alpha * (f_pos[i] - f_neg[i]);
    return out;
}

std::vector<TokenId> plausibility_set(std::span<const double> p_base, double beta) {
    if (p_base.empty()) throw ShapeError("plausibility_set: empty distribution");
    const double threshold = beta * *std::max_element(p_base.begin(), p_base.end());
    std::vector<TokenId> kept;
    for (std::size_t i = 0; i < p_base.size(); ++i) {
        if (p_base[i] >= threshold) kept.push_back(static_cast<TokenId>(i));
    }
    return kept;
}

StepDistribution sscd_step(std::span<const double> f_pos, std::span<const double> f_neg, const DecodingConfig& cfg) {
    const std::vector<double> calibrated = calibrated_logits(f_pos, f_neg, cfg.alpha);
    StepDistribution dist;
    dist.vocab_size = f_pos.size();
    dist.retained = plausibility_set(softmax(f_pos), cfg.beta);

    dist.logits.reserve(dist.retained.size());
    for (TokenId id : dist.retained) dist.logits.push_back(calibrated[static_cast<std::size_t>(id)]);
    dist.probs = softmax(dist.logits);
    return dist;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw ShapeError("kl_divergence: length mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return kl;
}

DecodeResult decode_with_negative(const Tensor3& h, const Tensor3& h_neg, const TokenSequence& prompt,
                                  const SurrogateParams& sp, const DecodingConfig& cfg) {
    cfg.validate();
    if (!h.same_shape(h_neg)) throw ShapeError("negative features must match the positive features' shape");
    const VisualTokens z = project(h, sp);
    const VisualTokens z_neg = project(h_neg, sp);
    Rng rng(derive_seed(cfg.sample_seed, "decode.sample"));

    DecodeResult out;
    while (out.tokens.ids.size() < cfg.max_tokens) {
        const std::vector<double> f_pos = logits(z, prompt, out.tokens, sp);
        const std::vector<double> f_neg = logits(z_neg, prompt, out.tokens, sp);
        const StepDistribution dist = sscd_step(f_pos, f_neg, cfg);

        StepDiagnostics diag;
        diag.token = cfg.mode == DecodeMode::greedy ? dist.argmax() : dist.sample(rng.uniform());
        diag.retained = dist.retained.size();
        diag.kl_calibrated_vs_baseline = kl_divergence(dist.dense(), softmax(f_pos));
        out.tokens.ids.push_back(diag.token);
        out.steps.push_back(diag);
        if (diag.token == kEos) break;
    }
    return out;
}

DecodeResult decode(const Tensor3& h, const TokenSequence& prompt, const DisruptorParams& dp,
                    const SurrogateParams& sp, const DecodingConfig& cfg) {
    return decode_with_negative(h, disrupt(h, dp), prompt, sp, cfg);
}

DecodeResult baseline_decode(const Tensor3& h, const TokenSequence& prompt, const SurrogateParams& sp,
                             const DecodingConfig& cfg) {
    cfg.validate();
    const VisualTokens z = project(h, sp);
    Rng rng(derive_seed(cfg.sample_seed, "decode.sample"));

    DecodeResult out;
    while (out.tokens.ids.size() < cfg.max_tokens) {
        const std::vector<double> f_pos = logits(z, prompt, out.tokens, sp);
        StepDiagnostics diag;
        if (cfg.mode == DecodeMode::greedy) {
            diag.token = first_argmax(f_pos);
        } else {
            StepDistribution full;
            full.vocab_size = f_pos.size();
            full.probs = softmax(f_pos);
            for (std::size_t i = 0; i < f_pos.size(); ++i) full.retained.push_back(static_cast<TokenId>(i));
            diag.token = full.sample(rng.uniform());
        }
        diag.retained = f_pos.size();
        out.tokens.ids.push_back(diag.token);
        out.steps.push_back(diag);
        if (diag.token == kEos) break;
    }
    return out;
}

}  // namespace sscd
