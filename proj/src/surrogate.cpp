#include "sscd/surrogate.hpp"

#include <cmath>
#include <string>

#include "sscd/errors.hpp"

namespace sscd {

namespace {

struct Forward {
    std::vector<double> pre;     // mix · u
    std::vector<double> hidden;  // tanh(pre)
    std::vector<double> logits;
};

std::vector<double> pooled_visual(const VisualTokens& z) {
    const std::size_t dm = z.tokens.cols();
    std::vector<double> v(dm, 0.0);
    if (z.tokens.rows() == 0) return v;
    const double norm = 1.0 / static_cast<double>(z.tokens.rows());
    for (std::size_t t = 0; t < z.frames; ++t) {
        const double w = frame_weight(t + 1, z.frames) * norm;
        for (std::size_t n = 0; n < z.per_frame; ++n) {
            const auto row = z.tokens.row(t * z.per_frame + n);
            for (std::size_t c = 0; c < dm; ++c) v[c] += w * row[c];
        }
    }
    return v;
}

void add_pooled_prefix(std::vector<double>& u, const TokenSequence& prompt, const TokenSequence& prefix,
                       std::size_t prefix_len, const Matrix& embed) {
    const std::size_t total = prompt.ids.size() + prefix_len;
    if (total == 0) return;
    const double norm = 1.0 / static_cast<double>(total);
    std::size_t pos = 0;
    auto accumulate = [&](TokenId id) {
        const double w = norm / static_cast<double>(pos + 1);
        const auto row = embed.row(static_cast<std::size_t>(id));
        for (std::size_t c = 0; c < u.size(); ++c) u[c] += w * row[c];
        ++pos;
    };
    for (TokenId id : prompt.ids) accumulate(id);
    for (std::size_t i = 0; i < prefix_len; ++i) accumulate(prefix.ids[i]);
}

Forward forward(const std::vector<double>& visual, const TokenSequence& prompt, const TokenSequence& prefix,
                std::size_t prefix_len, const SurrogateParams& params) {
    std::vector<double> u = visual;
    add_pooled_prefix(u, prompt, prefix, prefix_len, params.embed);
    const std::size_t dm = params.mix.rows();
    Forward f;
    f.pre.assign(dm, 0.0);
    f.hidden.assign(dm, 0.0);
    for (std::size_t l = 0; l < dm; ++l) {
        f.pre[l] = dot(params.mix.row(l), u);
        f.hidden[l] = std::tanh(f.pre[l]);
    }
    const std::size_t vocab = params.out.cols();
    f.logits.assign(vocab, 0.0);
    for (std::size_t l = 0; l < dm; ++l) {
        const auto out_row = params.out.row(l);
        for (std::size_t j = 0; j < vocab; ++j) f.logits[j] += out_row[j] * f.hidden[l];
    }
    return f;
}

void check_visual(const VisualTokens& z, const SurrogateParams& params) {
    if (z.tokens.cols() != params.mix.rows()) throw ShapeError("visual tokens do not match the model width");
    if (z.tokens.rows() != z.frames * z.per_frame) throw ShapeError("visual token count does not match T*N");
}

Matrix gaussian_init(std::size_t rows, std::size_t cols, std::uint64_t seed, std::string_view label,
                     std::size_t fan_in) {
    return seeded_gaussian(rows, cols, derive_seed(seed, label), 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

}  // namespace

double frame_weight(std::size_t k, std::size_t frames) noexcept {
    return 2.0 * static_cast<double>(k) / static_cast<double>(frames + 1);
}

void SurrogateParams::validate() const {
    const std::size_t vocab = embed.rows();
    const std::size_t dm = embed.cols();
    if (vocab < 4) throw ShapeError("vocabulary needs at least 4 tokens");
    if (proj.cols() != dm || mix.rows() != dm || mix.cols() != dm || out.rows() != dm || out.cols() != vocab) {
        throw ShapeError("surrogate parameter shapes are inconsistent");
    }
    for (const Matrix* m : {&embed, &proj, &mix, &out}) {
        if (!all_finite(m->data())) throw NumericalError("surrogate parameters contain non-finite values");
    }
}

SurrogateParams init_surrogate(std::size_t d, std::size_t d_lm, std::size_t vocab_size, std::uint64_t seed) {
    if (d < 2 || d_lm < 2) throw ParameterError("surrogate dims must be >= 2");
    if (vocab_size < 4) throw ParameterError("vocabulary needs at least 4 tokens");
    SurrogateParams p;
    p.embed = gaussian_init(vocab_size, d_lm, seed, "surrogate.embed", d_lm);
    p.proj = gaussian_init(d, d_lm, seed, "surrogate.proj", d);
    p.mix = gaussian_init(d_lm, d_lm, seed, "surrogate.mix", d_lm);
    p.out = gaussian_init(d_lm, vocab_size, seed, "surrogate.out", d_lm);
    p.seed = seed;
    return p;
}

void validate_tokens(const TokenSequence& seq, std::size_t vocab_size) {
    for (TokenId id : seq.ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
            throw ParameterError("token id " + std::to_string(id) + " outside vocabulary of size " +
                                 std::to_string(vocab_size));
        }
    }
}

VisualTokens project(const Tensor3& h, const SurrogateParams& params) {
    if (h.dim() != params.proj.rows()) {
        throw ShapeError("feature dim " + std::to_string(h.dim()) + " does not match projector input " +
                         std::to_string(params.proj.rows()));
    }
    return {matmul(h.flatten(), params.proj), h.frames(), h.tokens()};
}

std::vector<double> logits(const VisualTokens& z, const TokenSequence& prompt, const TokenSequence& prefix,
                           const SurrogateParams& params) {
    check_visual(z, params);
    const std::size_t vocab = params.embed.rows();
    validate_tokens(prompt, vocab);
    validate_tokens(prefix, vocab);
    return forward(pooled_visual(z), prompt, prefix, prefix.ids.size(), params).logits;
}

double sequence_log_likelihood(const VisualTokens& z, const TokenSequence& prompt, const TokenSequence& answer,
                               const SurrogateParams& params) {
    if (answer.ids.empty()) throw ParameterError("answer sequence must be non-empty");
    check_visual(z, params);
    const std::size_t vocab = params.embed.rows();
    validate_tokens(prompt, vocab);
    validate_tokens(answer, vocab);
    const std::vector<double> visual = pooled_visual(z);
    double total = 0.0;
    for (std::size_t t = 0; t < answer.ids.size(); ++t) {
        const Forward f = forward(visual, prompt, answer, t, params);
        total += f.logits[static_cast<std::size_t>(answer.ids[t])] - log_sum_exp(f.logits);
    }
    return total;
}

TokenLikelihoodGrad sequence_log_likelihood_grad(const VisualTokens& z, const TokenSequence& prompt,
                                                 const TokenSequence& answer, const SurrogateParams& params) {
    if (answer.ids.empty()) throw ParameterError("answer sequence must be non-empty");
    check_visual(z, params);
    const std::size_t vocab = params.embed.rows();
    validate_tokens(prompt, vocab);
    validate_tokens(answer, vocab);
    const std::size_t dm = params.mix.rows();
    const std::vector<double> visual = pooled_visual(z);

    TokenLikelihoodGrad out;
    std::vector<double> grad_visual(dm, 0.0);
    for (std::size_t t = 0; t < answer.ids.size(); ++t) {
        const Forward f = forward(visual, prompt, answer, t, params);
        const std::size_t target = static_cast<std::size_t>(answer.ids[t]);
        out.value += f.logits[target] - log_sum_exp(f.logits);

        std::vector<double> g_logits = softmax(f.logits);
        for (double& g : g_logits) g = -g;
        g_logits[target] += 1.0;

        std::vector<double> g_pre(dm);
        for (std::size_t l = 0; l < dm; ++l) {
            g_pre[l] = dot(params.out.row(l), g_logits) * (1.0 - f.hidden[l] * f.hidden[l]);
        }
        for (std::size_t l = 0; l < dm; ++l) {
            const auto mix_row = params.mix.row(l);
            for (std::size_t m = 0; m < dm; ++m) grad_visual[m] += mix_row[m] * g_pre[l];
        }
    }

    out.grad = Matrix(z.tokens.rows(), dm);
    const double norm = 1.0 / static_cast<double>(z.tokens.rows());
    for (std::size_t t = 0; t < z.frames; ++t) {
        const double w = frame_weight(t + 1, z.frames) * norm;
        for (std::size_t n = 0; n < z.per_frame; ++n) {
            auto row = out.grad.row(t * z.per_frame + n);
            for (std::size_t c = 0; c < dm; ++c) row[c] = w * grad_visual[c];
        }
    }
    return out;
}

LikelihoodGrad sequence_log_likelihood_grad(const Tensor3& h, const TokenSequence& prompt,
                                            const TokenSequence& answer, const SurrogateParams& params) {
    const TokenLikelihoodGrad by_token = sequence_log_likelihood_grad(project(h, params), prompt, answer, params);
    // z = h · proj  =>  dh = dz · projᵀ
    const Matrix grad_flat = matmul(by_token.grad, transpose(params.proj));
    return {by_token.value, Tensor3(h.frames(), h.tokens(), h.dim(), grad_flat.data())};
}

}  // namespace sscd
