#include <cmath>
#include <numeric>

#include "doctest.h"
#include "sscd/decoding.hpp"
#include "sscd/errors.hpp"
#include "sscd/surrogate.hpp"

using namespace sscd;

namespace {

TokenSequence prompt_of(std::vector<TokenId> ids) { return {std::move(ids), TokenRole::prompt}; }
TokenSequence answer_of(std::vector<TokenId> ids) { return {std::move(ids), TokenRole::answer}; }

double per_step_log_likelihood(const VisualTokens& z, const TokenSequence& x, const TokenSequence& y,
                               const SurrogateParams& sp) {
    double total = 0.0;
    for (std::size_t t = 0; t < y.ids.size(); ++t) {
        TokenSequence prefix{{y.ids.begin(), y.ids.begin() + static_cast<std::ptrdiff_t>(t)}, TokenRole::generated};
        const auto f = logits(z, x, prefix, sp);
        const auto p = softmax(f);
        total += std::log(p[static_cast<std::size_t>(y.ids[t])]);
    }
    return total;
}

}  // namespace

TEST_CASE("init is seeded and scaled") {
    const auto a = init_surrogate(16, 32, 64, 3);
    CHECK(a == init_surrogate(16, 32, 64, 3));
    CHECK_FALSE(a == init_surrogate(16, 32, 64, 4));
    CHECK(a.dims() == SurrogateDims{16, 32, 64});
    a.validate();

    const auto big = init_surrogate(16, 32, 320, 5);  // 10240 embedding entries
    double sq = 0.0;
    for (double v : big.embed.data()) sq += v * v;
    const double std_emp = std::sqrt(sq / static_cast<double>(big.embed.size()));
    CHECK(std::abs(std_emp - 1.0 / std::sqrt(32.0)) < 0.2 / std::sqrt(32.0));
}

TEST_CASE("project") {
    auto sp = init_surrogate(4, 4, 16, 1);
    sp.proj = Matrix::identity(4);
    const Tensor3 h = seeded_tensor(3, 2, 4, 2);
    const auto z = project(h, sp);
    CHECK(z.tokens == h.flatten());
    CHECK(z.frames == 3);
    CHECK(z.per_frame == 2);

    const auto sp2 = init_surrogate(4, 8, 16, 1);
    const auto zero = project(Tensor3(3, 2, 4), sp2);
    for (double v : zero.tokens.data()) CHECK(v == 0.0);

    const auto z2 = project(h, sp2);
    const Matrix ref = matmul(h.flatten(), sp2.proj);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(z2.tokens.data()[i] - ref.data()[i]) <= 1e-12);

    CHECK_THROWS_AS(project(Tensor3(3, 2, 5), sp2), ShapeError);
}

TEST_CASE("logits are deterministic, finite and order sensitive") {
    const auto sp = init_surrogate(4, 8, 16, 7);
    const Tensor3 h = seeded_tensor(3, 2, 4, 8);
    const auto z = project(h, sp);
    const auto x = prompt_of({kBos, 5, 6});
    const TokenSequence none{{}, TokenRole::generated};
    CHECK(logits(z, x, none, sp) == logits(z, x, none, sp));

    // Swap frames 1 and 3.
    Tensor3 swapped = h;
    swapped.set_frame(0, h.frame(2));
    swapped.set_frame(2, h.frame(0));
    const auto a = logits(z, x, none, sp);
    const auto b = logits(project(swapped, sp), x, none, sp);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    CHECK(diff > 1e-6);

    // Prompt order matters as well.
    const auto c = logits(z, prompt_of({kBos, 6, 5}), none, sp);
    diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - c[i]));
    CHECK(diff > 1e-6);

    Tensor3 huge = h;
    for (double& v : huge.data()) v *= 1e3;
    CHECK(all_finite(logits(project(huge, sp), x, none, sp)));

    CHECK_THROWS_AS(logits(z, prompt_of({kBos, 16}), none, sp), ParameterError);
}

TEST_CASE("sequence log-likelihood") {
    auto sp = init_surrogate(4, 8, 16, 9);
    const auto z = project(seeded_tensor(3, 2, 4, 10), sp);
    const auto x = prompt_of({kBos, 4});

    auto flat = sp;
    flat.out = Matrix(8, 16, 0.0);
    CHECK(sequence_log_likelihood(z, x, answer_of({7}), flat) == doctest::Approx(std::log(1.0 / 16.0)).epsilon(1e-14));

    const auto y = answer_of({7, 3, 9, kEos});
    CHECK(std::abs(sequence_log_likelihood(z, x, y, sp) - per_step_log_likelihood(z, x, y, sp)) <= 1e-10);

    double prev = 0.0;
    for (std::size_t len = 1; len <= y.ids.size(); ++len) {
        const auto part = answer_of({y.ids.begin(), y.ids.begin() + static_cast<std::ptrdiff_t>(len)});
        const double v = sequence_log_likelihood(z, x, part, sp);
        CHECK(v <= prev);
        prev = v;
    }
    CHECK_THROWS_AS(sequence_log_likelihood(z, x, answer_of({}), sp), ParameterError);
}

TEST_CASE("likelihood gradient against central differences") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto sp = init_surrogate(4, 8, 16, derive_seed(s, "sp"));
        const Tensor3 h = seeded_tensor(2, 2, 4, derive_seed(s, "h"));
        const auto x = prompt_of({kBos, 5});
        const auto y = answer_of({3, 11, kEos});

        const auto z = project(h, sp);
        const auto gz = sequence_log_likelihood_grad(z, x, y, sp);
        CHECK(gz.value == doctest::Approx(sequence_log_likelihood(z, x, y, sp)).epsilon(1e-14));
        const double eps = 1e-6;
        for (std::size_t i = 0; i < z.tokens.size(); ++i) {
            VisualTokens zp = z, zm = z;
            zp.tokens.data()[i] += eps;
            zm.tokens.data()[i] -= eps;
            const double num =
                (sequence_log_likelihood(zp, x, y, sp) - sequence_log_likelihood(zm, x, y, sp)) / (2.0 * eps);
            const double a = gz.grad.data()[i];
            CHECK(std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6}) < 1e-4);
        }

        const auto gh = sequence_log_likelihood_grad(h, x, y, sp);
        for (std::size_t i = 0; i < h.size(); ++i) {
            Tensor3 hp = h, hm = h;
            hp.data()[i] += eps;
            hm.data()[i] -= eps;
            const double num = (sequence_log_likelihood(project(hp, sp), x, y, sp) -
                                sequence_log_likelihood(project(hm, sp), x, y, sp)) /
                               (2.0 * eps);
            const double a = gh.grad.data()[i];
            CHECK(std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6}) < 1e-4);
        }
    }
}

TEST_CASE("visual content changes greedy decoding") {
    const auto sp = init_surrogate(16, 32, 64, 0);
    const auto x = prompt_of({kBos, 10, 20, 30});
    DecodingConfig cfg;
    cfg.max_tokens = 8;
    const auto a = baseline_decode(seeded_tensor(8, 4, 16, 1, 0.25), x, sp, cfg);
    const auto b = baseline_decode(seeded_tensor(8, 4, 16, 2, 0.25), x, sp, cfg);
    CHECK(a.tokens.ids != b.tokens.ids);
}

TEST_CASE("frame weights average to one") {
    for (std::size_t frames = 1; frames <= 9; ++frames) {
        double sum = 0.0;
        for (std::size_t k = 1; k <= frames; ++k) sum += frame_weight(k, frames);
        CHECK(sum / static_cast<double>(frames) == doctest::Approx(1.0).epsilon(1e-14));
    }
}
