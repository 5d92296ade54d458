#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "sscd/decoding.hpp"
#include "sscd/errors.hpp"
#include "sscd/verify.hpp"

using namespace sscd;

namespace {

std::vector<double> random_logits(Rng& rng, std::size_t n, double scale) {
    std::vector<double> v(n);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

}  // namespace

TEST_CASE("calibrated logits") {
    const std::vector<double> pos{2, 1, 0}, neg{0, 1, 2};
    const auto c = calibrated_logits(pos, neg, 0.5);
    CHECK(c == std::vector<double>{3, 1, -1});
    CHECK(calibrated_logits(pos, neg, 0.0) == pos);
    CHECK(calibrated_logits(pos, pos, 0.8) == pos);
    CHECK_THROWS_AS(calibrated_logits(pos, std::vector<double>{1, 2}, 0.5), ShapeError);

    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        const auto a = random_logits(rng, 8, 3.0);
        const auto b = random_logits(rng, 8, 3.0);
        const double alpha = 2.0 * rng.uniform();
        const auto got = calibrated_logits(a, b, alpha);
        for (std::size_t j = 0; j < 8; ++j)
            CHECK(got[j] == doctest::Approx((1.0 + alpha) * a[j] - alpha * b[j]).epsilon(1e-12));
        CHECK(calibrated_logits(a, a, alpha) == a);
    }
}

TEST_CASE("plausibility set") {
    const std::vector<double> p{0.7, 0.2, 0.1};
    CHECK(plausibility_set(p, 0.5) == std::vector<TokenId>{0});
    CHECK(plausibility_set(p, 0.0) == std::vector<TokenId>{0, 1, 2});
    CHECK(plausibility_set(p, 1.0) == std::vector<TokenId>{0});
    const std::vector<double> tie{0.4, 0.2, 0.4};
    CHECK(plausibility_set(tie, 1.0) == std::vector<TokenId>{0, 2});
}

TEST_CASE("sscd step examples") {
    const std::vector<double> f{2, 1, 0};
    DecodingConfig cfg;
    cfg.beta = 0.0;
    for (double alpha : {0.0, 0.4, 0.8, 3.0}) {
        cfg.alpha = alpha;
        const auto d = sscd_step(f, f, cfg).dense();
        CHECK(d[0] == doctest::Approx(0.6652).epsilon(1e-4));
        CHECK(d[1] == doctest::Approx(0.2447).epsilon(1e-3));
        CHECK(d[2] == doctest::Approx(0.0900).epsilon(1e-3));
    }

    Rng rng(2);
    for (int i = 0; i < 50; ++i) {
        const auto a = random_logits(rng, 10, 2.0);
        const auto b = random_logits(rng, 10, 2.0);
        cfg.alpha = 0.0;
        cfg.beta = 0.0;
        const auto d = sscd_step(a, b, cfg).dense();
        const auto ref = softmax(a);
        for (std::size_t j = 0; j < 10; ++j) CHECK(std::abs(d[j] - ref[j]) <= 1e-12);

        cfg.alpha = 5.0;
        cfg.beta = 1.0;
        const auto one = sscd_step(a, b, cfg);
        const auto top = static_cast<TokenId>(std::max_element(a.begin(), a.end()) - a.begin());
        CHECK(one.retained == std::vector<TokenId>{top});
        CHECK(one.argmax() == top);
        CHECK(one.dense()[static_cast<std::size_t>(top)] == 1.0);
    }
}

TEST_CASE("step distribution properties") {
    Rng rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.uniform_int(30);
        const auto a = random_logits(rng, n, 4.0);
        const auto b = random_logits(rng, n, 4.0);
        DecodingConfig cfg;
        cfg.alpha = 2.0 * rng.uniform();
        cfg.beta = rng.uniform();
        const auto dist = sscd_step(a, b, cfg);
        REQUIRE_FALSE(dist.retained.empty());
        CHECK(std::abs(std::accumulate(dist.probs.begin(), dist.probs.end(), 0.0) - 1.0) <= 1e-9);

        // The baseline argmax always survives the threshold.
        const auto top = static_cast<TokenId>(std::max_element(a.begin(), a.end()) - a.begin());
        CHECK(std::binary_search(dist.retained.begin(), dist.retained.end(), top));

        // Masked entries are exactly zero; the rest is a softmax of the retained sub-vector.
        const auto dense = dist.dense();
        const auto cal = calibrated_logits(a, b, cfg.alpha);
        std::vector<double> sub;
        for (TokenId t : dist.retained) sub.push_back(cal[static_cast<std::size_t>(t)]);
        const auto ref = softmax(sub);
        for (std::size_t j = 0; j < n; ++j) {
            const auto it = std::lower_bound(dist.retained.begin(), dist.retained.end(), static_cast<TokenId>(j));
            if (it == dist.retained.end() || *it != static_cast<TokenId>(j)) {
                CHECK(dense[j] == 0.0);
            } else {
                CHECK(std::abs(dense[j] - ref[static_cast<std::size_t>(it - dist.retained.begin())]) <= 1e-12);
            }
        }

        const double b2 = rng.uniform();
        const auto p = softmax(a);
        const auto wide = plausibility_set(p, std::min(cfg.beta, b2));
        const auto narrow = plausibility_set(p, std::max(cfg.beta, b2));
        CHECK(std::includes(wide.begin(), wide.end(), narrow.begin(), narrow.end()));
    }
}

TEST_CASE("greedy ties go to the lowest id") {
    const std::vector<double> f{1.0, 3.0, 3.0, 0.0};
    DecodingConfig cfg;
    cfg.beta = 0.0;
    CHECK(sscd_step(f, f, cfg).argmax() == 1);
}

TEST_CASE("inverse cdf sampling") {
    const std::vector<double> f{0.0, std::log(3.0)};
    DecodingConfig cfg;
    cfg.beta = 0.0;
    const auto d = sscd_step(f, f, cfg);
    CHECK(d.sample(0.0) == 0);
    CHECK(d.sample(0.2499) == 0);
    CHECK(d.sample(0.2501) == 1);
    CHECK(d.sample(0.9999999) == 1);
}

TEST_CASE("kl divergence") {
    const std::vector<double> p{0.5, 0.5, 0.0}, q{0.25, 0.25, 0.5};
    CHECK(kl_divergence(p, q) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(kl_divergence(q, q) == 0.0);
}

TEST_CASE("config validation") {
    DecodingConfig cfg;
    cfg.validate();
    CHECK(cfg.alpha == 0.8);
    CHECK(cfg.beta == 0.1);
    CHECK(cfg.max_tokens == 512);
    CHECK(cfg.mode == DecodeMode::greedy);
    auto bad = cfg;
    bad.beta = 1.1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.alpha = -0.1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.max_tokens = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(parse_decode_mode("sample") == DecodeMode::sample);
    CHECK_THROWS_AS(parse_decode_mode("beam"), ConfigError);
}

TEST_CASE("decode reductions") {
    InstanceShape shape;
    shape.frames = 4;
    shape.tokens = 3;
    shape.dim = 8;
    shape.model_dim = 16;
    shape.vocab_size = 32;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Instance inst = make_instance(shape, s);
        const auto& ex = inst.example;
        DecodingConfig cfg;
        cfg.max_tokens = 20;
        const auto base = baseline_decode(ex.features, ex.prompt, inst.surrogate, cfg);
        CHECK(base.tokens.role == TokenRole::generated);
        CHECK(base.tokens.ids.size() <= 20);
        CHECK((base.tokens.ids.size() == 20 || base.tokens.ids.back() == kEos));

        cfg.alpha = 0.0;
        CHECK(decode(ex.features, ex.prompt, inst.disruptor, inst.surrogate, cfg).tokens.ids == base.tokens.ids);
        for (double alpha : {0.4, 0.8, 2.0}) {
            cfg.alpha = alpha;
            CHECK(decode(ex.features, ex.prompt, zero_disruptor(8, 4), inst.surrogate, cfg).tokens.ids ==
                  base.tokens.ids);
            CHECK(decode_with_negative(ex.features, ex.features, ex.prompt, inst.surrogate, cfg).tokens.ids ==
                  base.tokens.ids);
        }

        cfg.max_tokens = 1;
        CHECK(baseline_decode(ex.features, ex.prompt, inst.surrogate, cfg).tokens.ids.size() == 1);
    }
}

TEST_CASE("sampling is reproducible per seed") {
    const Instance inst = make_instance({}, 9);
    const auto& ex = inst.example;
    DecodingConfig cfg;
    cfg.mode = DecodeMode::sample;
    cfg.max_tokens = 30;
    cfg.beta = 0.0;
    cfg.sample_seed = 4;
    const auto a = decode(ex.features, ex.prompt, inst.disruptor, inst.surrogate, cfg);
    const auto b = decode(ex.features, ex.prompt, inst.disruptor, inst.surrogate, cfg);
    CHECK(a.tokens.ids == b.tokens.ids);
    CHECK(baseline_decode(ex.features, ex.prompt, inst.surrogate, cfg).tokens.ids ==
          baseline_decode(ex.features, ex.prompt, inst.surrogate, cfg).tokens.ids);

    // With no truncation, alpha = 0 sampling replays the baseline draws.
    cfg.alpha = 0.0;
    CHECK(decode(ex.features, ex.prompt, inst.disruptor, inst.surrogate, cfg).tokens.ids ==
          baseline_decode(ex.features, ex.prompt, inst.surrogate, cfg).tokens.ids);

    bool differs = false;
    for (std::uint64_t seed = 0; seed < 10 && !differs; ++seed) {
        cfg.sample_seed = seed;
        differs = decode(ex.features, ex.prompt, inst.disruptor, inst.surrogate, cfg).tokens.ids != a.tokens.ids;
    }
    CHECK(differs);
}

TEST_CASE("step diagnostics") {
    const Instance inst = make_instance({}, 10);
    const auto& ex = inst.example;
    DecodingConfig cfg;
    cfg.max_tokens = 10;
    const auto r = decode(ex.features, ex.prompt, inst.disruptor, inst.surrogate, cfg);
    REQUIRE(r.steps.size() == r.tokens.ids.size());
    for (std::size_t i = 0; i < r.steps.size(); ++i) {
        CHECK(r.steps[i].token == r.tokens.ids[i]);
        CHECK(r.steps[i].retained >= 1);
        CHECK(r.steps[i].kl_calibrated_vs_baseline >= 0.0);
    }
}
