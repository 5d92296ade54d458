#include "sscd/verify.hpp"

#include <algorithm>
#include <cmath>

#include "sscd/decoding.hpp"
#include "sscd/io.hpp"
#include "sscd/st_graph.hpp"

namespace sscd {

namespace {

double max_abs_diff(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

CheckResult at_most(std::string name, double measured, double tolerance, std::string detail = {}) {
    return {std::move(name), measured <= tolerance, measured, tolerance, std::move(detail)};
}

CheckResult holds(std::string name, bool ok, std::string detail = {}) {
    return {std::move(name), ok, ok ? 0.0 : 1.0, 0.0, std::move(detail)};
}

}  // namespace

Instance make_instance(const InstanceShape& shape, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.frames = shape.frames;
    spec.tokens = shape.tokens;
    spec.dim = shape.dim;
    spec.rho = shape.rho;
    spec.vocab_size = shape.vocab_size;
    spec.answer_len = shape.answer_len;
    spec.prompt_len = 3;
    Instance inst;
    inst.example = gen_synthetic(spec, derive_seed(seed, "instance.example"));
    inst.surrogate = init_surrogate(shape.dim, shape.model_dim, shape.vocab_size, derive_seed(seed, "instance.lm"));
    const std::size_t dh = default_hidden_dim(shape.dim);
    inst.disruptor = zero_disruptor(shape.dim, dh);
    std::vector<double> flat = seeded_gaussian(1, inst.disruptor.parameter_count(),
                                               derive_seed(seed, "instance.disruptor"), shape.disruptor_std)
                                   .data();
    inst.disruptor.assign_flat(flat);
    return inst;
}

std::vector<TransitionMatrix> random_chain(std::size_t frames, std::size_t nodes, std::size_t dim, double temperature,
                                           std::uint64_t seed) {
    return build_chain(seeded_tensor(frames, nodes, dim, seed), temperature);
}

std::vector<CheckResult> run_oracle_suite(std::uint64_t seed) {
    std::vector<CheckResult> results;

    {
        double worst = 0.0;
        for (std::size_t frames = 3; frames <= 5; ++frames)
            for (std::size_t nodes = 2; nodes <= 3; ++nodes)
                for (std::uint64_t s = 0; s < 5; ++s) {
                    const auto chain = random_chain(frames, nodes, 3, 1.0, derive_seed(seed, s * 64 + frames * 8 + nodes));
                    for (std::size_t z = 1; z < frames; ++z)
                        for (std::size_t k = 1; k + z <= frames; ++k)
                            worst = std::max(worst, max_abs_diff(round_trip(multi_step(chain, k, z)),
                                                                 brute_force_roundtrip(chain, k, z)));
                }
        results.push_back(at_most("walk_enumeration", worst, 1e-10));
    }

    {
        double worst = 0.0;
        for (std::uint64_t s = 0; s < 20; ++s) {
            const auto chain = random_chain(6, 3, 4, 0.5, derive_seed(seed, 1000 + s));
            for (std::size_t z1 = 1; z1 <= 2; ++z1)
                for (std::size_t z2 = 1; z2 <= 3; ++z2) {
                    const Matrix whole = multi_step(chain, 1, z1 + z2);
                    const Matrix split = matmul(multi_step(chain, 1, z1), multi_step(chain, 1 + z1, z2));
                    worst = std::max(worst, max_abs_diff(whole, split));
                }
        }
        results.push_back(at_most("chapman_kolmogorov", worst, 1e-9));
    }

    {
        const std::size_t n = 3;
        const Tensor3 zeros(5, n, 4);
        const double value = spatiotemporal_loss(zeros, kDefaultTemperature, make_schedule(5, SpanPolicy::retrace)).value;
        const double expected = -static_cast<double>(n) * std::log(static_cast<double>(n));
        results.push_back(at_most("uniform_walk_loss", std::abs(value - expected), 1e-9,
                                  "zero features give N log(1/N) per cycle"));

        std::vector<TransitionMatrix> identity_chain;
        for (std::size_t k = 1; k <= 4; ++k) identity_chain.push_back({k, k + 1, Matrix::identity(n)});
        double worst = 0.0;
        for (std::size_t z = 1; z <= 3; ++z)
            for (std::size_t k = 1; k + z <= 5; ++k)
                worst = std::max(worst, std::abs(cycle_score(round_trip(multi_step(identity_chain, k, z))).value));
        results.push_back(at_most("identity_cycle_score", worst, 0.0));
    }

    {
        const double lambdas[] = {0.0, 5.0, 5.0};
        const LossTerm terms[] = {LossTerm::spatiotemporal, LossTerm::semantic, LossTerm::combined};
        const char* names[] = {"finite_diff_lt", "finite_diff_ls", "finite_diff_combined"};
        for (int t = 0; t < 3; ++t) {
            double worst = 0.0;
            for (std::uint64_t s = 0; s < 3; ++s) {
                const Instance inst = make_instance({}, derive_seed(seed, 2000 + s));
                TrainConfig cfg;
                cfg.lambda = lambdas[t];
                cfg.temperature = 0.5;
                const auto report = finite_diff_check(inst.example.features, inst.example.prompt, inst.example.answer,
                                                      inst.disruptor, inst.surrogate, cfg, 1e-5, terms[t]);
                worst = std::max(worst, report.max_rel_error);
            }
            results.push_back(at_most(names[t], worst, 1e-4));
        }
    }

    {
        bool ok = true;
        for (std::uint64_t s = 0; s < 10 && ok; ++s) {
            InstanceShape shape;
            shape.frames = 4;
            shape.tokens = 3;
            shape.dim = 8;
            shape.model_dim = 16;
            shape.vocab_size = 32;
            const Instance inst = make_instance(shape, derive_seed(seed, 3000 + s));
            DecodingConfig cfg;
            cfg.max_tokens = 24;
            const auto base = baseline_decode(inst.example.features, inst.example.prompt, inst.surrogate, cfg);
            cfg.alpha = 0.0;
            ok = ok && decode(inst.example.features, inst.example.prompt, inst.disruptor, inst.surrogate, cfg).tokens.ids ==
                           base.tokens.ids;
            cfg.alpha = 0.8;
            const auto zero = zero_disruptor(shape.dim, default_hidden_dim(shape.dim));
            ok = ok && decode(inst.example.features, inst.example.prompt, zero, inst.surrogate, cfg).tokens.ids ==
                           base.tokens.ids;
        }
        results.push_back(holds("decode_reductions", ok, "alpha=0 and zero disruptor both match baseline"));
    }

    {
        Rng rng(derive_seed(seed, "verify.plausibility"));
        bool ok = true;
        double worst_mass = 0.0;
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> f_pos(16), f_neg(16);
            for (auto& v : f_pos) v = 3.0 * rng.normal();
            for (auto& v : f_neg) v = 3.0 * rng.normal();
            const double b1 = rng.uniform();
            const double b2 = rng.uniform();
            const auto p = softmax(f_pos);
            const auto wide = plausibility_set(p, std::min(b1, b2));
            const auto narrow = plausibility_set(p, std::max(b1, b2));
            ok = ok && std::includes(wide.begin(), wide.end(), narrow.begin(), narrow.end());
            ok = ok && plausibility_set(p, 0.0).size() == p.size();
            DecodingConfig cfg;
            cfg.beta = b1;
            const auto dist = sscd_step(f_pos, f_neg, cfg);
            double mass = 0.0;
            for (double q : dist.probs) mass += q;
            worst_mass = std::max(worst_mass, std::abs(mass - 1.0));
        }
        results.push_back(holds("plausibility_properties", ok && worst_mass <= 1e-9));
    }

    {
        const Instance inst = make_instance({}, derive_seed(seed, 4000));
        const auto feature_bytes = encode_features(inst.example.features);
        const bool features_ok = decode_features(feature_bytes) == inst.example.features &&
                                 encode_features(decode_features(feature_bytes)) == feature_bytes;
        Checkpoint ckpt;
        ckpt.surrogate = inst.surrogate;
        ckpt.disruptor = inst.disruptor;
        const auto ckpt_bytes = encode_checkpoint(ckpt);
        const bool ckpt_ok = encode_checkpoint(decode_checkpoint(ckpt_bytes)) == ckpt_bytes;
        results.push_back(holds("format_round_trip", features_ok && ckpt_ok));
    }

    return results;
}

}  // namespace sscd
