#include <cmath>
#include <numeric>

#include "doctest.h"
#include "sscd/errors.hpp"
#include "sscd/st_graph.hpp"
#include "sscd/verify.hpp"

using namespace sscd;

namespace {

double max_abs_diff(const Matrix& a, const Matrix& b) {
    REQUIRE(a.rows() == b.rows());
    REQUIRE(a.cols() == b.cols());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

Matrix uniform(std::size_t n) { return Matrix(n, n, 1.0 / static_cast<double>(n)); }

}  // namespace

TEST_CASE("affinity") {
    const Matrix eye = Matrix::identity(2);
    CHECK(affinity(FrameFeatures(1, eye), FrameFeatures(2, eye)) == eye);

    Matrix a = seeded_gaussian(3, 4, 11);
    for (std::size_t c = 0; c < 4; ++c) a(1, c) = 0.0;
    const Matrix b = seeded_gaussian(3, 4, 12);
    const Matrix s = affinity(FrameFeatures(1, a), FrameFeatures(2, b));
    for (std::size_t j = 0; j < 3; ++j) CHECK(s(1, j) == 0.0);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double ref = 0.0;
            for (std::size_t c = 0; c < 4; ++c) ref += a(i, c) * b(j, c);
            CHECK(std::abs(s(i, j) - ref) <= 1e-12);
        }

    CHECK_THROWS_AS(affinity(FrameFeatures(2, a), FrameFeatures(1, b)), StructuralError);
    CHECK_THROWS_AS(affinity(FrameFeatures(1, a), FrameFeatures(3, b)), StructuralError);
    CHECK_THROWS_AS(affinity(FrameFeatures(1, a), FrameFeatures(2, seeded_gaussian(3, 5, 1))), ShapeError);
    CHECK_THROWS(FrameFeatures(1, Matrix(1, 4)));
}

TEST_CASE("transition examples") {
    const TransitionMatrix u = transition(Matrix(3, 3, 0.0), 0.07);
    CHECK(max_abs_diff(u.probs, uniform(3)) <= 1e-15);

    const TransitionMatrix t = transition(Matrix::identity(2), 1.0);
    CHECK(t.probs(0, 0) == doctest::Approx(0.7310585786).epsilon(1e-9));
    CHECK(t.probs(0, 1) == doctest::Approx(0.2689414214).epsilon(1e-9));
    CHECK(t.probs(1, 1) == t.probs(0, 0));

    const TransitionMatrix sharp = transition(scale(Matrix::identity(3), 5.0), 1e-3);
    CHECK(max_abs_diff(sharp.probs, Matrix::identity(3)) <= 1e-12);

    CHECK_THROWS_AS(transition(Matrix::identity(2), 0.0), ParameterError);
}

TEST_CASE("transition rows are stochastic") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.uniform_int(7);
        const std::size_t d = 2 + rng.uniform_int(15);
        const double tau = 0.01 + (10.0 - 0.01) * rng.uniform();
        const Tensor3 h = seeded_tensor(2, n, d, rng.next_u64());
        const auto chain = build_chain(h, tau);
        REQUIRE(chain.size() == 1);
        for (std::size_t r = 0; r < n; ++r) {
            const auto row = chain[0].probs.row(r);
            CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("multi_step and round_trip examples") {
    const auto chain = random_chain(4, 3, 4, 0.5, 3);
    CHECK(multi_step(chain, 2, 1) == chain[1].probs);

    std::vector<TransitionMatrix> eye;
    for (std::size_t k = 1; k <= 3; ++k) eye.push_back({k, k + 1, Matrix::identity(2)});
    CHECK(multi_step(eye, 1, 3) == Matrix::identity(2));
    CHECK(round_trip(Matrix::identity(3)) == Matrix::identity(3));
    CHECK(max_abs_diff(round_trip(uniform(4)), uniform(4)) <= 1e-15);

    const double a = 0.7311, b = 0.2689;
    const Matrix r = round_trip(Matrix{{a, b}, {b, a}});
    CHECK(r(0, 0) == doctest::Approx(a * a + b * b).epsilon(1e-14));
    CHECK(r(0, 0) == doctest::Approx(0.6068).epsilon(1e-4));

    CHECK_THROWS_AS(multi_step(chain, 3, 2), StructuralError);
    CHECK_THROWS_AS(multi_step(chain, 0, 1), StructuralError);
    std::vector<TransitionMatrix> gap{chain[0], chain[2]};
    CHECK_THROWS_AS(multi_step(gap, 1, 2), StructuralError);
}

TEST_CASE("cycle_score examples") {
    CHECK(cycle_score(Matrix::identity(5)).value == 0.0);
    CHECK(cycle_score(uniform(2)).value == doctest::Approx(-1.3862943611).epsilon(1e-10));
    Matrix d{{0.6068, 0.3932}, {0.3932, 0.6068}};
    CHECK(cycle_score(d).value == doctest::Approx(2.0 * std::log(0.6068)).epsilon(1e-14));
    CHECK(cycle_score(d).value == doctest::Approx(-0.9991).epsilon(1e-4));
    Matrix bad = Matrix::identity(2);
    bad(1, 1) = 0.0;
    CHECK_THROWS_AS(cycle_score(bad), NumericalError);
}

TEST_CASE("brute force enumeration matches products") {
    for (std::size_t frames = 3; frames <= 5; ++frames)
        for (std::size_t n = 2; n <= 3; ++n)
            for (std::uint64_t s = 0; s < 4; ++s) {
                const auto chain = random_chain(frames, n, 3, 0.8, derive_seed(s, frames * 10 + n));
                for (std::size_t z = 1; z < frames; ++z)
                    for (std::size_t k = 1; k + z <= frames; ++k)
                        CHECK(max_abs_diff(round_trip(multi_step(chain, k, z)), brute_force_roundtrip(chain, k, z)) <=
                              1e-10);
            }

    std::vector<TransitionMatrix> u;
    for (std::size_t k = 1; k <= 3; ++k) u.push_back({k, k + 1, uniform(3)});
    CHECK(max_abs_diff(brute_force_roundtrip(u, 1, 3), uniform(3)) <= 1e-14);

    const auto big = random_chain(12, 8, 2, 1.0, 1);
    CHECK_THROWS_AS(brute_force_roundtrip(big, 1, 10), OracleScopeError);
}

TEST_CASE("chapman kolmogorov") {
    for (std::uint64_t s = 0; s < 30; ++s) {
        const auto chain = random_chain(7, 3, 5, 0.3, s);
        for (std::size_t z1 = 1; z1 <= 3; ++z1)
            for (std::size_t z2 = 1; z1 + z2 <= 5; ++z2)
                for (std::size_t k = 1; k + z1 + z2 <= 7; ++k)
                    CHECK(max_abs_diff(multi_step(chain, k, z1 + z2),
                                       matmul(multi_step(chain, k, z1), multi_step(chain, k + z1, z2))) <= 1e-9);
    }
}

TEST_CASE("round trip is symmetric psd with diagonal in (0, 1]") {
    for (std::uint64_t s = 0; s < 30; ++s) {
        const auto chain = random_chain(5, 4, 3, 0.2, s);
        const Matrix r = round_trip(multi_step(chain, 1, 4));
        Rng rng(s);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(r(i, i) > 0.0);
            CHECK(r(i, i) <= 1.0 + 1e-15);
            for (std::size_t j = 0; j < 4; ++j) CHECK(r(i, j) == doctest::Approx(r(j, i)).epsilon(1e-14));
        }
        for (int trial = 0; trial < 5; ++trial) {
            std::vector<double> x(4);
            for (double& v : x) v = rng.normal();
            double q = 0.0;
            for (std::size_t i = 0; i < 4; ++i)
                for (std::size_t j = 0; j < 4; ++j) q += x[i] * r(i, j) * x[j];
            CHECK(q >= -1e-12);
        }
        CHECK(cycle_score(r).value <= 0.0);
    }
}

TEST_CASE("span schedules") {
    const SpanSchedule r = make_schedule(5, SpanPolicy::retrace);
    REQUIRE(r.spans.size() == 3);
    CHECK(r.spans[0].z == 1);
    CHECK(r.spans[0].starts == std::vector<std::size_t>{1, 2, 3, 4});
    CHECK(r.spans[2].starts == std::vector<std::size_t>{1, 2});
    CHECK(r.pair_count() == 4 + 3 + 2);

    const SpanSchedule two = make_schedule(2, SpanPolicy::retrace);
    REQUIRE(two.spans.size() == 1);
    CHECK(two.spans[0].starts == std::vector<std::size_t>{1});

    const SpanSchedule l = make_schedule(5, SpanPolicy::literal);
    REQUIRE(l.spans.size() == 2);
    CHECK(l.spans[0].starts == std::vector<std::size_t>{1, 2, 3});
    CHECK(l.spans[1].starts == std::vector<std::size_t>{1});

    CHECK(make_schedule(1, SpanPolicy::retrace).pair_count() == 0);
    CHECK(make_schedule(2, SpanPolicy::literal).pair_count() == 0);
    CHECK_THROWS_AS(spatiotemporal_loss(Tensor3(2, 2, 3), 0.1, make_schedule(2, SpanPolicy::literal)), ConfigError);
    CHECK_THROWS_AS(spatiotemporal_loss(Tensor3(1, 2, 3), 0.1, make_schedule(1, SpanPolicy::retrace)), ConfigError);
    CHECK(parse_span_policy(to_string(SpanPolicy::literal)) == SpanPolicy::literal);
    CHECK_THROWS_AS(parse_span_policy("palindrome"), ConfigError);
}

TEST_CASE("spatiotemporal loss is the mean of its per-span scores") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Tensor3 h = seeded_tensor(6, 3, 4, s, 0.5);
        for (auto policy : {SpanPolicy::retrace, SpanPolicy::literal}) {
            const auto loss = spatiotemporal_loss(h, 0.3, make_schedule(6, policy));
            double sum = 0.0;
            for (const auto& c : loss.per_span) {
                CHECK(c.value <= 0.0);
                sum += c.value;
            }
            CHECK(loss.value == sum / static_cast<double>(loss.per_span.size()));
        }
    }
}

TEST_CASE("spatiotemporal loss against enumeration") {
    const Tensor3 h = seeded_tensor(4, 2, 3, 77);
    const double tau = 0.5;
    const auto schedule = make_schedule(4, SpanPolicy::retrace);
    const auto chain = build_chain(h, tau);
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& span : schedule.spans)
        for (std::size_t k : span.starts) {
            const Matrix r = brute_force_roundtrip(chain, k, span.z);
            for (std::size_t i = 0; i < r.rows(); ++i) sum += std::log(r(i, i));
            ++count;
        }
    CHECK(std::abs(spatiotemporal_loss(h, tau, schedule).value - sum / static_cast<double>(count)) <= 1e-10);
}

TEST_CASE("limits of the loss") {
    // Identical orthonormal frames: walkers stay put as tau shrinks.
    Tensor3 h(4, 3, 3);
    for (std::size_t t = 0; t < 4; ++t) h.set_frame(t, Matrix::identity(3));
    const auto schedule = make_schedule(4, SpanPolicy::retrace);
    double prev = spatiotemporal_loss(h, 1.0, schedule).value;
    for (double tau : {0.3, 0.1, 0.03, 0.01}) {
        const double v = spatiotemporal_loss(h, tau, schedule).value;
        CHECK(v >= prev);
        prev = v;
    }
    CHECK(std::abs(prev) < 1e-12);

    // Zero affinities: every round trip is uniform, each cycle scores N log(1/N).
    for (std::size_t n = 2; n <= 4; ++n) {
        const Tensor3 zeros(5, n, 3);
        const double v = spatiotemporal_loss(zeros, kDefaultTemperature, make_schedule(5, SpanPolicy::retrace)).value;
        CHECK(v == doctest::Approx(-static_cast<double>(n) * std::log(static_cast<double>(n))).epsilon(1e-12));
    }
}

TEST_CASE("normalized affinities ignore feature scale") {
    const Tensor3 h = seeded_tensor(4, 3, 5, 8);
    Tensor3 big = h;
    for (double& v : big.data()) v *= 7.0;
    const auto schedule = make_schedule(4, SpanPolicy::retrace);
    const GraphOptions norm{true};
    CHECK(spatiotemporal_loss(h, 0.2, schedule, norm).value ==
          doctest::Approx(spatiotemporal_loss(big, 0.2, schedule, norm).value).epsilon(1e-12));
}

TEST_CASE("analytic loss gradient against central differences") {
    for (bool normalize : {false, true})
        for (std::uint64_t s = 0; s < 5; ++s) {
            const Tensor3 h = seeded_tensor(4, 3, 3, derive_seed(s, "fd"), 0.6);
            const auto schedule = make_schedule(4, SpanPolicy::retrace);
            const GraphOptions opts{normalize};
            const double tau = 0.4;
            const auto g = spatiotemporal_loss_grad(h, tau, schedule, opts);
            CHECK(g.loss.value == spatiotemporal_loss(h, tau, schedule, opts).value);
            const double eps = 1e-6;
            for (std::size_t i = 0; i < h.size(); ++i) {
                Tensor3 hp = h, hm = h;
                hp.data()[i] += eps;
                hm.data()[i] -= eps;
                const double num = (spatiotemporal_loss(hp, tau, schedule, opts).value -
                                    spatiotemporal_loss(hm, tau, schedule, opts).value) /
                                   (2.0 * eps);
                const double a = g.grad.data()[i];
                CHECK(std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6}) < 1e-4);
            }
        }
}

TEST_CASE("uniform transitions are a stationary point") {
    const Tensor3 zeros(4, 3, 3);
    const auto g = spatiotemporal_loss_grad(zeros, 0.5, make_schedule(4, SpanPolicy::retrace));
    for (double v : g.grad.data()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("mean round-trip diagonal") {
    const Tensor3 zeros(4, 4, 3);
    CHECK(mean_roundtrip_diagonal(zeros, 0.1, make_schedule(4, SpanPolicy::retrace)) ==
          doctest::Approx(0.25).epsilon(1e-14));
}
