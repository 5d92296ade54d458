#include "sscd/disruptor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "sscd/errors.hpp"

namespace sscd {

namespace {

constexpr double kInitStd = 1e-2;

void check_input(const Tensor3& h, const DisruptorParams& params) {
    if (h.dim() != params.feature_dim()) {
        throw ShapeError("disruptor expects feature dim " + std::to_string(params.feature_dim()) + ", got " +
                         std::to_string(h.dim()));
    }
}

// Hidden pre-activations for one token.
void hidden_pre(std::span<const double> x, const DisruptorParams& p, std::vector<double>& pre) {
    const std::size_t dh = p.hidden_dim();
    pre.assign(p.b1.begin(), p.b1.end());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto w = p.w1.row(i);
        for (std::size_t j = 0; j < dh; ++j) pre[j] += x[i] * w[j];
    }
}

}  // namespace

double gelu(double x) noexcept { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) noexcept {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

std::size_t default_hidden_dim(std::size_t d) noexcept { return std::max<std::size_t>(2, d / 2); }

void DisruptorParams::validate() const {
    const std::size_t d = w1.rows();
    const std::size_t dh = w1.cols();
    if (d < 2 || dh < 2) throw ShapeError("disruptor dims must be >= 2");
    if (b1.size() != dh || w2.rows() != dh || w2.cols() != d || b2.size() != d) {
        throw ShapeError("disruptor parameter shapes are inconsistent");
    }
    const auto flat = flatten();
    if (!all_finite(flat)) throw NumericalError("disruptor parameters contain non-finite values");
}

std::vector<double> DisruptorParams::flatten() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    flat.insert(flat.end(), w1.data().begin(), w1.data().end());
    flat.insert(flat.end(), b1.begin(), b1.end());
    flat.insert(flat.end(), w2.data().begin(), w2.data().end());
    flat.insert(flat.end(), b2.begin(), b2.end());
    return flat;
}

void DisruptorParams::assign_flat(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw ShapeError("flat disruptor parameter length mismatch");
    auto it = flat.begin();
    auto take = [&it](auto& dst) {
        std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
        it += static_cast<std::ptrdiff_t>(dst.size());
    };
    take(w1.data());
    take(b1);
    take(w2.data());
    take(b2);
}

DisruptorParams init_disruptor(std::size_t d, std::size_t d_h, std::uint64_t seed) {
    if (d < 2 || d_h < 2) throw ParameterError("disruptor dims must be >= 2");
    DisruptorParams p;
    p.w1 = seeded_gaussian(d, d_h, derive_seed(seed, "disruptor.w1"), kInitStd);
    p.b1 = seeded_gaussian(1, d_h, derive_seed(seed, "disruptor.b1"), kInitStd).data();
    p.w2 = seeded_gaussian(d_h, d, derive_seed(seed, "disruptor.w2"), kInitStd);
    p.b2 = seeded_gaussian(1, d, derive_seed(seed, "disruptor.b2"), kInitStd).data();
    return p;
}

DisruptorParams zero_disruptor(std::size_t d, std::size_t d_h) {
    if (d < 2 || d_h < 2) throw ParameterError("disruptor dims must be >= 2");
    return {Matrix(d, d_h), std::vector<double>(d_h, 0.0), Matrix(d_h, d), std::vector<double>(d, 0.0)};
}

Tensor3 perturbation(const Tensor3& h, const DisruptorParams& params) {
    check_input(h, params);
    const std::size_t d = h.dim();
    const std::size_t dh = params.hidden_dim();
    Tensor3 out(h.frames(), h.tokens(), d);
    std::vector<double> pre;
    const std::size_t count = h.frames() * h.tokens();
    for (std::size_t tok = 0; tok < count; ++tok) {
        const std::span<const double> x(h.data().data() + tok * d, d);
        std::span<double> y(out.data().data() + tok * d, d);
        hidden_pre(x, params, pre);
        std::copy(params.b2.begin(), params.b2.end(), y.begin());
        for (std::size_t j = 0; j < dh; ++j) {
            const double a = gelu(pre[j]);
            const auto w = params.w2.row(j);
            for (std::size_t c = 0; c < d; ++c) y[c] += a * w[c];
        }
    }
    return out;
}

Tensor3 disrupt(const Tensor3& h, const DisruptorParams& params) {
    Tensor3 out = perturbation(h, params);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += h.data()[i];
    return out;
}

DisruptorGrad disrupt_backward(const Tensor3& h, const DisruptorParams& params, const Tensor3& grad_output) {
    check_input(h, params);
    if (!grad_output.same_shape(h)) throw ShapeError("disruptor upstream gradient shape mismatch");
    const std::size_t d = h.dim();
    const std::size_t dh = params.hidden_dim();

    Matrix g_w1(d, dh);
    std::vector<double> g_b1(dh, 0.0);
    Matrix g_w2(dh, d);
    std::vector<double> g_b2(d, 0.0);
    DisruptorGrad out{{}, grad_output};  // residual path

    std::vector<double> pre;
    std::vector<double> g_pre(dh);
    const std::size_t count = h.frames() * h.tokens();
    for (std::size_t tok = 0; tok < count; ++tok) {
        const std::span<const double> x(h.data().data() + tok * d, d);
        const std::span<const double> g(grad_output.data().data() + tok * d, d);
        std::span<double> g_x(out.input.data().data() + tok * d, d);
        hidden_pre(x, params, pre);

        for (std::size_t c = 0; c < d; ++c) g_b2[c] += g[c];
        for (std::size_t j = 0; j < dh; ++j) {
            const double a = gelu(pre[j]);
            auto gw2 = g_w2.row(j);
            for (std::size_t c = 0; c < d; ++c) gw2[c] += a * g[c];
            g_pre[j] = dot(params.w2.row(j), g) * gelu_derivative(pre[j]);
            g_b1[j] += g_pre[j];
        }
        for (std::size_t i = 0; i < d; ++i) {
            auto gw1 = g_w1.row(i);
            const auto w1 = params.w1.row(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < dh; ++j) {
                gw1[j] += x[i] * g_pre[j];
                acc += w1[j] * g_pre[j];
            }
            g_x[i] += acc;
        }
    }

    DisruptorParams packed{std::move(g_w1), std::move(g_b1), std::move(g_w2), std::move(g_b2)};
    out.params = packed.flatten();
    return out;
}

}  // namespace sscd
