#include "sscd/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sscd/errors.hpp"

namespace sscd {

namespace {

void check_finite(const GradientVector& g) {
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i])) {
            throw NumericalError("non-finite gradient at parameter " + std::to_string(i), i);
        }
    }
}

double objective(const LossBreakdown& loss, LossTerm term, double lambda) {
    switch (term) {
        case LossTerm::spatiotemporal: return loss.l_t;
        case LossTerm::semantic: return loss.l_s;
        case LossTerm::combined: return loss.l_t + lambda * loss.l_s;
    }
    return loss.total;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value >= 0");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (grad_accum < 1) throw ConfigError("grad_accum must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
    if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) throw ConfigError("warmup_ratio must be in [0, 1]");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be >= 0");
    if (hidden_dim == 1) throw ConfigError("hidden_dim must be >= 2 (or 0 for the default)");
}

double semantic_loss(const Tensor3& h_neg, const TokenSequence& prompt, const TokenSequence& answer,
                     const SurrogateParams& sp) {
    return sequence_log_likelihood(project(h_neg, sp), prompt, answer, sp);
}

LossBreakdown total_loss(const Tensor3& h, const TokenSequence& prompt, const TokenSequence& answer,
                         const DisruptorParams& dp, const SurrogateParams& sp, const TrainConfig& cfg) {
    const Tensor3 h_neg = disrupt(h, dp);
    const Tensor3& graph_input = cfg.lt_on_raw ? h : h_neg;
    LossBreakdown out;
    out.l_t = spatiotemporal_loss(graph_input, cfg.temperature, make_schedule(h.frames(), cfg.span_policy),
                                  cfg.graph_options())
                  .value;
    out.l_s = semantic_loss(h_neg, prompt, answer, sp);
    out.total = out.l_t + cfg.lambda * out.l_s;
    return out;
}

GradientVector GradientParts::total() const {
    GradientVector g(lt.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = lt[i] + lambda * ls[i];
    return g;
}

GradientParts gradient_parts(const Tensor3& h, const TokenSequence& prompt, const TokenSequence& answer,
                             const DisruptorParams& dp, const SurrogateParams& sp, const TrainConfig& cfg) {
    const Tensor3 h_neg = disrupt(h, dp);
    GradientParts out;
    out.lambda = cfg.lambda;

    const SpanSchedule schedule = make_schedule(h.frames(), cfg.span_policy);
    if (cfg.lt_on_raw) {
        out.loss.l_t = spatiotemporal_loss(h, cfg.temperature, schedule, cfg.graph_options()).value;
        out.lt.assign(dp.parameter_count(), 0.0);
    } else {
        const auto lt = spatiotemporal_loss_grad(h_neg, cfg.temperature, schedule, cfg.graph_options());
        out.loss.l_t = lt.loss.value;
        out.lt = disrupt_backward(h, dp, lt.grad).params;
    }

    const LikelihoodGrad ls = sequence_log_likelihood_grad(h_neg, prompt, answer, sp);
    out.loss.l_s = ls.value;
    out.ls = disrupt_backward(h, dp, ls.grad).params;
    out.loss.total = out.loss.l_t + cfg.lambda * out.loss.l_s;
    return out;
}

GradientVector gradient(const Tensor3& h, const TokenSequence& prompt, const TokenSequence& answer,
                        const DisruptorParams& dp, const SurrogateParams& sp, const TrainConfig& cfg) {
    GradientVector g = gradient_parts(h, prompt, answer, dp, sp, cfg).total();
    check_finite(g);
    return g;
}

FiniteDiffReport finite_diff_check(const Tensor3& h, const TokenSequence& prompt, const TokenSequence& answer,
                                   const DisruptorParams& dp, const SurrogateParams& sp, const TrainConfig& cfg,
                                   double eps, LossTerm term) {
    if (!(eps > 0.0) || !std::isfinite(eps)) throw ParameterError("finite-difference step must be > 0");
    const GradientParts parts = gradient_parts(h, prompt, answer, dp, sp, cfg);
    GradientVector analytic;
    switch (term) {
        case LossTerm::spatiotemporal: analytic = parts.lt; break;
        case LossTerm::semantic: analytic = parts.ls; break;
        case LossTerm::combined: analytic = parts.total(); break;
    }

    FiniteDiffReport report;
    DisruptorParams probe = dp;
    std::vector<double> flat = dp.flatten();
    for (std::size_t i = 0; i < flat.size(); ++i) {
        const double original = flat[i];
        flat[i] = original + eps;
        probe.assign_flat(flat);
        const double up = objective(total_loss(h, prompt, answer, probe, sp, cfg), term, cfg.lambda);
        flat[i] = original - eps;
        probe.assign_flat(flat);
        const double down = objective(total_loss(h, prompt, answer, probe, sp, cfg), term, cfg.lambda);
        flat[i] = original;

        const double numeric = (up - down) / (2.0 * eps);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), kRelErrorFloor});
        const double rel = std::abs(analytic[i] - numeric) / denom;
        if (i == 0 || rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
        ++report.checked;
    }
    return report;
}

void adam_step(DisruptorParams& dp, const GradientVector& grad, AdamState& state, double lr, double weight_decay,
               const AdamHyper& hyper) {
    std::vector<double> flat = dp.flatten();
    if (grad.size() != flat.size()) throw ShapeError("adam_step: gradient length mismatch");
    if (state.m.size() != flat.size()) {
        state.m.assign(flat.size(), 0.0);
        state.v.assign(flat.size(), 0.0);
        state.step = 0;
    }
    ++state.step;
    const double step = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(hyper.beta1, step);
    const double correction2 = 1.0 - std::pow(hyper.beta2, step);
    for (std::size_t i = 0; i < flat.size(); ++i) {
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grad[i];
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
        const double m_hat = state.m[i] / correction1;
        const double v_hat = state.v[i] / correction2;
        flat[i] *= 1.0 - lr * weight_decay;
        flat[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
    dp.assign_flat(flat);
}

std::size_t steps_per_epoch(std::size_t dataset_size, const TrainConfig& cfg) noexcept {
    const std::size_t per_step = cfg.batch_size * cfg.grad_accum;
    return (dataset_size + per_step - 1) / per_step;
}

std::size_t warmup_steps(std::size_t total_steps, double warmup_ratio) noexcept {
    return static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
}

double scheduled_lr(std::size_t step, std::size_t warmup, double base_lr) noexcept {
    if (step >= warmup) return base_lr;
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

TrainResult train(const std::vector<TrainingExample>& dataset, const SurrogateParams& sp, const TrainConfig& cfg,
                  const StepCallback& on_step) {
    cfg.validate();
    if (dataset.empty()) throw ConfigError("training dataset is empty");
    const std::size_t d = dataset.front().features.dim();
    const std::size_t dh = cfg.hidden_dim == 0 ? default_hidden_dim(d) : cfg.hidden_dim;
    return train(dataset, sp, cfg, init_disruptor(d, dh, derive_seed(cfg.seed, "disruptor")), AdamState{},
                 on_step);
}

TrainResult train(const std::vector<TrainingExample>& dataset, const SurrogateParams& sp, const TrainConfig& cfg,
                  DisruptorParams initial, AdamState optimizer, const StepCallback& on_step) {
    cfg.validate();
    if (dataset.empty()) throw ConfigError("training dataset is empty");
    sp.validate();
    initial.validate();
    for (const auto& ex : dataset) {
        if (ex.features.dim() != initial.feature_dim() || ex.features.dim() != sp.proj.rows()) {
            throw ShapeError("training example feature dim does not match the model");
        }
    }

    TrainResult result{std::move(initial), {}, std::move(optimizer)};
    const std::size_t per_epoch = steps_per_epoch(dataset.size(), cfg);
    const std::size_t total_steps = per_epoch * cfg.epochs;
    const std::size_t warmup = warmup_steps(total_steps, cfg.warmup_ratio);
    const std::size_t per_step = cfg.batch_size * cfg.grad_accum;
    const std::uint64_t shuffle_seed = derive_seed(cfg.seed, "shuffle");

    std::vector<std::size_t> order(dataset.size());
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.uniform_int(i)]);
        }

        for (std::size_t first = 0; first < order.size(); first += per_step, ++step) {
            const std::size_t last = std::min(order.size(), first + per_step);
            const double count = static_cast<double>(last - first);
            GradientVector grad(result.params.parameter_count(), 0.0);
            TrainStep record;
            // Items are reduced in a fixed order so runs are bit-reproducible.
            for (std::size_t pos = first; pos < last; ++pos) {
                const auto& ex = dataset[order[pos]];
                const GradientParts parts = gradient_parts(ex.features, ex.prompt, ex.answer, result.params, sp, cfg);
                const GradientVector g = parts.total();
                check_finite(g);
                for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i] / count;
                record.loss.l_t += parts.loss.l_t / count;
                record.loss.l_s += parts.loss.l_s / count;
                record.loss.total += parts.loss.total / count;
            }
            record.loss.step = step;
            record.lr = scheduled_lr(step, warmup, cfg.lr);
            record.grad_norm = std::sqrt(dot(grad, grad));
            adam_step(result.params, grad, result.optimizer, record.lr, cfg.weight_decay);
            result.history.push_back(record);
            if (on_step) on_step(record);
        }
    }
    return result;
}

}  // namespace sscd
