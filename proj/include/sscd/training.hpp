#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "sscd/disruptor.hpp"
#include "sscd/st_graph.hpp"
#include "sscd/surrogate.hpp"
#include "sscd/tensor.hpp"

namespace sscd {

/// Desk-scale learning rate; the backbone-scale presets are below.
inline constexpr double kDeskLearningRate = 1e-3;
inline constexpr double kVideoLlavaLearningRate = 1e-6;
inline constexpr double kLlavaNextVideoLearningRate = 5e-6;

struct TrainConfig {
    double lambda = 5.0;
    double temperature = kDefaultTemperature;
    std::size_t epochs = 3;
    std::size_t batch_size = 2;
    std::size_t grad_accum = 2;
    double lr = kDeskLearningRate;
    double warmup_ratio = 0.05;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    std::size_t hidden_dim = 0;  // 0 selects default_hidden_dim(d)
    SpanPolicy span_policy = SpanPolicy::retrace;
    bool normalize_features = false;
    /// Ablation: evaluate L_T on the raw features instead of the disrupted ones.
    bool lt_on_raw = false;

    void validate() const;
    GraphOptions graph_options() const noexcept { return {normalize_features}; }
};

struct LossBreakdown {
    double l_t = 0.0;
    double l_s = 0.0;
    double total = 0.0;
    std::size_t step = 0;
};

/// L_S: log-likelihood of the answer under the projected features. Minimized.
double semantic_loss(const Tensor3& h_neg, const TokenSequence& prompt, const TokenSequence& answer,
                     const SurrogateParams& sp);

LossBreakdown total_loss(const Tensor3& h, const TokenSequence& prompt, const TokenSequence& answer,
                         const DisruptorParams& dp, const SurrogateParams& sp, const TrainConfig& cfg);

/// Flat gradient aligned with DisruptorParams::flatten.
using GradientVector = std::vector<double>;

/// Separate parameter gradients of L_T and L_S; total = lt + lambda * ls.
struct GradientParts {
    LossBreakdown loss;
    GradientVector lt;
    GradientVector ls;
    double lambda = 0.0;

    GradientVector total() const;
};

GradientParts gradient_parts(const Tensor3& h, const TokenSequence& prompt, const TokenSequence& answer,
                             const DisruptorParams& dp, const SurrogateParams& sp, const TrainConfig& cfg);

/// Exact gradient of the combined loss with respect to the disruptor only.
/// Throws NumericalError carrying the first non-finite index.
GradientVector gradient(const Tensor3& h, const TokenSequence& prompt, const TokenSequence& answer,
                        const DisruptorParams& dp, const SurrogateParams& sp, const TrainConfig& cfg);

enum class LossTerm { spatiotemporal, semantic, combined };

struct FiniteDiffReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;  // at worst_index
    double numeric = 0.0;   // at worst_index
    std::size_t checked = 0;
};

/// Relative error used by the check: |a - n| / max(|a|, |n|, floor).
inline constexpr double kRelErrorFloor = 1e-6;

FiniteDiffReport finite_diff_check(const Tensor3& h, const TokenSequence& prompt, const TokenSequence& answer,
                                   const DisruptorParams& dp, const SurrogateParams& sp, const TrainConfig& cfg,
                                   double eps, LossTerm term = LossTerm::combined);

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::uint64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    bool operator==(const AdamState&) const = default;
};

/// One AdamW update with decoupled weight decay (p *= 1 - lr*wd first).
void adam_step(DisruptorParams& dp, const GradientVector& grad, AdamState& state, double lr,
               double weight_decay, const AdamHyper& hyper = {});

struct TrainingExample {
    Tensor3 features;
    TokenSequence prompt;
    TokenSequence answer;
};

struct TrainStep {
    LossBreakdown loss;  // mean over the items of the optimizer step, before the update
    double lr = 0.0;
    double grad_norm = 0.0;
};

struct TrainResult {
    DisruptorParams params;
    std::vector<TrainStep> history;
    AdamState optimizer;
};

std::size_t steps_per_epoch(std::size_t dataset_size, const TrainConfig& cfg) noexcept;
std::size_t warmup_steps(std::size_t total_steps, double warmup_ratio) noexcept;
/// Linear warmup then constant.
double scheduled_lr(std::size_t step, std::size_t warmup, double base_lr) noexcept;

using StepCallback = std::function<void(const TrainStep&)>;

TrainResult train(const std::vector<TrainingExample>& dataset, const SurrogateParams& sp, const TrainConfig& cfg,
                  const StepCallback& on_step = {});

/// Same, continuing from given parameters and optimizer state.
TrainResult train(const std::vector<TrainingExample>& dataset, const SurrogateParams& sp, const TrainConfig& cfg,
                  DisruptorParams initial, AdamState optimizer, const StepCallback& on_step = {});

}  // namespace sscd
