#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sscd/tensor.hpp"

namespace sscd {

/// Default walk temperature.
inline constexpr double kDefaultTemperature = 0.07;

/// Node features of one frame. Frames are 1-based.
class FrameFeatures {
public:
    FrameFeatures(std::size_t frame_index, Matrix features);

    std::size_t frame_index() const noexcept { return frame_index_; }
    const Matrix& features() const noexcept { return features_; }
    std::size_t nodes() const noexcept { return features_.rows(); }

private:
    std::size_t frame_index_;
    Matrix features_;
};

/// Row-stochastic walk probabilities from frame `from_frame` to `to_frame`.
struct TransitionMatrix {
    std::size_t from_frame = 0;
    std::size_t to_frame = 0;
    Matrix probs;
};

enum class SpanPolicy {
    /// K_z = {k : k + 2z <= T}; spans capped at the largest z with a start.
    literal,
    /// K_z = {k : k + z <= T} for z in 1..max(1, T-2); the return leg
    /// retraces frames k..k+z.
    retrace,
};

const char* to_string(SpanPolicy policy) noexcept;
SpanPolicy parse_span_policy(const std::string& name);

struct Span {
    std::size_t z = 0;
    std::vector<std::size_t> starts;  // 1-based
};

struct SpanSchedule {
    SpanPolicy policy = SpanPolicy::retrace;
    std::vector<Span> spans;

    /// Sum of |K_z| over all spans.
    std::size_t pair_count() const noexcept;
};

SpanSchedule make_schedule(std::size_t frames, SpanPolicy policy);

struct CycleScore {
    std::size_t k = 0;
    std::size_t z = 0;
    double value = 0.0;
};

struct GraphOptions {
    /// L2-normalize node features before taking dot products.
    bool normalize_features = false;
};

Matrix affinity(const FrameFeatures& a, const FrameFeatures& b);
TransitionMatrix transition(const Matrix& s, double temperature, std::size_t from_frame = 1);

/// Product of consecutive one-step transitions covering frames k..k+z.
Matrix multi_step(const std::vector<TransitionMatrix>& chain, std::size_t k, std::size_t z);

/// T̄ · T̄ᵀ.
Matrix round_trip(const Matrix& t_bar);

/// Sum of log-diagonal entries of a round-trip matrix.
CycleScore cycle_score(const Matrix& round, std::size_t k = 0, std::size_t z = 0);

/// One transition per consecutive frame pair of `h` (frames 1..T-1).
std::vector<TransitionMatrix> build_chain(const Tensor3& h, double temperature,
                                          const GraphOptions& options = {});

struct SpatiotemporalLoss {
    double value = 0.0;
    std::vector<CycleScore> per_span;  // ascending z, then ascending k
};

SpatiotemporalLoss spatiotemporal_loss(const Tensor3& h, double temperature, const SpanSchedule& schedule,
                                       const GraphOptions& options = {});

/// Loss plus its exact gradient with respect to every entry of `h`.
struct SpatiotemporalLossGrad {
    SpatiotemporalLoss loss;
    Tensor3 grad;
};

SpatiotemporalLossGrad spatiotemporal_loss_grad(const Tensor3& h, double temperature,
                                                const SpanSchedule& schedule,
                                                const GraphOptions& options = {});

/// Mean diagonal entry of the round-trip matrices over all scheduled (k, z).
double mean_roundtrip_diagonal(const Tensor3& h, double temperature, const SpanSchedule& schedule,
                               const GraphOptions& options = {});

/// Enumerates every palindromic 2z-step walk through the chain and sums the
/// path weights. Independent of matmul; used as an oracle for
/// round_trip(multi_step(...)).
Matrix brute_force_roundtrip(const std::vector<TransitionMatrix>& chain, std::size_t k, std::size_t z);

}  // namespace sscd
