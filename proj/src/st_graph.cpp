#include "sscd/st_graph.hpp"

#include <cmath>
#include <string>

#include "sscd/errors.hpp"

namespace sscd {

namespace {

constexpr double kMinNorm = 1e-12;

struct NodeFrames {
    std::vector<Matrix> frames;           // features fed to the affinity, per frame (0-based)
    std::vector<std::vector<double>> norms;  // raw row norms, only when normalizing
};

NodeFrames prepare_frames(const Tensor3& h, const GraphOptions& options) {
    if (h.tokens() < 2) throw StructuralError("spatiotemporal graph needs at least 2 nodes per frame");
    NodeFrames out;
    out.frames.reserve(h.frames());
    for (std::size_t t = 0; t < h.frames(); ++t) {
        Matrix f = h.frame(t);
        if (options.normalize_features) {
            std::vector<double> norms(f.rows());
            for (std::size_t i = 0; i < f.rows(); ++i) {
                auto r = f.row(i);
                norms[i] = std::sqrt(dot(r, r));
                const double denom = std::max(norms[i], kMinNorm);
                for (double& v : r) v /= denom;
            }
            out.norms.push_back(std::move(norms));
        }
        out.frames.push_back(std::move(f));
    }
    return out;
}

void validate_schedule(const SpanSchedule& schedule, std::size_t frames) {
    if (schedule.pair_count() == 0) throw ConfigError("span schedule has no valid (k, z) pairs");
    for (const auto& span : schedule.spans) {
        if (span.z == 0) throw ConfigError("span z must be >= 1");
        for (std::size_t k : span.starts) {
            const std::size_t reach = schedule.policy == SpanPolicy::literal ? k + 2 * span.z : k + span.z;
            if (k == 0 || reach > frames) {
                throw ConfigError("span schedule (k=" + std::to_string(k) + ", z=" + std::to_string(span.z) +
                                  ") does not fit " + std::to_string(frames) + " frames");
            }
        }
    }
}

const Matrix& step_probs(const std::vector<TransitionMatrix>& chain, std::size_t from) {
    for (const auto& t : chain) {
        if (t.from_frame == from) {
            if (t.to_frame != from + 1) throw StructuralError("transition does not connect consecutive frames");
            return t.probs;
        }
    }
    throw StructuralError("transition chain has no step from frame " + std::to_string(from));
}

}  // namespace

FrameFeatures::FrameFeatures(std::size_t frame_index, Matrix features)
    : frame_index_(frame_index), features_(std::move(features)) {
    if (frame_index_ == 0) throw StructuralError("frame indices are 1-based");
    if (features_.rows() < 2) throw StructuralError("a frame needs at least 2 nodes");
}

const char* to_string(SpanPolicy policy) noexcept {
    return policy == SpanPolicy::literal ? "literal" : "retrace";
}

SpanPolicy parse_span_policy(const std::string& name) {
    if (name == "literal") return SpanPolicy::literal;
    if (name == "retrace") return SpanPolicy::retrace;
    throw ConfigError("unknown span policy '" + name + "' (expected literal or retrace)");
}

std::size_t SpanSchedule::pair_count() const noexcept {
    std::size_t n = 0;
    for (const auto& s : spans) n += s.starts.size();
    return n;
}

SpanSchedule make_schedule(std::size_t frames, SpanPolicy policy) {
    SpanSchedule schedule;
    schedule.policy = policy;
    if (policy == SpanPolicy::retrace) {
        const std::size_t z_max = frames >= 3 ? frames - 2 : 1;
        for (std::size_t z = 1; z <= z_max; ++z) {
            Span span{z, {}};
            for (std::size_t k = 1; k + z <= frames; ++k) span.starts.push_back(k);
            if (!span.starts.empty()) schedule.spans.push_back(std::move(span));
        }
    } else {
        for (std::size_t z = 1; 1 + 2 * z <= frames; ++z) {
            Span span{z, {}};
            for (std::size_t k = 1; k + 2 * z <= frames; ++k) span.starts.push_back(k);
            schedule.spans.push_back(std::move(span));
        }
    }
    return schedule;
}

Matrix affinity(const FrameFeatures& a, const FrameFeatures& b) {
    if (b.frame_index() != a.frame_index() + 1) {
        throw StructuralError("affinity is only defined between consecutive frames");
    }
    const Matrix& fa = a.features();
    const Matrix& fb = b.features();
    if (fa.rows() != fb.rows() || fa.cols() != fb.cols()) throw ShapeError("affinity: frame shapes differ");
    return matmul(fa, transpose(fb));
}

TransitionMatrix transition(const Matrix& s, double temperature, std::size_t from_frame) {
    if (s.rows() != s.cols()) throw ShapeError("transition: affinity must be square");
    return {from_frame, from_frame + 1, softmax_rows(s, temperature)};
}

Matrix multi_step(const std::vector<TransitionMatrix>& chain, std::size_t k, std::size_t z) {
    if (z == 0) throw StructuralError("multi_step span must be >= 1");
    Matrix product = step_probs(chain, k);
    for (std::size_t i = 1; i < z; ++i) product = matmul(product, step_probs(chain, k + i));
    return product;
}

Matrix round_trip(const Matrix& t_bar) {
    if (t_bar.rows() != t_bar.cols()) throw ShapeError("round_trip: matrix must be square");
    return matmul(t_bar, transpose(t_bar));
}

CycleScore cycle_score(const Matrix& round, std::size_t k, std::size_t z) {
    if (round.rows() != round.cols()) throw ShapeError("cycle_score: matrix must be square");
    double sum = 0.0;
    for (std::size_t i = 0; i < round.rows(); ++i) {
        const double p = round(i, i);
        if (!(p > 0.0)) throw NumericalError("round-trip diagonal entry is not positive", i);
        sum += std::log(p);
    }
    return {k, z, sum};
}

std::vector<TransitionMatrix> build_chain(const Tensor3& h, double temperature, const GraphOptions& options) {
    const NodeFrames nodes = prepare_frames(h, options);
    std::vector<TransitionMatrix> chain;
    for (std::size_t t = 0; t + 1 < h.frames(); ++t) {
        const Matrix s = affinity(FrameFeatures(t + 1, nodes.frames[t]), FrameFeatures(t + 2, nodes.frames[t + 1]));
        chain.push_back(transition(s, temperature, t + 1));
    }
    return chain;
}

SpatiotemporalLoss spatiotemporal_loss(const Tensor3& h, double temperature, const SpanSchedule& schedule,
                                       const GraphOptions& options) {
    validate_schedule(schedule, h.frames());
    const auto chain = build_chain(h, temperature, options);
    SpatiotemporalLoss out;
    double sum = 0.0;
    for (const auto& span : schedule.spans) {
        for (std::size_t k : span.starts) {
            const CycleScore c = cycle_score(round_trip(multi_step(chain, k, span.z)), k, span.z);
            sum += c.value;
            out.per_span.push_back(c);
        }
    }
    out.value = sum / static_cast<double>(out.per_span.size());
    return out;
}

SpatiotemporalLossGrad spatiotemporal_loss_grad(const Tensor3& h, double temperature,
                                                const SpanSchedule& schedule, const GraphOptions& options) {
    validate_schedule(schedule, h.frames());
    const NodeFrames nodes = prepare_frames(h, options);
    const std::size_t frames = h.frames();
    const std::size_t n = h.tokens();

    std::vector<Matrix> probs;  // probs[t] is the step from frame t+1 to t+2
    for (std::size_t t = 0; t + 1 < frames; ++t) {
        probs.push_back(softmax_rows(matmul(nodes.frames[t], transpose(nodes.frames[t + 1])), temperature));
    }

    const double weight = 1.0 / static_cast<double>(schedule.pair_count());
    std::vector<Matrix> grad_probs(probs.size(), Matrix(n, n));
    SpatiotemporalLossGrad out;
    double sum = 0.0;

    for (const auto& span : schedule.spans) {
        const std::size_t z = span.z;
        for (std::size_t k : span.starts) {
            const std::size_t first = k - 1;
            // prefix[m] = P_first ... P_{first+m-1}; prefix[0] = I
            std::vector<Matrix> prefix{Matrix::identity(n)};
            for (std::size_t m = 0; m < z; ++m) prefix.push_back(matmul(prefix.back(), probs[first + m]));
            // suffix[m] = P_{first+m+1} ... P_{first+z-1}; suffix[z-1] = I
            std::vector<Matrix> suffix(z, Matrix::identity(n));
            for (std::size_t m = z - 1; m-- > 0;) suffix[m] = matmul(probs[first + m + 1], suffix[m + 1]);

            const Matrix& walk = prefix[z];
            const CycleScore c = cycle_score(round_trip(walk), k, z);
            sum += c.value;
            out.loss.per_span.push_back(c);

            // d c / d walk(i, j) = 2 walk(i, j) / R(i, i)
            Matrix grad_walk(n, n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto r = walk.row(i);
                const double diag = dot(r, r);
                for (std::size_t j = 0; j < n; ++j) grad_walk(i, j) = weight * 2.0 * r[j] / diag;
            }
            for (std::size_t m = 0; m < z; ++m) {
                const Matrix g = matmul(matmul(transpose(prefix[m]), grad_walk), transpose(suffix[m]));
                grad_probs[first + m] = add(grad_probs[first + m], g);
            }
        }
    }
    out.loss.value = sum / static_cast<double>(out.loss.per_span.size());

    // Back through the row softmax and the dot-product affinities.
    std::vector<Matrix> grad_nodes(frames, Matrix(n, h.dim()));
    for (std::size_t t = 0; t < probs.size(); ++t) {
        const Matrix& p = probs[t];
        const Matrix& gp = grad_probs[t];
        Matrix gs(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            const double inner = dot(gp.row(i), p.row(i));
            for (std::size_t j = 0; j < n; ++j) gs(i, j) = p(i, j) * (gp(i, j) - inner) / temperature;
        }
        grad_nodes[t] = add(grad_nodes[t], matmul(gs, nodes.frames[t + 1]));
        grad_nodes[t + 1] = add(grad_nodes[t + 1], matmul(transpose(gs), nodes.frames[t]));
    }

    out.grad = Tensor3(frames, n, h.dim());
    for (std::size_t t = 0; t < frames; ++t) {
        Matrix g = std::move(grad_nodes[t]);
        if (options.normalize_features) {
            // u = x / |x|  =>  dx = (du - u (u . du)) / |x|
            const Matrix& u = nodes.frames[t];
            for (std::size_t i = 0; i < n; ++i) {
                const double norm = nodes.norms[t][i];
                auto gr = g.row(i);
                if (norm < kMinNorm) {
                    for (double& v : gr) v /= kMinNorm;
                    continue;
                }
                const double proj = dot(u.row(i), gr);
                for (std::size_t c = 0; c < gr.size(); ++c) gr[c] = (gr[c] - u(i, c) * proj) / norm;
            }
        }
        out.grad.set_frame(t, g);
    }
    return out;
}

double mean_roundtrip_diagonal(const Tensor3& h, double temperature, const SpanSchedule& schedule,
                               const GraphOptions& options) {
    validate_schedule(schedule, h.frames());
    const auto chain = build_chain(h, temperature, options);
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& span : schedule.spans) {
        for (std::size_t k : span.starts) {
            const Matrix r = round_trip(multi_step(chain, k, span.z));
            for (std::size_t i = 0; i < r.rows(); ++i) sum += r(i, i);
            count += r.rows();
        }
    }
    return sum / static_cast<double>(count);
}

Matrix brute_force_roundtrip(const std::vector<TransitionMatrix>& chain, std::size_t k, std::size_t z) {
    if (z == 0) throw StructuralError("brute_force_roundtrip span must be >= 1");
    std::vector<const Matrix*> steps;
    for (std::size_t i = 0; i < z; ++i) steps.push_back(&step_probs(chain, k + i));
    const std::size_t n = steps.front()->rows();

    double budget = 1.0;
    for (std::size_t i = 0; i < 2 * z; ++i) budget *= static_cast<double>(n);
    if (budget > 1e6) throw OracleScopeError("walk enumeration exceeds 1e6 paths");

    // Walk: a_0 = i -> a_1 -> ... -> a_z (forward), then a_z = b_z -> b_{z-1}
    // -> ... -> b_0 = j, where the return step b_{l+1} -> b_l carries the
    // transposed weight P_l(b_l, b_{l+1}).
    const std::size_t free_nodes = 2 * z - 1;
    Matrix out(n, n);
    std::vector<std::size_t> digits(free_nodes);
    std::vector<std::size_t> fwd(z + 1);
    std::vector<std::size_t> back(z + 1);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double total = 0.0;
            std::fill(digits.begin(), digits.end(), 0);
            while (true) {
                fwd[0] = i;
                for (std::size_t l = 1; l <= z; ++l) fwd[l] = digits[l - 1];
                back[z] = fwd[z];
                back[0] = j;
                for (std::size_t l = 1; l < z; ++l) back[l] = digits[z + l - 1];

                double w = 1.0;
                for (std::size_t l = 0; l < z; ++l) w *= (*steps[l])(fwd[l], fwd[l + 1]);
                for (std::size_t l = 0; l < z; ++l) w *= (*steps[l])(back[l], back[l + 1]);
                total += w;

                std::size_t pos = 0;
                while (pos < free_nodes && ++digits[pos] == n) digits[pos++] = 0;
                if (pos == free_nodes) break;
            }
            out(i, j) = total;
        }
    }
    return out;
}

}  // namespace sscd
