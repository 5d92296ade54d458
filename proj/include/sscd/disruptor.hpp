#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sscd/tensor.hpp"

namespace sscd {

/// Tokenwise residual perturbation M(h) = w2ᵀ·gelu(w1ᵀ·h + b1) + b2.
struct DisruptorParams {
    Matrix w1;               // d x d_h
    std::vector<double> b1;  // d_h
    Matrix w2;               // d_h x d
    std::vector<double> b2;  // d

    std::size_t feature_dim() const noexcept { return w1.rows(); }
    std::size_t hidden_dim() const noexcept { return w1.cols(); }
    std::size_t parameter_count() const noexcept { return w1.size() + b1.size() + w2.size() + b2.size(); }

    void validate() const;

    /// Flat layout: w1 (row-major), b1, w2 (row-major), b2.
    std::vector<double> flatten() const;
    void assign_flat(std::span<const double> flat);

    bool operator==(const DisruptorParams&) const = default;
};

std::size_t default_hidden_dim(std::size_t d) noexcept;

/// Gaussian init with std 1e-2 for weights and biases.
DisruptorParams init_disruptor(std::size_t d, std::size_t d_h, std::uint64_t seed);
DisruptorParams zero_disruptor(std::size_t d, std::size_t d_h);

/// M(h) alone, applied to every token.
Tensor3 perturbation(const Tensor3& h, const DisruptorParams& params);

/// h + M(h).
Tensor3 disrupt(const Tensor3& h, const DisruptorParams& params);

struct DisruptorGrad {
    std::vector<double> params;  // flat, same layout as DisruptorParams::flatten
    Tensor3 input;
};

/// Pulls an upstream gradient on disrupt(h) back to the parameters and to h.
DisruptorGrad disrupt_backward(const Tensor3& h, const DisruptorParams& params, const Tensor3& grad_output);

double gelu(double x) noexcept;
double gelu_derivative(double x) noexcept;

}  // namespace sscd
