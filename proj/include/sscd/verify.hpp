#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sscd/disruptor.hpp"
#include "sscd/surrogate.hpp"
#include "sscd/training.hpp"

namespace sscd {

/// A small seeded problem: features, prompt/answer, frozen surrogate and a
/// disruptor with weights of standard deviation `disruptor_std`.
struct Instance {
    TrainingExample example;
    SurrogateParams surrogate;
    DisruptorParams disruptor;
};

struct InstanceShape {
    std::size_t frames = 3;
    std::size_t tokens = 2;
    std::size_t dim = 4;
    std::size_t model_dim = 8;
    std::size_t vocab_size = 16;
    std::size_t answer_len = 3;
    double rho = 0.5;
    double disruptor_std = 0.3;
};

Instance make_instance(const InstanceShape& shape, std::uint64_t seed);

/// Random row-stochastic chain from seeded features.
std::vector<TransitionMatrix> random_chain(std::size_t frames, std::size_t nodes, std::size_t dim, double temperature,
                                           std::uint64_t seed);

struct CheckResult {
    std::string name;
    bool passed = false;
    double measured = 0.0;
    double tolerance = 0.0;
    std::string detail;
};

/// Walk enumeration, Chapman-Kolmogorov, analytic loss values, finite
/// differences, decoding reductions, plausibility properties and format
/// round trips on small seeded instances.
std::vector<CheckResult> run_oracle_suite(std::uint64_t seed = 0);

}  // namespace sscd
