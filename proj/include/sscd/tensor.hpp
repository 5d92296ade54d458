#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace sscd {

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// T x N x d tensor (frames x tokens x features), row-major.
class Tensor3 {
public:
    Tensor3() = default;
    Tensor3(std::size_t frames, std::size_t tokens, std::size_t dim, double fill = 0.0);
    Tensor3(std::size_t frames, std::size_t tokens, std::size_t dim, std::vector<double> data);

    std::size_t frames() const noexcept { return frames_; }
    std::size_t tokens() const noexcept { return tokens_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t t, std::size_t n, std::size_t c) noexcept {
        return data_[(t * tokens_ + n) * dim_ + c];
    }
    double operator()(std::size_t t, std::size_t n, std::size_t c) const noexcept {
        return data_[(t * tokens_ + n) * dim_ + c];
    }

    /// Copy of frame t (0-based) as a tokens x dim matrix.
    Matrix frame(std::size_t t) const;
    void set_frame(std::size_t t, const Matrix& m);

    /// All tokens stacked frame-major: (frames*tokens) x dim.
    Matrix flatten() const;

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool same_shape(const Tensor3& other) const noexcept {
        return frames_ == other.frames_ && tokens_ == other.tokens_ && dim_ == other.dim_;
    }

    bool operator==(const Tensor3&) const = default;

private:
    std::size_t frames_ = 0;
    std::size_t tokens_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);

/// Row-wise softmax of m / temperature, computed with max subtraction.
Matrix softmax_rows(const Matrix& m, double temperature);

/// Softmax of a single vector (temperature 1).
std::vector<double> softmax(std::span<const double> logits);

double log_sum_exp(std::span<const double> values);

double dot(std::span<const double> a, std::span<const double> b);

bool all_finite(std::span<const double> values) noexcept;

// ---------------------------------------------------------------------------
// Random numbers
//
// Generator: xoshiro256** seeded through SplitMix64. Streams are split by
// hashing a label (FNV-1a 64) and mixing it with the parent seed, so every
// logical consumer (parameter init, data generation, epoch shuffles,
// sampling) owns an independent reproducible stream. Normals use the
// Box-Muller transform on 53-bit uniforms. Nothing here depends on
// implementation-defined <random> distributions.
// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// Seed for a named sub-stream of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) noexcept;
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept;

class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept;

    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform() noexcept;
    /// Uniform integer in [0, bound). bound must be > 0.
    std::uint64_t uniform_int(std::uint64_t bound) noexcept;
    double normal() noexcept;

private:
    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

Matrix seeded_gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed, double stddev = 1.0);
Tensor3 seeded_tensor(std::size_t frames, std::size_t tokens, std::size_t dim, std::uint64_t seed,
                        double stddev = 1.0);

}  // namespace sscd
