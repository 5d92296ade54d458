#include "sscd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "sscd/errors.hpp"

namespace sscd {

namespace {

std::string shape_str(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

}  // namespace

const char* to_string(IoErrorCode code) noexcept {
    switch (code) {
        case IoErrorCode::open_failed: return "open_failed";
        case IoErrorCode::write_failed: return "write_failed";
        case IoErrorCode::bad_magic: return "bad_magic";
        case IoErrorCode::version_mismatch: return "version_mismatch";
        case IoErrorCode::truncated: return "truncated";
        case IoErrorCode::trailing_bytes: return "trailing_bytes";
        case IoErrorCode::malformed_record: return "malformed_record";
    }
    return "unknown";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                         shape_str(rows, cols));
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw ShapeError("ragged matrix initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Tensor3::Tensor3(std::size_t frames, std::size_t tokens, std::size_t dim, double fill)
    : frames_(frames), tokens_(tokens), dim_(dim), data_(frames * tokens * dim, fill) {}

Tensor3::Tensor3(std::size_t frames, std::size_t tokens, std::size_t dim, std::vector<double> data)
    : frames_(frames), tokens_(tokens), dim_(dim), data_(std::move(data)) {
    if (data_.size() != frames * tokens * dim) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match T*N*d = " + std::to_string(frames * tokens * dim));
    }
}

Matrix Tensor3::frame(std::size_t t) const {
    if (t >= frames_) throw ShapeError("frame index out of range");
    const auto first = data_.begin() + static_cast<std::ptrdiff_t>(t * tokens_ * dim_);
    return Matrix(tokens_, dim_, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(tokens_ * dim_)));
}

void Tensor3::set_frame(std::size_t t, const Matrix& m) {
    if (t >= frames_ || m.rows() != tokens_ || m.cols() != dim_) {
        throw ShapeError("set_frame: " + shape_str(m.rows(), m.cols()) + " does not fit frame " +
                         shape_str(tokens_, dim_));
    }
    std::copy(m.data().begin(), m.data().end(), data_.begin() + static_cast<std::ptrdiff_t>(t * tokens_ * dim_));
}

Matrix Tensor3::flatten() const { return Matrix(frames_ * tokens_, dim_, data_); }

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + shape_str(a.rows(), a.cols()) + " by " + shape_str(b.rows(), b.cols()));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out_row = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            const auto b_row = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
        }
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("add: " + shape_str(a.rows(), a.cols()) + " vs " + shape_str(b.rows(), b.cols()));
    }
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

Matrix scale(const Matrix& m, double s) {
    Matrix out = m;
    for (double& v : out.data()) v *= s;
    return out;
}

Matrix softmax_rows(const Matrix& m, double temperature) {
    if (!(temperature > 0.0)) throw ParameterError("softmax temperature must be positive");
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto in = m.row(i);
        auto dst = out.row(i);
        const double peak = *std::max_element(in.begin(), in.end());
        double total = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            dst[j] = std::exp((in[j] - peak) / temperature);
            total += dst[j];
        }
        for (double& v : dst) v /= total;
    }
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    Matrix row(1, logits.size(), std::vector<double>(logits.begin(), logits.end()));
    return softmax_rows(row, 1.0).data();
}

double log_sum_exp(std::span<const double> values) {
    if (values.empty()) return -std::numeric_limits<double>::infinity();
    const double peak = *std::max_element(values.begin(), values.end());
    if (!std::isfinite(peak)) return peak;
    double total = 0.0;
    for (double v : values) total += std::exp(v - peak);
    return peak + std::log(total);
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

bool all_finite(std::span<const double> values) noexcept {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::uint64_t state = seed ^ h;
    return splitmix64(state);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    std::uint64_t state = seed ^ (index * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL);
    splitmix64(state);
    return splitmix64(state);
}

Rng::Rng(std::uint64_t seed) noexcept {
    std::uint64_t state = seed;
    for (auto& word : s_) word = splitmix64(state);
}

std::uint64_t Rng::next_u64() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::uniform_int(std::uint64_t bound) noexcept {
    // Rejection sampling on the top of the range keeps the result unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % bound;
}

double Rng::normal() noexcept {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

Matrix seeded_gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed, double stddev) {
    Rng rng(seed);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = stddev * rng.normal();
    return m;
}

Tensor3 seeded_tensor(std::size_t frames, std::size_t tokens, std::size_t dim, std::uint64_t seed,
                        double stddev) {
    Rng rng(seed);
    Tensor3 t(frames, tokens, dim);
    for (double& v : t.data()) v = stddev * rng.normal();
    return t;
}

}  // namespace sscd
