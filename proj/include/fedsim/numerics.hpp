#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/errors.hpp"

namespace fedsim {

// Dense row-major matrix of 64-bit floats. Treated as immutable once built;
// sharing read-only across threads is safe.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                             " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

    std::span<const double> row(std::size_t r) const {
        return {data_.data() + r * cols_, cols_};
    }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Standard product with 64-bit accumulation, k-inner loop order.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul shape mismatch: " + a.shape_str() + " x " + b.shape_str());
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* out_row = out.row(i).data();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* b_row = b.row(k).data();
            for (std::size_t j = 0; j < b.cols(); ++j)
                out_row[j] += aik * b_row[j];
        }
    }
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!std::isfinite(out.data()[i]))
            throw NumericError("matmul produced non-finite entry at flat index " +
                               std::to_string(i));
    return out;
}

namespace detail {

// splitmix64 output function (Vigna 2015). Also used as the seed mixer for
// stream splitting.
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

} // namespace detail

// Deterministic PRNG: splitmix64 core with explicit stream splitting.
// A child stream's seed is mix64(parent_seed ^ fnv1a64(label)), so child
// streams depend only on (parent seed, label) and are insensitive to how
// much the parent has been consumed. Identical seeds give identical draw
// sequences on every platform. Single-owner: never share one instance
// across threads.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return detail::mix64(state_);
    }

    // Uniform in [0,1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, bound) by rejection.
    std::uint64_t next_below(std::uint64_t bound) {
        if (bound == 0) throw DomainError("next_below: bound must be positive");
        const std::uint64_t threshold = (0 - bound) % bound;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x < threshold);
        return x % bound;
    }

    Rng split(std::string_view label) const {
        return Rng(detail::mix64(seed_ ^ detail::fnv1a64(label)));
    }

    Rng split(std::string_view kind, std::uint64_t index) const {
        std::string label(kind);
        label += '/';
        label += std::to_string(index);
        return split(label);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[next_below(i)]);
    }

    // n i.i.d. draws from N(mean, sigma^2) via the Marsaglia polar method
    // (fixed choice; pairs generated together, odd tail's spare discarded).
    // sigma = 0 degenerates to the constant `mean` without consuming draws.
    std::vector<double> gaussian(std::size_t n, double mean, double sigma) {
        if (sigma < 0) throw DomainError("gaussian: sigma must be >= 0");
        std::vector<double> out(n, mean);
        if (sigma == 0.0) return out;
        for (std::size_t i = 0; i < n; i += 2) {
            double u, v, s;
            do {
                u = 2.0 * next_double() - 1.0;
                v = 2.0 * next_double() - 1.0;
                s = u * u + v * v;
            } while (s >= 1.0 || s == 0.0);
            const double f = std::sqrt(-2.0 * std::log(s) / s);
            out[i] = mean + sigma * u * f;
            if (i + 1 < n) out[i + 1] = mean + sigma * v * f;
        }
        return out;
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
};

} // namespace fedsim
