/* SPDX-License-Identifier: Apache-2.0 */
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace venosynth {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input: precondition failures, invalid configs, inconsistent volumes.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// The tree is not a valid rooted tree (names the first violation).
class StructureError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Filesystem and format problems.
class IoError : public Error {
public:
    using Error::Error;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    constexpr Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    constexpr bool operator==(const Vec3&) const = default;

    constexpr double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
};

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }
inline bool is_finite(const Vec3& a) {
    return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

/// Neumaier-compensated accumulator. Sums of a few thousand positive terms
/// agree to well below 1e-12 relative regardless of order.
class StableSum {
public:
    void add(double v) {
        const double t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v)) {
            comp_ += (sum_ - t) + v;
        } else {
            comp_ += (v - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

// ---------------------------------------------------------------------------
// Deterministic random numbers.
//
// Every stochastic step draws from std::mt19937_64 (bit-exact by the standard)
// or from the stateless splitmix64 hash below. Floating-point and bounded
// integer draws are derived by hand so results never depend on the standard
// library's distribution implementations.

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Derive an independent stream seed from a parent seed and an index.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

/// Uniform double in the open interval (0, 1) from 64 random bits.
constexpr double unit_open(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

template <class Engine>
double uniform_open(Engine& eng) {
    return unit_open(eng());
}

/// Uniform integer in [0, n) by rejection; exact for any n > 0.
template <class Engine>
std::uint64_t uniform_below(Engine& eng, std::uint64_t n) {
    const std::uint64_t limit = std::uint64_t(0) - (std::uint64_t(0) - n) % n;  // largest multiple of n
    for (;;) {
        const std::uint64_t v = eng();
        if (limit == 0 || v < limit) return v % n;
    }
}

}  // namespace venosynth
