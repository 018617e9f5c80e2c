#include "fedsim/rng.hpp"

#include <cmath>

namespace fedsim {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id) {
    base_ = mix64(mix64(seed_ + kGolden) ^ mix64(stream_id_ + 0x632be59bd9b4e019ULL));
}

RngStream RngStream::split(std::uint64_t label) const {
    return RngStream(seed_, mix64(stream_id_ ^ mix64(label + kGolden)));
}

RngStream RngStream::split(std::string_view label) const {
    return split(fnv1a64(label));
}

RngStream RngStream::split(std::string_view label, std::uint64_t index) const {
    return split(fnv1a64(label)).split(index);
}

std::uint64_t RngStream::next_u64() { return mix64(base_ + (++counter_) * kGolden); }

std::uint64_t RngStream::uniform_below(std::uint64_t bound) {
    // Rejection on the partial final block keeps the draw unbiased.
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= threshold) return r % bound;
    }
}

double RngStream::next_uniform() {
    // 53 random bits, offset to lie strictly inside (0, 1).
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53 + 0x1.0p-54;
}

namespace {

// Acklam's rational approximation to the inverse normal CDF
// (relative error < 1.15e-9 over the full range).
double inverse_normal_cdf(double p) {
    static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                -2.759285104469687e+02, 1.383577518672690e+02,
                                -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                -1.556989798598866e+02, 6.680131188771972e+01,
                                -1.328068155288572e+01};
    static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                -2.400758277161838e+00, -2.549732539343734e+00,
                                4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;

    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
               (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    }
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
}

}  // namespace

double RngStream::next_normal() { return inverse_normal_cdf(next_uniform()); }

Tensor RngStream::uniform(const std::vector<std::size_t>& shape) {
    Tensor t(shape);
    double* p = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) p[i] = next_uniform();
    return t;
}

Tensor RngStream::normal(const std::vector<std::size_t>& shape, double mean, double stddev) {
    Tensor t(shape);
    double* p = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) p[i] = mean + stddev * next_normal();
    return t;
}

std::vector<std::size_t> RngStream::permutation(std::size_t n) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i-- > 1;) {
        const std::size_t j = uniform_below(i + 1);
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

}  // namespace fedsim
