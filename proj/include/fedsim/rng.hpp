#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "fedsim/tensor.hpp"

namespace fedsim {

// Splittable counter-based random stream. A stream is identified by
// (seed, stream_id); split() derives a child id purely from the parent id
// and a label, so the same (seed, path of labels) names the same stream in
// every process. Draws advance a private counter; each logical task owns
// its stream exclusively and parallelism comes from splitting, not sharing.
//
// Generator: SplitMix64 over base + counter, where base mixes seed and
// stream_id. Normal deviates use the inverse-CDF transform (Acklam's
// rational approximation), one uniform per deviate, so replay is exact.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

    RngStream split(std::string_view label) const;
    RngStream split(std::uint64_t label) const;
    RngStream split(std::string_view label, std::uint64_t index) const;

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    std::uint64_t next_u64();
    std::uint64_t uniform_below(std::uint64_t bound);  // [0, bound)
    double next_uniform();                             // (0, 1)
    double next_normal();                              // standard normal

    Tensor uniform(const std::vector<std::size_t>& shape);
    Tensor normal(const std::vector<std::size_t>& shape, double mean = 0.0,
                  double stddev = 1.0);
    std::vector<std::size_t> permutation(std::size_t n);

private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_id_ = 0;
    std::uint64_t base_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace fedsim
