#pragma once

#include <cstddef>
#include <vector>

#include "fedsim/rng.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

// Per-domain input transform; label-preserving by construction (applied
// after the class pattern is rendered). Domains shift P(x), never P(y|x).
struct DomainSpec {
    std::size_t domain_id = 0;
    double brightness = 0.0;   // additive offset
    double contrast = 1.0;     // multiplicative around mid-gray
    double noise_sigma = 0.0;  // i.i.d. gaussian, per sample
    std::size_t texture_id = 0;
    double texture_amp = 0.0;  // background texture amplitude
    std::vector<std::size_t> channel_perm;  // size C, identity when empty
    int rotation_quarters = 0;              // 0..3 quarter turns
};

enum class Split { Train, Test };

struct Sample {
    Tensor x;  // [C, H, W], values in [0, 1]
    std::size_t label = 0;
    std::size_t domain_id = 0;
};

struct Shard {
    std::vector<Sample> samples;
    Split split = Split::Train;
    std::size_t domain_id = 0;
};

struct DataGenConfig {
    std::size_t num_domains = 3;
    std::size_t num_classes = 10;
    std::size_t train_per_domain = 500;
    std::size_t test_per_domain = 100;
    std::size_t channels = 3;
    std::size_t height = 28;
    std::size_t width = 28;
    double gap_strength = 1.0;  // scales the inter-domain transform spread
};

struct DomainData {
    DomainSpec spec;
    Shard train;
    Shard test;
};

// Class glyphs are coarse 4x4 binary codes chosen so that all quarter-turn
// rotations of all classes stay pairwise distinct; the code set depends only
// on the stream, so class identity is domain-invariant.
std::vector<std::vector<int>> make_glyph_codes(std::size_t num_classes, RngStream stream);

Tensor render_glyph(const std::vector<int>& code, std::size_t channels, std::size_t height,
                    std::size_t width);

Tensor apply_domain_transform(const Tensor& x, const DomainSpec& spec, RngStream& noise);

std::vector<DomainData> gen_domains(const DataGenConfig& cfg, RngStream stream);

// One-domain-per-client: a random equal split of each domain's train set
// into `clients_per_domain` shards. Requires divisibility.
std::vector<Shard> domain_partition(const std::vector<DomainData>& domains,
                                    std::size_t clients_per_domain, RngStream stream);

// Per class, client proportions ~ Dir(alpha); samples apportioned by
// largest remainder. Every client receives at least one sample (bounded
// number of re-draws, then RetriesExhausted).
std::vector<std::vector<std::size_t>> dirichlet_partition(
    const std::vector<std::size_t>& labels, std::size_t num_clients, double alpha,
    RngStream stream);

std::vector<std::vector<std::size_t>> iid_partition(const std::vector<std::size_t>& labels,
                                                    std::size_t num_clients,
                                                    RngStream stream);

}  // namespace fedsim
