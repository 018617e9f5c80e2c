#include "fedsim/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fedsim {

namespace {

constexpr std::size_t kCells = 4;  // glyph codes are 4x4

std::vector<int> rotate_code(const std::vector<int>& code) {
    std::vector<int> out(kCells * kCells);
    for (std::size_t i = 0; i < kCells; ++i) {
        for (std::size_t j = 0; j < kCells; ++j) {
            out[j * kCells + (kCells - 1 - i)] = code[i * kCells + j];
        }
    }
    return out;
}

std::size_t hamming(const std::vector<int>& a, const std::vector<int>& b) {
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] != b[i]) ? 1 : 0;
    return d;
}

}  // namespace

std::vector<std::vector<int>> make_glyph_codes(std::size_t num_classes, RngStream stream) {
    if (num_classes < 2) throw InvalidCounts("need at least 2 classes");
    // Distance >= 4 between every rotation of every pair of classes keeps
    // labels unambiguous no matter which quarter-turn a domain applies.
    constexpr std::size_t kMinDistance = 4;
    constexpr std::size_t kMaxAttempts = 20000;

    std::vector<std::vector<int>> codes;
    std::vector<std::vector<int>> rotations;  // all rotations of accepted codes
    std::size_t attempts = 0;
    while (codes.size() < num_classes) {
        if (++attempts > kMaxAttempts) {
            throw RetriesExhausted("glyph code search for " + std::to_string(num_classes) +
                                   " classes");
        }
        std::vector<int> cand(kCells * kCells);
        int pop = 0;
        for (auto& bit : cand) {
            bit = stream.next_u64() & 1 ? 1 : 0;
            pop += bit;
        }
        if (pop < 4 || pop > 12) continue;

        std::vector<std::vector<int>> cand_rots{cand};
        for (int r = 0; r < 3; ++r) cand_rots.push_back(rotate_code(cand_rots.back()));

        bool ok = true;
        for (const auto& cr : cand_rots) {
            for (const auto& er : rotations) {
                if (hamming(cr, er) < kMinDistance) {
                    ok = false;
                    break;
                }
            }
            if (!ok) break;
        }
        if (!ok) continue;

        codes.push_back(cand);
        for (auto& cr : cand_rots) rotations.push_back(std::move(cr));
    }
    return codes;
}

Tensor render_glyph(const std::vector<int>& code, std::size_t channels, std::size_t height,
                    std::size_t width) {
    Tensor x({channels, height, width});
    double* p = x.data();
    for (std::size_t c = 0; c < channels; ++c) {
        // Channels carry distinct intensity pairs so channel permutation is
        // a real domain shift.
        const double fg = 0.85 - 0.12 * static_cast<double>(c % 3);
        const double bg = 0.15 + 0.08 * static_cast<double>(c % 3);
        for (std::size_t i = 0; i < height; ++i) {
            const std::size_t ci = i * kCells / height;
            for (std::size_t j = 0; j < width; ++j) {
                const std::size_t cj = j * kCells / width;
                p[(c * height + i) * width + j] = code[ci * kCells + cj] ? fg : bg;
            }
        }
    }
    return x;
}

namespace {

Tensor rotate_quarters(const Tensor& x, int quarters) {
    quarters = ((quarters % 4) + 4) % 4;
    if (quarters == 0) return x;
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (H != W) throw InvalidCounts("rotation requires square images");
    Tensor out(x.shape());
    const double* src = x.data();
    double* dst = out.data();
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < H; ++i) {
            for (std::size_t j = 0; j < W; ++j) {
                std::size_t ti = i, tj = j;
                switch (quarters) {
                    case 1: ti = j; tj = H - 1 - i; break;
                    case 2: ti = H - 1 - i; tj = W - 1 - j; break;
                    case 3: ti = W - 1 - j; tj = i; break;
                }
                dst[(c * H + ti) * W + tj] = src[(c * H + i) * W + j];
            }
        }
    }
    return out;
}

double texture_value(std::size_t texture_id, std::size_t i, std::size_t j, std::size_t h,
                     std::size_t w) {
    const double fx = 1.0 + static_cast<double>(texture_id % 3);
    const double fy = 1.0 + static_cast<double>((texture_id / 3) % 3);
    const double phase = static_cast<double>(texture_id % 7) * 0.897;
    const double u = static_cast<double>(i) / static_cast<double>(h);
    const double v = static_cast<double>(j) / static_cast<double>(w);
    return std::sin(2.0 * M_PI * (fx * u + fy * v) + phase);
}

}  // namespace

Tensor apply_domain_transform(const Tensor& x, const DomainSpec& spec, RngStream& noise) {
    if (x.rank() != 3) {
        throw ShapeMismatch("domain transform input must be [C,H,W], got " +
                            shape_str(x.shape()));
    }
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);

    Tensor rotated = rotate_quarters(x, spec.rotation_quarters);

    Tensor out(x.shape());
    const double* src = rotated.data();
    double* dst = out.data();
    const bool affine = (spec.contrast != 1.0 || spec.brightness != 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        const std::size_t from =
            spec.channel_perm.empty() ? c : spec.channel_perm.at(c) % C;
        for (std::size_t i = 0; i < H; ++i) {
            for (std::size_t j = 0; j < W; ++j) {
                double v = src[(from * H + i) * W + j];
                if (affine) v = spec.contrast * (v - 0.5) + 0.5 + spec.brightness;
                if (spec.texture_amp != 0.0) {
                    v += spec.texture_amp * texture_value(spec.texture_id, i, j, H, W);
                }
                if (spec.noise_sigma > 0.0) {
                    v += spec.noise_sigma * noise.next_normal();
                }
                dst[(c * H + i) * W + j] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return out;
}

std::vector<DomainData> gen_domains(const DataGenConfig& cfg, RngStream stream) {
    if (cfg.num_domains < 1) throw InvalidCounts("need at least 1 domain");
    if (cfg.num_classes < 2) throw InvalidCounts("need at least 2 classes");
    if (cfg.train_per_domain < 1 || cfg.test_per_domain < 1) {
        throw InvalidCounts("per-domain counts must be positive");
    }
    if (cfg.channels < 1 || cfg.height < kCells || cfg.width < kCells) {
        throw InvalidCounts("image must be at least " + std::to_string(kCells) + "x" +
                            std::to_string(kCells));
    }

    const auto glyphs = make_glyph_codes(cfg.num_classes, stream.split("glyphs"));
    const double g = cfg.gap_strength;
    const std::size_t D = cfg.num_domains;

    std::vector<DomainData> domains(D);
    for (std::size_t d = 0; d < D; ++d) {
        RngStream ds = stream.split("domain-spec", d);
        // Structured spread keeps domains well separated at any D; jitter
        // decorrelates the attribute order across seeds.
        const double pos = (D == 1) ? 0.0
                                    : 2.0 * static_cast<double>(d) /
                                              static_cast<double>(D - 1) -
                                          1.0;
        DomainSpec spec;
        spec.domain_id = d;
        spec.brightness = g * (0.18 * pos + 0.02 * (ds.next_uniform() - 0.5));
        spec.contrast = 1.0 + g * (-0.25 * pos + 0.04 * (ds.next_uniform() - 0.5));
        spec.noise_sigma = 0.03 * g;
        spec.texture_id = d;
        spec.texture_amp = g * 0.10;
        spec.rotation_quarters = static_cast<int>(d % 4);
        spec.channel_perm.resize(cfg.channels);
        {
            auto perm = ds.permutation(cfg.channels);
            for (std::size_t c = 0; c < cfg.channels; ++c) spec.channel_perm[c] = perm[c];
        }

        DomainData& dd = domains[d];
        dd.spec = spec;
        dd.train.split = Split::Train;
        dd.train.domain_id = d;
        dd.test.split = Split::Test;
        dd.test.domain_id = d;

        auto fill = [&](Shard& shard, Split split, std::size_t count) {
            shard.samples.reserve(count);
            const std::uint64_t split_tag = (split == Split::Train) ? 0 : 1;
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t label = i % cfg.num_classes;
                RngStream ss = stream.split("sample", d).split(split_tag).split(i);
                Tensor base =
                    render_glyph(glyphs[label], cfg.channels, cfg.height, cfg.width);
                Sample sample;
                sample.x = apply_domain_transform(base, spec, ss);
                sample.label = label;
                sample.domain_id = d;
                shard.samples.push_back(std::move(sample));
            }
        };
        fill(dd.train, Split::Train, cfg.train_per_domain);
        fill(dd.test, Split::Test, cfg.test_per_domain);
    }
    return domains;
}

std::vector<Shard> domain_partition(const std::vector<DomainData>& domains,
                                    std::size_t clients_per_domain, RngStream stream) {
    if (clients_per_domain == 0) throw InvalidCounts("clients_per_domain must be positive");
    std::vector<Shard> shards;
    for (std::size_t d = 0; d < domains.size(); ++d) {
        const auto& train = domains[d].train.samples;
        if (train.size() % clients_per_domain != 0) {
            throw IndivisibleSplit(std::to_string(train.size()) + " samples into " +
                                   std::to_string(clients_per_domain) + " clients");
        }
        const std::size_t per_client = train.size() / clients_per_domain;
        auto perm = stream.split("domain-partition", d).permutation(train.size());
        for (std::size_t k = 0; k < clients_per_domain; ++k) {
            Shard shard;
            shard.split = Split::Train;
            shard.domain_id = d;
            shard.samples.reserve(per_client);
            for (std::size_t i = 0; i < per_client; ++i) {
                shard.samples.push_back(train[perm[k * per_client + i]]);
            }
            shards.push_back(std::move(shard));
        }
    }
    return shards;
}

namespace {

double draw_gamma(RngStream& stream, double alpha) {
    // Marsaglia-Tsang; the alpha < 1 case boosts through alpha + 1.
    if (alpha < 1.0) {
        const double u = stream.next_uniform();
        return draw_gamma(stream, alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        const double x = stream.next_normal();
        const double t = 1.0 + c * x;
        if (t <= 0.0) continue;
        const double v = t * t * t;
        const double u = stream.next_uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

}  // namespace

std::vector<std::vector<std::size_t>> dirichlet_partition(
    const std::vector<std::size_t>& labels, std::size_t num_clients, double alpha,
    RngStream stream) {
    if (!(alpha > 0.0)) throw InvalidAlpha("alpha must be positive, got " + std::to_string(alpha));
    if (num_clients == 0) throw InvalidCounts("num_clients must be positive");
    if (labels.empty()) throw InvalidCounts("no samples to partition");
    if (labels.size() < num_clients) {
        throw InvalidCounts("fewer samples than clients");
    }

    std::size_t num_classes = 0;
    for (std::size_t l : labels) num_classes = std::max(num_classes, l + 1);

    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    constexpr std::size_t kMaxRetries = 100;
    for (std::size_t attempt = 0; attempt < kMaxRetries; ++attempt) {
        RngStream rs = stream.split("attempt", attempt);
        std::vector<std::vector<std::size_t>> clients(num_clients);

        for (std::size_t cls = 0; cls < num_classes; ++cls) {
            const auto& pool = by_class[cls];
            if (pool.empty()) continue;
            RngStream cs = rs.split("class", cls);

            std::vector<double> w(num_clients);
            double total = 0.0;
            for (auto& v : w) {
                v = draw_gamma(cs, alpha);
                total += v;
            }
            // Largest-remainder apportionment of pool.size() samples.
            const double n = static_cast<double>(pool.size());
            std::vector<std::size_t> counts(num_clients);
            std::vector<std::pair<double, std::size_t>> rema(num_clients);
            std::size_t assigned = 0;
            for (std::size_t k = 0; k < num_clients; ++k) {
                const double quota = n * w[k] / total;
                counts[k] = static_cast<std::size_t>(std::floor(quota));
                assigned += counts[k];
                rema[k] = {quota - std::floor(quota), k};
            }
            std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;  // deterministic tie-break
            });
            for (std::size_t r = 0; assigned < pool.size(); ++r, ++assigned) {
                counts[rema[r % num_clients].second] += 1;
            }

            auto perm = cs.split("order").permutation(pool.size());
            std::size_t cursor = 0;
            for (std::size_t k = 0; k < num_clients; ++k) {
                for (std::size_t i = 0; i < counts[k]; ++i) {
                    clients[k].push_back(pool[perm[cursor++]]);
                }
            }
        }

        const bool all_nonempty = std::all_of(clients.begin(), clients.end(),
                                              [](const auto& c) { return !c.empty(); });
        if (all_nonempty) {
            for (auto& c : clients) std::sort(c.begin(), c.end());
            return clients;
        }
    }
    throw RetriesExhausted("dirichlet partition left a client empty after " +
                           std::to_string(kMaxRetries) + " draws");
}

std::vector<std::vector<std::size_t>> iid_partition(const std::vector<std::size_t>& labels,
                                                    std::size_t num_clients,
                                                    RngStream stream) {
    if (num_clients == 0) throw InvalidCounts("num_clients must be positive");
    const std::size_t n = labels.size();
    if (n < num_clients) throw InvalidCounts("fewer samples than clients");
    auto perm = stream.split("iid").permutation(n);
    const std::size_t base = n / num_clients;
    const std::size_t rem = n % num_clients;
    std::vector<std::vector<std::size_t>> clients(num_clients);
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
        const std::size_t take = base + (k < rem ? 1 : 0);
        for (std::size_t i = 0; i < take; ++i) clients[k].push_back(perm[cursor++]);
        std::sort(clients[k].begin(), clients[k].end());
    }
    return clients;
}

}  // namespace fedsim
