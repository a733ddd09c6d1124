#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace sqrtlab {

/// A reproducible random stream identified by (seed, stream_id, substream).
/// Each simulated path owns one stream, so results never depend on how
/// paths are distributed over workers.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t substream = 0)
        : seed_(seed), stream_id_(stream_id), substream_(substream) {
        // Chained splitmix64 finalizers; a single 64-bit seed keeps engine
        // construction cheap enough to afford one stream per path.
        engine_.seed(mix(seed ^ mix(stream_id ^ mix(substream + 0x5157u))));
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }
    std::uint64_t substream_id() const noexcept { return substream_; }

    /// An independent child stream; children of distinct k never overlap.
    RngStream substream(std::uint64_t k) const { return RngStream(seed_, stream_id_, substream_ * 1000003u + k + 1); }

    std::mt19937_64& engine() noexcept { return engine_; }

    /// Uniform on the open interval (0, 1).
    double uniform() {
        double u;
        do {
            u = std::generate_canonical<double, 53>(engine_);
        } while (u == 0.0);
        return u;
    }

    double normal() { return normal_(engine_); }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t substream_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

/// Stream ids are (tag << 40) | index: tags separate experiments (and the two
/// sides of an identity), the index separates paths.
inline constexpr int kStreamIndexBits = 40;

inline std::uint64_t make_stream_id(std::uint32_t tag, std::uint64_t index) {
    return (static_cast<std::uint64_t>(tag) << kStreamIndexBits) |
           (index & ((std::uint64_t{1} << kStreamIndexBits) - 1));
}

/// 24-bit FNV-1a tag for a human-readable experiment name.
inline std::uint32_t stream_tag(std::string_view name) {
    std::uint32_t h = 2166136261u;
    for (unsigned char ch : name) {
        h ^= ch;
        h *= 16777619u;
    }
    return (h ^ (h >> 24)) & 0xFFFFFFu;
}

struct StreamLayout {
    std::uint64_t seed = 0;
    std::uint32_t tag = 0;

    RngStream path(std::uint64_t index) const { return RngStream(seed, make_stream_id(tag, index)); }
    StreamLayout with_tag(std::string_view name) const { return {seed, stream_tag(name)}; }
};

}  // namespace sqrtlab
