#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace rimpulse {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// FNV-1a, used to turn substream names ("forward", "eval", ...) into keys.
inline std::uint64_t stream_key(std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Random stream owned by one path of one named substream. The engine state
/// depends only on (seed, substream, path), never on how many other paths were
/// drawn before, so parallel and serial simulation produce identical numbers.
class PathRng {
public:
    PathRng(std::uint64_t seed, std::string_view substream, std::uint64_t path)
        : engine_(splitmix64(splitmix64(seed ^ stream_key(substream)) + splitmix64(path + 0x632be59bd9b4e019ULL))) {}

    std::mt19937_64& engine() noexcept { return engine_; }

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

} // namespace rimpulse
