// SPDX-License-Identifier: Apache-2.0
#include "gdpf/rng.hpp"

namespace gdpf {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label,
                          std::initializer_list<std::uint64_t> indices) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::uint64_t state = splitmix64(seed ^ splitmix64(h));
    for (std::uint64_t i : indices) {
        state = splitmix64(state ^ splitmix64(i + 0x632be59bd9b4e019ULL));
    }
    return state;
}

}  // namespace gdpf
