// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace gdpf {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Sub-seed for a named purpose: splitmix64 chained over the base seed, the
/// FNV-1a hash of `label`, then each index in order. Streams for distinct
/// (label, indices) are independent of the order they are requested in.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label,
                          std::initializer_list<std::uint64_t> indices = {});

inline Rng make_rng(std::uint64_t seed, std::string_view label,
                    std::initializer_list<std::uint64_t> indices = {}) {
    return Rng(derive_seed(seed, label, indices));
}

}  // namespace gdpf
