// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace motok {

// Deterministic xoshiro256** generator. Streams are split by name: every
// consumer (parameter init, noise draws, data generation) forks its own
// stream with a stable label, so adding a consumer never shifts the draws
// seen by existing ones.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform();

    // Standard normal via Box-Muller (cosine branch only; no internal cache,
    // so the stream state is exactly two u64 draws per sample).
    double normal();

    std::vector<double> normal_vec(size_t n);

    // Uniform integer in [0, n).
    uint64_t uniform_index(uint64_t n);

    // Child stream derived from this generator's current state and a label.
    // Does not advance the parent state.
    Rng fork(std::string_view label) const;

private:
    std::array<uint64_t, 4> state_;
};

// FNV-1a, used for stream labels and for content checksums in tests/logs.
uint64_t fnv1a(std::string_view bytes);
uint64_t fnv1a(const void* data, size_t size);

}  // namespace motok
