// SPDX-License-Identifier: Apache-2.0
#include "motok/rng.hpp"

#include <cmath>

namespace motok {

namespace {

// SplitMix64, used to expand seeds into xoshiro state.
uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace

Rng::Rng(uint64_t seed) {
    uint64_t s = seed;
    for (auto& w : state_) {
        w = splitmix64(s);
    }
}

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) {
        u1 = 0x1.0p-53;
    }
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

std::vector<double> Rng::normal_vec(size_t n) {
    std::vector<double> out(n);
    for (auto& v : out) {
        v = normal();
    }
    return out;
}

uint64_t Rng::uniform_index(uint64_t n) {
    // Modulo bias is irrelevant at the scales used here (n << 2^64).
    return n == 0 ? 0 : next_u64() % n;
}

Rng Rng::fork(std::string_view label) const {
    uint64_t h = fnv1a(label);
    h ^= state_[0] + 0x9e3779b97f4a7c15ULL + (state_[3] << 6);
    return Rng(h);
}

uint64_t fnv1a(std::string_view bytes) {
    return fnv1a(bytes.data(), bytes.size());
}

uint64_t fnv1a(const void* data, size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace motok
