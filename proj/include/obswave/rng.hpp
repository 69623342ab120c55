#pragma once

// Counter-based random numbers (Philox4x32-10) and Brownian paths.
// Every random quantity is a pure function of (master seed, stream domain,
// stream index, position), so ensembles regenerate bit-identically no matter
// how work is split across threads.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "obswave/errors.hpp"

namespace obswave {

using Philox4x32Block = std::array<std::uint32_t, 4>;

inline Philox4x32Block philox4x32_10(Philox4x32Block ctr, std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t M0 = 0xD2511F53u;
    constexpr std::uint32_t M1 = 0xCD9E8D57u;
    constexpr std::uint32_t W0 = 0x9E3779B9u;
    constexpr std::uint32_t W1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += W0;
            key[1] += W1;
        }
        const std::uint64_t p0 = static_cast<std::uint64_t>(M0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(M1) * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

/// Stream domains keep unrelated consumers of the same master seed apart.
enum class StreamDomain : std::uint32_t {
    Brownian = 1,
    InitialData = 2,
    SamplePoints = 3,
    Perturbation = 4,
};

/// Standard normal variates N(0,1) from Box-Muller on Philox uniforms.
class NormalStream {
public:
    NormalStream(std::uint64_t seed, StreamDomain domain, std::uint64_t index)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          domain_(static_cast<std::uint32_t>(domain)), index_(index) {}

    double next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const Philox4x32Block r = philox4x32_10(
            {block_++, domain_, static_cast<std::uint32_t>(index_), static_cast<std::uint32_t>(index_ >> 32)}, key_);
        const double u1 = to_unit((static_cast<std::uint64_t>(r[0]) << 32) | r[1]);
        const double u2 = to_unit((static_cast<std::uint64_t>(r[2]) << 32) | r[3]);
        const double rad = std::sqrt(-2.0 * std::log(u1));
        const double ang = 2.0 * std::numbers::pi * u2;
        spare_ = rad * std::sin(ang);
        have_spare_ = true;
        return rad * std::cos(ang);
    }

    /// Uniform on (0, 1).
    double uniform() {
        const Philox4x32Block r = philox4x32_10(
            {block_++, domain_, static_cast<std::uint32_t>(index_), static_cast<std::uint32_t>(index_ >> 32)}, key_);
        return to_unit((static_cast<std::uint64_t>(r[0]) << 32) | r[1]);
    }

private:
    static double to_unit(std::uint64_t bits) { return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53; }

    std::array<std::uint32_t, 2> key_;
    std::uint32_t domain_;
    std::uint64_t index_;
    std::uint32_t block_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// One realization of the scalar Brownian motion on the time partition.
struct BrownianPath {
    std::uint64_t seed = 0;
    std::uint64_t path_index = 0;
    double dt = 0.0;
    std::vector<double> increments;  // dB_k = B(t_{k+1}) - B(t_k), k = 0..nt-1

    static BrownianPath zero(int nt, double dt) {
        BrownianPath b;
        b.dt = dt;
        b.increments.assign(static_cast<std::size_t>(nt), 0.0);
        return b;
    }

    double value_at(int k) const {
        double s = 0.0;
        for (int m = 0; m < k; ++m) s += increments[static_cast<std::size_t>(m)];
        return s;
    }
};

inline BrownianPath sample_brownian(std::uint64_t master_seed, std::uint64_t path_index, int nt, double dt) {
    if (nt < 1 || !(dt > 0.0)) throw Error(ErrorKind::InvalidParameters, "sample_brownian needs nt >= 1 and dt > 0");
    BrownianPath b;
    b.seed = master_seed;
    b.path_index = path_index;
    b.dt = dt;
    b.increments.resize(static_cast<std::size_t>(nt));
    NormalStream normals(master_seed, StreamDomain::Brownian, path_index);
    const double scale = std::sqrt(dt);
    for (auto& inc : b.increments) inc = scale * normals.next();
    return b;
}

} // namespace obswave
