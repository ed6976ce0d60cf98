#include "fedsim/rng.hpp"

#include "fedsim/error.hpp"

#include <cmath>

namespace fedsim {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace

RngSeed derive_seed(RngSeed base, std::string_view tag) {
    return RngSeed{splitmix64(base.value ^ fnv1a(tag))};
}

RngSeed derive_seed(RngSeed base, std::string_view tag, std::uint64_t index) {
    return RngSeed{splitmix64(derive_seed(base, tag).value + 0x632be59bd9b4e019ULL * (index + 1))};
}

double Rng::next_gaussian(double stddev) {
    double u1 = next_double_open();
    double u2 = next_double();
    return stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

std::size_t Rng::next_index(std::size_t n) {
    if (n == 0) {
        throw ContractError("Rng::next_index: n must be positive");
    }
    const std::uint64_t range = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    std::uint64_t x = next_u64();
    while (x >= limit) {
        x = next_u64();
    }
    return static_cast<std::size_t>(x % range);
}

double Rng::next_gamma(double shape) {
    if (shape <= 0.0) {
        throw ContractError("Rng::next_gamma: shape must be positive");
    }
    if (shape < 1.0) {
        // boost: Gamma(a) = Gamma(a+1) * U^(1/a)
        double u = next_double_open();
        return next_gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = next_gaussian(1.0);
        double t = 1.0 + c * x;
        if (t <= 0.0) {
            continue;
        }
        double v = t * t * t;
        double u = next_double_open();
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
            return d * v;
        }
    }
}

} // namespace fedsim
