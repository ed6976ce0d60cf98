#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fedsim {

// Seed wrapper. Identical seed + identical call sequence => identical stream,
// independent of platform: the engine is std::mt19937_64 (fully specified by
// the standard) and all distributions below are implemented by hand.
struct RngSeed {
    std::uint64_t value = 0;
};

// Derive an independent seed for a named substream (splitmix64 over an FNV
// hash of the tag). Used to keep data generation, model init, adapter init
// and batch shuffling decoupled from each other.
RngSeed derive_seed(RngSeed base, std::string_view tag);
RngSeed derive_seed(RngSeed base, std::string_view tag, std::uint64_t index);

class Rng {
  public:
    explicit Rng(RngSeed seed) : gen_(seed.value) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1), 53-bit resolution
    double next_double() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // uniform in (0, 1), never exactly zero (safe for log())
    double next_double_open() {
        return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
    }

    // N(0, stddev^2) via Box-Muller (one value per call, partner discarded)
    double next_gaussian(double stddev);

    // uniform integer in [0, n), rejection sampled
    std::size_t next_index(std::size_t n);

    // Gamma(shape, 1) via Marsaglia-Tsang
    double next_gamma(double shape);

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = next_index(i);
            std::swap(items[i - 1], items[j]);
        }
    }

  private:
    std::mt19937_64 gen_;
};

} // namespace fedsim
