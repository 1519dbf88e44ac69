#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace hrg {

// Deterministic random source. The mt19937_64 engine is bit-exact per the
// C++ standard; the distributions are hand-rolled because the std::
// distribution templates are implementation-defined and would break
// cross-toolchain reproducibility of datasets and checkpoints.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform double in [0, 1), 53-bit resolution.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller. Consumes exactly two engine draws per
    // call so the stream position is a pure function of the call count.
    double normal();

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Unbiased integer in [0, n). n must be positive.
    int uniform_int(int n);

    // k distinct values from [0, n), in draw order (partial Fisher-Yates).
    std::vector<int> sample_without_replacement(int n, int k);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<size_t>(i)],
                      v[static_cast<size_t>(uniform_int(i + 1))]);
        }
    }

    // Engine state as decimal text (standardized stream format).
    std::string serialize() const;
    void deserialize(const std::string& text);

    // Stream derivation for per-task generators: splitmix64 over (seed, stream).
    static uint64_t mix(uint64_t seed, uint64_t stream);

private:
    std::mt19937_64 engine_;
};

}  // namespace hrg
