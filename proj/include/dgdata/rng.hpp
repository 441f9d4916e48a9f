#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dgdata {

/// Deterministic random stream. Normal draws use Box-Muller without caching so
/// the generator state alone fully determines the sequence (needed for exact
/// checkpoint resume).
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    int uniform_int(int n);

    /// Standard normal draw.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Fisher-Yates shuffle, driven by uniform_int for portability.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    /// Derive an independent stream for a named purpose.
    Rng fork(uint64_t stream_id);

    std::string serialize() const;
    void deserialize(const std::string& s);

private:
    std::mt19937_64 gen_;
};

} // namespace dgdata
