#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace imo {

// Error taxonomy: shape/contract violations, bad arguments or config,
// malformed files, missing files. The CLI maps these to exit codes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& shape);

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// Kernel parallelism cap, from IMO_THREADS (default 1). Kernels partition
// output elements between threads, so results are identical for any value.
int kernel_threads();

// splitmix64 step; used to derive independent sub-seeds from one root seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

std::uint32_t crc32(const void* data, std::size_t n);

// Deterministic random source: mt19937_64 plus explicit Box-Muller, so the
// draw sequence is identical on every platform. Draw order per call:
// uniform() consumes one engine output, normal() consumes two per cached pair.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // [0,1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive range
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    double normal();

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace imo
