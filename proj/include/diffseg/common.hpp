#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>

namespace diffseg {

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto distinct exit codes; tests assert
// the concrete types.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A scalar argument is out of its documented range (T = 0, odd embed_dim, ...).
struct InvalidParameterError : Error {
    using Error::Error;
};

/// Tensor dimensions do not line up (mismatched operands, indivisible sizes).
struct ShapeError : Error {
    using Error::Error;
};

/// Data content violates a contract (label out of range, non-one-hot map).
struct ValidationError : Error {
    using Error::Error;
};

/// An operation was called out of sequence (backward without forward).
struct StateError : Error {
    using Error::Error;
};

/// Training produced a non-finite loss or gradient.
struct DivergedError : Error {
    using Error::Error;
};

/// Filesystem failure (missing file, unwritable path).
struct IoError : Error {
    using Error::Error;
};

/// A file parsed but its content is unusable (unknown palette color, ...).
struct IngestionError : Error {
    using Error::Error;
};

struct CheckpointError : Error {
    using Error::Error;
};
struct UnsupportedVersionError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct CorruptionError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct ManifestError : CheckpointError {
    using CheckpointError::CheckpointError;
};

/// Checkpoint and requested run disagree (class count, input dims, ...).
struct CompatibilityError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Randomness. All sampling goes through Rng so results are reproducible
// bit-for-bit across runs; std::<distribution> types are avoided because
// their output is implementation-defined.
// ---------------------------------------------------------------------------

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Derives an independent stream seed from a root seed and a tag path,
/// e.g. {kStreamTrain, epoch, sample}. Used instead of serializing generator
/// state: any (epoch, sample) stream can be reconstructed after a resume.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = mix64(seed + 0x9E3779B97F4A7C15ull);
    for (std::uint64_t t : tags) {
        h = mix64(h ^ (t + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2)));
    }
    return h;
}

// Stream tags for derive_seed.
inline constexpr std::uint64_t kStreamInit = 1;
inline constexpr std::uint64_t kStreamTrain = 2;
inline constexpr std::uint64_t kStreamAugment = 3;
inline constexpr std::uint64_t kStreamOrder = 4;
inline constexpr std::uint64_t kStreamSample = 5;
inline constexpr std::uint64_t kStreamData = 6;

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(uniform() * static_cast<double>(hi - lo + 1));
    }

    /// Standard normal via Box-Muller (pairs cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;  // (0,1]
        const double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;        // [0,1)
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::uint64_t next_u64() { return engine_(); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    return Rng(derive_seed(seed, tags));
}

}  // namespace diffseg
