#pragma once

#include <cstdint>
#include <vector>

namespace crackseg {

/// Maps a global sample position to a dataset index. Every epoch is a fresh
/// permutation seeded from (seed, epoch), so the sequence depends only on the
/// position and training can resume anywhere without saving RNG state.
class EpochSampler {
public:
    EpochSampler(std::size_t dataset_size, std::uint64_t seed);

    std::size_t index(std::int64_t position);

private:
    void reshuffle(std::int64_t epoch);

    std::size_t n_;
    std::uint64_t seed_;
    std::int64_t epoch_ = -1;
    std::vector<std::size_t> perm_;
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace crackseg
