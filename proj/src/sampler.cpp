#include "crackseg/sampler.hpp"

#include <numeric>
#include <random>
#include <stdexcept>

namespace crackseg {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

EpochSampler::EpochSampler(std::size_t dataset_size, std::uint64_t seed) : n_(dataset_size), seed_(seed) {
    if (n_ == 0) throw std::invalid_argument("EpochSampler: empty dataset");
}

void EpochSampler::reshuffle(std::int64_t epoch) {
    perm_.resize(n_);
    std::iota(perm_.begin(), perm_.end(), 0);
    std::mt19937_64 rng(derive_seed(seed_, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n_; i > 1; --i) std::swap(perm_[i - 1], perm_[rng() % i]);
    epoch_ = epoch;
}

std::size_t EpochSampler::index(std::int64_t position) {
    const auto n = static_cast<std::int64_t>(n_);
    const std::int64_t epoch = position / n;
    if (epoch != epoch_) reshuffle(epoch);
    return perm_[static_cast<std::size_t>(position % n)];
}

}  // namespace crackseg
