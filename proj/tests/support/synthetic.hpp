#pragma once
// Synthetic pavement-like images with thin dark cracks, for tests only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "crackseg/dataio.hpp"
#include "crackseg/image.hpp"

namespace crackseg::testkit {

// A random walk from one edge to the opposite one, drawn 1-2 px wide.
inline Sample synthetic_crack(int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.04);

    Sample s{Image(size, size, 3), MaskPlane(size, size)};
    const bool vertical = u(rng) < 0.5;
    const int width = u(rng) < 0.5 ? 1 : 2;
    double pos = size * (0.25 + 0.5 * u(rng));
    for (int t = 0; t < size; ++t) {
        pos = std::clamp(pos + (u(rng) - 0.5) * 1.6, 1.0, size - 3.0);
        for (int d = 0; d < width; ++d) {
            const int a = static_cast<int>(pos) + d;
            if (vertical) s.mask.at(t, a) = 1;
            else s.mask.at(a, t) = 1;
        }
    }
    const double base = 0.55 + 0.15 * u(rng);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double v = s.mask.at(y, x) ? 0.15 : base;
            for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = std::clamp(v + noise(rng), 0.0, 1.0);
        }
    return s;
}

inline std::vector<Sample> synthetic_set(int count, int size, std::uint64_t seed) {
    std::vector<Sample> out;
    for (int i = 0; i < count; ++i) out.push_back(synthetic_crack(size, seed * 1000 + i));
    return out;
}

// Patches for the detector: a bright line on a dark background is a crack.
inline std::vector<Patch> synthetic_patches(int count, int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.05);
    std::vector<Patch> out;
    for (int i = 0; i < count; ++i) {
        Patch p;
        p.pixels = Image(size, size, 3);
        p.label = i % 2 ? PatchLabel::crack : PatchLabel::non_crack;
        const bool vertical = u(rng) < 0.5;
        const int at = static_cast<int>(size * (0.2 + 0.6 * u(rng)));
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const int k = vertical ? x : y;
                const bool line = p.label == PatchLabel::crack && std::abs(k - at) <= 1;
                const double v = (line ? 0.9 : 0.2) + noise(rng);
                for (int c = 0; c < 3; ++c) p.pixels.at(y, x, c) = std::clamp(v, 0.0, 1.0);
            }
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace crackseg::testkit
