#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "grouptron/dataio.hpp"

// Synthetic crossing-groups corpus: two 3-pedestrian groups on gently curved
// paths that meet near the origin, with Gaussian position noise. Each scene
// spans 20 ticks, so every pedestrian yields exactly one window.

namespace testsup {

struct CrossingConfig {
    double noise_sigma = 0.05; // metres, per coordinate per tick
    int ticks = 20;
};

inline grouptron::Scene crossing_scene(std::uint64_t seed, const std::string& name,
                                       const CrossingConfig& cfg = {}) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> speed_dist(1.0, 1.4);
    std::uniform_real_distribution<double> omega_dist(0.15, 0.30);
    std::uniform_real_distribution<double> jitter(-0.3, 0.3);
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    std::bernoulli_distribution coin(0.5);

    struct GroupPath {
        double x, y, heading, speed, omega;
    };
    // Group A walks rightward, group B upward; both reach the origin area
    // around tick 9 so the groups are inside perception range late in the
    // history segment and the crossing happens in the future segment.
    GroupPath paths[2] = {
        {-4.2 + jitter(rng), jitter(rng), jitter(rng) * 0.3, speed_dist(rng),
         (coin(rng) ? 1.0 : -1.0) * omega_dist(rng)},
        {jitter(rng), -4.2 + jitter(rng), 1.5707963267948966 + jitter(rng) * 0.3, speed_dist(rng),
         (coin(rng) ? 1.0 : -1.0) * omega_dist(rng)},
    };
    const double lateral[3] = {-0.7, 0.0, 0.7};

    grouptron::Scene scene;
    scene.name = name;
    for (int t = 0; t < cfg.ticks; ++t) scene.timesteps.push_back(t);
    for (int g = 0; g < 2; ++g)
        for (int m = 0; m < 3; ++m) {
            grouptron::Track tr;
            tr.start = 0;
            scene.tracks.emplace(static_cast<grouptron::PedId>(3 * g + m + 1), tr);
        }

    for (int t = 0; t < cfg.ticks; ++t) {
        for (int g = 0; g < 2; ++g) {
            GroupPath& p = paths[g];
            for (int m = 0; m < 3; ++m) {
                const double ox = -std::sin(p.heading) * lateral[m];
                const double oy = std::cos(p.heading) * lateral[m];
                auto& tr = scene.tracks.at(static_cast<grouptron::PedId>(3 * g + m + 1));
                tr.pos.emplace_back(p.x + ox + noise(rng), p.y + oy + noise(rng));
            }
            p.heading += p.omega * grouptron::kDt;
            p.x += p.speed * grouptron::kDt * std::cos(p.heading);
            p.y += p.speed * grouptron::kDt * std::sin(p.heading);
        }
    }
    return scene;
}

inline std::vector<grouptron::Scene> crossing_corpus(std::uint64_t seed, std::size_t scenes,
                                                     const CrossingConfig& cfg = {}) {
    std::vector<grouptron::Scene> out;
    out.reserve(scenes);
    for (std::size_t i = 0; i < scenes; ++i)
        out.push_back(crossing_scene(seed * 1000003ull + i, "cross" + std::to_string(i), cfg));
    return out;
}

inline std::vector<grouptron::Window> corpus_windows(const std::vector<grouptron::Scene>& scenes) {
    std::vector<grouptron::Window> out;
    for (const auto& s : scenes) {
        const auto ws = grouptron::make_windows(s);
        out.insert(out.end(), ws.begin(), ws.end());
    }
    return out;
}

} // namespace testsup
