#pragma once

// Reference implementations of the grouping stage, written independently of
// the library code so the two can be checked against each other.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "grouptron/grouping.hpp"

namespace testsup {

using grouptron::DistanceMatrix;
using grouptron::GroupAssignment;
using grouptron::PedId;
using grouptron::Vec2;

inline std::vector<Vec2> random_traj(std::mt19937& rng, int len) {
    std::uniform_real_distribution<double> step(-1.0, 1.0);
    std::uniform_real_distribution<double> origin(-10.0, 10.0);
    std::vector<Vec2> out;
    Vec2 cur{origin(rng), origin(rng)};
    for (int i = 0; i < len; ++i) {
        out.push_back(cur);
        cur += Vec2{step(rng), step(rng)};
    }
    return out;
}

using Partition = std::set<std::vector<PedId>>;

inline Partition canonical(const GroupAssignment& a) {
    Partition p;
    for (auto g : a.groups) {
        std::sort(g.begin(), g.end());
        p.insert(std::move(g));
    }
    return p;
}

// Step-replaying oracle: complete linkage over index sets, lexicographically
// smallest pair on ties, merged cluster keeps the lower slot.
inline Partition naive_agglomerate(const DistanceMatrix& dm, int c) {
    std::vector<std::set<int>> clusters;
    for (int i = 0; i < dm.n; ++i) clusters.push_back({i});
    while (static_cast<int>(clusters.size()) > c) {
        double best = std::numeric_limits<double>::infinity();
        std::pair<int, int> arg{-1, -1};
        for (std::size_t i = 0; i < clusters.size(); ++i)
            for (std::size_t j = i + 1; j < clusters.size(); ++j) {
                double link = 0.0;
                for (int a : clusters[i])
                    for (int b : clusters[j]) link = std::max(link, dm.at(a, b));
                if (link < best) {
                    best = link;
                    arg = {static_cast<int>(i), static_cast<int>(j)};
                }
            }
        for (int b : clusters[static_cast<std::size_t>(arg.second)])
            clusters[static_cast<std::size_t>(arg.first)].insert(b);
        clusters.erase(clusters.begin() + arg.second);
    }
    Partition p;
    for (const auto& cl : clusters) p.insert(std::vector<PedId>(cl.begin(), cl.end()));
    return p;
}

// Enumerate all partitions of {0..n-1} into exactly c nonempty clusters via
// restricted growth strings; return those minimizing the max intra-cluster
// distance.
inline std::vector<Partition> optimal_partitions(const DistanceMatrix& dm, int c) {
    const int n = dm.n;
    std::vector<int> label(static_cast<std::size_t>(n), 0);
    std::vector<Partition> best;
    double best_cost = std::numeric_limits<double>::infinity();

    const auto evaluate = [&]() {
        const int k = *std::max_element(label.begin(), label.end()) + 1;
        if (k != c) return;
        double cost = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (label[static_cast<std::size_t>(i)] == label[static_cast<std::size_t>(j)])
                    cost = std::max(cost, dm.at(i, j));
        Partition p;
        std::vector<std::vector<PedId>> groups(static_cast<std::size_t>(k));
        for (int i = 0; i < n; ++i) groups[static_cast<std::size_t>(label[static_cast<std::size_t>(i)])].push_back(i);
        for (auto& g : groups) p.insert(g);
        if (cost < best_cost - 1e-15) {
            best_cost = cost;
            best = {p};
        } else if (std::abs(cost - best_cost) <= 1e-15) {
            best.push_back(p);
        }
    };

    const auto rec = [&](auto&& self, int i, int maxl) -> void {
        if (i == n) {
            evaluate();
            return;
        }
        for (int l = 0; l <= std::min(maxl + 1, c - 1); ++l) {
            label[static_cast<std::size_t>(i)] = l;
            self(self, i + 1, std::max(maxl, l));
        }
    };
    rec(rec, 1, 0); // item 0 fixed to label 0
    return best;
}

inline DistanceMatrix random_dm(std::mt19937& rng, int n) {
    std::vector<std::vector<Vec2>> trajs;
    for (int i = 0; i < n; ++i) trajs.push_back(random_traj(rng, 8));
    return grouptron::distance_matrix(trajs);
}

struct PlantedInstance {
    DistanceMatrix dm;
    Partition truth;
    int k = 0;
};

// Walking-group scene with a provable separation margin: members co-move
// within 0.5 m of their group center, group centers sit at least 6 m apart
// and share one heading, so every intra-group distance stays strictly below
// every inter-group distance. Under that margin greedy complete linkage
// assembles exactly the planted groups, and the planted partition is the
// unique minimizer of the max intra-cluster distance.
inline PlantedInstance planted_groups(std::mt19937& rng, int n) {
    PlantedInstance out;
    out.k = grouptron::cluster_count(n);

    std::vector<int> ids(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    std::vector<std::vector<PedId>> members(static_cast<std::size_t>(out.k));
    for (int i = 0; i < n; ++i)
        members[static_cast<std::size_t>(i % out.k)].push_back(ids[static_cast<std::size_t>(i)]);

    std::uniform_real_distribution<double> angle(0.0, 6.283185307179586);
    std::uniform_real_distribution<double> offset(-0.5, 0.5);
    std::uniform_real_distribution<double> jitter(-0.05, 0.05);
    std::uniform_real_distribution<double> speed(1.0, 1.3);
    const double heading = angle(rng);
    const Vec2 dir{std::cos(heading), std::sin(heading)};

    // Centers on a ring whose adjacent chord is 6 m (origin when k = 1).
    std::vector<Vec2> centers;
    if (out.k == 1) {
        centers.push_back({0.0, 0.0});
    } else {
        const double radius = 3.0 / std::sin(3.141592653589793 / out.k);
        for (int g = 0; g < out.k; ++g) {
            const double a = 6.283185307179586 * g / out.k;
            centers.push_back({radius * std::cos(a), radius * std::sin(a)});
        }
    }

    std::vector<std::vector<Vec2>> trajs(static_cast<std::size_t>(n));
    for (int g = 0; g < out.k; ++g) {
        const double v = speed(rng);
        for (PedId id : members[static_cast<std::size_t>(g)]) {
            const Vec2 member_off{offset(rng), offset(rng)};
            for (int t = 0; t < 8; ++t)
                trajs[static_cast<std::size_t>(id)].push_back(centers[static_cast<std::size_t>(g)] +
                                                              member_off + dir * (v * 0.4 * t) +
                                                              Vec2{jitter(rng), jitter(rng)});
        }
        std::vector<PedId> sorted = members[static_cast<std::size_t>(g)];
        std::sort(sorted.begin(), sorted.end());
        out.truth.insert(std::move(sorted));
    }
    out.dm = grouptron::distance_matrix(trajs);
    return out;
}

} // namespace testsup
