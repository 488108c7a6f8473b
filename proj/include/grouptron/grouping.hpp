#pragma once

/// \file
/// \brief Pedestrian group detection: Hausdorff trajectory distances,
///        complete-linkage agglomerative clustering, and the Sørensen–Dice
///        score against human annotations.

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "grouptron/dataio.hpp"
#include "grouptron/errors.hpp"
#include "grouptron/vec2.hpp"

namespace grouptron {

// Disjoint clusters over a set of pedestrian ids.
struct GroupAssignment {
    std::vector<std::vector<PedId>> groups;
    std::map<PedId, int> group_of;

    static GroupAssignment from_groups(std::vector<std::vector<PedId>> gs) {
        GroupAssignment a;
        a.groups = std::move(gs);
        for (int g = 0; g < static_cast<int>(a.groups.size()); ++g) {
            if (a.groups[static_cast<std::size_t>(g)].empty())
                throw std::invalid_argument("GroupAssignment: empty group");
            for (PedId id : a.groups[static_cast<std::size_t>(g)]) {
                if (!a.group_of.emplace(id, g).second)
                    throw std::invalid_argument("GroupAssignment: id in two groups");
            }
        }
        return a;
    }

    std::set<PedId> id_set() const {
        std::set<PedId> ids;
        for (const auto& [id, g] : group_of) ids.insert(id);
        return ids;
    }
};

struct DistanceMatrix {
    int n = 0;
    std::vector<double> d; // row-major n*n, symmetric, zero diagonal

    double at(int i, int j) const { return d[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) + static_cast<std::size_t>(j)]; }
    double& at(int i, int j) { return d[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) + static_cast<std::size_t>(j)]; }
};

/// Symmetric Hausdorff distance between two point sequences:
/// max(max_p min_q |p-q|, max_q min_p |p-q|).
inline double hausdorff(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("hausdorff: empty sequence");
    const auto directed = [](const std::vector<Vec2>& u, const std::vector<Vec2>& v) {
        double worst = 0.0;
        for (const auto& p : u) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : v) best = std::min(best, dist(p, q));
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(directed(a, b), directed(b, a));
}

inline DistanceMatrix distance_matrix(const std::vector<std::vector<Vec2>>& trajs) {
    DistanceMatrix dm;
    dm.n = static_cast<int>(trajs.size());
    dm.d.assign(static_cast<std::size_t>(dm.n) * static_cast<std::size_t>(dm.n), 0.0);
    for (int i = 0; i < dm.n; ++i)
        for (int j = i + 1; j < dm.n; ++j) {
            const double h = hausdorff(trajs[static_cast<std::size_t>(i)], trajs[static_cast<std::size_t>(j)]);
            dm.at(i, j) = h;
            dm.at(j, i) = h;
        }
    return dm;
}

/// Number of groups to form for n pedestrians: floor((n+1)/2).
inline int cluster_count(int n) {
    if (n < 1) throw std::invalid_argument("cluster_count: n must be >= 1");
    return (n + 1) / 2;
}

/// Bottom-up complete-linkage clustering. Starts from singletons and merges
/// the pair of clusters with the smallest maximum pairwise distance until `c`
/// clusters remain. Equal merge distances resolve to the lexicographically
/// smallest cluster-index pair; the merged cluster keeps the lower index.
inline GroupAssignment agglomerate(const DistanceMatrix& dm, int c,
                                   const std::vector<PedId>& ids = {}) {
    const int n = dm.n;
    if (c < 1 || c > n) throw std::invalid_argument("agglomerate: cluster count out of range");
    if (!ids.empty() && static_cast<int>(ids.size()) != n)
        throw std::invalid_argument("agglomerate: ids size mismatch");

    std::vector<std::vector<int>> clusters(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) clusters[static_cast<std::size_t>(i)] = {i};

    const auto linkage = [&](const std::vector<int>& a, const std::vector<int>& b) {
        double worst = 0.0;
        for (int i : a)
            for (int j : b) worst = std::max(worst, dm.at(i, j));
        return worst;
    };

    while (static_cast<int>(clusters.size()) > c) {
        int bi = -1, bj = -1;
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < static_cast<int>(clusters.size()); ++i)
            for (int j = i + 1; j < static_cast<int>(clusters.size()); ++j) {
                const double l = linkage(clusters[static_cast<std::size_t>(i)], clusters[static_cast<std::size_t>(j)]);
                if (l < best) {
                    best = l;
                    bi = i;
                    bj = j;
                }
            }
        auto& dst = clusters[static_cast<std::size_t>(bi)];
        auto& src = clusters[static_cast<std::size_t>(bj)];
        dst.insert(dst.end(), src.begin(), src.end());
        clusters.erase(clusters.begin() + bj);
    }

    std::vector<std::vector<PedId>> groups;
    for (const auto& cl : clusters) {
        std::vector<PedId> g;
        for (int i : cl) g.push_back(ids.empty() ? static_cast<PedId>(i) : ids[static_cast<std::size_t>(i)]);
        groups.push_back(std::move(g));
    }
    return GroupAssignment::from_groups(std::move(groups));
}

namespace detail {

inline std::set<std::vector<PedId>> canonical_groups(const GroupAssignment& a) {
    std::set<std::vector<PedId>> out;
    for (auto g : a.groups) {
        std::sort(g.begin(), g.end());
        out.insert(std::move(g));
    }
    return out;
}

} // namespace detail

/// Average Sørensen–Dice coefficient between algorithm groupings and human
/// annotations: groups count toward the intersection only when identical as
/// id sets; the per-(timestep, annotator) score 2|∩|/(|G_h|+|G_a|) is averaged
/// over annotators, then over timesteps.
inline double dice(const std::vector<GroupAssignment>& algo,
                   const std::vector<std::vector<GroupAssignment>>& human) {
    if (algo.size() != human.size())
        throw std::invalid_argument("dice: timestep count mismatch");
    if (algo.empty()) throw std::invalid_argument("dice: no timesteps");

    double total = 0.0;
    for (std::size_t t = 0; t < algo.size(); ++t) {
        const auto algo_groups = detail::canonical_groups(algo[t]);
        const auto algo_ids = algo[t].id_set();
        if (human[t].empty()) throw std::invalid_argument("dice: timestep with no annotators");
        double per_t = 0.0;
        for (const auto& ann : human[t]) {
            if (ann.id_set() != algo_ids)
                throw std::invalid_argument("dice: annotation id set mismatch at timestep " + std::to_string(t));
            const auto human_groups = detail::canonical_groups(ann);
            int identical = 0;
            for (const auto& g : human_groups)
                if (algo_groups.count(g)) ++identical;
            per_t += 2.0 * identical /
                     static_cast<double>(human_groups.size() + algo_groups.size());
        }
        total += per_t / static_cast<double>(human[t].size());
    }
    return total / static_cast<double>(algo.size());
}

// --- JSON serialization -----------------------------------------------------

inline nlohmann::json assignment_to_json(const GroupAssignment& a) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : a.groups) groups.push_back(g);
    return groups;
}

inline GroupAssignment assignment_from_json(const nlohmann::json& j) {
    std::vector<std::vector<PedId>> groups;
    for (const auto& g : j) groups.push_back(g.get<std::vector<PedId>>());
    return GroupAssignment::from_groups(std::move(groups));
}

/// Annotation file: JSON list of timesteps, each a list of annotators, each a
/// list of ped-id arrays.
inline std::vector<std::vector<GroupAssignment>> annotations_from_json(const nlohmann::json& j) {
    std::vector<std::vector<GroupAssignment>> out;
    for (const auto& t : j) {
        std::vector<GroupAssignment> per_t;
        for (const auto& ann : t) per_t.push_back(assignment_from_json(ann));
        out.push_back(std::move(per_t));
    }
    return out;
}

} // namespace grouptron
