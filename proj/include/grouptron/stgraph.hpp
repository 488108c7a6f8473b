#pragma once

/// \file
/// \brief Spatio-temporal graph construction for the individual, group and
///        scene levels, plus symmetric adjacency normalization.

#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "grouptron/dataio.hpp"
#include "grouptron/grouping.hpp"
#include "grouptron/vec2.hpp"

namespace grouptron {

enum class GraphLevel { individual, group, scene };

inline const char* to_string(GraphLevel l) {
    switch (l) {
    case GraphLevel::individual: return "individual";
    case GraphLevel::group: return "group";
    case GraphLevel::scene: return "scene";
    }
    return "?";
}

using AdjMatrix = std::vector<std::vector<double>>; // dense n x n

struct STGraph {
    GraphLevel level = GraphLevel::individual;
    std::vector<PedId> node_ids;                         // scene level: group indices
    std::vector<std::vector<std::vector<double>>> feats; // [node][tick][dim]
    std::vector<AdjMatrix> adjacency;                    // [tick][n][n]

    int num_nodes() const { return static_cast<int>(node_ids.size()); }
    int num_ticks() const { return static_cast<int>(adjacency.size()); }
    int feature_dim() const {
        return feats.empty() || feats[0].empty() ? 0 : static_cast<int>(feats[0][0].size());
    }
};

struct PerceptionConfig {
    double radius = 3.0; // meters
};

/// Â = D^{-1/2} (A + I) D^{-1/2}, with D the degree matrix of A + I.
inline AdjMatrix normalize_adjacency(const AdjMatrix& a) {
    const std::size_t n = a.size();
    AdjMatrix b = a;
    for (std::size_t i = 0; i < n; ++i) b[i][i] += 1.0;
    std::vector<double> dinv(n);
    for (std::size_t i = 0; i < n; ++i) {
        double deg = 0.0;
        for (std::size_t j = 0; j < n; ++j) deg += b[i][j];
        dinv[i] = 1.0 / std::sqrt(deg);
    }
    AdjMatrix out(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i][j] = dinv[i] * b[i][j] * dinv[j];
    return out;
}

namespace detail {

// Absolute position of a window participant at a history step, when observed.
inline bool position_at_step(const Window& w, int node_index, int step, Vec2& out) {
    if (node_index == 0) {
        out = w.history[static_cast<std::size_t>(step)];
        return true;
    }
    const auto& nb = w.neighbors[static_cast<std::size_t>(node_index - 1)];
    if (!nb.observed_at_step(step)) return false;
    out = nb.at_step(step);
    return true;
}

} // namespace detail

/// Individual-level graph: the current node plus its window neighbors, with a
/// directed edge i -> j at a tick when both are observed and within the
/// perception radius. Node 0 is the current node; features are relative
/// positions and velocities.
inline STGraph build_individual(const Window& w, const PerceptionConfig& cfg = {}) {
    STGraph g;
    g.level = GraphLevel::individual;
    g.node_ids.push_back(w.node);
    for (const auto& nb : w.neighbors) g.node_ids.push_back(nb.id);

    const WindowFeatures wf = to_relative(w);
    const int n = g.num_nodes();
    g.feats.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const FeatureSeq& seq = (i == 0) ? wf.node : wf.neighbors[static_cast<std::size_t>(i - 1)].second;
        auto& f = g.feats[static_cast<std::size_t>(i)];
        f.reserve(seq.size());
        for (const auto& step : seq) f.emplace_back(step.begin(), step.end());
    }

    g.adjacency.assign(kHistorySteps, AdjMatrix(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n), 0.0)));
    for (int t = 0; t < kHistorySteps; ++t)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                Vec2 pi, pj;
                if (!detail::position_at_step(w, i, t, pi)) continue;
                if (!detail::position_at_step(w, j, t, pj)) continue;
                if (dist(pi, pj) <= cfg.radius)
                    g.adjacency[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = 1.0;
            }
    return g;
}

/// Ids that can influence the current node: the node itself plus every node
/// with an edge to or from it at any tick of the individual-level graph.
inline std::set<PedId> scope_nodes(const Window& w, const STGraph& g) {
    std::set<PedId> out{w.node};
    int self = -1;
    for (int i = 0; i < g.num_nodes(); ++i)
        if (g.node_ids[static_cast<std::size_t>(i)] == w.node) self = i;
    if (self < 0) throw std::invalid_argument("scope_nodes: current node not in graph");
    for (int t = 0; t < g.num_ticks(); ++t)
        for (int v = 0; v < g.num_nodes(); ++v) {
            if (v == self) continue;
            const auto& a = g.adjacency[static_cast<std::size_t>(t)];
            if (a[static_cast<std::size_t>(v)][static_cast<std::size_t>(self)] > 0.0 ||
                a[static_cast<std::size_t>(self)][static_cast<std::size_t>(v)] > 0.0)
                out.insert(g.node_ids[static_cast<std::size_t>(v)]);
        }
    return out;
}

/// One fully connected graph per group (all-ones off-diagonal at every tick).
inline std::vector<STGraph> build_group(const Window& w, const GroupAssignment& assignment) {
    const WindowFeatures wf = to_relative(w);
    const auto features_of = [&](PedId id) -> std::vector<std::vector<double>> {
        const FeatureSeq* seq = nullptr;
        if (id == w.node) {
            seq = &wf.node;
        } else {
            for (const auto& [nid, s] : wf.neighbors)
                if (nid == id) seq = &s;
        }
        if (!seq) throw std::invalid_argument("build_group: id not in window");
        std::vector<std::vector<double>> out;
        out.reserve(seq->size());
        for (const auto& step : *seq) out.emplace_back(step.begin(), step.end());
        return out;
    };

    std::vector<STGraph> out;
    for (const auto& members : assignment.groups) {
        STGraph g;
        g.level = GraphLevel::group;
        g.node_ids = members;
        for (PedId id : members) g.feats.push_back(features_of(id));
        const std::size_t m = members.size();
        AdjMatrix ones(m, std::vector<double>(m, 1.0));
        for (std::size_t i = 0; i < m; ++i) ones[i][i] = 0.0;
        g.adjacency.assign(kHistorySteps, ones);
        out.push_back(std::move(g));
    }
    return out;
}

/// Scene-level graph over group nodes: features are the per-group embedding
/// sequences, edges all-ones off-diagonal at every tick.
inline STGraph build_scene(const std::vector<std::vector<std::vector<double>>>& group_embeddings) {
    if (group_embeddings.empty()) throw std::invalid_argument("build_scene: no groups");
    const std::size_t ticks = group_embeddings[0].size();
    const std::size_t dim = ticks == 0 ? 0 : group_embeddings[0][0].size();
    for (const auto& e : group_embeddings) {
        if (e.size() != ticks) throw std::invalid_argument("build_scene: tick count mismatch");
        for (const auto& v : e)
            if (v.size() != dim) throw std::invalid_argument("build_scene: embedding dim mismatch");
    }

    STGraph g;
    g.level = GraphLevel::scene;
    const std::size_t m = group_embeddings.size();
    for (std::size_t i = 0; i < m; ++i) g.node_ids.push_back(static_cast<PedId>(i));
    g.feats = group_embeddings;
    AdjMatrix ones(m, std::vector<double>(m, 1.0));
    for (std::size_t i = 0; i < m; ++i) ones[i][i] = 0.0;
    g.adjacency.assign(ticks, ones);
    return g;
}

inline nlohmann::json stgraph_to_json(const STGraph& g) {
    return {{"level", to_string(g.level)},
            {"node_ids", g.node_ids},
            {"features", g.feats},
            {"adjacency", g.adjacency}};
}

} // namespace grouptron
