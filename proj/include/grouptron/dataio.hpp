#pragma once

/// \file
/// \brief ETH/UCY-style trajectory ingestion: text parsing, sliding prediction
///        windows, density filtering and relative feature extraction.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "grouptron/errors.hpp"
#include "grouptron/vec2.hpp"

namespace grouptron {

inline constexpr int kHistorySteps = 8;
inline constexpr int kFutureSteps = 12;
inline constexpr double kDt = 0.4; // seconds between consecutive ticks

using PedId = std::int64_t;

struct RawRecord {
    std::int64_t frame = 0;
    PedId ped = 0;
    double x = 0.0;
    double y = 0.0;
};

// Contiguous observation run of one pedestrian, starting at tick `start`.
struct Track {
    int start = 0;
    std::vector<Vec2> pos;

    int end() const { return start + static_cast<int>(pos.size()) - 1; } // inclusive
    bool observed_at(int tick) const { return tick >= start && tick <= end(); }
    const Vec2& at(int tick) const { return pos[static_cast<std::size_t>(tick - start)]; }

    bool operator==(const Track& o) const { return start == o.start && pos == o.pos; }
};

// One recording: uniformly sampled positions for every pedestrian, ticks 0..T-1.
struct Scene {
    std::string name;
    double dt = kDt;
    std::vector<int> timesteps;
    std::map<PedId, Track> tracks;

    int num_ticks() const { return static_cast<int>(timesteps.size()); }
    int present_count(int tick) const {
        int n = 0;
        for (const auto& [id, tr] : tracks)
            if (tr.observed_at(tick)) ++n;
        return n;
    }

    bool operator==(const Scene& o) const {
        return dt == o.dt && timesteps == o.timesteps && tracks == o.tracks;
    }
};

// Neighbor observations inside one window's history span. `start` is the
// offset of the first observation within the 8-step span (0 = full history).
struct NeighborTrack {
    PedId id = 0;
    int start = 0;
    std::vector<Vec2> pos;

    bool observed_at_step(int step) const {
        return step >= start && step < start + static_cast<int>(pos.size());
    }
    const Vec2& at_step(int step) const { return pos[static_cast<std::size_t>(step - start)]; }
};

// One prediction instance: 8 history steps ending at tick t0, 12 future steps.
struct Window {
    std::string scene_name;
    int t0 = 0;
    PedId node = 0;
    std::array<Vec2, kHistorySteps> history{};
    std::array<Vec2, kFutureSteps> future{};
    std::vector<NeighborTrack> neighbors; // sorted by id
    int present_count = 1;                // headcount in the scene at t0

    Vec2 last_position() const { return history[kHistorySteps - 1]; }
    Vec2 last_velocity() const {
        return (history[kHistorySteps - 1] - history[kHistorySteps - 2]) / kDt;
    }
};

namespace detail {

inline bool parse_number(const std::string& tok, double& out) {
    const char* b = tok.data();
    const char* e = b + tok.size();
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && p == e;
}

inline std::string format_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

} // namespace detail

/// Parses whitespace-separated "frame ped x y" lines into a Scene.
/// Frames may arrive in any order; the frame stride is auto-detected as the
/// GCD of frame deltas and ticks are remapped to consecutive indices.
/// Interior gaps in a pedestrian's track are linearly interpolated.
inline Scene parse_dataset(std::istream& in, const std::string& name = "") {
    std::vector<RawRecord> records;
    std::set<std::pair<std::int64_t, PedId>> seen;

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();

        std::istringstream ls(line);
        std::vector<std::string> toks;
        std::string tok;
        while (ls >> tok) toks.push_back(tok);
        if (toks.empty()) continue;
        if (toks.size() != 4)
            throw parse_error(lineno, "expected 4 fields, got " + std::to_string(toks.size()));

        double vals[4];
        for (int i = 0; i < 4; ++i)
            if (!detail::parse_number(toks[static_cast<std::size_t>(i)], vals[i]))
                throw parse_error(lineno, "non-numeric field '" +
                                              toks[static_cast<std::size_t>(i)] + "'");
        if (!std::isfinite(vals[2]) || !std::isfinite(vals[3]))
            throw parse_error(lineno, "non-finite position");
        if (vals[0] != std::floor(vals[0]) || vals[1] != std::floor(vals[1]))
            throw parse_error(lineno, "frame and ped id must be integers");
        if (vals[0] < 0) throw parse_error(lineno, "negative frame id");

        RawRecord r;
        r.frame = static_cast<std::int64_t>(vals[0]);
        r.ped = static_cast<PedId>(vals[1]);
        r.x = vals[2];
        r.y = vals[3];
        if (!seen.insert({r.frame, r.ped}).second)
            throw data_error("duplicate record for frame " + std::to_string(r.frame) +
                             ", ped " + std::to_string(r.ped));
        records.push_back(r);
    }

    Scene scene;
    scene.name = name;
    if (records.empty()) return scene;

    std::set<std::int64_t> frames;
    for (const auto& r : records) frames.insert(r.frame);

    std::int64_t stride = 0;
    std::int64_t prev = *frames.begin();
    for (auto it = std::next(frames.begin()); it != frames.end(); ++it) {
        stride = std::gcd(stride, *it - prev);
        prev = *it;
    }
    if (stride == 0) stride = 1;
    const std::int64_t f0 = *frames.begin();
    const auto to_tick = [&](std::int64_t f) { return static_cast<int>((f - f0) / stride); };

    std::map<PedId, std::map<int, Vec2>> by_ped;
    int max_tick = 0;
    for (const auto& r : records) {
        const int t = to_tick(r.frame);
        by_ped[r.ped][t] = {r.x, r.y};
        max_tick = std::max(max_tick, t);
    }

    for (const auto& [ped, obs] : by_ped) {
        Track tr;
        tr.start = obs.begin()->first;
        const int last = obs.rbegin()->first;
        tr.pos.resize(static_cast<std::size_t>(last - tr.start + 1));
        for (const auto& [t, p] : obs) tr.pos[static_cast<std::size_t>(t - tr.start)] = p;
        // Linear interpolation across interior gaps.
        auto it = obs.begin();
        auto nx = std::next(it);
        for (; nx != obs.end(); ++it, ++nx) {
            const int a = it->first, b = nx->first;
            for (int t = a + 1; t < b; ++t) {
                const double w = static_cast<double>(t - a) / static_cast<double>(b - a);
                tr.pos[static_cast<std::size_t>(t - tr.start)] =
                    it->second * (1.0 - w) + nx->second * w;
            }
        }
        scene.tracks.emplace(ped, std::move(tr));
    }

    scene.timesteps.resize(static_cast<std::size_t>(max_tick) + 1);
    std::iota(scene.timesteps.begin(), scene.timesteps.end(), 0);
    return scene;
}

inline Scene parse_dataset(const std::string& text, const std::string& name = "") {
    std::istringstream in(text);
    return parse_dataset(in, name);
}

/// Serializes a Scene back to the 4-column line format (tick-indexed frames,
/// shortest round-trip float formatting). Reparsing yields an identical Scene.
inline std::string scene_to_text(const Scene& scene) {
    std::string out;
    for (const auto& [ped, tr] : scene.tracks) {
        for (int t = tr.start; t <= tr.end(); ++t) {
            const Vec2& p = tr.at(t);
            out += std::to_string(t);
            out += ' ';
            out += std::to_string(ped);
            out += ' ';
            out += detail::format_double(p.x);
            out += ' ';
            out += detail::format_double(p.y);
            out += '\n';
        }
    }
    return out;
}

/// Cuts every full 8-history/12-future window. Neighbors are the other
/// pedestrians observed at the last history tick with at least two history
/// observations in the window span.
inline std::vector<Window> make_windows(const Scene& scene) {
    std::vector<Window> out;
    for (const auto& [ped, tr] : scene.tracks) {
        const int len = static_cast<int>(tr.pos.size());
        if (len < kHistorySteps + kFutureSteps) continue;
        for (int t0 = tr.start + kHistorySteps - 1; t0 <= tr.end() - kFutureSteps; ++t0) {
            Window w;
            w.scene_name = scene.name;
            w.t0 = t0;
            w.node = ped;
            const int h0 = t0 - kHistorySteps + 1;
            for (int s = 0; s < kHistorySteps; ++s) w.history[static_cast<std::size_t>(s)] = tr.at(h0 + s);
            for (int s = 0; s < kFutureSteps; ++s) w.future[static_cast<std::size_t>(s)] = tr.at(t0 + 1 + s);

            w.present_count = 0;
            for (const auto& [q, qt] : scene.tracks) {
                if (!qt.observed_at(t0)) continue;
                ++w.present_count;
                if (q == ped) continue;
                const int qs = std::max(qt.start, h0);
                const int n_obs = t0 - qs + 1;
                if (n_obs < 2) continue;
                NeighborTrack nt;
                nt.id = q;
                nt.start = qs - h0;
                for (int t = qs; t <= t0; ++t) nt.pos.push_back(qt.at(t));
                w.neighbors.push_back(std::move(nt));
            }
            out.push_back(std::move(w));
        }
    }
    return out;
}

/// Keeps windows whose last-history tick has at least `n` pedestrians
/// simultaneously present in the scene (the UNIV-N construction).
inline std::vector<Window> filter_univ_n(const std::vector<Window>& windows, int n) {
    if (n < 1) throw std::invalid_argument("filter_univ_n: n must be >= 1");
    std::vector<Window> out;
    for (const auto& w : windows)
        if (w.present_count >= n) out.push_back(w);
    return out;
}

// Per-step node state: position relative to the window origin plus
// finite-difference velocity. Steps before a neighbor's first observation
// are zero in all channels.
inline constexpr int kFeatureDim = 4;

using StepFeature = std::array<double, kFeatureDim>;
using FeatureSeq = std::vector<StepFeature>; // one entry per history step

struct WindowFeatures {
    FeatureSeq node;                                  // 8 x 4
    std::vector<std::pair<PedId, FeatureSeq>> neighbors; // sorted by id, 8 x 4 each
};

namespace detail {

inline FeatureSeq relative_features(const std::vector<Vec2>& pos, int start, int steps,
                                    const Vec2& origin) {
    FeatureSeq seq(static_cast<std::size_t>(steps), StepFeature{0, 0, 0, 0});
    const int n = static_cast<int>(pos.size());
    for (int s = 0; s < n; ++s) {
        const Vec2 rel = pos[static_cast<std::size_t>(s)] - origin;
        auto& f = seq[static_cast<std::size_t>(start + s)];
        f[0] = rel.x;
        f[1] = rel.y;
    }
    for (int s = 1; s < n; ++s) {
        const Vec2 v = (pos[static_cast<std::size_t>(s)] - pos[static_cast<std::size_t>(s - 1)]) / kDt;
        auto& f = seq[static_cast<std::size_t>(start + s)];
        f[2] = v.x;
        f[3] = v.y;
    }
    if (n >= 2) { // first observed step repeats the first finite difference
        seq[static_cast<std::size_t>(start)][2] = seq[static_cast<std::size_t>(start + 1)][2];
        seq[static_cast<std::size_t>(start)][3] = seq[static_cast<std::size_t>(start + 1)][3];
    }
    return seq;
}

} // namespace detail

/// Expresses the node and neighbor histories relative to the node's position
/// at the last history tick and appends per-step velocities.
inline WindowFeatures to_relative(const Window& w) {
    WindowFeatures out;
    const Vec2 origin = w.last_position();
    out.node = detail::relative_features(
        std::vector<Vec2>(w.history.begin(), w.history.end()), 0, kHistorySteps, origin);
    for (const auto& nb : w.neighbors)
        out.neighbors.emplace_back(nb.id,
                                   detail::relative_features(nb.pos, nb.start, kHistorySteps, origin));
    return out;
}

/// Future-side features for the posterior encoder: positions relative to the
/// window origin, velocities differenced from the last observed position.
inline FeatureSeq future_features(const Window& w) {
    FeatureSeq seq(kFutureSteps, StepFeature{0, 0, 0, 0});
    const Vec2 origin = w.last_position();
    Vec2 prev = origin;
    for (int s = 0; s < kFutureSteps; ++s) {
        const Vec2& p = w.future[static_cast<std::size_t>(s)];
        const Vec2 rel = p - origin;
        const Vec2 v = (p - prev) / kDt;
        seq[static_cast<std::size_t>(s)] = {rel.x, rel.y, v.x, v.y};
        prev = p;
    }
    return seq;
}

// --- JSON serialization -----------------------------------------------------

inline nlohmann::json scene_to_json(const Scene& s) {
    nlohmann::json tracks = nlohmann::json::object();
    for (const auto& [ped, tr] : s.tracks) {
        nlohmann::json pos = nlohmann::json::array();
        for (const auto& p : tr.pos) pos.push_back({p.x, p.y});
        tracks[std::to_string(ped)] = {{"start", tr.start}, {"pos", std::move(pos)}};
    }
    return {{"name", s.name}, {"dt", s.dt}, {"num_ticks", s.num_ticks()}, {"tracks", std::move(tracks)}};
}

inline Scene scene_from_json(const nlohmann::json& j) {
    Scene s;
    s.name = j.at("name").get<std::string>();
    s.dt = j.at("dt").get<double>();
    s.timesteps.resize(j.at("num_ticks").get<std::size_t>());
    std::iota(s.timesteps.begin(), s.timesteps.end(), 0);
    for (const auto& [key, val] : j.at("tracks").items()) {
        Track tr;
        tr.start = val.at("start").get<int>();
        for (const auto& p : val.at("pos")) tr.pos.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
        s.tracks.emplace(std::stoll(key), std::move(tr));
    }
    return s;
}

inline nlohmann::json window_to_json(const Window& w) {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& p : w.history) hist.push_back({p.x, p.y});
    nlohmann::json fut = nlohmann::json::array();
    for (const auto& p : w.future) fut.push_back({p.x, p.y});
    nlohmann::json nbrs = nlohmann::json::array();
    for (const auto& nb : w.neighbors) {
        nlohmann::json pos = nlohmann::json::array();
        for (const auto& p : nb.pos) pos.push_back({p.x, p.y});
        nbrs.push_back({{"id", nb.id}, {"start", nb.start}, {"pos", std::move(pos)}});
    }
    return {{"scene", w.scene_name}, {"t0", w.t0},      {"node", w.node},
            {"history", std::move(hist)}, {"future", std::move(fut)}, {"neighbors", std::move(nbrs)},
            {"present", w.present_count}};
}

inline Window window_from_json(const nlohmann::json& j) {
    Window w;
    w.scene_name = j.at("scene").get<std::string>();
    w.t0 = j.at("t0").get<int>();
    w.node = j.at("node").get<PedId>();
    const auto& hist = j.at("history");
    if (hist.size() != kHistorySteps) throw data_error("window history must have 8 steps");
    const auto& fut = j.at("future");
    if (fut.size() != kFutureSteps) throw data_error("window future must have 12 steps");
    for (int s = 0; s < kHistorySteps; ++s)
        w.history[static_cast<std::size_t>(s)] = {hist[s].at(0).get<double>(), hist[s].at(1).get<double>()};
    for (int s = 0; s < kFutureSteps; ++s)
        w.future[static_cast<std::size_t>(s)] = {fut[s].at(0).get<double>(), fut[s].at(1).get<double>()};
    for (const auto& nb : j.at("neighbors")) {
        NeighborTrack nt;
        nt.id = nb.at("id").get<PedId>();
        nt.start = nb.at("start").get<int>();
        for (const auto& p : nb.at("pos")) nt.pos.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
        w.neighbors.push_back(std::move(nt));
    }
    w.present_count = j.at("present").get<int>();
    return w;
}

} // namespace grouptron
