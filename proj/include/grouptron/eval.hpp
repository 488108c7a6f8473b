#pragma once

#include <cstddef>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "grouptron/dataio.hpp"
#include "grouptron/vec2.hpp"

// Displacement metrics over 2-D trajectories, the best-of-K sample protocol,
// a constant-velocity yardstick, and the tabular evaluation report.

namespace grouptron {

// L2 distance between the final predicted and true positions.
inline double fde(const std::vector<Vec2>& pred, const std::vector<Vec2>& truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("fde: trajectory lengths differ");
    if (pred.empty()) throw std::invalid_argument("fde: empty trajectory");
    return dist(pred.back(), truth.back());
}

// Mean over steps of the per-step L2 distance.
inline double ade(const std::vector<Vec2>& pred, const std::vector<Vec2>& truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("ade: trajectory lengths differ");
    if (pred.empty()) throw std::invalid_argument("ade: empty trajectory");
    double sum = 0.0;
    for (std::size_t t = 0; t < pred.size(); ++t) sum += dist(pred[t], truth[t]);
    return sum / static_cast<double>(pred.size());
}

struct BestOfResult {
    double fde = 0.0;
    double ade = 0.0;
    std::size_t index = 0; // the minimizing sample, ties to the earliest
};

// Picks the sample with the smallest final displacement and reports that
// sample's ADE alongside it.
inline BestOfResult best_of_k(const std::vector<std::vector<Vec2>>& samples, const std::vector<Vec2>& truth) {
    if (samples.empty()) throw std::invalid_argument("best_of_k: no samples");
    BestOfResult best{fde(samples[0], truth), ade(samples[0], truth), 0};
    for (std::size_t i = 1; i < samples.size(); ++i) {
        const double f = fde(samples[i], truth);
        if (f < best.fde) best = {f, ade(samples[i], truth), i};
    }
    return best;
}

// Extrapolates the last observed per-tick displacement for the full horizon.
inline std::vector<Vec2> constant_velocity_baseline(const Window& w) {
    const Vec2 step = w.history[kHistorySteps - 1] - w.history[kHistorySteps - 2];
    const Vec2 last = w.last_position();
    std::vector<Vec2> out;
    out.reserve(static_cast<std::size_t>(kFutureSteps));
    for (int t = 1; t <= kFutureSteps; ++t) out.push_back(last + step * static_cast<double>(t));
    return out;
}

struct EvalRow {
    std::string name;
    double fde = 0.0;
    double ade = 0.0;
    std::size_t n_windows = 0;
};

struct EvalReport {
    std::string protocol; // "most_likely", "best_of_20", "constant_velocity"
    std::vector<EvalRow> rows;
};

// Dataset-level aggregation: the mean over windows of each metric.
inline EvalRow make_row(const std::string& name, const std::vector<double>& fdes, const std::vector<double>& ades) {
    if (fdes.empty() || fdes.size() != ades.size())
        throw std::invalid_argument("make_row: need matching nonempty metric lists");
    EvalRow row;
    row.name = name;
    row.n_windows = fdes.size();
    for (double f : fdes) row.fde += f;
    for (double a : ades) row.ade += a;
    row.fde /= static_cast<double>(fdes.size());
    row.ade /= static_cast<double>(ades.size());
    return row;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const EvalRow& row : r.rows)
        rows.push_back(
            {{"dataset", row.name}, {"fde", row.fde}, {"ade", row.ade}, {"n_windows", row.n_windows}});
    return {{"protocol", r.protocol}, {"rows", rows}};
}

inline void report_to_csv(const EvalReport& r, std::ostream& out) {
    out << "protocol,dataset,fde,ade,n_windows\n";
    for (const EvalRow& row : r.rows)
        out << r.protocol << ',' << row.name << ',' << detail::format_double(row.fde) << ','
            << detail::format_double(row.ade) << ',' << row.n_windows << '\n';
}

} // namespace grouptron
