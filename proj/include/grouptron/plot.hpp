#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "grouptron/dataio.hpp"
#include "grouptron/errors.hpp"
#include "grouptron/vec2.hpp"

// Standalone SVG renderings of prediction windows: dashed history, dashed
// grey ground truth, solid predicted trajectory, all colored by group index.

namespace grouptron {

struct PlotItem {
    Window window;
    std::vector<Vec2> prediction;
    std::size_t group = 0;
};

namespace detail {

inline const char* plot_color(std::size_t group) {
    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return palette[group % (sizeof(palette) / sizeof(palette[0]))];
}

inline std::string plot_filename(const std::string& scene, int t0) {
    std::string safe;
    for (char c : scene)
        safe += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    if (safe.empty()) safe = "scene";
    return safe + "_t" + std::to_string(t0) + ".svg";
}

} // namespace detail

// Renders the windows of one scene tick into a single SVG document. The
// optional comment (a JSON stanza in the pipeline) lands right after the XML
// declaration.
inline std::string render_scene_svg(const std::vector<PlotItem>& items, const std::string& comment = "") {
    if (items.empty()) throw std::invalid_argument("render_scene_svg: nothing to draw");

    double minx = items[0].window.history[0].x, maxx = minx;
    double miny = items[0].window.history[0].y, maxy = miny;
    const auto grow = [&](const Vec2& p) {
        minx = std::min(minx, p.x);
        maxx = std::max(maxx, p.x);
        miny = std::min(miny, p.y);
        maxy = std::max(maxy, p.y);
    };
    for (const PlotItem& it : items) {
        for (const Vec2& p : it.window.history) grow(p);
        for (const Vec2& p : it.window.future) grow(p);
        for (const Vec2& p : it.prediction) grow(p);
    }
    const double margin = 1.0;
    minx -= margin;
    miny -= margin;
    maxx += margin;
    maxy += margin;

    const double span = std::max({maxx - minx, maxy - miny, 1e-6});
    const double scale = 600.0 / span;
    const double pad = 20.0;
    const double width = (maxx - minx) * scale + 2 * pad;
    const double height = (maxy - miny) * scale + 2 * pad;
    const auto px = [&](const Vec2& p) {
        return std::pair<double, double>{(p.x - minx) * scale + pad, (maxy - p.y) * scale + pad};
    };
    const auto points_attr = [&](const std::vector<Vec2>& pts) {
        std::string s;
        for (const Vec2& p : pts) {
            const auto [x, y] = px(p);
            if (!s.empty()) s += ' ';
            s += detail::format_double(x) + "," + detail::format_double(y);
        }
        return s;
    };

    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    if (!comment.empty()) svg << "<!-- " << comment << " -->\n";
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::format_double(width) << "\" height=\""
        << detail::format_double(height) << "\">\n";
    svg << "  <title>" << items[0].window.scene_name << " t" << items[0].window.t0 << "</title>\n";
    svg << "  <rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";

    for (const PlotItem& it : items) {
        const char* color = detail::plot_color(it.group);
        svg << "  <polyline class=\"hist\" fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\" points=\""
            << points_attr({it.window.history.begin(), it.window.history.end()}) << "\"/>\n";
        svg << "  <polyline class=\"truth\" fill=\"none\" stroke=\"#999999\" stroke-width=\"1.5\" "
               "stroke-dasharray=\"2 3\" points=\""
            << points_attr({it.window.future.begin(), it.window.future.end()}) << "\"/>\n";
        if (!it.prediction.empty())
            svg << "  <polyline class=\"pred\" fill=\"none\" stroke=\"" << color
                << "\" stroke-width=\"2.5\" points=\"" << points_attr(it.prediction) << "\"/>\n";
        const auto [cx, cy] = px(it.window.last_position());
        svg << "  <circle cx=\"" << detail::format_double(cx) << "\" cy=\"" << detail::format_double(cy)
            << "\" r=\"4\" fill=\"" << color << "\"/>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

// Groups items by (scene, t0), writes one SVG per tick into `dir`, and
// returns the written paths in deterministic order.
inline std::vector<std::string> emit_plots(const std::vector<PlotItem>& items, const std::string& dir,
                                           const std::string& comment = "") {
    std::vector<std::string> written;
    if (items.empty()) return written;

    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("emit_plots: cannot create " + dir + ": " + ec.message());

    std::map<std::pair<std::string, int>, std::vector<PlotItem>> ticks;
    for (const PlotItem& it : items) ticks[{it.window.scene_name, it.window.t0}].push_back(it);

    for (const auto& [key, group] : ticks) {
        const std::filesystem::path path =
            std::filesystem::path(dir) / detail::plot_filename(key.first, key.second);
        std::ofstream out(path);
        if (!out) throw io_error("emit_plots: cannot write " + path.string());
        out << render_scene_svg(group, comment);
        if (!out) throw io_error("emit_plots: write failed for " + path.string());
        written.push_back(path.string());
    }
    return written;
}

} // namespace grouptron
