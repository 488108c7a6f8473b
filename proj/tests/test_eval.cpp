#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "grouptron/eval.hpp"
#include "grouptron/plot.hpp"
#include "support/test_scenes.hpp"

using namespace grouptron;

namespace {

std::vector<Vec2> line(double x0, double y0, double dx, double dy, std::size_t n = 12) {
    std::vector<Vec2> out;
    for (std::size_t t = 0; t < n; ++t) out.emplace_back(x0 + dx * double(t), y0 + dy * double(t));
    return out;
}

// Minimal XML well-formedness scan: prolog, quoted attributes, balanced tags.
bool well_formed_xml(const std::string& text) {
    std::vector<std::string> stack;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        if (text[i] != '<') {
            if (text[i] == '>') return false;
            ++i;
            continue;
        }
        std::size_t close = std::string::npos;
        bool in_quote = false;
        for (std::size_t j = i + 1; j < n; ++j) {
            if (text[j] == '"') in_quote = !in_quote;
            if (!in_quote && text[j] == '>') {
                close = j;
                break;
            }
        }
        if (close == std::string::npos || in_quote) return false;
        std::string tag = text.substr(i + 1, close - i - 1);
        if (!tag.empty() && tag.front() == '?') {
            // prolog
        } else if (tag.rfind("!--", 0) == 0) {
            if (tag.size() < 5 || tag.substr(tag.size() - 2) != "--") return false;
        } else if (tag.front() == '/') {
            if (stack.empty() || stack.back() != tag.substr(1)) return false;
            stack.pop_back();
        } else {
            const bool self_closing = tag.back() == '/';
            std::string name = tag.substr(0, tag.find_first_of(" \t\n/"));
            if (name.empty()) return false;
            if (!self_closing) stack.push_back(name);
        }
        i = close + 1;
    }
    return stack.empty();
}

Window plot_window(PedId id, const std::string& scene, int t0, Vec2 start, Vec2 step) {
    Window w;
    w.scene_name = scene;
    w.t0 = t0;
    w.node = id;
    for (int s = 0; s < kHistorySteps; ++s)
        w.history[static_cast<std::size_t>(s)] = start + step * double(s);
    for (int s = 0; s < kFutureSteps; ++s)
        w.future[static_cast<std::size_t>(s)] = start + step * double(kHistorySteps + s);
    return w;
}

} // namespace

TEST_CASE("fde: identity, 3-4-5, and the dataset mean") {
    const auto t = line(0, 0, 1, 0);
    CHECK(fde(t, t) == 0.0);

    auto p = t;
    p.back() = {t.back().x + 3.0, t.back().y + 4.0};
    CHECK(fde(p, t) == 5.0);

    // Dataset-level value: mean over windows.
    const EvalRow row = make_row("set", {1.0, 3.0}, {0.5, 0.5});
    CHECK(row.fde == 2.0);
    CHECK(row.ade == 0.5);
    CHECK(row.n_windows == 2);
}

TEST_CASE("ade: identity, uniform offset, and a hand mean") {
    const auto t = line(0, 0, 1, 0);
    CHECK(ade(t, t) == 0.0);

    auto p = t;
    for (auto& q : p) q.y += 1.0;
    CHECK(ade(p, t) == 1.0);

    // 6 steps exact, 6 steps off by 2 m.
    p = t;
    for (std::size_t s = 6; s < 12; ++s) p[s].y += 2.0;
    CHECK(ade(p, t) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("fde/ade preconditions") {
    const auto t = line(0, 0, 1, 0);
    const auto shorter = line(0, 0, 1, 0, 11);
    CHECK_THROWS_AS(fde(shorter, t), std::invalid_argument);
    CHECK_THROWS_AS(ade(shorter, t), std::invalid_argument);
    CHECK_THROWS_AS(fde({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(make_row("x", {}, {}), std::invalid_argument);
    CHECK_THROWS_AS(make_row("x", {1.0}, {}), std::invalid_argument);
}

TEST_CASE("fde/ade symmetry, translation invariance, and step bounds") {
    std::mt19937_64 rng(4242);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int rep = 0; rep < 25; ++rep) {
        std::vector<Vec2> a, b;
        for (int s = 0; s < 12; ++s) {
            a.emplace_back(u(rng), u(rng));
            b.emplace_back(u(rng), u(rng));
        }
        CHECK(fde(a, b) == fde(b, a));
        CHECK(ade(a, b) == ade(b, a));

        double max_step = 0.0;
        for (int s = 0; s < 12; ++s) max_step = std::max(max_step, dist(a[std::size_t(s)], b[std::size_t(s)]));
        CHECK(ade(a, b) <= max_step + 1e-12);
        CHECK(ade(a, b) >= 0.0);
        CHECK(fde(a, b) == dist(a.back(), b.back()));

        // Rigid integer translation of both trajectories changes nothing.
        std::vector<Vec2> at, bt;
        for (int s = 0; s < 12; ++s) {
            at.push_back(a[std::size_t(s)] + Vec2{11.0, -4.0});
            bt.push_back(b[std::size_t(s)] + Vec2{11.0, -4.0});
        }
        CHECK(fde(at, bt) == Catch::Approx(fde(a, b)).margin(1e-12));
        CHECK(ade(at, bt) == Catch::Approx(ade(a, b)).margin(1e-12));
    }
}

TEST_CASE("best_of_k selection") {
    const auto truth = line(0, 0, 1, 0);

    SECTION("singleton equals the plain metrics") {
        const auto p = line(0, 0.5, 1, 0);
        const BestOfResult r = best_of_k({p}, truth);
        CHECK(r.fde == fde(p, truth));
        CHECK(r.ade == ade(p, truth));
        CHECK(r.index == 0);
    }
    SECTION("a perfect member wins with (0,0)") {
        const BestOfResult r = best_of_k({line(0, 2, 1, 0), truth, line(0, -1, 1, 0)}, truth);
        CHECK(r.fde == 0.0);
        CHECK(r.ade == 0.0);
        CHECK(r.index == 1);
    }
    SECTION("picks the smallest final displacement: 2, 1, 5") {
        const BestOfResult r =
            best_of_k({line(0, 2, 1, 0), line(0, 1, 1, 0), line(0, 5, 1, 0)}, truth);
        CHECK(r.index == 1);
        CHECK(r.fde == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("ties break toward the earlier sample") {
        // Same final point, different intermediate paths (so different ADE).
        auto a = line(0, 0, 1, 0);
        a[5].y += 3.0;
        auto b = line(0, 0, 1, 0);
        const BestOfResult r = best_of_k({a, b}, truth);
        CHECK(r.index == 0);
        CHECK(r.ade > 0.0);
    }
    SECTION("empty set is an error") {
        CHECK_THROWS_AS(best_of_k({}, truth), std::invalid_argument);
    }
    SECTION("extending the sample set never hurts") {
        std::mt19937_64 rng(7);
        std::uniform_real_distribution<double> u(-3.0, 3.0);
        std::vector<std::vector<Vec2>> samples;
        double prev = std::numeric_limits<double>::infinity();
        for (int k = 0; k < 12; ++k) {
            samples.push_back(line(u(rng), u(rng), 1, u(rng) * 0.1));
            const double f = best_of_k(samples, truth).fde;
            CHECK(f <= prev + 1e-15);
            prev = f;
        }
    }
}

TEST_CASE("constant-velocity baseline") {
    SECTION("stationary history stays put") {
        const Window w = plot_window(1, "s", 7, {2.0, -1.0}, {0.0, 0.0});
        for (const Vec2& p : constant_velocity_baseline(w)) {
            CHECK(p.x == 2.0);
            CHECK(p.y == -1.0);
        }
    }
    SECTION("uniform motion is reproduced exactly") {
        const Window w = plot_window(1, "s", 7, {0.0, 0.0}, {1.0, 2.0});
        const auto pred = constant_velocity_baseline(w);
        CHECK(fde(pred, {w.future.begin(), w.future.end()}) == 0.0);
        CHECK(ade(pred, {w.future.begin(), w.future.end()}) == 0.0);
    }
    SECTION("unit x velocity lands 12 m out") {
        const Window w = plot_window(1, "s", 7, {0.0, 0.0}, {1.0, 0.0});
        const auto pred = constant_velocity_baseline(w);
        CHECK(pred.back().x == 7.0 + 12.0);
        CHECK(pred.back().y == 0.0);
    }
}

TEST_CASE("report serialization") {
    EvalReport r;
    r.protocol = "most_likely";
    r.rows.push_back({"setA", 0.5, 0.25, 10});
    r.rows.push_back({"setB", 1.5, 0.75, 4});

    const nlohmann::json j = report_to_json(r);
    CHECK(j.at("protocol") == "most_likely");
    REQUIRE(j.at("rows").size() == 2);
    CHECK(j.at("rows")[0].at("dataset") == "setA");
    CHECK(j.at("rows")[1].at("fde") == 1.5);
    CHECK(j.at("rows")[1].at("n_windows") == 4);

    std::ostringstream os;
    report_to_csv(r, os);
    std::istringstream is(os.str());
    std::string lineText;
    REQUIRE(std::getline(is, lineText));
    CHECK(lineText == "protocol,dataset,fde,ade,n_windows");
    REQUIRE(std::getline(is, lineText));
    CHECK(lineText == "most_likely,setA,0.5,0.25,10");
    REQUIRE(std::getline(is, lineText));
    CHECK(lineText == "most_likely,setB,1.5,0.75,4");
    CHECK_FALSE(std::getline(is, lineText));
}

TEST_CASE("svg rendering") {
    const Window w1 = plot_window(1, "plaza", 7, {0.0, 0.0}, {1.0, 0.0});
    const Window w2 = plot_window(2, "plaza", 7, {0.0, 2.0}, {1.0, 0.1});
    const Window w3 = plot_window(3, "plaza", 7, {3.0, -2.0}, {0.5, 0.5});

    SECTION("a single window renders well-formed XML with all three layers") {
        const std::string svg = render_scene_svg({{w1, line(7, 0, 1, 0), 0}});
        CHECK(well_formed_xml(svg));
        CHECK(svg.find("class=\"hist\"") != std::string::npos);
        CHECK(svg.find("class=\"truth\"") != std::string::npos);
        CHECK(svg.find("class=\"pred\"") != std::string::npos);
        CHECK(svg.find("#999999") != std::string::npos);
    }
    SECTION("the comment stanza is embedded") {
        const std::string svg = render_scene_svg({{w1, line(7, 0, 1, 0), 0}}, "{\"version\":1}");
        CHECK(svg.find("<!-- {\"version\":1} -->") != std::string::npos);
        CHECK(well_formed_xml(svg));
    }
    SECTION("prediction stroke colors track group indices") {
        const std::string svg = render_scene_svg({
            {w1, line(7, 0, 1, 0), 0},
            {w2, line(7, 2, 1, 0.1), 0},
            {w3, line(6.5, 1.5, 0.5, 0.5), 1},
        });
        CHECK(well_formed_xml(svg));
        std::set<std::string> colors;
        std::size_t at = 0;
        while ((at = svg.find("class=\"pred\"", at)) != std::string::npos) {
            const std::size_t sp = svg.find("stroke=\"", at);
            REQUIRE(sp != std::string::npos);
            colors.insert(svg.substr(sp + 8, 7));
            ++at;
        }
        CHECK(colors.size() == 2); // two distinct groups => two stroke colors
    }
}

TEST_CASE("emit_plots") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "grouptron_plot_test";
    fs::remove_all(dir);

    const Window w1 = plot_window(1, "plaza", 7, {0.0, 0.0}, {1.0, 0.0});
    const Window w2 = plot_window(2, "plaza", 7, {0.0, 2.0}, {1.0, 0.1});
    Window w3 = plot_window(3, "plaza", 9, {3.0, -2.0}, {0.5, 0.5});

    SECTION("no items, no files") {
        CHECK(emit_plots({}, (dir / "none").string()).empty());
        CHECK_FALSE(fs::exists(dir / "none"));
    }
    SECTION("windows sharing a tick share a file; other ticks get their own") {
        const auto files = emit_plots(
            {
                {w1, line(7, 0, 1, 0), 0},
                {w2, line(7, 2, 1, 0.1), 0},
                {w3, line(6.5, 1.5, 0.5, 0.5), 1},
            },
            dir.string());
        REQUIRE(files.size() == 2);
        CHECK(fs::path(files[0]).filename() == "plaza_t7.svg");
        CHECK(fs::path(files[1]).filename() == "plaza_t9.svg");
        for (const auto& f : files) {
            std::ifstream in(f);
            std::stringstream buf;
            buf << in.rdbuf();
            CHECK(well_formed_xml(buf.str()));
        }
    }
    SECTION("unwritable destination") {
        const fs::path blocker = dir / "blocked";
        fs::create_directories(dir);
        std::ofstream(blocker) << "file in the way";
        CHECK_THROWS_AS(emit_plots({{w1, line(7, 0, 1, 0), 0}}, blocker.string()), io_error);
    }

    fs::remove_all(dir);
}
