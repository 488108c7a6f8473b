#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "grouptron/dataio.hpp"
#include "grouptron/errors.hpp"
#include "grouptron/eval.hpp"
#include "grouptron/grouping.hpp"
#include "grouptron/model.hpp"
#include "grouptron/plot.hpp"
#include "grouptron/stgraph.hpp"
#include "grouptron/trainer.hpp"

// Command-line pipeline: ingest -> windows -> cluster/train/predict/eval,
// plus graph inspection and SVG plotting. Every artifact starts with a JSON
// stanza recording version, seed, and the hash of the effective model config.

namespace grouptron {

namespace cli_detail {

namespace fs = std::filesystem;

inline std::string hash_hex(const ModelConfig& cfg) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << config_hash(cfg);
    return os.str();
}

inline nlohmann::json artifact_header(std::uint64_t seed, const ModelConfig& cfg) {
    return {{"version", 1}, {"seed", seed}, {"config_hash", hash_hex(cfg)}};
}

inline std::string file_stem(const std::string& path) {
    std::string stem = fs::path(path).stem().string();
    if (stem.size() > 6 && stem.substr(stem.size() - 6) == ".scene") stem.resize(stem.size() - 6);
    return stem.empty() ? "data" : stem;
}

inline nlohmann::json parse_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw data_error(path + ": " + e.what());
    }
}

// Model and train settings: defaults, overlaid by an optional config file,
// overlaid by the narrow-model switch. Flag overrides happen at the caller.
struct Settings {
    ModelConfig model;
    TrainConfig train;
    bool batch_from_file = false;
};

inline Settings resolve_settings(const std::string& config_path, bool eth, std::uint64_t seed) {
    Settings s;
    if (!config_path.empty()) {
        const nlohmann::json j = parse_json_file(config_path);
        if (j.contains("model")) {
            const nlohmann::json& m = j.at("model");
            try {
                if (m.contains("scene_dim")) s.model.scene_dim = m.at("scene_dim").get<std::size_t>();
                if (m.contains("group_dim")) s.model.group_dim = m.at("group_dim").get<std::size_t>();
                if (m.contains("k")) s.model.k = m.at("k").get<std::size_t>();
                if (m.contains("alpha")) s.model.alpha = m.at("alpha").get<double>();
                if (m.contains("beta")) s.model.beta = m.at("beta").get<double>();
                if (m.contains("radius")) s.model.radius = m.at("radius").get<double>();
                if (m.contains("sigma")) s.model.sigma = m.at("sigma").get<double>();
            } catch (const nlohmann::json::exception& e) {
                throw data_error(config_path + ": bad model settings: " + e.what());
            }
        }
        if (j.contains("train")) {
            const nlohmann::json& t = j.at("train");
            try {
                if (t.contains("epochs")) s.train.epochs = t.at("epochs").get<std::size_t>();
                if (t.contains("batch_size")) {
                    s.train.batch_size = t.at("batch_size").get<std::size_t>();
                    s.batch_from_file = true;
                }
                if (t.contains("lr0")) s.train.lr0 = t.at("lr0").get<double>();
                if (t.contains("decay")) s.train.decay = t.at("decay").get<double>();
                if (t.contains("clip")) s.train.clip = t.at("clip").get<double>();
            } catch (const nlohmann::json::exception& e) {
                throw data_error(config_path + ": bad train settings: " + e.what());
            }
        }
    }
    if (eth) {
        s.model.scene_dim = 8;
        s.model.group_dim = 8;
    }
    s.model.validate();
    s.train.seed = seed;
    s.train.validate();
    return s;
}

// Scene input: raw trajectory text, a bare scene JSON, or an ingest artifact.
inline Scene load_scene_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    char first = 0;
    in >> std::ws;
    in.get(first);
    in.unget();
    if (first == '{') {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw data_error(path + ": " + e.what());
        }
        try {
            return scene_from_json(j.contains("scene") ? j.at("scene") : j);
        } catch (const nlohmann::json::exception& e) {
            throw data_error(path + ": not a scene file: " + e.what());
        }
    }
    return parse_dataset(in, file_stem(path));
}

inline std::vector<Window> load_windows_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    std::vector<Window> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw data_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.is_object()) throw data_error(path + ":" + std::to_string(lineno) + ": expected an object");
        if (!j.contains("node")) continue; // header or trailer stanza
        try {
            out.push_back(window_from_json(j));
        } catch (const nlohmann::json::exception& e) {
            throw data_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline fs::path ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create output directory " + dir + ": " + ec.message());
    return fs::path(dir);
}

inline std::ofstream open_out(const fs::path& path, bool binary = false) {
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) throw io_error("cannot write " + path.string());
    return out;
}

inline void write_checkpoint_file(const GrouptronModel& m, std::uint64_t seed, const fs::path& path) {
    std::ofstream out = open_out(path, true);
    nlohmann::json line = config_to_json(m.config());
    line["version"] = 1;
    line["seed"] = seed;
    line["config_hash"] = hash_hex(m.config());
    out << line.dump() << '\n';
    m.params().save(out);
    if (!out) throw io_error("write failed for " + path.string());
}

inline GrouptronModel load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint " + path);
    return GrouptronModel::load_checkpoint(in);
}

// Index-parallel loop with deterministic output: slot i only ever written by
// the worker that claimed i, and claims cover 0..n-1 exactly once.
template <typename Fn>
inline void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr err;
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(jobs, n));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!err) err = std::current_exception();
                    return;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

// Groups the pedestrians observed at one tick by the Hausdorff distances of
// their trailing 8-step trajectory snippets.
inline GroupAssignment tick_assignment(const Scene& scene, int tick) {
    std::vector<PedId> ids;
    std::vector<std::vector<Vec2>> trajs;
    for (const auto& [id, tr] : scene.tracks) {
        if (!tr.observed_at(tick)) continue;
        const int lo = std::max(tr.start, tick - (kHistorySteps - 1));
        std::vector<Vec2> snippet;
        for (int t = lo; t <= tick; ++t) snippet.push_back(tr.at(t));
        ids.push_back(id);
        trajs.push_back(std::move(snippet));
    }
    if (ids.empty()) return {};
    return agglomerate(distance_matrix(trajs), cluster_count(static_cast<int>(ids.size())), ids);
}

inline std::vector<std::vector<GroupAssignment>> parse_annotations(const nlohmann::json& j) {
    if (!j.is_array()) throw data_error("annotations: expected a list of timesteps");
    std::vector<std::vector<GroupAssignment>> out;
    for (const auto& tick : j) {
        std::vector<GroupAssignment> annotators;
        for (const auto& annotator : tick) {
            std::vector<std::vector<PedId>> groups;
            for (const auto& group : annotator) groups.push_back(group.get<std::vector<PedId>>());
            annotators.push_back(GroupAssignment::from_groups(std::move(groups)));
        }
        out.push_back(std::move(annotators));
    }
    return out;
}

inline nlohmann::json trajectory_json(const std::vector<Vec2>& traj) {
    nlohmann::json out = nlohmann::json::array();
    for (const Vec2& p : traj) out.push_back({p.x, p.y});
    return out;
}

// Tick-level grouping from the windows that share (scene, t0): nodes are
// clustered on their own 8-step histories so plot colors stay consistent
// within a frame.
inline GroupAssignment windows_tick_assignment(const std::vector<const Window*>& ws) {
    std::vector<PedId> ids;
    std::vector<std::vector<Vec2>> trajs;
    for (const Window* w : ws) {
        ids.push_back(w->node);
        trajs.emplace_back(w->history.begin(), w->history.end());
    }
    return agglomerate(distance_matrix(trajs), cluster_count(static_cast<int>(ids.size())), ids);
}

} // namespace cli_detail

inline int cli_run(int argc, char** argv) {
    namespace cd = cli_detail;
    namespace fs = std::filesystem;

    CLI::App app{"grouptron: group-aware pedestrian trajectory forecasting"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    std::string config_path, out_dir, protocol = "most_likely", annotations_path, level = "individual";
    std::uint64_t seed = 0;
    unsigned jobs = 1;
    bool eth = false;
    int min_present = 1;
    std::size_t index = 0;
    double radius = -1.0; // <0: take the model config's perception radius
    std::uint64_t epochs_flag = 0, batch_flag = 0;
    std::vector<std::string> inputs;
    std::string checkpoint_path;

    const auto add_common = [&](CLI::App* sub, bool with_out = true) {
        sub->add_option("--config", config_path, "JSON settings file (model/train sections)");
        sub->add_option("--seed", seed, "seed recorded in artifacts and used for training/init");
        sub->add_flag("--eth-config", eth, "narrow model: group and scene widths 8");
        if (with_out) sub->add_option("--out", out_dir, "output directory")->required();
    };

    CLI::App* ingest = app.add_subcommand("ingest", "parse trajectory text files into scene artifacts");
    ingest->add_option("files", inputs, "trajectory text files (tick ped x y per line)")->required();
    add_common(ingest);

    CLI::App* windows_cmd = app.add_subcommand("windows", "cut scenes into prediction windows");
    windows_cmd->add_option("files", inputs, "scene artifacts or raw trajectory files")->required();
    windows_cmd->add_option("--min-present", min_present, "keep ticks with at least N pedestrians present")
        ->check(CLI::PositiveNumber);
    add_common(windows_cmd);

    CLI::App* cluster = app.add_subcommand("cluster", "group pedestrians per tick and optionally score vs annotations");
    cluster->add_option("files", inputs, "scene artifacts or raw trajectory files")->required();
    cluster->add_option("--annotations", annotations_path, "JSON [tick][annotator][group] -> ped ids");
    add_common(cluster);

    CLI::App* train_cmd = app.add_subcommand("train", "train a model on window files");
    train_cmd->add_option("files", inputs, "window files (JSONL)")->required();
    train_cmd->add_option("--epochs", epochs_flag, "override the configured epoch count");
    train_cmd->add_option("--batch-size", batch_flag, "override the configured batch size");
    add_common(train_cmd);

    CLI::App* predict = app.add_subcommand("predict", "decode trajectories for every window");
    predict->add_option("checkpoint", checkpoint_path, "trained checkpoint")->required();
    predict->add_option("files", inputs, "window files (JSONL)")->required();
    predict->add_option("--protocol", protocol, "most_likely or best_of_20")
        ->check(CLI::IsMember({"most_likely", "best_of_20"}));
    predict->add_option("--jobs", jobs, "worker threads for featurization/decoding");
    add_common(predict);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on window files");
    eval_cmd->add_option("checkpoint", checkpoint_path, "trained checkpoint")->required();
    eval_cmd->add_option("files", inputs, "window files (JSONL)")->required();
    eval_cmd->add_option("--jobs", jobs, "worker threads for evaluation");
    add_common(eval_cmd);

    CLI::App* inspect = app.add_subcommand("inspect", "dump a window's spatio-temporal graph as JSON");
    inspect->add_option("files", inputs, "window file (JSONL)")->required();
    inspect->add_option("--index", index, "window index within the file");
    inspect->add_option("--level", level, "individual, group, or scene")
        ->check(CLI::IsMember({"individual", "group", "scene"}));
    inspect->add_option("--radius", radius, "perception radius in metres");
    add_common(inspect, false);
    inspect->add_option("--out", out_dir, "output directory (stdout when omitted)");

    CLI::App* plot = app.add_subcommand("plot", "render per-tick SVG plots of predictions");
    plot->add_option("checkpoint", checkpoint_path, "trained checkpoint")->required();
    plot->add_option("files", inputs, "window files (JSONL)")->required();
    plot->add_option("--jobs", jobs, "worker threads for prediction");
    add_common(plot);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const cd::Settings settings = cd::resolve_settings(config_path, eth, seed);
        const nlohmann::json header = cd::artifact_header(seed, settings.model);

        if (*ingest) {
            const fs::path dir = cd::ensure_out_dir(out_dir);
            for (const std::string& file : inputs) {
                std::ifstream in(file);
                if (!in) throw io_error("cannot open " + file);
                const Scene scene = parse_dataset(in, cd::file_stem(file));
                const fs::path path = dir / (cd::file_stem(file) + ".scene.json");
                std::ofstream out = cd::open_out(path);
                out << nlohmann::json{{"header", header}, {"scene", scene_to_json(scene)}}.dump() << '\n';
                std::cout << "wrote " << path.string() << " (" << scene.tracks.size() << " tracks, "
                          << scene.num_ticks() << " ticks)\n";
            }
            return 0;
        }

        if (*windows_cmd) {
            const fs::path dir = cd::ensure_out_dir(out_dir);
            std::vector<Window> all;
            for (const std::string& file : inputs) {
                const Scene scene = cd::load_scene_file(file);
                std::vector<Window> ws = make_windows(scene);
                if (min_present > 1) ws = filter_univ_n(ws, min_present);
                all.insert(all.end(), ws.begin(), ws.end());
            }
            const fs::path path = dir / "windows.jsonl";
            std::ofstream out = cd::open_out(path);
            out << header.dump() << '\n';
            for (const Window& w : all) out << window_to_json(w).dump() << '\n';
            std::cout << "wrote " << all.size() << " windows to " << path.string() << '\n';
            return 0;
        }

        if (*cluster) {
            const fs::path dir = cd::ensure_out_dir(out_dir);
            std::vector<GroupAssignment> assignments;
            const fs::path path = dir / "clusters.jsonl";
            std::ofstream out = cd::open_out(path);
            out << header.dump() << '\n';
            for (const std::string& file : inputs) {
                const Scene scene = cd::load_scene_file(file);
                for (int t = 0; t < scene.num_ticks(); ++t) {
                    GroupAssignment a = cd::tick_assignment(scene, t);
                    if (a.groups.empty()) continue;
                    out << nlohmann::json{{"scene", scene.name}, {"tick", t}, {"groups", a.groups}}.dump()
                        << '\n';
                    assignments.push_back(std::move(a));
                }
            }
            if (!annotations_path.empty()) {
                const auto human = cd::parse_annotations(cd::parse_json_file(annotations_path));
                const double d = dice(assignments, human);
                out << nlohmann::json{{"dice", d}}.dump() << '\n';
                std::cout << "dice " << detail::format_double(d) << '\n';
            }
            std::cout << "wrote " << assignments.size() << " tick groupings to " << path.string() << '\n';
            return 0;
        }

        if (*train_cmd) {
            const fs::path dir = cd::ensure_out_dir(out_dir);
            std::vector<Window> all;
            for (const std::string& file : inputs) {
                const auto ws = cd::load_windows_file(file);
                all.insert(all.end(), ws.begin(), ws.end());
            }
            TrainConfig tc = settings.train;
            if (train_cmd->count("--epochs")) tc.epochs = epochs_flag;
            if (train_cmd->count("--batch-size"))
                tc.batch_size = batch_flag;
            else if (!settings.batch_from_file && all.size() < 256)
                tc.batch_size = 32; // desk-scale default for small corpora

            GrouptronModel model(settings.model, seed);
            const fs::path metrics_path = dir / "metrics.csv";
            std::ofstream metrics = cd::open_out(metrics_path);
            metrics << "# " << header.dump() << '\n';
            const TrainResult result = train(model, all, tc, &metrics);

            const fs::path ckpt_path = dir / "model.ckpt";
            cd::write_checkpoint_file(model, seed, ckpt_path);
            std::cout << "trained " << tc.epochs << " epochs on " << all.size() << " windows";
            if (!result.history.empty())
                std::cout << "; final mean loss " << detail::format_double(result.history.back().mean_loss);
            std::cout << "\nwrote " << ckpt_path.string() << " and " << metrics_path.string() << '\n';
            return 0;
        }

        if (*predict) {
            const fs::path dir = cd::ensure_out_dir(out_dir);
            const GrouptronModel model = cd::load_checkpoint_file(checkpoint_path);
            const nlohmann::json mheader = cd::artifact_header(seed, model.config());
            std::vector<Window> all;
            for (const std::string& file : inputs) {
                const auto ws = cd::load_windows_file(file);
                all.insert(all.end(), ws.begin(), ws.end());
            }
            const std::size_t samples =
                protocol == "best_of_20" ? std::min<std::size_t>(20, model.config().k) : 0;

            std::vector<std::string> rows(all.size());
            cd::parallel_for(all.size(), jobs, [&](std::size_t i) {
                const PredictionOutput p = model.predict(all[i], samples);
                nlohmann::json row{{"scene", all[i].scene_name},
                                   {"t0", all[i].t0},
                                   {"node", all[i].node},
                                   {"protocol", protocol},
                                   {"most_likely", cd::trajectory_json(p.most_likely)}};
                if (!p.samples.empty()) {
                    nlohmann::json sj = nlohmann::json::array();
                    for (const auto& s : p.samples)
                        sj.push_back({{"category", s.category},
                                      {"log_weight", s.log_weight},
                                      {"trajectory", cd::trajectory_json(s.trajectory)}});
                    row["samples"] = std::move(sj);
                }
                rows[i] = row.dump();
            });

            const fs::path path = dir / "predictions.jsonl";
            std::ofstream out = cd::open_out(path);
            out << mheader.dump() << '\n';
            for (const std::string& r : rows) out << r << '\n';
            std::cout << "wrote " << rows.size() << " predictions to " << path.string() << '\n';
            return 0;
        }

        if (*eval_cmd) {
            const fs::path dir = cd::ensure_out_dir(out_dir);
            const GrouptronModel model = cd::load_checkpoint_file(checkpoint_path);
            const nlohmann::json mheader = cd::artifact_header(seed, model.config());

            std::vector<Window> all;
            std::vector<std::pair<std::string, std::size_t>> sets; // name, end offset
            for (const std::string& file : inputs) {
                const auto ws = cd::load_windows_file(file);
                all.insert(all.end(), ws.begin(), ws.end());
                sets.emplace_back(cd::file_stem(file), all.size());
            }
            if (all.empty()) throw data_error("eval: no windows in the input files");

            const std::size_t samples = std::min<std::size_t>(20, model.config().k);
            struct PerWindow {
                double ml_fde, ml_ade, bo_fde, bo_ade, cv_fde, cv_ade;
            };
            std::vector<PerWindow> metrics(all.size());
            cd::parallel_for(all.size(), jobs, [&](std::size_t i) {
                const Window& w = all[i];
                const std::vector<Vec2> truth(w.future.begin(), w.future.end());
                const PredictionOutput p = model.predict(w, samples);
                std::vector<std::vector<Vec2>> trajs;
                trajs.reserve(p.samples.size());
                for (const auto& s : p.samples) trajs.push_back(s.trajectory);
                const BestOfResult bo = best_of_k(trajs, truth);
                const std::vector<Vec2> cv = constant_velocity_baseline(w);
                metrics[i] = {fde(p.most_likely, truth), ade(p.most_likely, truth), bo.fde, bo.ade,
                              fde(cv, truth),            ade(cv, truth)};
            });

            std::vector<EvalReport> reports(3);
            reports[0].protocol = "most_likely";
            reports[1].protocol = "best_of_20";
            reports[2].protocol = "constant_velocity";
            const auto add_rows = [&](const std::string& name, std::size_t lo, std::size_t hi) {
                std::vector<double> f[3], a[3];
                for (std::size_t i = lo; i < hi; ++i) {
                    f[0].push_back(metrics[i].ml_fde);
                    a[0].push_back(metrics[i].ml_ade);
                    f[1].push_back(metrics[i].bo_fde);
                    a[1].push_back(metrics[i].bo_ade);
                    f[2].push_back(metrics[i].cv_fde);
                    a[2].push_back(metrics[i].cv_ade);
                }
                for (int r = 0; r < 3; ++r) reports[static_cast<std::size_t>(r)].rows.push_back(
                    make_row(name, f[r], a[r]));
            };
            std::size_t lo = 0;
            for (const auto& [name, end] : sets) {
                if (end > lo) add_rows(name, lo, end);
                lo = end;
            }
            if (sets.size() > 1) add_rows("all", 0, all.size());

            const fs::path csv_path = dir / "eval.csv";
            std::ofstream csv = cd::open_out(csv_path);
            csv << "# " << mheader.dump() << '\n';
            csv << "protocol,dataset,fde,ade,n_windows\n";
            for (const EvalReport& r : reports)
                for (const EvalRow& row : r.rows)
                    csv << r.protocol << ',' << row.name << ',' << detail::format_double(row.fde) << ','
                        << detail::format_double(row.ade) << ',' << row.n_windows << '\n';

            const fs::path json_path = dir / "eval.json";
            nlohmann::json jr = nlohmann::json::array();
            for (const EvalReport& r : reports) jr.push_back(report_to_json(r));
            std::ofstream js = cd::open_out(json_path);
            js << nlohmann::json{{"header", mheader}, {"reports", jr}}.dump() << '\n';

            for (const EvalReport& r : reports)
                for (const EvalRow& row : r.rows)
                    std::cout << r.protocol << ' ' << row.name << ": fde " << detail::format_double(row.fde)
                              << " ade " << detail::format_double(row.ade) << " (" << row.n_windows
                              << " windows)\n";
            return 0;
        }

        if (*inspect) {
            const std::vector<Window> ws = cd::load_windows_file(inputs.at(0));
            if (index >= ws.size())
                throw data_error("inspect: window index " + std::to_string(index) + " out of range (file has " +
                                 std::to_string(ws.size()) + ")");
            const Window& w = ws[index];
            const double r = radius > 0.0 ? radius : settings.model.radius;

            nlohmann::json graph;
            if (level == "individual") {
                graph = stgraph_to_json(build_individual(w, {r}));
            } else {
                const STGraph individual = build_individual(w, {r});
                const std::set<PedId> scoped = scope_nodes(w, individual);
                std::vector<PedId> ids(scoped.begin(), scoped.end());
                std::vector<std::vector<Vec2>> trajs;
                for (PedId id : ids) {
                    std::vector<Vec2> tr;
                    if (id == w.node) {
                        tr.assign(w.history.begin(), w.history.end());
                    } else {
                        for (const auto& nb : w.neighbors)
                            if (nb.id == id)
                                for (int t = 0; t < kHistorySteps; ++t)
                                    if (nb.observed_at_step(t)) tr.push_back(nb.at_step(t));
                    }
                    trajs.push_back(std::move(tr));
                }
                const GroupAssignment assignment =
                    agglomerate(distance_matrix(trajs), cluster_count(static_cast<int>(ids.size())), ids);
                const std::vector<STGraph> groups = build_group(w, assignment);
                if (level == "group") {
                    graph = nlohmann::json::array();
                    for (const STGraph& g : groups) graph.push_back(stgraph_to_json(g));
                } else {
                    // Scene-level structure; features are parameter-free mean
                    // member features standing in for learned group embeddings.
                    std::vector<std::vector<std::vector<double>>> embeddings;
                    for (const STGraph& g : groups) {
                        std::vector<std::vector<double>> mean(
                            static_cast<std::size_t>(g.num_ticks()),
                            std::vector<double>(static_cast<std::size_t>(g.feature_dim()), 0.0));
                        for (const auto& node_feats : g.feats)
                            for (std::size_t t = 0; t < node_feats.size(); ++t)
                                for (std::size_t d = 0; d < node_feats[t].size(); ++d)
                                    mean[t][d] += node_feats[t][d] / static_cast<double>(g.num_nodes());
                        embeddings.push_back(std::move(mean));
                    }
                    graph = stgraph_to_json(build_scene(embeddings));
                }
            }

            const nlohmann::json doc{{"header", header}, {"graph", graph}};
            if (out_dir.empty()) {
                std::cout << doc.dump(2) << '\n';
            } else {
                const fs::path dir = cd::ensure_out_dir(out_dir);
                const fs::path path = dir / "inspect.json";
                std::ofstream out = cd::open_out(path);
                out << doc.dump() << '\n';
                std::cout << "wrote " << path.string() << '\n';
            }
            return 0;
        }

        if (*plot) {
            const fs::path dir = cd::ensure_out_dir(out_dir);
            const GrouptronModel model = cd::load_checkpoint_file(checkpoint_path);
            const nlohmann::json mheader = cd::artifact_header(seed, model.config());
            std::vector<Window> all;
            for (const std::string& file : inputs) {
                const auto ws = cd::load_windows_file(file);
                all.insert(all.end(), ws.begin(), ws.end());
            }

            std::vector<std::vector<Vec2>> preds(all.size());
            cd::parallel_for(all.size(), jobs, [&](std::size_t i) {
                preds[i] = model.predict(all[i]).most_likely;
            });

            std::map<std::pair<std::string, int>, std::vector<const Window*>> ticks;
            for (const Window& w : all) ticks[{w.scene_name, w.t0}].push_back(&w);

            std::vector<PlotItem> items;
            items.reserve(all.size());
            std::map<const Window*, std::size_t> order;
            for (std::size_t i = 0; i < all.size(); ++i) order[&all[i]] = i;
            for (const auto& [key, group] : ticks) {
                const GroupAssignment a = cd::windows_tick_assignment(group);
                for (const Window* w : group)
                    items.push_back(
                        {*w, preds[order[w]], static_cast<std::size_t>(a.group_of.at(w->node))});
            }
            const auto files = emit_plots(items, dir.string(), mheader.dump());
            std::cout << "wrote " << files.size() << " plots to " << dir.string() << '\n';
            return 0;
        }

        std::cerr << "grouptron: no subcommand\n";
        return 1;
    } catch (const parse_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}

inline int cli_run(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.reserve(args.size() + 1);
    full.push_back("grouptron");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<char*> argv;
    argv.reserve(full.size());
    for (std::string& s : full) argv.push_back(s.data());
    return cli_run(static_cast<int>(argv.size()), argv.data());
}

} // namespace grouptron
