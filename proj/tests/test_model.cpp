#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "grouptron/model.hpp"
#include "support/test_scenes.hpp"

using namespace grouptron;
using testsup::still_track;
using testsup::track_lines;

namespace {

Window window_for(const std::string& text, PedId node) {
    const auto windows = make_windows(parse_dataset(text));
    const auto it = std::find_if(windows.begin(), windows.end(), [&](const Window& w) { return w.node == node; });
    REQUIRE(it != windows.end());
    return *it;
}

// Three pedestrians walking together within perception range.
std::string three_ped_scene() {
    std::string text;
    for (int p = 0; p < 3; ++p) {
        std::vector<Vec2> pos;
        for (int t = 0; t < 20; ++t) pos.emplace_back(0.5 * t + 0.1 * p, 0.7 * p);
        text += track_lines(p + 1, 0, pos);
    }
    return text;
}

void zero_params(GrouptronModel& m) {
    for (const auto& [path, t] : m.params().all()) {
        Tensor h = t; // shared handle onto the stored values
        std::fill(h.data().begin(), h.data().end(), 0.0);
    }
}

LstmParams lstm_from(ParameterStore& s, const std::string& p) {
    LstmParams q;
    q.w_ih = s.get(p + ".w_ih");
    q.w_hh = s.get(p + ".w_hh");
    q.b = s.get(p + ".b");
    q.input_dim = q.w_ih.shape()[0];
    q.hidden_dim = q.w_hh.shape()[0];
    return q;
}

StgcnParams stgcn_from(ParameterStore& s, const std::string& p) {
    StgcnParams q;
    q.w = s.get(p + ".w");
    q.kernel = s.get(p + ".kernel");
    q.bias = s.get(p + ".bias");
    q.in_dim = q.w.shape()[0];
    q.out_dim = q.w.shape()[1];
    return q;
}

} // namespace

TEST_CASE("config validation and the narrow preset") {
    ModelConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(ModelConfig::eth().scene_dim == 8);
    CHECK(ModelConfig::eth().group_dim == 8);

    ModelConfig bad = c;
    bad.k = 1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.sigma = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.alpha = -0.1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    const ModelConfig round = config_from_json(config_to_json(c));
    CHECK(config_canonical(round) == config_canonical(c));
    CHECK(config_hash(round) == config_hash(c));
    CHECK(config_hash(ModelConfig::eth()) != config_hash(c));
}

TEST_CASE("lone pedestrian: degenerate scene still yields a full embedding") {
    GrouptronModel m(ModelConfig{}, 1);
    const Window w = window_for(still_track(7, 0, {1.5, -2.0}, 20), 7);
    const EncoderInput in = m.featurize(w);
    CHECK(in.neighbor_seqs.empty());
    CHECK(in.groups.size() == 1);
    CHECK(in.assignment.groups == std::vector<std::vector<PedId>>{{7}});
    CHECK(in.scene_adj.shape() == Shape{8, 1, 1});

    const MultiScaleEmbedding e = m.encode(in);
    CHECK(e.e_his.cols() == 32);
    CHECK(e.e_edge.cols() == 8);
    CHECK(e.e_scene.cols() == 16);
    CHECK(e.e_multi.cols() == 56);

    // The edge embedding equals encoding the all-zero sequence.
    const LstmParams edge = lstm_from(m.params(), "edge_lstm");
    const Tensor zero_enc = lstm_encode(edge, Tensor::zeros({8, 4}));
    CHECK(e.e_edge.data() == zero_enc.data());
}

TEST_CASE("embedding lengths are 56 by default and 48 in the narrow config") {
    GrouptronModel wide(ModelConfig{}, 3);
    GrouptronModel narrow(ModelConfig::eth(), 3);
    CHECK(wide.e_multi_len() == 56);
    CHECK(narrow.e_multi_len() == 48);
    const Window w = window_for(three_ped_scene(), 1);
    CHECK(wide.encode(wide.featurize(w)).e_multi.cols() == 56);
    CHECK(narrow.encode(narrow.featurize(w)).e_multi.cols() == 48);
}

TEST_CASE("relabeling pedestrians leaves the embedding unchanged") {
    auto scene = [](PedId a, PedId b, PedId c) {
        std::string text;
        const PedId ids[3] = {a, b, c};
        for (int p = 0; p < 3; ++p) {
            std::vector<Vec2> pos;
            for (int t = 0; t < 20; ++t) pos.emplace_back(0.4 * t + 0.3 * p, 1.1 * p);
            text += track_lines(ids[p], 0, pos);
        }
        return text;
    };
    GrouptronModel m(ModelConfig{}, 11);
    const Window w1 = window_for(scene(1, 2, 3), 1);
    const Window w2 = window_for(scene(1, 30, 9), 1); // neighbors renamed and reordered
    const Tensor e1 = m.encode(m.featurize(w1)).e_multi;
    const Tensor e2 = m.encode(m.featurize(w2)).e_multi;
    for (std::size_t j = 0; j < e1.cols(); ++j)
        CHECK(e1.data()[j] == Catch::Approx(e2.data()[j]).margin(1e-12));
}

TEST_CASE("encode equals the hand-composed stage pipeline on a 5-pedestrian scene") {
    // Two tight pairs and one offset walker, all inside the 3 m radius.
    const double ys[5] = {0.0, 0.3, 1.8, 2.1, -2.2};
    std::string text;
    for (int p = 0; p < 5; ++p) {
        std::vector<Vec2> pos;
        for (int t = 0; t < 20; ++t) pos.emplace_back(0.5 * t, ys[p]);
        text += track_lines(p + 1, 0, pos);
    }
    GrouptronModel m(ModelConfig{}, 17);
    const Window w = window_for(text, 1);
    const EncoderInput in = m.featurize(w);
    REQUIRE(in.groups.size() == 3);
    const MultiScaleEmbedding e = m.encode(in);

    // Stage-by-stage composition through the public pieces.
    const WindowFeatures wf = to_relative(w);
    auto seq_of = [&](PedId id) {
        for (const auto& [nid, s] : wf.neighbors)
            if (nid == id) return detail::seq_tensor(s);
        return detail::seq_tensor(wf.node);
    };
    const STGraph individual = build_individual(w, {m.config().radius});
    const std::set<PedId> scoped = scope_nodes(w, individual);
    REQUIRE(scoped.size() == 5);

    const Tensor e_his = lstm_encode(lstm_from(m.params(), "node_lstm"), detail::seq_tensor(wf.node));
    std::vector<Tensor> nbs;
    for (PedId id : scoped)
        if (id != w.node) nbs.push_back(seq_of(id));
    const Tensor e_edge = edge_encode(lstm_from(m.params(), "edge_lstm"), nbs, 8);

    std::vector<PedId> ids(scoped.begin(), scoped.end());
    std::vector<std::vector<Vec2>> trajs;
    for (PedId id : ids) {
        std::vector<Vec2> tr;
        if (id == w.node)
            tr.assign(w.history.begin(), w.history.end());
        else
            for (const auto& nb : w.neighbors)
                if (nb.id == id)
                    for (int t = 0; t < kHistorySteps; ++t)
                        if (nb.observed_at_step(t)) tr.push_back(nb.at_step(t));
        trajs.push_back(tr);
    }
    const auto assignment = agglomerate(distance_matrix(trajs), cluster_count(5), ids);
    CHECK(assignment.groups == in.assignment.groups);

    const auto group_graphs = build_group(w, assignment);
    const StgcnParams gp = stgcn_from(m.params(), "group_stgcn");
    std::vector<std::vector<std::vector<double>>> embeddings;
    std::vector<Tensor> pooled;
    for (const auto& g : group_graphs) {
        const Tensor out = group_pool(stgcn_forward(gp, g));
        pooled.push_back(out);
        std::vector<std::vector<double>> seq;
        for (std::size_t t = 0; t < 8; ++t) {
            std::vector<double> row;
            for (std::size_t c2 = 0; c2 < out.cols(); ++c2) row.push_back(out.at(t, c2));
            seq.push_back(row);
        }
        embeddings.push_back(seq);
    }
    const STGraph scene_graph = build_scene(embeddings);
    const Tensor scene_out = stgcn_forward(stgcn_from(m.params(), "scene_stgcn"), scene_graph);
    const Tensor e_scene = scene_select(scene_out, static_cast<std::size_t>(assignment.group_of.at(w.node)));

    const Tensor e_multi = concat_last(concat_last(e_his, e_edge), e_scene);
    REQUIRE(e_multi.cols() == e.e_multi.cols());
    for (std::size_t j = 0; j < e_multi.cols(); ++j)
        CHECK(e.e_multi.data()[j] == Catch::Approx(e_multi.data()[j]).margin(1e-12));
}

TEST_CASE("decode: zero weights predict standing still at the last position") {
    GrouptronModel m(ModelConfig{}, 5);
    zero_params(m);
    m.mark_trained();
    const Window w = window_for(three_ped_scene(), 2);
    const PredictionOutput out = m.predict(w);
    REQUIRE(out.most_likely.size() == 12);
    for (const Vec2& p : out.most_likely) {
        CHECK(p.x == w.last_position().x);
        CHECK(p.y == w.last_position().y);
    }
}

TEST_CASE("decode: forced constant control advances 0.4 m per step") {
    GrouptronModel m(ModelConfig{}, 5);
    zero_params(m);
    m.params().get("decoder_out.b").data() = {1.0, 0.0};
    m.mark_trained();
    const Window w = window_for(still_track(1, 0, {2.0, 3.0}, 20), 1);
    const PredictionOutput out = m.predict(w);
    for (int t = 0; t < 12; ++t) {
        CHECK(out.most_likely[static_cast<std::size_t>(t)].x == Catch::Approx(2.0 + 0.4 * (t + 1)).margin(1e-12));
        CHECK(out.most_likely[static_cast<std::size_t>(t)].y == 3.0);
    }
}

TEST_CASE("decode offsets are the running dt-scaled control sum") {
    GrouptronModel m(ModelConfig{}, 23);
    const Window w = window_for(three_ped_scene(), 1);
    const EncoderInput in = m.featurize(w);
    const MultiScaleEmbedding e = m.encode(in);
    const Tensor z = grouptron::detail::identity_tensor(m.config().k);
    const auto dec = m.decode_controls(e.e_multi, z, in.last_vel);
    REQUIRE(dec.controls.size() == 12);
    for (std::size_t b = 0; b < m.config().k; ++b) {
        double cx = 0.0, cy = 0.0;
        for (int t = 0; t < 12; ++t) {
            cx += dec.controls[static_cast<std::size_t>(t)].at(b, 0) * kDt;
            cy += dec.controls[static_cast<std::size_t>(t)].at(b, 1) * kDt;
            CHECK(dec.offsets[static_cast<std::size_t>(t)].at(b, 0) == Catch::Approx(cx).margin(1e-12));
            CHECK(dec.offsets[static_cast<std::size_t>(t)].at(b, 1) == Catch::Approx(cy).margin(1e-12));
        }
    }
}

TEST_CASE("integer translation shifts predictions exactly") {
    // The node's last observed position sits at the origin, so predicted
    // positions are plain offset sums and the shifted run adds the integer
    // translation in a single rounding-free step.
    auto scene = [](double ax, double ay) {
        std::string text;
        for (int p = 0; p < 3; ++p) {
            std::vector<Vec2> pos;
            for (int t = 0; t < 20; ++t)
                pos.emplace_back(t - 7.0 + ax + double(p), (p == 2 ? -1.0 : double(p)) + ay);
            text += track_lines(p + 1, 0, pos);
        }
        return text;
    };
    GrouptronModel m(ModelConfig{}, 29);
    m.mark_trained();
    const PredictionOutput base = m.predict(window_for(scene(0, 0), 1), 5);
    const PredictionOutput moved = m.predict(window_for(scene(37, -12), 1), 5);
    REQUIRE(base.samples.size() == 5);
    for (std::size_t s = 0; s < 5; ++s)
        for (int t = 0; t < 12; ++t) {
            const Vec2 a = base.samples[s].trajectory[static_cast<std::size_t>(t)];
            const Vec2 b = moved.samples[s].trajectory[static_cast<std::size_t>(t)];
            CHECK(b.x == a.x + 37.0);
            CHECK(b.y == a.y - 12.0);
        }
}

TEST_CASE("loss: equal latent logits give a zero KL term") {
    GrouptronModel m(ModelConfig{}, 31);
    zero_params(m); // prior and posterior logits both all-zero
    const Window w = window_for(three_ped_scene(), 1);
    const std::vector<EncoderInput> batch{m.featurize(w)};
    const double with_kl = m.loss(batch, {0.0, 5.0}).value();
    const double without = m.loss(batch, {0.0, 0.0}).value();
    CHECK(with_kl == Catch::Approx(without).margin(1e-12));
}

TEST_CASE("loss: the KL term is nonnegative") {
    GrouptronModel m(ModelConfig{}, 37);
    const auto windows = make_windows(parse_dataset(three_ped_scene()));
    std::vector<EncoderInput> batch;
    for (const auto& w : windows) batch.push_back(m.featurize(w));
    const double beta0 = m.loss(batch, {0.0, 0.0}).value();
    const double beta1 = m.loss(batch, {0.0, 1.0}).value();
    CHECK(beta1 >= beta0 - 1e-12);
}

TEST_CASE("loss matches a hand-computed two-category objective") {
    ModelConfig cfg;
    cfg.k = 2;
    GrouptronModel m(cfg, 41);
    zero_params(m);
    m.params().get("latent_prior.b").data() = {0.1, 0.4};
    m.params().get("latent_post.b").data() = {0.3, -0.2};

    std::vector<Vec2> pos;
    for (int t = 0; t < 20; ++t) pos.emplace_back(1.0 * t, 0.0);
    const Window w = window_for(track_lines(1, 0, pos), 1);
    const EncoderInput in = m.featurize(w);

    // Zero decoder: both categories predict standing still, so the squared
    // error is the summed squared target offset.
    double sq = 0.0;
    for (int t = 0; t < 12; ++t) {
        const Vec2 d = w.future[static_cast<std::size_t>(t)] - w.last_position();
        sq += d.x * d.x + d.y * d.y;
    }
    const double sigma = cfg.sigma;
    const double ll = -sq / (2.0 * sigma * sigma) + 12.0 * (-std::log(2.0 * 3.14159265358979323846) - 2.0 * std::log(sigma));

    auto softmax2 = [](double a, double b) {
        const double m2 = std::max(a, b);
        const double ea = std::exp(a - m2), eb = std::exp(b - m2);
        return std::pair<double, double>{ea / (ea + eb), eb / (ea + eb)};
    };
    const auto [q0, q1] = softmax2(0.3, -0.2);
    const auto [p0, p1] = softmax2(0.1, 0.4);
    const double kl = q0 * std::log(q0 / p0) + q1 * std::log(q1 / p1);
    const double beta = 0.7;
    const double expected = -(q0 * ll + q1 * ll) + beta * kl;

    const double got = m.loss({in}, {0.0, beta}).value();
    CHECK(got == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("loss guards its batch preconditions") {
    GrouptronModel m(ModelConfig{}, 43);
    const Window w = window_for(three_ped_scene(), 1);
    const std::vector<EncoderInput> one{m.featurize(w)};
    CHECK_THROWS_AS(m.loss({}, {0.0, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(m.loss(one, {1.0, 1.0}), std::invalid_argument);
    CHECK_NOTHROW(m.loss(one, {0.0, 1.0}));
}

TEST_CASE("mutual-information term uses the batch marginal") {
    // Two windows with identical featurization give identical priors, so the
    // marginal equals each prior and the MI term vanishes.
    GrouptronModel m(ModelConfig{}, 47);
    const Window w = window_for(three_ped_scene(), 1);
    const EncoderInput in = m.featurize(w);
    const std::vector<EncoderInput> twin{in, in};
    const double without = m.loss(twin, {0.0, 1.0}).value();
    const double with_mi = m.loss(twin, {2.5, 1.0}).value();
    CHECK(with_mi == Catch::Approx(without).margin(1e-12));

    // Distinct windows make the MI strictly positive, lowering the loss.
    const auto windows = make_windows(parse_dataset(three_ped_scene() + still_track(9, 0, {40.0, 0.0}, 20)));
    std::vector<EncoderInput> batch;
    for (const auto& win : windows) batch.push_back(m.featurize(win));
    REQUIRE(batch.size() >= 3);
    const double base = m.loss(batch, {0.0, 1.0}).value();
    const double mi = m.loss(batch, {1.0, 1.0}).value();
    CHECK(mi <= base + 1e-12);
}

TEST_CASE("full-model gradients pass the finite-difference check") {
    ModelConfig cfg;
    cfg.k = 4; // small latent keeps the differencing affordable in a unit test
    GrouptronModel m(cfg, 53);
    const auto windows = make_windows(parse_dataset(three_ped_scene()));
    REQUIRE(windows.size() == 3);
    std::vector<EncoderInput> batch{m.featurize(windows[0]), m.featurize(windows[1])};

    std::vector<Tensor> ps;
    for (const auto& [path, t] : m.params().all()) ps.push_back(t);
    auto f = [&] { return m.loss(batch, {1.0, 1.0}); };
    const auto rep = grad_check_sampled(f, ps, 3, 777, 1e-5, 1e-5);
    CHECK(rep.pass);
    CHECK(rep.checked > 50);
}

TEST_CASE("predict: sampling contract") {
    GrouptronModel m(ModelConfig{}, 59);
    const Window w = window_for(three_ped_scene(), 1);

    SECTION("untrained models refuse to predict") { CHECK_THROWS_AS(m.predict(w), state_error); }

    m.mark_trained();

    SECTION("top-1 equals most_likely") {
        const auto one = m.predict(w, 1);
        REQUIRE(one.samples.size() == 1);
        for (int t = 0; t < 12; ++t) {
            CHECK(one.samples[0].trajectory[static_cast<std::size_t>(t)].x ==
                  one.most_likely[static_cast<std::size_t>(t)].x);
            CHECK(one.samples[0].trajectory[static_cast<std::size_t>(t)].y ==
                  one.most_likely[static_cast<std::size_t>(t)].y);
        }
    }
    SECTION("20 samples with nonincreasing log-weights") {
        const auto out = m.predict(w, 20);
        REQUIRE(out.samples.size() == 20);
        for (std::size_t i = 1; i < out.samples.size(); ++i)
            CHECK(out.samples[i].log_weight <= out.samples[i - 1].log_weight);
        std::set<std::size_t> cats;
        for (const auto& s : out.samples) cats.insert(s.category);
        CHECK(cats.size() == 20);
    }
    SECTION("ties break toward the lower category index") {
        GrouptronModel flat(ModelConfig{}, 61);
        zero_params(flat); // uniform prior: every category ties
        flat.mark_trained();
        const auto out = flat.predict(w, 3);
        CHECK(out.samples[0].category == 0);
        CHECK(out.samples[1].category == 1);
        CHECK(out.samples[2].category == 2);
    }
    SECTION("cannot request more samples than categories") {
        CHECK_THROWS_AS(m.predict(w, 26), std::invalid_argument);
    }
}

TEST_CASE("checkpoint round trip preserves parameters, config, and outputs") {
    GrouptronModel m(ModelConfig::eth(), 67);
    m.mark_trained();
    const Window w = window_for(three_ped_scene(), 2);
    const auto before = m.predict(w, 3);

    std::stringstream buf;
    m.save_checkpoint(buf);
    GrouptronModel loaded = GrouptronModel::load_checkpoint(buf);
    CHECK(loaded.trained());
    CHECK(config_canonical(loaded.config()) == config_canonical(m.config()));
    for (const auto& [path, t] : m.params().all()) CHECK(loaded.params().get(path).data() == t.data());

    const auto after = loaded.predict(w, 3);
    for (std::size_t s = 0; s < 3; ++s)
        for (int t = 0; t < 12; ++t) {
            CHECK(after.samples[s].trajectory[static_cast<std::size_t>(t)].x ==
                  before.samples[s].trajectory[static_cast<std::size_t>(t)].x);
            CHECK(after.samples[s].trajectory[static_cast<std::size_t>(t)].y ==
                  before.samples[s].trajectory[static_cast<std::size_t>(t)].y);
        }

    std::stringstream bad("this is not a checkpoint\n");
    CHECK_THROWS_AS(GrouptronModel::load_checkpoint(bad), data_error);
}
