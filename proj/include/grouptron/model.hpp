#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "grouptron/dataio.hpp"
#include "grouptron/grouping.hpp"
#include "grouptron/nets.hpp"
#include "grouptron/params.hpp"
#include "grouptron/stgraph.hpp"
#include "grouptron/tensor.hpp"

// The assembled forecaster: multi-scale encoder (history LSTM, edge LSTM,
// group and scene STGCNs), a discrete-latent CVAE over K categories, and a
// GRU decoder whose velocity controls are integrated into positions.

namespace grouptron {

struct ModelConfig {
    std::size_t scene_dim = 16; // scene STGCN output width
    std::size_t group_dim = 16; // group STGCN output width
    std::size_t k = 25;         // latent categories
    double alpha = 1.0;         // mutual-information weight
    double beta = 1.0;          // KL weight
    double radius = 3.0;        // perception range, metres
    double sigma = 0.1;         // output Gaussian scale, metres

    // Narrow configuration for sparse scenes (the --eth-config preset):
    // halves both STGCN widths.
    static ModelConfig eth() {
        ModelConfig c;
        c.scene_dim = 8;
        c.group_dim = 8;
        return c;
    }

    void validate() const {
        if (k < 2) throw std::invalid_argument("config: k must be >= 2");
        if (scene_dim < 1 || group_dim < 1) throw std::invalid_argument("config: encoder dims must be >= 1");
        if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("config: alpha and beta must be >= 0");
        if (radius <= 0.0) throw std::invalid_argument("config: radius must be positive");
        if (sigma <= 0.0) throw std::invalid_argument("config: sigma must be positive");
    }
};

inline nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"scene_dim", c.scene_dim}, {"group_dim", c.group_dim}, {"k", c.k},         {"alpha", c.alpha},
            {"beta", c.beta},           {"radius", c.radius},       {"sigma", c.sigma}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.scene_dim = j.at("scene_dim").get<std::size_t>();
        c.group_dim = j.at("group_dim").get<std::size_t>();
        c.k = j.at("k").get<std::size_t>();
        c.alpha = j.at("alpha").get<double>();
        c.beta = j.at("beta").get<double>();
        c.radius = j.at("radius").get<double>();
        c.sigma = j.at("sigma").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("bad model config: ") + e.what());
    }
    c.validate();
    return c;
}

// Canonical serialization (sorted keys) used for hashing and checkpoints.
inline std::string config_canonical(const ModelConfig& c) { return config_to_json(c).dump(); }

inline std::uint64_t config_hash(const ModelConfig& c) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : config_canonical(c)) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

struct LossConfig {
    double alpha = 1.0;
    double beta = 1.0;
};

// Parameter-independent featurization of one window, reusable across epochs.
struct EncoderInput {
    std::string scene_name;
    int t0 = 0;
    PedId node = 0;
    int present_count = 1;

    Tensor node_seq;                  // {8,4} relative features of the node
    std::vector<Tensor> neighbor_seqs; // {8,4} per in-range neighbor
    struct GroupTensors {
        Tensor adj;   // {8,n,n} normalized
        Tensor feats; // {8,n,4}
    };
    std::vector<GroupTensors> groups;
    Tensor scene_adj; // {8,G,G} normalized complete graph
    std::size_t node_group = 0;
    GroupAssignment assignment;

    Vec2 last_pos;
    Vec2 last_vel;
    Tensor future_feats;   // {12,4} relative future features (posterior input)
    Tensor target_offsets; // {12,2} future position minus last observed position
    std::vector<Vec2> future_abs;
};

struct MultiScaleEmbedding {
    Tensor e_his;   // {1,32}
    Tensor e_edge;  // {1,8}
    Tensor e_scene; // {1,scene_dim}
    Tensor e_multi; // {1,32+8+scene_dim}
};

struct PredictionOutput {
    std::vector<Vec2> most_likely; // 12 positions
    struct Sample {
        std::size_t category = 0;
        double log_weight = 0.0;
        std::vector<Vec2> trajectory; // 12 positions
    };
    std::vector<Sample> samples; // nonincreasing log_weight
};

namespace detail {

inline Tensor seq_tensor(const FeatureSeq& seq) {
    Tensor t = Tensor::zeros({seq.size(), static_cast<std::size_t>(kFeatureDim)});
    for (std::size_t i = 0; i < seq.size(); ++i)
        for (std::size_t j = 0; j < static_cast<std::size_t>(kFeatureDim); ++j)
            t.data()[i * kFeatureDim + j] = seq[i][j];
    return t;
}

inline Tensor identity_tensor(std::size_t n) {
    Tensor t = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data()[i * n + i] = 1.0;
    return t;
}

} // namespace detail

class GrouptronModel {
  public:
    static constexpr std::size_t kNodeHidden = 32;
    static constexpr std::size_t kEdgeHidden = 8;
    static constexpr std::size_t kFutureHidden = 32;
    static constexpr std::size_t kGruHidden = 128;

    GrouptronModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        std::mt19937_64 rng(seed);
        node_lstm_ = LstmParams::create(store_, "node_lstm", kFeatureDim, kNodeHidden, rng);
        edge_lstm_ = LstmParams::create(store_, "edge_lstm", kFeatureDim, kEdgeHidden, rng);
        group_stgcn_ = StgcnParams::create(store_, "group_stgcn", kFeatureDim, cfg_.group_dim, rng);
        scene_stgcn_ = StgcnParams::create(store_, "scene_stgcn", cfg_.group_dim, cfg_.scene_dim, rng);
        future_lstm_ = LstmParams::create(store_, "future_lstm", kFeatureDim, kFutureHidden, rng);
        latent_prior_ = LinearParams::create(store_, "latent_prior", e_multi_len(), cfg_.k, rng);
        latent_post_ = LinearParams::create(store_, "latent_post", e_multi_len() + kFutureHidden, cfg_.k, rng);
        decoder_h0_ = LinearParams::create(store_, "decoder_h0", e_multi_len() + cfg_.k, kGruHidden, rng);
        decoder_gru_ = GruParams::create(store_, "decoder_gru", e_multi_len() + cfg_.k + 2, kGruHidden, rng);
        decoder_out_ = LinearParams::create(store_, "decoder_out", kGruHidden, 2, rng);
    }

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }
    std::size_t e_multi_len() const { return kNodeHidden + kEdgeHidden + cfg_.scene_dim; }

    bool trained() const { return trained_; }
    void mark_trained() { trained_ = true; }

    // ---- featurization (parameter independent) ----
    EncoderInput featurize(const Window& w) const {
        EncoderInput in;
        in.scene_name = w.scene_name;
        in.t0 = w.t0;
        in.node = w.node;
        in.present_count = w.present_count;
        in.last_pos = w.last_position();
        in.last_vel = w.last_velocity();

        const WindowFeatures wf = to_relative(w);
        in.node_seq = detail::seq_tensor(wf.node);

        const STGraph individual = build_individual(w, {cfg_.radius});
        const std::set<PedId> scoped = scope_nodes(w, individual);

        for (const auto& [id, seq] : wf.neighbors)
            if (id != w.node && scoped.count(id)) in.neighbor_seqs.push_back(detail::seq_tensor(seq));

        // Cluster the in-range pedestrians on trajectory Hausdorff distances.
        std::vector<PedId> ids(scoped.begin(), scoped.end());
        std::vector<std::vector<Vec2>> trajs;
        for (PedId id : ids) {
            std::vector<Vec2> traj;
            if (id == w.node) {
                traj.assign(w.history.begin(), w.history.end());
            } else {
                for (const auto& nb : w.neighbors)
                    if (nb.id == id)
                        for (int t = 0; t < kHistorySteps; ++t)
                            if (nb.observed_at_step(t)) traj.push_back(nb.at_step(t));
            }
            trajs.push_back(std::move(traj));
        }
        in.assignment = agglomerate(distance_matrix(trajs), cluster_count(static_cast<int>(ids.size())), ids);
        in.node_group = static_cast<std::size_t>(in.assignment.group_of.at(w.node));

        for (const STGraph& g : build_group(w, in.assignment))
            in.groups.push_back({normalized_adjacency_tensor(g), features_tensor(g)});

        const std::size_t gcount = in.groups.size();
        AdjMatrix complete(gcount, std::vector<double>(gcount, 1.0));
        for (std::size_t i = 0; i < gcount; ++i) complete[i][i] = 0.0;
        const AdjMatrix norm = normalize_adjacency(complete);
        in.scene_adj = Tensor::zeros({static_cast<std::size_t>(kHistorySteps), gcount, gcount});
        for (std::size_t t = 0; t < static_cast<std::size_t>(kHistorySteps); ++t)
            for (std::size_t i = 0; i < gcount; ++i)
                for (std::size_t j = 0; j < gcount; ++j)
                    in.scene_adj.data()[(t * gcount + i) * gcount + j] = norm[i][j];

        in.future_feats = detail::seq_tensor(future_features(w));
        in.target_offsets = Tensor::zeros({static_cast<std::size_t>(kFutureSteps), 2});
        for (int t = 0; t < kFutureSteps; ++t) {
            const Vec2 d = w.future[static_cast<std::size_t>(t)] - in.last_pos;
            in.target_offsets.data()[static_cast<std::size_t>(2 * t)] = d.x;
            in.target_offsets.data()[static_cast<std::size_t>(2 * t + 1)] = d.y;
            in.future_abs.push_back(w.future[static_cast<std::size_t>(t)]);
        }
        return in;
    }

    // ---- encoder ----
    MultiScaleEmbedding encode(const EncoderInput& in) const {
        MultiScaleEmbedding e;
        e.e_his = lstm_encode(node_lstm_, in.node_seq);
        e.e_edge = edge_encode(edge_lstm_, in.neighbor_seqs, static_cast<std::size_t>(kHistorySteps));

        std::vector<Tensor> pooled;
        pooled.reserve(in.groups.size());
        for (const auto& g : in.groups) pooled.push_back(group_pool(stgcn_forward(group_stgcn_, g.adj, g.feats)));
        const Tensor scene_in = stack_axis1(pooled);
        const Tensor scene_out = stgcn_forward(scene_stgcn_, in.scene_adj, scene_in);
        e.e_scene = scene_select(scene_out, in.node_group);

        e.e_multi = concat_last(concat_last(e.e_his, e.e_edge), e.e_scene);
        if (e.e_multi.cols() != e_multi_len())
            throw state_error("assembled embedding has length " + std::to_string(e.e_multi.cols()) + ", expected " +
                              std::to_string(e_multi_len()));
        return e;
    }

    Tensor prior_logits(const Tensor& e_multi) const { return linear(latent_prior_, e_multi); }

    Tensor posterior_logits(const Tensor& e_multi, const Tensor& future_feats) const {
        const Tensor e_future = lstm_encode(future_lstm_, future_feats);
        return linear(latent_post_, concat_last(e_multi, e_future));
    }

    // ---- decoder ----
    // z rows are one-hot (or soft) category codes; u0 is the control seed
    // (the node's last observed velocity). Controls are decoded step by step
    // and integrated from the origin: offsets[t] = offsets[t-1] + dt*u_t.
    struct DecodeResult {
        std::vector<Tensor> controls; // 12 x {B,2}
        std::vector<Tensor> offsets;  // 12 x {B,2}, cumulative
    };

    DecodeResult decode_controls(const Tensor& e_multi, const Tensor& z, const Vec2& u0) const {
        if (z.rank() != 2 || z.cols() != cfg_.k)
            throw std::invalid_argument("decode: z must be {B," + std::to_string(cfg_.k) + "}");
        const std::size_t b = z.shape()[0];
        const Tensor e_rep = repeat_rows(e_multi, b);
        const Tensor ez = concat_last(e_rep, z);
        Tensor h = linear(decoder_h0_, ez);
        Tensor u_prev = repeat_rows(Tensor::row({u0.x, u0.y}), b);
        DecodeResult out;
        Tensor cum;
        for (int t = 0; t < kFutureSteps; ++t) {
            h = gru_decode_step(decoder_gru_, h, concat_last(ez, u_prev));
            const Tensor u = linear(decoder_out_, h);
            const Tensor step = scale(u, kDt);
            cum = t == 0 ? step : add(cum, step);
            out.controls.push_back(u);
            out.offsets.push_back(cum);
            u_prev = u;
        }
        return out;
    }

    // ---- training objective ----
    // Negated objective: -(sum_k q_k LL_k) + beta*KL(q || p) - alpha*I_q,
    // averaged over the batch. The latent expectation is exact over all K
    // categories; I_q approximates the posterior with the prior and uses the
    // batch mean as the marginal latent distribution.
    Tensor loss(const std::vector<EncoderInput>& batch, const LossConfig& lc) const {
        if (batch.empty()) throw std::invalid_argument("loss: empty batch");
        if (lc.alpha > 0.0 && batch.size() < 2)
            throw std::invalid_argument("loss: the marginal latent distribution needs a batch of at least 2");
        if (lc.alpha < 0.0 || lc.beta < 0.0) throw std::invalid_argument("loss: alpha and beta must be >= 0");

        const Tensor one_hot = detail::identity_tensor(cfg_.k);
        const double ll_const =
            static_cast<double>(kFutureSteps) * (-std::log(2.0 * kPi) - 2.0 * std::log(cfg_.sigma));
        const double inv_two_var = 1.0 / (2.0 * cfg_.sigma * cfg_.sigma);

        Tensor total;
        std::vector<Tensor> prior_prob_rows, prior_logprob_rows;
        for (const EncoderInput& in : batch) {
            const MultiScaleEmbedding e = encode(in);
            const Tensor p_logits = prior_logits(e.e_multi);
            const Tensor q_logits = posterior_logits(e.e_multi, in.future_feats);
            const Tensor lq = log_softmax_last(q_logits);
            const Tensor lp = log_softmax_last(p_logits);
            const Tensor q = softmax_last(q_logits);

            const DecodeResult dec = decode_controls(e.e_multi, one_hot, in.last_vel);
            Tensor sq;
            for (int t = 0; t < kFutureSteps; ++t) {
                const Tensor err =
                    sub(dec.offsets[static_cast<std::size_t>(t)],
                        repeat_rows(take(in.target_offsets, static_cast<std::size_t>(t)), cfg_.k));
                const Tensor e2 = sum_cols(mul(err, err));
                sq = t == 0 ? e2 : add(sq, e2);
            }
            const Tensor ll = add_scalar(scale(sq, -inv_two_var), ll_const); // {K,1}
            const Tensor expected_ll = matmul(q, ll);                        // {1,1}
            const Tensor kl = sum_all(mul(q, sub(lq, lp)));

            const Tensor term = add(scale(expected_ll, -1.0), scale(kl, lc.beta));
            total = total.defined() ? add(total, term) : term;

            if (lc.alpha > 0.0) {
                prior_prob_rows.push_back(softmax_last(p_logits));
                prior_logprob_rows.push_back(lp);
            }
        }
        Tensor result = scale(total, 1.0 / static_cast<double>(batch.size()));
        if (lc.alpha > 0.0) {
            const Tensor probs = concat_rows(prior_prob_rows);       // {B,K}
            const Tensor logprobs = concat_rows(prior_logprob_rows); // {B,K}
            const Tensor marginal = mean_rows(probs);                // {1,K}
            const Tensor mi =
                scale(sum_all(mul(probs, sub(logprobs, repeat_rows(log(marginal), batch.size())))),
                      1.0 / static_cast<double>(batch.size()));
            result = sub(result, scale(mi, lc.alpha));
        }
        return result;
    }

    Tensor loss(const std::vector<EncoderInput>& batch) const { return loss(batch, {cfg_.alpha, cfg_.beta}); }

    // ---- prediction ----
    PredictionOutput predict(const Window& w, std::size_t sample_count = 0) const {
        if (!trained_) throw state_error("predict: model has no trained parameters");
        return predict_raw(featurize(w), sample_count);
    }

    // Same contract, reusing a cached featurization; sample_count = 0 decodes
    // only the most likely category, otherwise the top sample_count
    // categories by prior probability (ties to the lower index).
    PredictionOutput predict_raw(const EncoderInput& in, std::size_t sample_count = 0) const {
        if (sample_count > cfg_.k)
            throw std::invalid_argument("predict: cannot draw " + std::to_string(sample_count) + " of " +
                                        std::to_string(cfg_.k) + " categories");
        const MultiScaleEmbedding e = encode(in);
        const Tensor lp = log_softmax_last(prior_logits(e.e_multi));

        std::vector<std::size_t> order(cfg_.k);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return lp.data()[a] > lp.data()[b]; });

        const std::size_t n = std::max<std::size_t>(sample_count, 1);
        Tensor z = Tensor::zeros({n, cfg_.k});
        for (std::size_t i = 0; i < n; ++i) z.data()[i * cfg_.k + order[i]] = 1.0;

        const DecodeResult dec = decode_controls(e.e_multi, z, in.last_vel);
        PredictionOutput out;
        for (std::size_t i = 0; i < n; ++i) {
            PredictionOutput::Sample s;
            s.category = order[i];
            s.log_weight = lp.data()[order[i]];
            for (int t = 0; t < kFutureSteps; ++t) {
                const Tensor& off = dec.offsets[static_cast<std::size_t>(t)];
                s.trajectory.push_back(in.last_pos + Vec2{off.at(i, 0), off.at(i, 1)});
            }
            if (i == 0) out.most_likely = s.trajectory;
            if (sample_count > 0) out.samples.push_back(std::move(s));
        }
        return out;
    }

    // ---- checkpoints: one line of config JSON, then the snapshot ----
    void save_checkpoint(std::ostream& out) const {
        out << config_canonical(cfg_) << '\n';
        store_.save(out);
    }

    static GrouptronModel load_checkpoint(std::istream& in) {
        std::string header;
        if (!std::getline(in, header)) throw data_error("checkpoint: missing config header");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(header);
        } catch (const nlohmann::json::exception& e) {
            throw data_error(std::string("checkpoint: bad config header: ") + e.what());
        }
        GrouptronModel model(config_from_json(j), 0);
        model.store_.load(in);
        model.trained_ = true;
        return model;
    }

  private:
    static constexpr double kPi = 3.14159265358979323846;

    ModelConfig cfg_;
    ParameterStore store_;
    LstmParams node_lstm_, edge_lstm_, future_lstm_;
    StgcnParams group_stgcn_, scene_stgcn_;
    LinearParams latent_prior_, latent_post_, decoder_h0_, decoder_out_;
    GruParams decoder_gru_;
    bool trained_ = false;
};

} // namespace grouptron
