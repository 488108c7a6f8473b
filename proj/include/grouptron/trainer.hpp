#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "grouptron/dataio.hpp"
#include "grouptron/model.hpp"
#include "grouptron/params.hpp"
#include "grouptron/tensor.hpp"

// Mini-batch training: seeded shuffle, Adam with bias correction, global
// gradient-norm clipping, and an exponentially decayed learning rate.

namespace grouptron {

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 256;
    double lr0 = 0.001;
    double decay = 0.9999; // multiplied in once per epoch
    double clip = 1.0;     // global gradient-norm ceiling
    std::uint64_t seed = 0;

    void validate() const {
        if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
        if (lr0 <= 0.0) throw std::invalid_argument("train config: lr0 must be positive");
        if (decay <= 0.0 || decay > 1.0) throw std::invalid_argument("train config: decay must be in (0,1]");
        if (clip <= 0.0) throw std::invalid_argument("train config: clip must be positive");
    }
};

// Scales every gradient buffer by max_norm/g when the combined L2 norm g
// exceeds max_norm. Returns the scale applied (1.0 when untouched).
inline double clip_global_norm(const std::vector<Tensor>& params, double max_norm = 1.0) {
    if (max_norm <= 0.0) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
    double sq = 0.0;
    for (const Tensor& p : params) {
        if (!p.has_grad()) continue;
        Tensor h = p;
        for (double g : h.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return 1.0;
    const double scale = max_norm / norm;
    for (const Tensor& p : params) {
        if (!p.has_grad()) continue;
        Tensor h = p;
        for (double& g : h.grad()) g *= scale;
    }
    return scale;
}

class Adam {
  public:
    explicit Adam(ParameterStore& store, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : store_(&store), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& [path, t] : store.all())
            moments_.emplace(path, Moments{std::vector<double>(t.numel(), 0.0), std::vector<double>(t.numel(), 0.0)});
    }

    std::size_t step_count() const { return step_; }

    void step(double lr) {
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (auto& [path, mom] : moments_) {
            Tensor t = store_->get(path);
            std::vector<double>& x = t.data();
            if (!t.has_grad()) continue;
            const std::vector<double>& g = t.grad();
            for (std::size_t i = 0; i < x.size(); ++i) {
                mom.m[i] = beta1_ * mom.m[i] + (1.0 - beta1_) * g[i];
                mom.v[i] = beta2_ * mom.v[i] + (1.0 - beta2_) * g[i] * g[i];
                x[i] -= lr * (mom.m[i] / bc1) / (std::sqrt(mom.v[i] / bc2) + eps_);
            }
        }
    }

  private:
    struct Moments {
        std::vector<double> m, v;
    };
    ParameterStore* store_;
    double beta1_, beta2_, eps_;
    std::size_t step_ = 0;
    std::map<std::string, Moments> moments_;
};

struct EpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double lr = 0.0;
    double wall_time_s = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
};

namespace detail {

// Fisher-Yates with an explicit draw so the permutation is pinned to the
// generator stream rather than the standard library's shuffle internals.
inline void seeded_shuffle(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
}

inline std::string batch_dump(const std::vector<const EncoderInput*>& batch) {
    std::ostringstream os;
    for (const EncoderInput* in : batch)
        os << " [scene=" << in->scene_name << " t0=" << in->t0 << " node=" << in->node << "]";
    return os.str();
}

} // namespace detail

// Trains the model in place. Windows are featurized once and reused across
// epochs. Every epoch shuffles (seeded), walks batches of cfg.batch_size,
// and per batch zeroes gradients, backpropagates the mean loss, clips the
// global gradient norm, and applies one Adam step at lr0*decay^epoch. A
// trailing single-window batch is folded into its predecessor so the
// mutual-information term always sees at least two rows. Per-epoch rows go
// to `metrics` as CSV when given.
inline TrainResult train(GrouptronModel& model, const std::vector<Window>& windows, const TrainConfig& cfg,
                         std::ostream* metrics = nullptr) {
    cfg.validate();
    if (windows.empty()) throw std::invalid_argument("train: need at least one window");

    std::vector<EncoderInput> inputs;
    inputs.reserve(windows.size());
    for (const Window& w : windows) inputs.push_back(model.featurize(w));

    std::vector<Tensor> params;
    for (const auto& [path, t] : model.params().all()) params.push_back(t);

    Adam opt(model.params());
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    const LossConfig lc{model.config().alpha, model.config().beta};
    const bool needs_pairs = lc.alpha > 0.0 && inputs.size() > 1;

    if (metrics) *metrics << "epoch,mean_loss,lr,wall_time_s\n";

    TrainResult result;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto tick = std::chrono::steady_clock::now();
        const double lr = cfg.lr0 * std::pow(cfg.decay, static_cast<double>(epoch));
        detail::seeded_shuffle(order, rng);

        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t lo = 0; lo < order.size();) {
            std::size_t hi = std::min(lo + cfg.batch_size, order.size());
            if (needs_pairs && hi == order.size() - 1) hi = order.size(); // absorb the stray window
            std::vector<const EncoderInput*> refs;
            std::vector<EncoderInput> batch;
            batch.reserve(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) {
                batch.push_back(inputs[order[i]]);
                refs.push_back(&inputs[order[i]]);
            }

            model.params().zero_grad();
            double value = 0.0;
            try {
                Tape tape;
                const Tensor loss = model.loss(batch, lc);
                value = loss.value();
                tape.backward(loss);
            } catch (const numeric_error& e) {
                throw numeric_error("train: non-finite loss at epoch " + std::to_string(epoch) + " (" + e.what() +
                                    "); batch:" + detail::batch_dump(refs));
            }
            clip_global_norm(params, cfg.clip);
            opt.step(lr);

            loss_sum += value * static_cast<double>(batch.size());
            seen += batch.size();
            lo = hi;
        }

        EpochStats st;
        st.epoch = epoch;
        st.mean_loss = loss_sum / static_cast<double>(seen);
        st.lr = lr;
        st.wall_time_s =
            std::chrono::duration_cast<std::chrono::duration<double>>(std::chrono::steady_clock::now() - tick).count();
        result.history.push_back(st);
        if (metrics)
            *metrics << st.epoch << ',' << detail::format_double(st.mean_loss) << ',' << detail::format_double(st.lr)
                     << ',' << detail::format_double(st.wall_time_s) << '\n';
    }

    model.mark_trained();
    return result;
}

} // namespace grouptron
