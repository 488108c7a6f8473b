#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "grouptron/params.hpp"
#include "grouptron/stgraph.hpp"
#include "grouptron/tensor.hpp"

// Neural building blocks: LSTM and GRU cells, the two-stage spatio-temporal
// graph convolution block, group mean-pooling and scene last-step selection.
// All parameters live in a ParameterStore under dotted path prefixes.

namespace grouptron {

// Fused-gate LSTM. Gate order along the 4H axis: input, forget, candidate,
// output.
struct LstmParams {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    Tensor w_ih; // {input_dim, 4H}
    Tensor w_hh; // {H, 4H}
    Tensor b;    // {1, 4H}

    static LstmParams create(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                             std::size_t hidden_dim, std::mt19937_64& rng) {
        LstmParams p;
        p.input_dim = input_dim;
        p.hidden_dim = hidden_dim;
        p.w_ih = store.create(prefix + ".w_ih", {input_dim, 4 * hidden_dim}, rng);
        p.w_hh = store.create(prefix + ".w_hh", {hidden_dim, 4 * hidden_dim}, rng);
        p.b = store.create_zeros(prefix + ".b", {1, 4 * hidden_dim});
        return p;
    }
};

// Runs the recurrence from a zero initial state over seq {T, input_dim} and
// returns the final hidden state {1, H}.
inline Tensor lstm_encode(const LstmParams& p, const Tensor& seq) {
    if (seq.rank() != 2 || seq.cols() != p.input_dim)
        throw std::invalid_argument("lstm_encode: sequence must be {T," + std::to_string(p.input_dim) + "}, got " +
                                    detail::shape_str(seq.shape()));
    const std::size_t h = p.hidden_dim;
    Tensor hidden = Tensor::zeros({1, h});
    Tensor cell = Tensor::zeros({1, h});
    for (std::size_t t = 0; t < seq.shape()[0]; ++t) {
        const Tensor x = take(seq, t);
        const Tensor gates = add_bias(add(matmul(x, p.w_ih), matmul(hidden, p.w_hh)), p.b);
        const Tensor gi = sigmoid(slice_last(gates, 0, h));
        const Tensor gf = sigmoid(slice_last(gates, h, 2 * h));
        const Tensor gc = tanh(slice_last(gates, 2 * h, 3 * h));
        const Tensor go = sigmoid(slice_last(gates, 3 * h, 4 * h));
        cell = add(mul(gf, cell), mul(gi, gc));
        hidden = mul(go, tanh(cell));
    }
    return hidden;
}

// Element-wise sum of the neighbor sequences fed through the edge LSTM. The
// summands are added in a canonical order (lexicographic by value) so the
// result is exactly invariant to neighbor permutation. An empty neighbor set
// encodes the all-zero sequence.
inline Tensor edge_encode(const LstmParams& p, const std::vector<Tensor>& neighbor_seqs, std::size_t steps) {
    if (neighbor_seqs.empty()) return lstm_encode(p, Tensor::zeros({steps, p.input_dim}));
    for (const auto& s : neighbor_seqs)
        if (s.rank() != 2 || s.shape()[0] != steps || s.cols() != p.input_dim)
            throw std::invalid_argument("edge_encode: every neighbor sequence must be {" + std::to_string(steps) +
                                        "," + std::to_string(p.input_dim) + "}");
    std::vector<std::size_t> order(neighbor_seqs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::lexicographical_compare(neighbor_seqs[a].data().begin(), neighbor_seqs[a].data().end(),
                                            neighbor_seqs[b].data().begin(), neighbor_seqs[b].data().end());
    });
    Tensor summed = neighbor_seqs[order[0]];
    for (std::size_t i = 1; i < order.size(); ++i) summed = add(summed, neighbor_seqs[order[i]]);
    return lstm_encode(p, summed);
}

// Spatio-temporal graph convolution block: per tick H_t = relu(A_t X_t W),
// then a width-3 same-padded temporal convolution over the tick axis plus
// bias. Sequence length is preserved.
struct StgcnParams {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Tensor w;      // {in_dim, out_dim}
    Tensor kernel; // {3, out_dim, out_dim}
    Tensor bias;   // {1, out_dim}

    static StgcnParams create(ParameterStore& store, const std::string& prefix, std::size_t in_dim,
                              std::size_t out_dim, std::mt19937_64& rng) {
        StgcnParams p;
        p.in_dim = in_dim;
        p.out_dim = out_dim;
        p.w = store.create(prefix + ".w", {in_dim, out_dim}, rng);
        p.kernel = store.create(prefix + ".kernel", {3, out_dim, out_dim}, rng);
        p.bias = store.create_zeros(prefix + ".bias", {1, out_dim});
        return p;
    }
};

// Constant (no-grad) feature tensor {T, n, d} of a graph.
inline Tensor features_tensor(const STGraph& g) {
    const std::size_t t = static_cast<std::size_t>(g.num_ticks());
    const std::size_t n = static_cast<std::size_t>(g.num_nodes());
    const std::size_t d = static_cast<std::size_t>(g.feature_dim());
    Tensor out = Tensor::zeros({t, n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t s = 0; s < t; ++s)
            for (std::size_t j = 0; j < d; ++j) out.data()[(s * n + i) * d + j] = g.feats[i][s][j];
    return out;
}

// Constant tensor {T, n, n} of symmetrically normalized adjacency matrices.
inline Tensor normalized_adjacency_tensor(const STGraph& g) {
    const std::size_t t = static_cast<std::size_t>(g.num_ticks());
    const std::size_t n = static_cast<std::size_t>(g.num_nodes());
    Tensor out = Tensor::zeros({t, n, n});
    for (std::size_t s = 0; s < t; ++s) {
        const AdjMatrix norm = normalize_adjacency(g.adjacency[s]);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) out.data()[(s * n + i) * n + j] = norm[i][j];
    }
    return out;
}

// adj {T,n,n} (already normalized), x {T,n,in_dim} -> {T,n,out_dim}.
inline Tensor stgcn_forward(const StgcnParams& p, const Tensor& adj, const Tensor& x) {
    if (x.rank() != 3 || x.cols() != p.in_dim)
        throw std::invalid_argument("stgcn_forward: features must be {T,n," + std::to_string(p.in_dim) + "}, got " +
                                    detail::shape_str(x.shape()));
    if (adj.rank() != 3 || adj.shape()[0] != x.shape()[0] || adj.shape()[1] != x.shape()[1] ||
        adj.shape()[2] != x.shape()[1])
        throw std::invalid_argument("stgcn_forward: adjacency/features mismatch " + detail::shape_str(adj.shape()) +
                                    " vs " + detail::shape_str(x.shape()));
    const Tensor spatial = relu(bmm_shared(bmm(adj, x), p.w));
    return add_bias(temporal_conv(spatial, p.kernel), p.bias);
}

inline Tensor stgcn_forward(const StgcnParams& p, const STGraph& g) {
    return stgcn_forward(p, normalized_adjacency_tensor(g), features_tensor(g));
}

// Mean over nodes at each tick: {T,n,c} -> {T,c}.
inline Tensor group_pool(const Tensor& embeddings) {
    if (embeddings.rank() != 3) throw std::invalid_argument("group_pool: rank-3 embeddings required");
    return mean_axis1(embeddings);
}

// Embedding of group g at the final tick: {T,G,c} -> {1,c}.
inline Tensor scene_select(const Tensor& scene_out, std::size_t group) {
    if (scene_out.rank() != 3) throw std::invalid_argument("scene_select: rank-3 input required");
    if (group >= scene_out.shape()[1])
        throw std::invalid_argument("scene_select: group index " + std::to_string(group) + " out of range");
    const Tensor last = take(scene_out, scene_out.shape()[0] - 1); // {G,c}
    return take(last, group);                                      // {1,c}
}

// GRU cell. Gate order along the 3H axis: update (z), reset (r), candidate
// (n). The reset gate scales the hidden contribution of the candidate:
// n = tanh(Wx|n + r * (Uh)|n), h' = h + z * (n - h).
struct GruParams {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    Tensor w_ih; // {input_dim, 3H}
    Tensor w_hh; // {H, 3H}
    Tensor b;    // {1, 3H}

    static GruParams create(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                            std::size_t hidden_dim, std::mt19937_64& rng) {
        GruParams p;
        p.input_dim = input_dim;
        p.hidden_dim = hidden_dim;
        p.w_ih = store.create(prefix + ".w_ih", {input_dim, 3 * hidden_dim}, rng);
        p.w_hh = store.create(prefix + ".w_hh", {hidden_dim, 3 * hidden_dim}, rng);
        p.b = store.create_zeros(prefix + ".b", {1, 3 * hidden_dim});
        return p;
    }
};

// h {B,H}, input {B,input_dim} -> {B,H}. Rows evolve independently.
inline Tensor gru_decode_step(const GruParams& p, const Tensor& h, const Tensor& input) {
    if (input.rank() != 2 || input.cols() != p.input_dim || h.rank() != 2 || h.cols() != p.hidden_dim ||
        h.shape()[0] != input.shape()[0])
        throw std::invalid_argument("gru_decode_step: state " + detail::shape_str(h.shape()) + " and input " +
                                    detail::shape_str(input.shape()) + " do not fit the cell");
    const std::size_t hd = p.hidden_dim;
    const Tensor gx = add_bias(matmul(input, p.w_ih), p.b);
    const Tensor gh = matmul(h, p.w_hh);
    const Tensor z = sigmoid(add(slice_last(gx, 0, hd), slice_last(gh, 0, hd)));
    const Tensor r = sigmoid(add(slice_last(gx, hd, 2 * hd), slice_last(gh, hd, 2 * hd)));
    const Tensor n = tanh(add(slice_last(gx, 2 * hd, 3 * hd), mul(r, slice_last(gh, 2 * hd, 3 * hd))));
    return add(h, mul(z, sub(n, h)));
}

// Affine map used for the latent logit heads and the decoder output.
struct LinearParams {
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    Tensor w; // {in, out}
    Tensor b; // {1, out}

    static LinearParams create(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                               std::size_t output_dim, std::mt19937_64& rng) {
        LinearParams p;
        p.input_dim = input_dim;
        p.output_dim = output_dim;
        p.w = store.create(prefix + ".w", {input_dim, output_dim}, rng);
        p.b = store.create_zeros(prefix + ".b", {1, output_dim});
        return p;
    }
};

inline Tensor linear(const LinearParams& p, const Tensor& x) {
    if (x.rank() != 2 || x.cols() != p.input_dim)
        throw std::invalid_argument("linear: input must be {B," + std::to_string(p.input_dim) + "}, got " +
                                    detail::shape_str(x.shape()));
    return add_bias(matmul(x, p.w), p.b);
}

} // namespace grouptron
