#pragma once

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "nckge/kg.hpp"
#include "nckge/ops.hpp"
#include "nckge/rng.hpp"
#include "nckge/tensor.hpp"

namespace nckge {

enum class NormKind { layer, batch, none };
enum class SelfLoopMode { always, isolated, off };

inline NormKind norm_kind_from(const std::string& s) {
    if (s == "layer") return NormKind::layer;
    if (s == "batch") return NormKind::batch;
    if (s == "none") return NormKind::none;
    throw std::invalid_argument("encoder.norm: unknown '" + s + "' (expected layer|batch|none)");
}

inline SelfLoopMode self_loop_mode_from(const std::string& s) {
    if (s == "always") return SelfLoopMode::always;
    if (s == "isolated") return SelfLoopMode::isolated;
    if (s == "off") return SelfLoopMode::off;
    throw std::invalid_argument("encoder.self_loops: unknown '" + s +
                                "' (expected always|isolated|off)");
}

struct RamhaConfig {
    int layers = 2;
    int heads = 10;
    int64_t dim = 200;
    double dropout = 0.2;
    NormKind norm = NormKind::layer;
    SelfLoopMode self_loops = SelfLoopMode::always;
    int64_t basis_threshold = 512;
    int64_t n_bases = 32;

    void validate() const {
        if (layers < 1) throw std::invalid_argument("encoder.layers must be >= 1");
        if (heads < 1) throw std::invalid_argument("encoder.heads must be >= 1");
        if (dim <= 0 || dim % heads != 0)
            throw std::invalid_argument("encoder.heads (" + std::to_string(heads) +
                                        ") must divide encoder.dim (" + std::to_string(dim) + ")");
        if (dropout < 0.0 || dropout >= 1.0)
            throw std::invalid_argument("encoder.dropout must be in [0,1)");
        if (n_bases < 1) throw std::invalid_argument("encoder.n_bases must be >= 1");
    }
    int64_t head_dim() const { return dim / heads; }
};

/// Message-passing edge list in CSR order by destination; self-loop edges use
/// the reserved trailing relation row.
struct EncoderGraph {
    int32_t num_entities = 0;
    int32_t num_relation_rows = 0;  // relation vocab, +1 when self loops are in play
    int32_t self_relation = -1;
    Offsets offsets;  // num_entities + 1
    IdArray dst, src, rel;

    int64_t num_edges() const { return static_cast<int64_t>(dst.size()); }
};

inline EncoderGraph build_encoder_graph(const KnowledgeGraph& kg, SelfLoopMode mode) {
    EncoderGraph eg;
    eg.num_entities = kg.num_entities();
    const bool self = mode != SelfLoopMode::off;
    eg.num_relation_rows = kg.num_relations() + (self ? 1 : 0);
    eg.self_relation = self ? kg.num_relations() : -1;
    eg.offsets.push_back(0);
    for (int32_t u = 0; u < eg.num_entities; ++u) {
        const int64_t b = kg.adj_offsets[static_cast<size_t>(u)];
        const int64_t e = kg.adj_offsets[static_cast<size_t>(u) + 1];
        for (int64_t i = b; i < e; ++i) {
            eg.dst.push_back(u);
            eg.src.push_back(kg.adj_entity[static_cast<size_t>(i)]);
            eg.rel.push_back(kg.adj_relation[static_cast<size_t>(i)]);
        }
        if (mode == SelfLoopMode::always || (mode == SelfLoopMode::isolated && b == e)) {
            eg.dst.push_back(u);
            eg.src.push_back(u);
            eg.rel.push_back(eg.self_relation);
        }
        eg.offsets.push_back(static_cast<int64_t>(eg.dst.size()));
    }
    return eg;
}

template <class S>
struct RamhaLayerParams {
    // per head: query/key/value projections [dc x d] with bias [dc]
    std::vector<Tensor<S>> wq, bq, wk, bk, wv, bv;
    // per head, per relation row: wr/br update the relation embedding slice,
    // wr1/wr2 are the bias-free attention and message maps
    std::vector<Tensor<S>> wr, br, wr1, wr2;          // dense [Rr x dc x dc] / [Rr x dc]
    bool use_basis = false;
    std::vector<Tensor<S>> wr_bases, wr_coeff;        // [B x dc x dc], [Rr x B]
    std::vector<Tensor<S>> wr1_bases, wr1_coeff;
    std::vector<Tensor<S>> wr2_bases, wr2_coeff;
};

template <class S>
struct EncoderState {
    Tensor<S> z;  // [E x d]
    Tensor<S> x;  // [Rr x d]
};

template <class S>
struct EncoderTrace {
    std::vector<EncoderState<S>> states;         // L+1 entries; states[0] = input tables
    std::vector<std::vector<Tensor<S>>> alphas;  // [layer][head] -> [num_edges]
};

namespace detail {

template <class S>
Tensor<S> rel_map(Graph<S>& g, const Tensor<S>& feat, const IdArray& rel_ids,
                  const RamhaLayerParams<S>& lp, const std::vector<Tensor<S>>& dense,
                  const std::vector<Tensor<S>>& bases, const std::vector<Tensor<S>>& coeff,
                  int head, const Tensor<S>& bias = Tensor<S>()) {
    if (lp.use_basis)
        return relation_linear_basis(g, feat, rel_ids, bases[static_cast<size_t>(head)],
                                     coeff[static_cast<size_t>(head)], bias);
    return relation_linear(g, feat, rel_ids, dense[static_cast<size_t>(head)], bias);
}

}  // namespace detail

/// Eq-level surface: the per-head relation embedding update for one layer.
template <class S>
Tensor<S> relation_update_head(Graph<S>& g, const Tensor<S>& x_layer, const RamhaConfig& cfg,
                               const RamhaLayerParams<S>& lp, int head) {
    const int64_t dc = cfg.head_dim();
    const int64_t rr = x_layer.dim(0);
    IdArray ids(static_cast<size_t>(rr));
    std::iota(ids.begin(), ids.end(), 0);
    Tensor<S> x_c = slice_cols(g, x_layer, head * dc, dc);
    return detail::rel_map(g, x_c, ids, lp, lp.wr, lp.wr_bases, lp.wr_coeff, head,
                           lp.use_basis ? Tensor<S>() : lp.br[static_cast<size_t>(head)]);
}

template <class S>
EncoderState<S> encode(Graph<S>& g, const EncoderGraph& eg, const RamhaConfig& cfg,
                       const std::vector<RamhaLayerParams<S>>& layers, const Tensor<S>& z0,
                       const Tensor<S>& x0, Rng* dropout_rng = nullptr,
                       EncoderTrace<S>* trace = nullptr) {
    cfg.validate();
    if (static_cast<int>(layers.size()) != cfg.layers)
        throw ShapeError("encode: expected " + std::to_string(cfg.layers) + " layer params, got " +
                         std::to_string(layers.size()));
    if (z0.dim(0) != eg.num_entities || z0.dim(1) != cfg.dim)
        throw ShapeError("encode: entity table " + shape_str(z0.shape()) + " does not match graph");
    if (x0.dim(0) != eg.num_relation_rows || x0.dim(1) != cfg.dim)
        throw ShapeError("encode: relation table " + shape_str(x0.shape()) +
                         " does not match graph");
    const int64_t dc = cfg.head_dim();
    const S inv_sqrt_dc = S(1.0 / std::sqrt(static_cast<double>(dc)));
    Tensor<S> z = z0, x = x0;
    if (trace) {
        trace->states.clear();
        trace->alphas.clear();
        trace->states.push_back({z, x});
    }
    for (int l = 0; l < cfg.layers; ++l) {
        const auto& lp = layers[static_cast<size_t>(l)];
        try {
            std::vector<Tensor<S>> x_heads, z_heads;
            std::vector<Tensor<S>> layer_alphas;
            for (int c = 0; c < cfg.heads; ++c) {
                Tensor<S> x_next_c = relation_update_head(g, x, cfg, lp, c);
                Tensor<S> q_all = add_bias(
                    g, matmul(g, z, lp.wq[static_cast<size_t>(c)], false, true),
                    lp.bq[static_cast<size_t>(c)]);
                Tensor<S> k_all = add_bias(
                    g, matmul(g, z, lp.wk[static_cast<size_t>(c)], false, true),
                    lp.bk[static_cast<size_t>(c)]);
                Tensor<S> v_all = add_bias(
                    g, matmul(g, z, lp.wv[static_cast<size_t>(c)], false, true),
                    lp.bv[static_cast<size_t>(c)]);
                Tensor<S> x_edge = gather_rows(g, x_next_c, eg.rel);
                Tensor<S> k_edge = circ_correlate(g, gather_rows(g, k_all, eg.src), x_edge);
                Tensor<S> key = detail::rel_map(g, k_edge, eg.rel, lp, lp.wr1, lp.wr1_bases,
                                                lp.wr1_coeff, c);
                Tensor<S> logits =
                    scale(g, dot_rows(g, gather_rows(g, q_all, eg.dst), key), inv_sqrt_dc);
                Tensor<S> alpha = segment_softmax(g, logits, eg.offsets);
                Tensor<S> v_edge = circ_correlate(g, gather_rows(g, v_all, eg.src), x_edge);
                Tensor<S> msg = detail::rel_map(g, v_edge, eg.rel, lp, lp.wr2, lp.wr2_bases,
                                                lp.wr2_coeff, c);
                Tensor<S> z_c = segment_weighted_sum(g, alpha, msg, eg.offsets);
                x_heads.push_back(x_next_c);
                z_heads.push_back(z_c);
                if (trace) layer_alphas.push_back(alpha);
            }
            x = concat(g, x_heads, 1);
            Tensor<S> z_next = concat(g, z_heads, 1);
            if (cfg.dropout > 0.0 && g.training()) {
                if (!dropout_rng)
                    throw std::invalid_argument("encode: dropout requires an RNG in train mode");
                z_next = dropout(g, z_next, cfg.dropout, true, *dropout_rng);
            }
            switch (cfg.norm) {
                case NormKind::layer: z_next = layer_norm(g, z_next, 1); break;
                case NormKind::batch: z_next = layer_norm(g, z_next, 0); break;
                case NormKind::none: break;
            }
            z = z_next;
            if (trace) {
                trace->states.push_back({z, x});
                trace->alphas.push_back(std::move(layer_alphas));
            }
        } catch (const NumericError& e) {
            throw NumericError("encoder layer " + std::to_string(l) + ": " + e.what());
        }
    }
    return {z, x};
}

/// Attention weights of node u at one layer and head: (neighbor, relation, alpha).
template <class S>
std::vector<std::tuple<int32_t, int32_t, S>> attention_weights(
    const EncoderGraph& eg, const RamhaConfig& cfg, const std::vector<RamhaLayerParams<S>>& layers,
    const Tensor<S>& z0, const Tensor<S>& x0, int32_t u, int layer, int head) {
    if (u < 0 || u >= eg.num_entities) throw std::out_of_range("attention_weights: bad entity id");
    if (layer < 0 || layer >= cfg.layers) throw std::out_of_range("attention_weights: bad layer");
    if (head < 0 || head >= cfg.heads) throw std::out_of_range("attention_weights: bad head");
    if (eg.offsets[static_cast<size_t>(u)] == eg.offsets[static_cast<size_t>(u) + 1])
        throw std::invalid_argument("attention_weights: entity " + std::to_string(u) +
                                    " has an empty neighborhood");
    Graph<S> g(Mode::eval);
    EncoderTrace<S> trace;
    encode(g, eg, cfg, layers, z0, x0, nullptr, &trace);
    const Tensor<S>& alpha = trace.alphas[static_cast<size_t>(layer)][static_cast<size_t>(head)];
    std::vector<std::tuple<int32_t, int32_t, S>> out;
    for (int64_t i = eg.offsets[static_cast<size_t>(u)]; i < eg.offsets[static_cast<size_t>(u) + 1];
         ++i)
        out.emplace_back(eg.src[static_cast<size_t>(i)], eg.rel[static_cast<size_t>(i)],
                         alpha.data()[i]);
    return out;
}

/// Node embedding row of z^{layer+1} (post dropout/norm config).
template <class S>
std::vector<S> aggregate_node(const EncoderGraph& eg, const RamhaConfig& cfg,
                              const std::vector<RamhaLayerParams<S>>& layers, const Tensor<S>& z0,
                              const Tensor<S>& x0, int32_t u, int layer) {
    if (u < 0 || u >= eg.num_entities) throw std::out_of_range("aggregate_node: bad entity id");
    if (layer < 0 || layer >= cfg.layers) throw std::out_of_range("aggregate_node: bad layer");
    Graph<S> g(Mode::eval);
    EncoderTrace<S> trace;
    encode(g, eg, cfg, layers, z0, x0, nullptr, &trace);
    const Tensor<S>& z = trace.states[static_cast<size_t>(layer) + 1].z;
    std::vector<S> row(static_cast<size_t>(cfg.dim));
    std::copy_n(z.data() + static_cast<int64_t>(u) * cfg.dim, cfg.dim, row.begin());
    return row;
}

}  // namespace nckge
