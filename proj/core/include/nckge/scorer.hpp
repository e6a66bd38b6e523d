#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "nckge/ops.hpp"
#include "nckge/tensor.hpp"

namespace nckge {

enum class ScorerKind { transe, distmult, complex_, simple, conve };

inline ScorerKind scorer_kind_from(const std::string& s) {
    if (s == "transe") return ScorerKind::transe;
    if (s == "distmult") return ScorerKind::distmult;
    if (s == "complex") return ScorerKind::complex_;
    if (s == "simple") return ScorerKind::simple;
    if (s == "conve") return ScorerKind::conve;
    throw std::invalid_argument("scorer.kind: unknown '" + s +
                                "' (expected transe|distmult|complex|simple|conve)");
}

inline const char* scorer_kind_name(ScorerKind k) {
    switch (k) {
        case ScorerKind::transe: return "transe";
        case ScorerKind::distmult: return "distmult";
        case ScorerKind::complex_: return "complex";
        case ScorerKind::simple: return "simple";
        case ScorerKind::conve: return "conve";
    }
    return "?";
}

struct ScorerConfig {
    ScorerKind kind = ScorerKind::distmult;
    int64_t dim = 200;
    int transe_norm = 2;
    int64_t reshape_rows = 10;
    int64_t reshape_cols = 20;
    int64_t n_filters = 32;
    int64_t filter_h = 3;
    int64_t filter_w = 3;
    double hidden_dropout = 0.2;

    void validate() const {
        if (dim <= 0) throw std::invalid_argument("scorer.dim must be positive");
        if (transe_norm != 1 && transe_norm != 2)
            throw std::invalid_argument("scorer.transe_norm must be 1 or 2");
        if ((kind == ScorerKind::complex_ || kind == ScorerKind::simple) && dim % 2 != 0)
            throw std::invalid_argument(std::string(scorer_kind_name(kind)) +
                                        " scorer needs an even dim, got " + std::to_string(dim));
        if (kind == ScorerKind::conve) {
            if (reshape_rows * reshape_cols != dim)
                throw std::invalid_argument("conve reshape " + std::to_string(reshape_rows) + "x" +
                                            std::to_string(reshape_cols) + " != dim " +
                                            std::to_string(dim));
            if (n_filters <= 0 || filter_h <= 0 || filter_w <= 0)
                throw std::invalid_argument("conve filter geometry must be positive");
            if (filter_h > 2 * reshape_rows || filter_w > reshape_cols)
                throw std::invalid_argument("conve filter larger than stacked input");
        }
    }

    int64_t conv_flat() const {
        return n_filters * (2 * reshape_rows - filter_h + 1) * (reshape_cols - filter_w + 1);
    }
};

template <class S>
struct ScorerParams {
    Tensor<S> filters;    // [n_filters x 1 x fh x fw]
    Tensor<S> conv_bias;  // [n_filters]
    Tensor<S> proj;       // [conv_flat x d]
    Tensor<S> proj_bias;  // [d]
};

// ---------------------------------------------------------------------------
// single-triple reference scorers, plain arithmetic (no tape)
// ---------------------------------------------------------------------------

template <class S>
S score_transe(const std::vector<S>& h, const std::vector<S>& r, const std::vector<S>& t, int p) {
    if (h.size() != r.size() || h.size() != t.size())
        throw std::invalid_argument("score_transe: dim mismatch");
    S acc = S(0);
    for (size_t i = 0; i < h.size(); ++i) {
        const S d = h[i] + r[i] - t[i];
        acc += p == 1 ? std::abs(d) : d * d;
    }
    return p == 1 ? -acc : -std::sqrt(acc);
}

template <class S>
S score_distmult(const std::vector<S>& h, const std::vector<S>& r, const std::vector<S>& t) {
    if (h.size() != r.size() || h.size() != t.size())
        throw std::invalid_argument("score_distmult: dim mismatch");
    S acc = S(0);
    for (size_t i = 0; i < h.size(); ++i) acc += h[i] * r[i] * t[i];
    return acc;
}

template <class S>
S score_complex(const std::vector<S>& h, const std::vector<S>& r, const std::vector<S>& t) {
    if (h.size() != r.size() || h.size() != t.size() || h.size() % 2 != 0)
        throw std::invalid_argument("score_complex: needs matching even dims");
    const size_t half = h.size() / 2;
    S acc = S(0);
    for (size_t i = 0; i < half; ++i) {
        const S a = h[i], b = h[half + i];
        const S c = r[i], d = r[half + i];
        const S e = t[i], f = t[half + i];
        acc += (a * c - b * d) * e + (a * d + b * c) * f;
    }
    return acc;
}

template <class S>
S score_simple(const std::vector<S>& h, const std::vector<S>& r, const std::vector<S>& t) {
    if (h.size() != r.size() || h.size() != t.size() || h.size() % 2 != 0)
        throw std::invalid_argument("score_simple: needs matching even dims");
    const size_t half = h.size() / 2;
    S acc = S(0);
    for (size_t i = 0; i < half; ++i)
        acc += h[i] * r[i] * t[i] + h[half + i] * r[half + i] * t[half + i];
    return acc / S(2);
}

// ---------------------------------------------------------------------------
// batched scorer over encoder outputs
// ---------------------------------------------------------------------------

/// Builds the query rows q[B x d] such that score(h,r,t) = q . z_t for every
/// inner-product scorer; transe never calls this.
template <class S>
Tensor<S> scorer_query(Graph<S>& g, const ScorerConfig& cfg, const ScorerParams<S>& params,
                       const Tensor<S>& h_rows, const Tensor<S>& r_rows, Rng* dropout_rng) {
    const int64_t bsz = h_rows.dim(0), d = cfg.dim;
    if (h_rows.dim(1) != d || r_rows.dim(1) != d || r_rows.dim(0) != bsz)
        throw ShapeError("scorer_query: expects [B x d] head and relation rows");
    switch (cfg.kind) {
        case ScorerKind::distmult:
            return mul(g, h_rows, r_rows);
        case ScorerKind::complex_: {
            const int64_t half = d / 2;
            Tensor<S> hre = slice_cols(g, h_rows, 0, half), him = slice_cols(g, h_rows, half, half);
            Tensor<S> rre = slice_cols(g, r_rows, 0, half), rim = slice_cols(g, r_rows, half, half);
            Tensor<S> qre = sub(g, mul(g, hre, rre), mul(g, him, rim));
            Tensor<S> qim = add(g, mul(g, hre, rim), mul(g, him, rre));
            return concat(g, {qre, qim}, 1);
        }
        case ScorerKind::simple: {
            const int64_t half = d / 2;
            Tensor<S> h1 = slice_cols(g, h_rows, 0, half), h2 = slice_cols(g, h_rows, half, half);
            Tensor<S> r1 = slice_cols(g, r_rows, 0, half), r2 = slice_cols(g, r_rows, half, half);
            return scale(g, concat(g, {mul(g, h1, r1), mul(g, h2, r2)}, 1), S(0.5));
        }
        case ScorerKind::conve: {
            Tensor<S> h2d = reshape(g, h_rows, Shape{bsz, 1, cfg.reshape_rows, cfg.reshape_cols});
            Tensor<S> r2d = reshape(g, r_rows, Shape{bsz, 1, cfg.reshape_rows, cfg.reshape_cols});
            Tensor<S> stacked = concat(g, {h2d, r2d}, 2);  // head block on top
            Tensor<S> conv = relu(g, conv2d(g, stacked, params.filters, params.conv_bias));
            Tensor<S> flat = reshape(g, conv, Shape{bsz, cfg.conv_flat()});
            Tensor<S> proj = relu(g, add_bias(g, matmul(g, flat, params.proj), params.proj_bias));
            if (g.training() && dropout_rng)
                proj = dropout(g, proj, cfg.hidden_dropout, true, *dropout_rng);
            return proj;
        }
        case ScorerKind::transe:
            break;
    }
    throw std::logic_error("scorer_query: transe has no inner-product form");
}

/// Scores every entity: out[b, e] for candidates 0..N-1.
template <class S>
Tensor<S> score_all_tails(Graph<S>& g, const ScorerConfig& cfg, const ScorerParams<S>& params,
                          const Tensor<S>& h_rows, const Tensor<S>& r_rows,
                          const Tensor<S>& entity_table, Rng* dropout_rng = nullptr) {
    if (cfg.kind == ScorerKind::transe)
        return transe_scores_all(g, add(g, h_rows, r_rows), entity_table, cfg.transe_norm);
    Tensor<S> q = scorer_query(g, cfg, params, h_rows, r_rows, dropout_rng);
    return matmul(g, q, entity_table, false, true);
}

/// Scores an explicit candidate list per query row: out[b, w].
template <class S>
Tensor<S> score_gathered_tails(Graph<S>& g, const ScorerConfig& cfg, const ScorerParams<S>& params,
                               const Tensor<S>& h_rows, const Tensor<S>& r_rows,
                               const Tensor<S>& entity_table, const IdArray& ids, int64_t width,
                               Rng* dropout_rng = nullptr) {
    if (cfg.kind == ScorerKind::transe)
        return transe_scores_gathered(g, add(g, h_rows, r_rows), entity_table, ids, width,
                                      cfg.transe_norm);
    Tensor<S> q = scorer_query(g, cfg, params, h_rows, r_rows, dropout_rng);
    return scores_vs_gathered(g, q, entity_table, ids, width);
}

}  // namespace nckge
