#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nckge/kg.hpp"
#include "nckge/ops.hpp"
#include "nckge/rng.hpp"
#include "nckge/tensor.hpp"

namespace nckge {

enum class LossKind { nc, bce, mp, mr };

inline LossKind loss_kind_from(const std::string& s) {
    if (s == "nc") return LossKind::nc;
    if (s == "bce") return LossKind::bce;
    if (s == "mp") return LossKind::mp;
    if (s == "mr") return LossKind::mr;
    throw std::invalid_argument("loss.kind: unknown '" + s + "' (expected nc|bce|mp|mr)");
}

inline const char* loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::nc: return "nc";
        case LossKind::bce: return "bce";
        case LossKind::mp: return "mp";
        case LossKind::mr: return "mr";
    }
    return "?";
}

struct ContrastiveConfig {
    int k_plus = 1;
    int64_t n_negatives = 0;  // 0 = all entities outside positives_of(h,r)
    double q = 1.0;

    void validate() const {
        if (k_plus < 1) throw std::invalid_argument("loss.k_plus must be >= 1");
        if (n_negatives < 0) throw std::invalid_argument("loss.negatives must be 'all' or >= 1");
    }
};

/// Contrastive loss on already-normalized scores. Per anchor row:
/// -log( sum_pos e^{s/tau} / (sum_pos e^{s/tau} + q * sum_neg e^{s/tau}) ),
/// averaged over rows. Ignored candidates contribute nothing.
template <class S>
Tensor<S> nc_loss(Graph<S>& g, const Tensor<S>& sbar, const Mask& mask, double tau, double q_weight) {
    if (sbar.rank() != 2) throw ShapeError("nc_loss: expects [B x K] scores");
    const int64_t rows = sbar.dim(0), cols = sbar.dim(1);
    if (static_cast<int64_t>(mask.size()) != rows * cols)
        throw ShapeError("nc_loss: mask size mismatch");
    const S inv_tau = S(1.0 / tau);
    const S q = S(q_weight);
    auto row_max = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
    auto row_p = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
    auto row_n = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
    S total = S(0);
    for (int64_t r = 0; r < rows; ++r) {
        bool has_pos = false, has_neg = false;
        S mx = S(0);
        for (int64_t c = 0; c < cols; ++c) {
            const int8_t m = mask[static_cast<size_t>(r * cols + c)];
            if (m == kMaskIgnore) continue;
            const S v = sbar.data()[r * cols + c] * inv_tau;
            if (!has_pos && !has_neg) mx = v;
            else mx = std::max(mx, v);
            (m == kMaskPos ? has_pos : has_neg) = true;
        }
        if (!has_pos)
            throw std::invalid_argument("nc_loss: anchor " + std::to_string(r) +
                                        " has no positive candidates");
        if (!has_neg)
            throw std::invalid_argument("nc_loss: anchor " + std::to_string(r) +
                                        " has no negative candidates");
        S p = S(0), n = S(0);
        for (int64_t c = 0; c < cols; ++c) {
            const int8_t m = mask[static_cast<size_t>(r * cols + c)];
            if (m == kMaskIgnore) continue;
            const S e = std::exp(sbar.data()[r * cols + c] * inv_tau - mx);
            if (m == kMaskPos) p += e;
            else n += e;
        }
        (*row_max)[static_cast<size_t>(r)] = mx;
        (*row_p)[static_cast<size_t>(r)] = p;
        (*row_n)[static_cast<size_t>(r)] = n;
        total += std::log(p + q * n) - std::log(p);
    }
    Tensor<S> out = Tensor<S>::scalar_tensor(total / static_cast<S>(rows));
    g.check_finite("nc_loss", out);
    if (g.wants_grad(sbar)) {
        out.set_requires_grad(true);
        g.record(out, [sbar, out, mask, row_max, row_p, row_n, rows, cols, inv_tau, q]() mutable {
            const S go = out.grad()[0] / static_cast<S>(rows);
            S* gs = sbar.grad();
            for (int64_t r = 0; r < rows; ++r) {
                const S mx = (*row_max)[static_cast<size_t>(r)];
                const S p = (*row_p)[static_cast<size_t>(r)];
                const S n = (*row_n)[static_cast<size_t>(r)];
                const S denom = p + q * n;
                for (int64_t c = 0; c < cols; ++c) {
                    const int8_t m = mask[static_cast<size_t>(r * cols + c)];
                    if (m == kMaskIgnore) continue;
                    const S e = std::exp(sbar.data()[r * cols + c] * inv_tau - mx);
                    if (m == kMaskPos)
                        gs[r * cols + c] += go * inv_tau * (e / denom - e / p);
                    else
                        gs[r * cols + c] += go * inv_tau * q * e / denom;
                }
            }
        });
    }
    return out;
}

/// Mean binary cross-entropy with logits; labels are 0/1 per candidate.
template <class S>
Tensor<S> bce_loss(Graph<S>& g, const Tensor<S>& logits, const std::vector<uint8_t>& labels) {
    const int64_t n = logits.numel();
    if (static_cast<int64_t>(labels.size()) != n)
        throw ShapeError("bce_loss: labels length " + std::to_string(labels.size()) +
                         " vs logits " + shape_str(logits.shape()));
    S total = S(0);
    for (int64_t i = 0; i < n; ++i) {
        const S x = logits.data()[i];
        const S y = labels[static_cast<size_t>(i)] ? S(1) : S(0);
        total += std::max(x, S(0)) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
    Tensor<S> out = Tensor<S>::scalar_tensor(total / static_cast<S>(n));
    g.check_finite("bce_loss", out);
    if (g.wants_grad(logits)) {
        out.set_requires_grad(true);
        g.record(out, [logits, out, labels, n]() mutable {
            const S go = out.grad()[0] / static_cast<S>(n);
            S* gl = logits.grad();
            for (int64_t i = 0; i < n; ++i) {
                const S x = logits.data()[i];
                const S sig = S(1) / (S(1) + std::exp(-x));
                const S y = labels[static_cast<size_t>(i)] ? S(1) : S(0);
                gl[i] += go * (sig - y);
            }
        });
    }
    return out;
}

/// Mean over rows of -log softmax(row)[gold].
template <class S>
Tensor<S> mp_loss(Graph<S>& g, const Tensor<S>& scores, const std::vector<int64_t>& gold_cols) {
    if (scores.rank() != 2) throw ShapeError("mp_loss: expects [B x K] scores");
    const int64_t rows = scores.dim(0), cols = scores.dim(1);
    if (cols < 2) throw ShapeError("mp_loss: needs at least 2 candidates");
    if (static_cast<int64_t>(gold_cols.size()) != rows)
        throw ShapeError("mp_loss: gold index count mismatch");
    for (int64_t go : gold_cols)
        if (go < 0 || go >= cols)
            throw std::out_of_range("mp_loss: gold index " + std::to_string(go) + " outside [0," +
                                    std::to_string(cols) + ")");
    auto row_max = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
    auto row_lse = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
    S total = S(0);
    for (int64_t r = 0; r < rows; ++r) {
        const S* s = scores.data() + r * cols;
        S mx = s[0];
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, s[c]);
        S denom = S(0);
        for (int64_t c = 0; c < cols; ++c) denom += std::exp(s[c] - mx);
        (*row_max)[static_cast<size_t>(r)] = mx;
        (*row_lse)[static_cast<size_t>(r)] = denom;
        total += mx + std::log(denom) - s[gold_cols[static_cast<size_t>(r)]];
    }
    Tensor<S> out = Tensor<S>::scalar_tensor(total / static_cast<S>(rows));
    g.check_finite("mp_loss", out);
    if (g.wants_grad(scores)) {
        out.set_requires_grad(true);
        g.record(out, [scores, out, gold_cols, row_max, row_lse, rows, cols]() mutable {
            const S go = out.grad()[0] / static_cast<S>(rows);
            S* gs = scores.grad();
            for (int64_t r = 0; r < rows; ++r) {
                const S* s = scores.data() + r * cols;
                const S mx = (*row_max)[static_cast<size_t>(r)];
                const S denom = (*row_lse)[static_cast<size_t>(r)];
                for (int64_t c = 0; c < cols; ++c) {
                    S v = std::exp(s[c] - mx) / denom;
                    if (c == gold_cols[static_cast<size_t>(r)]) v -= S(1);
                    gs[r * cols + c] += go * v;
                }
            }
        });
    }
    return out;
}

/// Margin ranking: mean over rows of the per-row mean of max(0, gamma - s+ + s-).
template <class S>
Tensor<S> mr_loss(Graph<S>& g, const Tensor<S>& pos, const Tensor<S>& negs, double gamma) {
    if (pos.rank() != 1 || negs.rank() != 2 || pos.dim(0) != negs.dim(0))
        throw ShapeError("mr_loss: expects pos [B], negs [B x K]");
    if (gamma <= 0) throw std::invalid_argument("mr_loss: margin must be > 0");
    const int64_t rows = negs.dim(0), cols = negs.dim(1);
    if (cols == 0) throw ShapeError("mr_loss: empty negatives");
    const S gm = S(gamma);
    S total = S(0);
    for (int64_t r = 0; r < rows; ++r) {
        S acc = S(0);
        for (int64_t c = 0; c < cols; ++c)
            acc += std::max(S(0), gm - pos.data()[r] + negs.data()[r * cols + c]);
        total += acc / static_cast<S>(cols);
    }
    Tensor<S> out = Tensor<S>::scalar_tensor(total / static_cast<S>(rows));
    g.check_finite("mr_loss", out);
    if (g.wants_grad(pos, negs)) {
        out.set_requires_grad(true);
        g.record(out, [pos, negs, out, rows, cols, gm]() mutable {
            const S go = out.grad()[0] / (static_cast<S>(rows) * static_cast<S>(cols));
            S* gp = pos.requires_grad() ? pos.grad() : nullptr;
            S* gn = negs.requires_grad() ? negs.grad() : nullptr;
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < cols; ++c)
                    if (gm - pos.data()[r] + negs.data()[r * cols + c] > S(0)) {
                        if (gp) gp[r] -= go;
                        if (gn) gn[r * cols + c] += go;
                    }
        });
    }
    return out;
}

/// Margin ranking over a masked candidate layout: the positive is the gold
/// column, negatives are the kMaskNeg entries of the row.
template <class S>
Tensor<S> mr_loss_masked(Graph<S>& g, const Tensor<S>& scores, const Mask& mask,
                         const std::vector<int64_t>& gold_cols, double gamma) {
    if (scores.rank() != 2) throw ShapeError("mr_loss_masked: expects [B x K] scores");
    if (gamma <= 0) throw std::invalid_argument("mr_loss_masked: margin must be > 0");
    const int64_t rows = scores.dim(0), cols = scores.dim(1);
    if (static_cast<int64_t>(mask.size()) != rows * cols ||
        static_cast<int64_t>(gold_cols.size()) != rows)
        throw ShapeError("mr_loss_masked: mask or gold size mismatch");
    const S gm = S(gamma);
    auto neg_count = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(rows));
    S total = S(0);
    for (int64_t r = 0; r < rows; ++r) {
        const S sp = scores.data()[r * cols + gold_cols[static_cast<size_t>(r)]];
        S acc = S(0);
        int64_t n = 0;
        for (int64_t c = 0; c < cols; ++c)
            if (mask[static_cast<size_t>(r * cols + c)] == kMaskNeg) {
                acc += std::max(S(0), gm - sp + scores.data()[r * cols + c]);
                ++n;
            }
        if (n == 0)
            throw std::invalid_argument("mr_loss_masked: anchor " + std::to_string(r) +
                                        " has no negative candidates");
        (*neg_count)[static_cast<size_t>(r)] = n;
        total += acc / static_cast<S>(n);
    }
    Tensor<S> out = Tensor<S>::scalar_tensor(total / static_cast<S>(rows));
    g.check_finite("mr_loss", out);
    if (g.wants_grad(scores)) {
        out.set_requires_grad(true);
        g.record(out, [scores, out, mask, gold_cols, neg_count, rows, cols, gm]() mutable {
            const S go = out.grad()[0] / static_cast<S>(rows);
            S* gs = scores.grad();
            for (int64_t r = 0; r < rows; ++r) {
                const int64_t gc = gold_cols[static_cast<size_t>(r)];
                const S sp = scores.data()[r * cols + gc];
                const S w = go / static_cast<S>((*neg_count)[static_cast<size_t>(r)]);
                for (int64_t c = 0; c < cols; ++c)
                    if (mask[static_cast<size_t>(r * cols + c)] == kMaskNeg &&
                        gm - sp + scores.data()[r * cols + c] > S(0)) {
                        gs[r * cols + c] += w;
                        gs[r * cols + gc] -= w;
                    }
            }
        });
    }
    return out;
}

/// Gold tail plus k_plus-1 uniform draws without replacement from the other
/// known tails of (h,r); fewer when the pool runs out.
inline std::vector<int32_t> sample_positives(const KnowledgeGraph& kg, const TripleId& anchor,
                                             int k_plus, Rng& rng) {
    std::vector<int32_t> pos{anchor.t};
    if (k_plus > 1) {
        const auto& known = kg.positives_of(anchor.h, anchor.r);
        std::vector<int32_t> pool;
        pool.reserve(known.size());
        for (int32_t t : known)
            if (t != anchor.t) pool.push_back(t);
        const size_t want = std::min<size_t>(static_cast<size_t>(k_plus) - 1, pool.size());
        for (size_t i = 0; i < want; ++i) {
            const size_t j = i + static_cast<size_t>(rng.uniform_int(pool.size() - i));
            std::swap(pool[i], pool[j]);
            pos.push_back(pool[i]);
        }
    }
    return pos;
}

/// Draws the positive and negative candidate ids for one anchor triple.
/// Negatives avoid every known tail of (h,r).
inline std::pair<std::vector<int32_t>, std::vector<int32_t>> sample_pairs(
    const KnowledgeGraph& kg, const TripleId& anchor, const ContrastiveConfig& cfg, Rng& rng) {
    cfg.validate();
    const auto& known = kg.positives_of(anchor.h, anchor.r);
    std::vector<int32_t> pos = sample_positives(kg, anchor, cfg.k_plus, rng);
    const int64_t n_entities = kg.num_entities();
    const int64_t complement = n_entities - static_cast<int64_t>(known.size());
    if (complement <= 0)
        throw std::runtime_error("sample_pairs: no negative candidates for (" +
                                 kg.entities.name(anchor.h) + ", " +
                                 kg.relations.name(anchor.r) + ")");
    std::vector<int32_t> neg;
    auto is_known = [&known](int32_t e) {
        return std::binary_search(known.begin(), known.end(), e);
    };
    if (cfg.n_negatives == 0 || cfg.n_negatives >= complement) {
        neg.reserve(static_cast<size_t>(complement));
        size_t k = 0;
        for (int32_t e = 0; e < n_entities; ++e) {
            while (k < known.size() && known[k] < e) ++k;
            if (k < known.size() && known[k] == e) continue;
            neg.push_back(e);
        }
    } else if (cfg.n_negatives * 2 >= complement) {
        std::vector<int32_t> pool;
        pool.reserve(static_cast<size_t>(complement));
        for (int32_t e = 0; e < n_entities; ++e)
            if (!is_known(e)) pool.push_back(e);
        for (int64_t i = 0; i < cfg.n_negatives; ++i) {
            const size_t j =
                static_cast<size_t>(i) +
                static_cast<size_t>(rng.uniform_int(pool.size() - static_cast<size_t>(i)));
            std::swap(pool[static_cast<size_t>(i)], pool[j]);
            neg.push_back(pool[static_cast<size_t>(i)]);
        }
    } else {
        std::unordered_set<int32_t> drawn;
        while (static_cast<int64_t>(neg.size()) < cfg.n_negatives) {
            const auto e = static_cast<int32_t>(rng.uniform_int(static_cast<uint64_t>(n_entities)));
            if (is_known(e) || !drawn.insert(e).second) continue;
            neg.push_back(e);
        }
    }
    return {std::move(pos), std::move(neg)};
}

}  // namespace nckge
