#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "nckge/checkpoint.hpp"
#include "nckge/encoder.hpp"
#include "nckge/evaluator.hpp"
#include "nckge/kg.hpp"
#include "nckge/optim.hpp"
#include "nckge/rng.hpp"
#include "nckge/scorer.hpp"

namespace nckge {

template <class S>
struct Model {
    RamhaConfig enc_cfg;
    ScorerConfig sc_cfg;
    EncoderGraph eg;
    Tensor<S> z0, x0;
    std::vector<RamhaLayerParams<S>> layers;
    ScorerParams<S> scorer;
    std::vector<std::pair<std::string, Tensor<S>>> registry;

    std::vector<Tensor<S>> param_list() const {
        std::vector<Tensor<S>> out;
        out.reserve(registry.size());
        for (const auto& [name, t] : registry) out.push_back(t);
        return out;
    }
};

template <class S>
Model<S> build_model(const KnowledgeGraph& kg, const RamhaConfig& enc_cfg,
                     const ScorerConfig& sc_cfg, Rng& rng) {
    enc_cfg.validate();
    sc_cfg.validate();
    if (sc_cfg.dim != enc_cfg.dim)
        throw std::invalid_argument("scorer dim must equal encoder dim");
    Model<S> m;
    m.enc_cfg = enc_cfg;
    m.sc_cfg = sc_cfg;
    m.eg = build_encoder_graph(kg, enc_cfg.self_loops);
    const int64_t d = enc_cfg.dim, dc = enc_cfg.head_dim();
    const int64_t rr = m.eg.num_relation_rows;
    const int64_t ne = m.eg.num_entities;

    auto reg = [&m, &rng](const std::string& name, Shape shape, double fan_in,
                          double fan_out) -> Tensor<S> {
        Tensor<S> t(std::move(shape), true);
        if (fan_in > 0) {
            const double b = std::sqrt(6.0 / (fan_in + fan_out));
            for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<S>(rng.uniform(-b, b));
        }
        m.registry.emplace_back(name, t);
        return t;
    };
    auto zeros = [&reg](const std::string& name, Shape shape) {
        return reg(name, std::move(shape), 0.0, 0.0);
    };

    m.z0 = reg("emb.entity", {ne, d}, static_cast<double>(ne), static_cast<double>(d));
    m.x0 = reg("emb.relation", {rr, d}, static_cast<double>(rr), static_cast<double>(d));

    const bool use_basis = rr > enc_cfg.basis_threshold;
    const int64_t nb = enc_cfg.n_bases;
    for (int l = 0; l < enc_cfg.layers; ++l) {
        RamhaLayerParams<S> lp;
        lp.use_basis = use_basis;
        for (int c = 0; c < enc_cfg.heads; ++c) {
            const std::string p = "enc.l" + std::to_string(l) + ".h" + std::to_string(c) + ".";
            lp.wq.push_back(reg(p + "wq", {dc, d}, double(d), double(dc)));
            lp.bq.push_back(zeros(p + "bq", {dc}));
            lp.wk.push_back(reg(p + "wk", {dc, d}, double(d), double(dc)));
            lp.bk.push_back(zeros(p + "bk", {dc}));
            lp.wv.push_back(reg(p + "wv", {dc, d}, double(d), double(dc)));
            lp.bv.push_back(zeros(p + "bv", {dc}));
            if (use_basis) {
                lp.wr_bases.push_back(reg(p + "wr_bases", {nb, dc, dc}, double(dc), double(dc)));
                lp.wr_coeff.push_back(reg(p + "wr_coeff", {rr, nb}, double(nb), 1.0));
                lp.wr1_bases.push_back(reg(p + "wr1_bases", {nb, dc, dc}, double(dc), double(dc)));
                lp.wr1_coeff.push_back(reg(p + "wr1_coeff", {rr, nb}, double(nb), 1.0));
                lp.wr2_bases.push_back(reg(p + "wr2_bases", {nb, dc, dc}, double(dc), double(dc)));
                lp.wr2_coeff.push_back(reg(p + "wr2_coeff", {rr, nb}, double(nb), 1.0));
            } else {
                lp.wr.push_back(reg(p + "wr", {rr, dc, dc}, double(dc), double(dc)));
                lp.br.push_back(zeros(p + "br", {rr, dc}));
                lp.wr1.push_back(reg(p + "wr1", {rr, dc, dc}, double(dc), double(dc)));
                lp.wr2.push_back(reg(p + "wr2", {rr, dc, dc}, double(dc), double(dc)));
            }
        }
        m.layers.push_back(std::move(lp));
    }
    if (sc_cfg.kind == ScorerKind::conve) {
        const int64_t fh = sc_cfg.filter_h, fw = sc_cfg.filter_w, nf = sc_cfg.n_filters;
        m.scorer.filters =
            reg("scorer.filters", {nf, 1, fh, fw}, double(fh * fw), double(nf * fh * fw));
        m.scorer.conv_bias = zeros("scorer.conv_bias", {nf});
        m.scorer.proj =
            reg("scorer.proj", {sc_cfg.conv_flat(), d}, double(sc_cfg.conv_flat()), double(d));
        m.scorer.proj_bias = zeros("scorer.proj_bias", {d});
    }
    return m;
}

/// Eval-mode scoring callback over all entities: encode once, reuse per query.
template <class S>
ScoreFn<S> make_score_fn(const Model<S>& m, int workers = 1) {
    Graph<S> g(Mode::eval);
    g.set_workers(workers);
    EncoderState<S> st = encode(g, m.eg, m.enc_cfg, m.layers, m.z0, m.x0);
    return [z = st.z, x = st.x, sc = m.sc_cfg, sp = m.scorer](int32_t h, int32_t r) {
        Graph<S> gl(Mode::eval);
        Tensor<S> h_row = gather_rows(gl, z, IdArray{h});
        Tensor<S> r_row = gather_rows(gl, x, IdArray{r});
        return score_all_tails(gl, sc, sp, h_row, r_row, z).values();
    };
}

// ---------------------------------------------------------------------------
// checkpoint glue
// ---------------------------------------------------------------------------

template <class S>
CheckpointFile make_checkpoint(const Model<S>& m, const AdamW<S>* opt, const TauAnnealer* ann,
                               uint64_t fingerprint, int64_t epoch, double best_mrr = -1.0,
                               int64_t evals_since_best = 0) {
    CheckpointFile ck;
    ck.fingerprint = fingerprint;
    ck.epoch = epoch;
    for (const auto& [name, t] : m.registry) ck.records.push_back(tensor_record(name, t));
    if (opt) {
        const auto& ms = const_cast<AdamW<S>*>(opt)->moments_m();
        const auto& vs = const_cast<AdamW<S>*>(opt)->moments_v();
        for (size_t i = 0; i < m.registry.size(); ++i) {
            std::vector<uint64_t> ext;
            for (int k = 0; k < m.registry[i].second.rank(); ++k)
                ext.push_back(static_cast<uint64_t>(m.registry[i].second.dim(k)));
            ck.records.push_back(
                make_record("opt.m." + m.registry[i].first, ext, ms[i].data(), ms[i].size()));
            ck.records.push_back(
                make_record("opt.v." + m.registry[i].first, ext, vs[i].data(), vs[i].size()));
        }
        const auto t = static_cast<uint64_t>(opt->steps());
        ck.records.push_back(make_record("opt.t", {}, &t, 1));
    }
    if (ann) {
        const auto s = ann->snapshot();
        const double state[5] = {s.tau, s.prev_tau, s.best_mrr, s.mrr_at_adoption, s.t_a};
        ck.records.push_back(make_record("anneal.state", {5}, state, 5));
        const uint64_t counters[2] = {static_cast<uint64_t>(s.stalled),
                                      static_cast<uint64_t>(s.pending)};
        ck.records.push_back(make_record("anneal.counters", {2}, counters, 2));
        ck.records.push_back(make_record("anneal.rng", {4}, s.rng_state.data(), 4));
    }
    ck.records.push_back(make_record("train.best_mrr", {}, &best_mrr, 1));
    const auto esb = static_cast<uint64_t>(evals_since_best);
    ck.records.push_back(make_record("train.evals_since_best", {}, &esb, 1));
    return ck;
}

template <class S>
void load_model(Model<S>& m, const CheckpointFile& ck) {
    for (auto& [name, t] : m.registry) load_into_tensor(ck.require(name), t);
}

template <class S>
void load_optimizer(AdamW<S>& opt, const Model<S>& m, const CheckpointFile& ck) {
    auto& ms = opt.moments_m();
    auto& vs = opt.moments_v();
    for (size_t i = 0; i < m.registry.size(); ++i) {
        ms[i] = record_values<S>(ck.require("opt.m." + m.registry[i].first));
        vs[i] = record_values<S>(ck.require("opt.v." + m.registry[i].first));
    }
    opt.set_steps(static_cast<int64_t>(record_values<uint64_t>(ck.require("opt.t"))[0]));
}

inline void load_annealer(TauAnnealer& ann, const CheckpointFile& ck) {
    const auto state = record_values<double>(ck.require("anneal.state"));
    const auto counters = record_values<uint64_t>(ck.require("anneal.counters"));
    const auto rng = record_values<uint64_t>(ck.require("anneal.rng"));
    TauAnnealer::Snapshot s;
    s.tau = state[0];
    s.prev_tau = state[1];
    s.best_mrr = state[2];
    s.mrr_at_adoption = state[3];
    s.t_a = state[4];
    s.stalled = static_cast<int64_t>(counters[0]);
    s.pending = static_cast<int64_t>(counters[1]);
    std::copy(rng.begin(), rng.end(), s.rng_state.begin());
    ann.restore(s);
}

}  // namespace nckge
