#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nckge/config.hpp"
#include "nckge/evaluator.hpp"
#include "nckge/loss.hpp"
#include "nckge/model.hpp"
#include "nckge/optim.hpp"

namespace nckge {

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct HistoryRow {
    int64_t epoch;
    double loss, val_mrr, tau, lr;
};

struct TrainResult {
    std::vector<HistoryRow> history;
    double best_mrr = -1.0;
    int64_t best_epoch = 0;
    bool early_stopped = false;
};

namespace detail {

template <class S>
Tensor<S> train_step(Graph<S>& g, const KnowledgeGraph& kg, Model<S>& model, const RunConfig& cfg,
                     const std::vector<TripleId>& anchors, int64_t b0, int64_t b1, double tau,
                     Rng& sample_rng, Rng& enc_rng, Rng& sc_rng) {
    const int64_t bsz = b1 - b0;
    IdArray h_ids(static_cast<size_t>(bsz)), r_ids(static_cast<size_t>(bsz));
    for (int64_t i = 0; i < bsz; ++i) {
        h_ids[static_cast<size_t>(i)] = anchors[static_cast<size_t>(b0 + i)].h;
        r_ids[static_cast<size_t>(i)] = anchors[static_cast<size_t>(b0 + i)].r;
    }
    EncoderState<S> enc = encode(g, model.eg, model.enc_cfg, model.layers, model.z0, model.x0,
                                 &enc_rng);
    Tensor<S> h_rows = gather_rows(g, enc.z, h_ids);
    Tensor<S> r_rows = gather_rows(g, enc.x, r_ids);
    const int64_t n_entities = kg.num_entities();
    const bool all_negs = cfg.contrastive.n_negatives == 0;

    if (cfg.loss == LossKind::bce) {
        Tensor<S> raw = score_all_tails(g, model.sc_cfg, model.scorer, h_rows, r_rows, enc.z,
                                        &sc_rng);
        std::vector<uint8_t> labels(static_cast<size_t>(bsz * n_entities), 0);
        for (int64_t i = 0; i < bsz; ++i) {
            const TripleId& a = anchors[static_cast<size_t>(b0 + i)];
            for (int32_t t : kg.positives_of(a.h, a.r))
                labels[static_cast<size_t>(i * n_entities + t)] = 1;
        }
        return bce_loss(g, raw, labels);
    }
    if (cfg.loss == LossKind::mp) {
        Tensor<S> raw = score_all_tails(g, model.sc_cfg, model.scorer, h_rows, r_rows, enc.z,
                                        &sc_rng);
        std::vector<int64_t> gold(static_cast<size_t>(bsz));
        for (int64_t i = 0; i < bsz; ++i) gold[static_cast<size_t>(i)] = anchors[static_cast<size_t>(b0 + i)].t;
        return mp_loss(g, raw, gold);
    }

    if (all_negs) {
        Tensor<S> raw = score_all_tails(g, model.sc_cfg, model.scorer, h_rows, r_rows, enc.z,
                                        &sc_rng);
        Mask mask(static_cast<size_t>(bsz * n_entities), kMaskNeg);
        std::vector<int64_t> gold(static_cast<size_t>(bsz));
        for (int64_t i = 0; i < bsz; ++i) {
            const TripleId& a = anchors[static_cast<size_t>(b0 + i)];
            gold[static_cast<size_t>(i)] = a.t;
            for (int32_t t : kg.positives_of(a.h, a.r))
                mask[static_cast<size_t>(i * n_entities + t)] = kMaskIgnore;
            if (cfg.loss == LossKind::nc)
                for (int32_t t : sample_positives(kg, a, cfg.contrastive.k_plus, sample_rng))
                    mask[static_cast<size_t>(i * n_entities + t)] = kMaskPos;
            else
                mask[static_cast<size_t>(i * n_entities + a.t)] = kMaskPos;
        }
        if (cfg.loss == LossKind::mr) return mr_loss_masked(g, raw, mask, gold, cfg.gamma);
        Tensor<S> sbar = masked_layer_norm(g, raw, mask);
        return nc_loss(g, sbar, mask, tau, cfg.contrastive.q);
    }

    // sampled negatives: fixed-width candidate rows, short rows padded with
    // ignored slots
    const int64_t k_plus = cfg.loss == LossKind::nc ? cfg.contrastive.k_plus : 1;
    const int64_t width = k_plus + cfg.contrastive.n_negatives;
    IdArray ids(static_cast<size_t>(bsz * width), 0);
    Mask mask(static_cast<size_t>(bsz * width), kMaskIgnore);
    std::vector<int64_t> gold(static_cast<size_t>(bsz), 0);
    ContrastiveConfig ccfg = cfg.contrastive;
    ccfg.k_plus = static_cast<int>(k_plus);
    for (int64_t i = 0; i < bsz; ++i) {
        const TripleId& a = anchors[static_cast<size_t>(b0 + i)];
        auto [pos, neg] = sample_pairs(kg, a, ccfg, sample_rng);
        for (size_t p = 0; p < pos.size(); ++p) {
            ids[static_cast<size_t>(i * width) + p] = pos[p];
            mask[static_cast<size_t>(i * width) + p] = kMaskPos;
        }
        for (size_t n = 0; n < neg.size(); ++n) {
            const size_t at = static_cast<size_t>(i * width + k_plus) + n;
            ids[at] = neg[n];
            mask[at] = kMaskNeg;
        }
    }
    Tensor<S> raw = score_gathered_tails(g, model.sc_cfg, model.scorer, h_rows, r_rows, enc.z, ids,
                                         width, &sc_rng);
    if (cfg.loss == LossKind::mr) return mr_loss_masked(g, raw, mask, gold, cfg.gamma);
    Tensor<S> sbar = masked_layer_norm(g, raw, mask);
    return nc_loss(g, sbar, mask, tau, cfg.contrastive.q);
}

}  // namespace detail

/// Full optimization loop. Writes best.ckpt and history.csv into out_dir
/// (in-memory only when out_dir is empty).
template <class S>
TrainResult train(const KnowledgeGraph& kg, Model<S>& model, const RunConfig& cfg,
                  const std::string& out_dir = "") {
    if (kg.train.empty()) throw std::invalid_argument("train: empty train split");
    const auto n_train = static_cast<int64_t>(kg.train.size());
    if (cfg.batch_size > n_train)
        throw ConfigError("train.batch_size (" + std::to_string(cfg.batch_size) +
                          ") exceeds train split size (" + std::to_string(n_train) + ")");
    const int64_t bs = cfg.batch_size == 0 ? std::min<int64_t>(1024, n_train) : cfg.batch_size;
    const uint64_t fp = cfg.fingerprint(kg.num_entities(), kg.num_relations());

    Rng shuffle_rng(cfg.seed, "train.shuffle");
    Rng sample_rng(cfg.seed, "train.sample");
    Rng enc_rng(cfg.seed, "encoder.dropout");
    Rng sc_rng(cfg.seed, "scorer.dropout");
    TauAnnealer annealer(cfg.tau0, cfg.patience, Rng(cfg.seed, "annealer"));
    AdamW<S> opt(model.param_list(), cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps,
                 checked_mode_env());

    namespace fs = std::filesystem;
    const bool persist = !out_dir.empty();
    std::string ckpt_path;
    std::ofstream hist;
    if (persist) {
        fs::create_directories(out_dir);
        ckpt_path = (fs::path(out_dir) / "best.ckpt").string();
        hist.open((fs::path(out_dir) / "history.csv").string(), std::ios::trunc);
        if (!hist) throw std::runtime_error("cannot write history.csv in " + out_dir);
        hist << "# seed=" << cfg.seed << "\n";
        hist << "epoch,loss,val_mrr,tau,lr\n";
        hist.flush();
    }

    TrainResult result;
    auto save_best = [&](int64_t epoch, int64_t evals_since_best) {
        if (!persist) return;
        write_checkpoint(ckpt_path, make_checkpoint(model, &opt, &annealer, fp, epoch,
                                                    result.best_mrr, evals_since_best));
    };
    save_best(0, 0);

    std::vector<TripleId> anchors = kg.train_aug;
    double tau = cfg.tau0;
    double last_val = 0.0;
    int64_t evals_since_best = 0;
    const EvalOptions eopts{cfg.ties, cfg.workers};

    for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr_t = cosine_lr(epoch - 1, cfg.epochs, cfg.lr, cfg.lr / 100.0);
        shuffle_rng.shuffle(anchors);
        double loss_sum = 0.0;
        for (int64_t b0 = 0; b0 < static_cast<int64_t>(anchors.size()); b0 += bs) {
            const int64_t b1 = std::min<int64_t>(b0 + bs, static_cast<int64_t>(anchors.size()));
            Graph<S> g(Mode::train);
            g.set_workers(cfg.workers);
            Tensor<S> loss = detail::train_step(g, kg, model, cfg, anchors, b0, b1, tau,
                                                sample_rng, enc_rng, sc_rng);
            const double lv = static_cast<double>(loss.scalar());
            if (!std::isfinite(lv))
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                      " (non-finite loss); last good checkpoint retained");
            loss_sum += lv * static_cast<double>(b1 - b0);
            g.backward(loss);
            opt.step(lr_t);
            opt.zero_grad();
        }
        const double ep_loss = loss_sum / static_cast<double>(anchors.size());

        if (epoch % cfg.eval_every == 0) {
            const double val = evaluate(kg, make_score_fn(model, cfg.workers), kg.valid, eopts).mrr;
            last_val = val;
            if (cfg.tau_dynamic) {
                annealer.update(val);
                tau = annealer.tau();
            }
            if (val > result.best_mrr) {
                result.best_mrr = val;
                result.best_epoch = epoch;
                evals_since_best = 0;
                save_best(epoch, evals_since_best);
            } else {
                ++evals_since_best;
            }
        }
        result.history.push_back({epoch, ep_loss, last_val, tau, lr_t});
        if (persist) {
            hist << epoch << ',' << format_double(ep_loss) << ',' << format_double(last_val) << ','
                 << format_double(tau) << ',' << format_double(lr_t) << "\n";
            hist.flush();
        }
        if (evals_since_best >= 3LL * cfg.patience) {
            result.early_stopped = true;
            break;
        }
    }
    return result;
}

}  // namespace nckge
