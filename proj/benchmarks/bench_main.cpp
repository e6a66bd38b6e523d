#include <benchmark/benchmark.h>

#include <vector>

#include "nckge/model.hpp"
#include "nckge/trainer.hpp"
#include "support/toy_kg.hpp"

using namespace nckge;

namespace {

Tensor<double> rand_tensor(const Shape& shape, Rng& rng) {
    Tensor<double> t(shape, true);
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-1, 1);
    return t;
}

RunConfig paper_scale_cfg() {
    RunConfig cfg;
    cfg.encoder.layers = 2;
    cfg.encoder.heads = 10;
    cfg.encoder.dim = 200;
    cfg.encoder.dropout = 0.2;
    cfg.scorer.kind = ScorerKind::complex_;
    cfg.scorer.dim = 200;
    return cfg;
}

}  // namespace

static void BM_circ_correlate(benchmark::State& state) {
    const int64_t d = state.range(0);
    Rng rng(1, "bench.circ");
    Tensor<double> a = rand_tensor({64, d}, rng);
    Tensor<double> b = rand_tensor({64, d}, rng);
    for (auto _ : state) {
        Graph<double> g(Mode::eval);
        benchmark::DoNotOptimize(circ_correlate(g, a, b).values().data());
    }
    state.SetItemsProcessed(state.iterations() * 64 * d);
}
BENCHMARK(BM_circ_correlate)->Arg(20)->Arg(64)->Arg(200);

static void BM_matmul(benchmark::State& state) {
    const int64_t n = state.range(0);
    Rng rng(2, "bench.matmul");
    Tensor<double> a = rand_tensor({n, n}, rng);
    Tensor<double> b = rand_tensor({n, n}, rng);
    for (auto _ : state) {
        Graph<double> g(Mode::eval);
        benchmark::DoNotOptimize(matmul(g, a, b).values().data());
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(200)->Arg(512);

static void BM_conv2d(benchmark::State& state) {
    Rng rng(3, "bench.conv");
    Tensor<double> in = rand_tensor({128, 1, 20, 20}, rng);
    Tensor<double> f = rand_tensor({32, 1, 3, 3}, rng);
    Tensor<double> b = rand_tensor({32}, rng);
    for (auto _ : state) {
        Graph<double> g(Mode::eval);
        benchmark::DoNotOptimize(conv2d(g, in, f, b).values().data());
    }
}
BENCHMARK(BM_conv2d);

static void BM_encoder_forward(benchmark::State& state) {
    KnowledgeGraph kg = toy::graph(static_cast<int>(state.range(0)));
    RunConfig cfg = paper_scale_cfg();
    Rng rng(4, "init");
    Model<double> m = build_model<double>(kg, cfg.encoder, cfg.scorer, rng);
    for (auto _ : state) {
        Graph<double> g(Mode::eval);
        EncoderState<double> st = encode(g, m.eg, m.enc_cfg, m.layers, m.z0, m.x0);
        benchmark::DoNotOptimize(st.z.values().data());
    }
}
BENCHMARK(BM_encoder_forward)->Arg(50)->Arg(150)->Unit(benchmark::kMillisecond);

static void BM_train_step(benchmark::State& state) {
    KnowledgeGraph kg = toy::graph(50);
    RunConfig cfg;
    cfg.encoder.layers = 1;
    cfg.encoder.heads = 4;
    cfg.encoder.dim = 32;
    cfg.encoder.dropout = 0.0;
    cfg.scorer.kind = ScorerKind::complex_;
    cfg.scorer.dim = 32;
    cfg.loss = LossKind::nc;
    Rng rng(5, "init");
    Model<double> m = build_model<double>(kg, cfg.encoder, cfg.scorer, rng);
    AdamW<double> opt(m.param_list(), cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps, false);
    Rng sample(5, "train.sample"), enc(5, "encoder.dropout"), sc(5, "scorer.dropout");
    const int64_t bsz = 128;
    for (auto _ : state) {
        Graph<double> g(Mode::train);
        Tensor<double> loss =
            detail::train_step(g, kg, m, cfg, kg.train_aug, 0, bsz, cfg.tau0, sample, enc, sc);
        g.backward(loss);
        opt.step(1e-3);
        opt.zero_grad();
    }
    state.SetItemsProcessed(state.iterations() * bsz);
}
BENCHMARK(BM_train_step)->Unit(benchmark::kMillisecond);

static void BM_rank_split(benchmark::State& state) {
    KnowledgeGraph kg = toy::graph(150);
    RunConfig cfg;
    cfg.encoder.layers = 1;
    cfg.encoder.heads = 4;
    cfg.encoder.dim = 32;
    cfg.encoder.dropout = 0.0;
    cfg.scorer.kind = ScorerKind::complex_;
    cfg.scorer.dim = 32;
    Rng rng(6, "init");
    Model<double> m = build_model<double>(kg, cfg.encoder, cfg.scorer, rng);
    auto fn = make_score_fn(m);
    for (auto _ : state) {
        benchmark::DoNotOptimize(rank_split(kg, fn, kg.valid).data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * static_cast<int64_t>(kg.valid.size()));
}
BENCHMARK(BM_rank_split)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
