#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "nckge/checkpoint.hpp"
#include "nckge/model.hpp"
#include "support/toy_kg.hpp"

using namespace nckge;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("nckge_ckpt_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

template <class T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

TEST_CASE("records roundtrip across all dtypes") {
    TempDir td;
    const std::string p = (td.path / "a.ckpt").string();

    CheckpointFile ck;
    ck.fingerprint = 0xdeadbeefcafef00dULL;
    ck.epoch = 42;
    const float f32[6] = {1.5f, -2.25f, 0.0f, 3.75f, -0.5f, 8.0f};
    const double f64[2] = {3.141592653589793, -1e300};
    const uint64_t u64[3] = {0, 1, ~0ULL};
    ck.records.push_back(make_record("w.f32", {2, 3}, f32, 6));
    ck.records.push_back(make_record("w.f64", {2}, f64, 2));
    ck.records.push_back(make_record("state.u64", {3}, u64, 3));
    write_checkpoint(p, ck);
    CHECK_FALSE(fs::exists(p + ".tmp"));

    CheckpointFile rd = read_checkpoint(p);
    CHECK(rd.version == 1);
    CHECK(rd.fingerprint == ck.fingerprint);
    CHECK(rd.epoch == 42);
    REQUIRE(rd.records.size() == 3);

    const auto& r32 = rd.require("w.f32");
    CHECK(r32.dtype == kDtypeF32);
    CHECK(r32.extents == std::vector<uint64_t>{2, 3});
    const auto v32 = record_values<float>(r32);
    for (size_t i = 0; i < 6; ++i) CHECK(v32[i] == f32[i]);

    const auto v64 = record_values<double>(rd.require("w.f64"));
    CHECK(v64[0] == f64[0]);
    CHECK(v64[1] == f64[1]);

    const auto vu = record_values<uint64_t>(rd.require("state.u64"));
    CHECK(vu[2] == ~0ULL);

    CHECK(rd.find("nope") == nullptr);
    CHECK_THROWS_WITH_AS(rd.require("nope"), doctest::Contains("missing tensor 'nope'"),
                         std::runtime_error);
    CHECK_THROWS_AS(record_values<float>(rd.require("w.f64")), std::runtime_error);
}

TEST_CASE("scalar records use rank zero extents") {
    TempDir td;
    const std::string p = (td.path / "s.ckpt").string();
    CheckpointFile ck;
    const double v = 0.625;
    ck.records.push_back(make_record("best", {}, &v, 1));
    write_checkpoint(p, ck);
    CheckpointFile rd = read_checkpoint(p);
    CHECK(rd.require("best").extents.empty());
    CHECK(rd.require("best").numel() == 1);
    CHECK(record_values<double>(rd.require("best"))[0] == 0.625);
}

TEST_CASE("make_record validates extents against the data length") {
    const double v[2] = {1, 2};
    CHECK_THROWS_WITH_AS(make_record("bad", {3}, v, 2), doctest::Contains("extents disagree"),
                         std::invalid_argument);
}

TEST_CASE("read_checkpoint rejects damaged files") {
    TempDir td;

    CHECK_THROWS_WITH_AS(read_checkpoint((td.path / "nothere.ckpt").string()),
                         doctest::Contains("cannot open"), std::runtime_error);

    const std::string garbled = (td.path / "garbled.ckpt").string();
    std::ofstream(garbled, std::ios::binary) << "JSON{not-a-checkpoint}";
    CHECK_THROWS_WITH_AS(read_checkpoint(garbled), doctest::Contains("not a checkpoint"),
                         std::runtime_error);

    const std::string vers = (td.path / "vers.ckpt").string();
    {
        std::ofstream out(vers, std::ios::binary);
        out.write("NCKG", 4);
        put<uint32_t>(out, 9);
    }
    CHECK_THROWS_WITH_AS(read_checkpoint(vers), doctest::Contains("unsupported checkpoint version"),
                         std::runtime_error);

    // a valid file chopped mid-payload
    const std::string whole = (td.path / "whole.ckpt").string();
    CheckpointFile ck;
    const double vals[4] = {1, 2, 3, 4};
    ck.records.push_back(make_record("w", {4}, vals, 4));
    write_checkpoint(whole, ck);
    const auto size = fs::file_size(whole);
    fs::resize_file(whole, size - 10);
    CHECK_THROWS_WITH_AS(read_checkpoint(whole), doctest::Contains("truncated"),
                         std::runtime_error);

    // flip the dtype tag of the first record: header is 32 bytes, then
    // u32 name length and the name itself
    const std::string badtag = (td.path / "badtag.ckpt").string();
    write_checkpoint(badtag, ck);
    {
        std::fstream f(badtag, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(32 + 4 + 1);
        const char tag = 7;
        f.write(&tag, 1);
    }
    CHECK_THROWS_WITH_AS(read_checkpoint(badtag), doctest::Contains("bad dtype"),
                         std::runtime_error);
}

TEST_CASE("load_into_tensor enforces the stored shape") {
    Tensor<double> t = Tensor<double>::from({2, 2}, {0, 0, 0, 0});
    const double vals[4] = {1, 2, 3, 4};
    CHECK_NOTHROW(load_into_tensor(make_record("w", {2, 2}, vals, 4), t));
    CHECK(t.data()[3] == 4.0);
    CHECK_THROWS_WITH_AS(load_into_tensor(make_record("w", {4}, vals, 4), t),
                         doctest::Contains("shape mismatch"), std::runtime_error);
    CHECK_THROWS_AS(load_into_tensor(make_record("w", {1, 4}, vals, 4), t), std::runtime_error);
}

TEST_CASE("model, optimizer, and annealer state survive a full roundtrip") {
    TempDir td;
    const std::string p = (td.path / "model.ckpt").string();
    KnowledgeGraph kg = toy::six_node_graph();
    RamhaConfig enc;
    enc.layers = 1;
    enc.heads = 2;
    enc.dim = 8;
    enc.dropout = 0.0;
    ScorerConfig sc;
    sc.kind = ScorerKind::conve;  // exercises the scorer parameter records too
    sc.dim = 8;
    sc.reshape_rows = 2;
    sc.reshape_cols = 4;
    sc.n_filters = 2;
    sc.filter_h = 2;
    sc.filter_w = 2;

    Rng r1(100, "init");
    Model<double> m = build_model<double>(kg, enc, sc, r1);
    AdamW<double> opt(m.param_list(), 1e-2);
    // fake a couple of steps so the moments are non-trivial
    for (int step = 0; step < 2; ++step) {
        for (auto& t : m.param_list()) {
            double* g = t.grad();
            for (int64_t i = 0; i < t.numel(); ++i) g[i] = 0.01 * static_cast<double>(i % 5) - 0.02;
        }
        opt.step(1e-3);
        opt.zero_grad();
    }
    TauAnnealer ann(0.8, 1, Rng(100, "annealer"));
    ann.update(0.4);
    ann.update(0.2);
    ann.update(0.2);

    write_checkpoint(p, make_checkpoint(m, &opt, &ann, 0x1234, 7, 0.4, 2));
    CheckpointFile ck = read_checkpoint(p);
    CHECK(ck.epoch == 7);
    CHECK(ck.fingerprint == 0x1234);
    CHECK(record_values<double>(ck.require("train.best_mrr"))[0] == 0.4);
    CHECK(record_values<uint64_t>(ck.require("train.evals_since_best"))[0] == 2);

    Rng r2(999, "init");  // different seed: loading must overwrite everything
    Model<double> m2 = build_model<double>(kg, enc, sc, r2);
    AdamW<double> opt2(m2.param_list(), 1e-2);
    TauAnnealer ann2(1.2, 1, Rng(5, "annealer"));
    load_model(m2, ck);
    load_optimizer(opt2, m2, ck);
    load_annealer(ann2, ck);

    REQUIRE(m2.registry.size() == m.registry.size());
    for (size_t i = 0; i < m.registry.size(); ++i) {
        CHECK(m2.registry[i].first == m.registry[i].first);
        const auto& a = m.registry[i].second;
        const auto& b = m2.registry[i].second;
        REQUIRE(a.numel() == b.numel());
        for (int64_t j = 0; j < a.numel(); ++j) CHECK(a.data()[j] == b.data()[j]);
    }
    CHECK(opt2.steps() == opt.steps());
    for (size_t i = 0; i < opt.moments_m().size(); ++i) {
        CHECK(opt2.moments_m()[i] == opt.moments_m()[i]);
        CHECK(opt2.moments_v()[i] == opt.moments_v()[i]);
    }
    const auto sa = ann.snapshot(), sb = ann2.snapshot();
    CHECK(sa.tau == sb.tau);
    CHECK(sa.prev_tau == sb.prev_tau);
    CHECK(sa.best_mrr == sb.best_mrr);
    CHECK(sa.mrr_at_adoption == sb.mrr_at_adoption);
    CHECK(sa.t_a == sb.t_a);
    CHECK(sa.stalled == sb.stalled);
    CHECK(sa.pending == sb.pending);
    CHECK(sa.rng_state == sb.rng_state);

    // tensors loaded from a checkpoint keep their distinct storage
    m.registry[0].second.data()[0] += 1.0;
    CHECK(m2.registry[0].second.data()[0] != m.registry[0].second.data()[0]);
}

TEST_CASE("float32 model parameters roundtrip exactly") {
    TempDir td;
    const std::string p = (td.path / "f32.ckpt").string();
    KnowledgeGraph kg = toy::six_node_graph();
    RamhaConfig enc;
    enc.layers = 1;
    enc.heads = 1;
    enc.dim = 4;
    enc.dropout = 0.0;
    ScorerConfig sc;
    sc.dim = 4;
    Rng r1(3, "init");
    Model<float> m = build_model<float>(kg, enc, sc, r1);
    write_checkpoint(p, make_checkpoint<float>(m, nullptr, nullptr, 1, 0));

    Rng r2(4, "init");
    Model<float> m2 = build_model<float>(kg, enc, sc, r2);
    load_model(m2, read_checkpoint(p));
    for (size_t i = 0; i < m.registry.size(); ++i)
        for (int64_t j = 0; j < m.registry[i].second.numel(); ++j)
            CHECK(m2.registry[i].second.data()[j] == m.registry[i].second.data()[j]);
}
