#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "nckge/evaluator.hpp"
#include "nckge/rng.hpp"
#include "support/toy_kg.hpp"

using namespace nckge;

namespace {

// scores every known tail of (h,r) at 1, everything else at 0; after
// filtering the gold is the only live candidate scoring 1
ScoreFn<double> perfect_scorer(const KnowledgeGraph& kg) {
    return [&kg](int32_t h, int32_t r) {
        std::vector<double> s(static_cast<size_t>(kg.num_entities()), 0.0);
        for (int32_t t : kg.known_tails(h, r)) s[static_cast<size_t>(t)] = 1.0;
        return s;
    };
}

ScoreFn<double> id_scorer(const KnowledgeGraph& kg) {
    return [&kg](int32_t, int32_t) {
        std::vector<double> s(static_cast<size_t>(kg.num_entities()));
        for (size_t i = 0; i < s.size(); ++i) s[i] = -static_cast<double>(i);
        return s;
    };
}

}  // namespace

TEST_CASE("rank_triple hand case across tie policies") {
    std::vector<double> scores = {5, 3, 3, 3, 1};
    std::vector<uint8_t> keep(5, 1);
    // gold 1 scores 3; one candidate strictly above, two tied
    CHECK(rank_triple(scores, 1, keep, TiePolicy::optimistic) == 2);
    CHECK(rank_triple(scores, 1, keep, TiePolicy::mid) == 3);
    CHECK(rank_triple(scores, 1, keep, TiePolicy::pessimistic) == 4);
    // masking the leader promotes the gold
    keep[0] = 0;
    CHECK(rank_triple(scores, 1, keep, TiePolicy::optimistic) == 1);
    CHECK(rank_triple(scores, 1, keep, TiePolicy::mid) == 2);
}

TEST_CASE("rank_triple validation") {
    std::vector<double> scores = {1, 2};
    std::vector<uint8_t> keep = {1, 1};
    CHECK_THROWS_AS(rank_triple(scores, 5, keep), std::out_of_range);
    CHECK_THROWS_AS(rank_triple(scores, -1, keep), std::out_of_range);
    CHECK_THROWS_AS(rank_triple(scores, 0, std::vector<uint8_t>{1}), std::invalid_argument);
    CHECK_THROWS_WITH_AS(rank_triple(scores, 0, std::vector<uint8_t>{0, 1}),
                         doctest::Contains("masked out"), std::invalid_argument);
}

TEST_CASE("rank_triple agrees with a sort-based oracle") {
    Rng rng(41, "eval.test");
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = static_cast<size_t>(2 + rng.uniform_int(199));
        std::vector<double> scores(n);
        std::vector<uint8_t> keep(n);
        // coarse quantization forces plenty of ties
        for (auto& s : scores) s = std::floor(rng.uniform(0.0, 6.0));
        for (auto& k : keep) k = rng.uniform01() < 0.8 ? 1 : 0;
        const auto gold = static_cast<int32_t>(rng.uniform_int(n));
        keep[static_cast<size_t>(gold)] = 1;

        std::vector<double> kept;
        for (size_t i = 0; i < n; ++i)
            if (keep[i]) kept.push_back(scores[i]);
        std::sort(kept.begin(), kept.end(), std::greater<>());
        const double gs = scores[static_cast<size_t>(gold)];
        const auto first = static_cast<int64_t>(
            std::lower_bound(kept.begin(), kept.end(), gs, std::greater<>()) - kept.begin());
        const auto cnt = static_cast<int64_t>(
            std::upper_bound(kept.begin(), kept.end(), gs, std::greater<>()) - kept.begin() -
            first);
        const int64_t opt = 1 + first;
        const int64_t pess = 1 + first + cnt - 1;
        const int64_t mid = 1 + first + (cnt - 1) / 2;
        CHECK(rank_triple(scores, gold, keep, TiePolicy::optimistic) == opt);
        CHECK(rank_triple(scores, gold, keep, TiePolicy::pessimistic) == pess);
        CHECK(rank_triple(scores, gold, keep, TiePolicy::mid) == mid);
        // the mid rank is exactly the floor-average of the extremes
        CHECK(mid == (opt + pess) / 2);
    }
}

TEST_CASE("summarize hand values") {
    std::vector<RankResult> ranks = {{{0, 0, 1}, false, 2}, {{0, 0, 1}, true, 4}};
    EvalReport r = summarize(ranks);
    CHECK(r.mrr == 0.375);  // (1/2 + 1/4) / 2, exact in binary
    CHECK(r.count == 1);
    CHECK(r.hits1 == 0.0);
    CHECK(r.hits3 == 0.5);
    CHECK(r.hits10 == 1.0);
}

TEST_CASE("metric invariants hold on random rankings") {
    Rng rng(42, "eval.test");
    std::vector<RankResult> ranks;
    for (int i = 0; i < 500; ++i)
        ranks.push_back({{0, 0, 0}, false, 1 + static_cast<int64_t>(rng.uniform_int(30))});
    EvalReport r = summarize(ranks);
    CHECK(r.hits1 <= r.hits3);
    CHECK(r.hits3 <= r.hits10);
    CHECK(r.hits10 <= 1.0);
    CHECK(r.mrr >= r.hits1);
    CHECK(r.mrr <= 1.0);
    CHECK(r.mrr > 0.0);
}

TEST_CASE("a perfect scorer earns MRR 1 after filtering") {
    KnowledgeGraph kg = toy::graph(50);
    EvalReport r = evaluate(kg, perfect_scorer(kg), kg.test);
    CHECK(r.mrr == 1.0);
    CHECK(r.hits1 == 1.0);
    CHECK(r.hits10 == 1.0);
    CHECK(r.count == static_cast<int64_t>(kg.test.size()));
}

TEST_CASE("rank_split queries both directions with the inverse relation") {
    KnowledgeGraph kg = toy::six_node_graph();
    std::vector<std::pair<int32_t, int32_t>> calls;
    ScoreFn<double> spy = [&](int32_t h, int32_t r) {
        calls.emplace_back(h, r);
        return std::vector<double>(static_cast<size_t>(kg.num_entities()), 0.0);
    };
    auto ranks = rank_split(kg, spy, kg.test);
    REQUIRE(kg.test.size() == 1);
    REQUIRE(ranks.size() == 2);
    const TripleId t = kg.test[0];
    REQUIRE(calls.size() == 2);
    CHECK(calls[0] == std::make_pair(t.h, t.r));
    CHECK(calls[1] == std::make_pair(t.t, kg.inverse_of(t.r)));
    CHECK_FALSE(ranks[0].head_direction);
    CHECK(ranks[1].head_direction);
    CHECK(ranks[0].triple.h == t.h);
}

TEST_CASE("rank_split is deterministic across worker counts") {
    KnowledgeGraph kg = toy::graph(50);
    const ScoreFn<double> fn = id_scorer(kg);
    EvalOptions one, four;
    one.workers = 1;
    four.workers = 4;
    auto a = rank_split(kg, fn, kg.valid, one);
    auto b = rank_split(kg, fn, kg.valid, four);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].rank == b[i].rank);
        CHECK(a[i].head_direction == b[i].head_direction);
        CHECK(a[i].triple.h == b[i].triple.h);
    }
}

TEST_CASE("rank_split validation") {
    KnowledgeGraph kg = toy::graph(20);
    CHECK_THROWS_WITH_AS(rank_split(kg, id_scorer(kg), {}), doctest::Contains("empty"),
                         std::invalid_argument);
    KnowledgeGraph bare = toy::graph(20, false);
    CHECK_THROWS_WITH_AS(rank_split(bare, id_scorer(bare), bare.test),
                         doctest::Contains("inverse"), std::invalid_argument);
}

TEST_CASE("subdomain buckets split by unordered type pair") {
    std::vector<Triple> train = {{"a", "p", "b"}, {"b", "p", "c"}, {"c", "p", "d"},
                                 {"d", "p", "a"}};
    KnowledgeGraph kg = build_graph(train, {}, {}, true);
    CHECK_THROWS_WITH_AS(evaluate_subdomains(kg, perfect_scorer(kg), kg.train),
                         doctest::Contains("no entity types"), std::invalid_argument);

    const int32_t gene = kg.entity_types.add("Gene");
    const int32_t chem = kg.entity_types.add("Chem");
    kg.type_of[static_cast<size_t>(kg.entities.id("a"))] = gene;
    kg.type_of[static_cast<size_t>(kg.entities.id("b"))] = gene;
    kg.type_of[static_cast<size_t>(kg.entities.id("c"))] = chem;
    // d stays untyped -> UNKNOWN

    std::vector<TripleId> probe = {kg.train[0], kg.train[1], kg.train[2]};
    auto rep = evaluate_subdomains(kg, perfect_scorer(kg), probe);
    REQUIRE(rep.count("ALL") == 1);
    REQUIRE(rep.count("Gene-Gene") == 1);   // a-b
    REQUIRE(rep.count("Chem-Gene") == 1);   // b-c, sorted
    REQUIRE(rep.count("Chem-UNKNOWN") == 1);  // c-d
    CHECK(rep["ALL"].count == 3);
    CHECK(rep["Gene-Gene"].count == 1);
    CHECK(rep["Chem-Gene"].count == 1);
    CHECK(rep["Chem-UNKNOWN"].count == 1);
    CHECK(rep["ALL"].mrr == 1.0);
}

TEST_CASE("predict_topk orders by score with stable ties") {
    KnowledgeGraph kg = toy::six_node_graph();
    ScoreFn<double> fn = [&kg](int32_t, int32_t) {
        // b and d tie; a tops the list
        std::vector<double> s(static_cast<size_t>(kg.num_entities()), 0.0);
        s[static_cast<size_t>(kg.entities.id("a"))] = 3.0;
        s[static_cast<size_t>(kg.entities.id("b"))] = 2.0;
        s[static_cast<size_t>(kg.entities.id("d"))] = 2.0;
        return s;
    };
    auto top = predict_topk(kg, fn, "a", "p", 3);
    REQUIRE(top.size() == 3);
    CHECK(top[0].first == kg.entities.id("a"));
    CHECK(top[0].second == 3.0);
    CHECK(top[1].first == kg.entities.id("b"));  // tie broken by lower id
    CHECK(top[2].first == kg.entities.id("d"));

    // k beyond the vocabulary clips to every entity
    auto all = predict_topk(kg, fn, "a", "p", 100);
    CHECK(all.size() == 6);
}

TEST_CASE("predict_topk filter_known drops every recorded tail") {
    KnowledgeGraph kg = toy::six_node_graph();
    ScoreFn<double> fn = [&kg](int32_t, int32_t) {
        std::vector<double> s(static_cast<size_t>(kg.num_entities()));
        for (size_t i = 0; i < s.size(); ++i) s[i] = static_cast<double>(i);
        return s;
    };
    const int32_t a = kg.entities.id("a"), q = kg.relations.id("q");
    const auto& known = kg.known_tails(a, q);
    REQUIRE_FALSE(known.empty());
    auto top = predict_topk(kg, fn, "a", "q", 6, true);
    CHECK(top.size() == 6 - known.size());
    for (const auto& [e, s] : top)
        CHECK_FALSE(std::binary_search(known.begin(), known.end(), e));
}

TEST_CASE("predict_topk names near-miss vocabulary entries") {
    KnowledgeGraph kg = build_graph({{"alpha", "works_with", "alpine"},
                                     {"alpine", "works_with", "beta"}},
                                    {}, {}, true);
    ScoreFn<double> fn = [&kg](int32_t, int32_t) {
        return std::vector<double>(static_cast<size_t>(kg.num_entities()), 0.0);
    };
    CHECK_THROWS_WITH_AS(predict_topk(kg, fn, "alp", "works_with", 2),
                         doctest::Contains("did you mean: alpha, alpine"), std::runtime_error);
    CHECK_THROWS_WITH_AS(predict_topk(kg, fn, "zeta", "works_with", 2),
                         doctest::Contains("unknown entity 'zeta'"), std::runtime_error);
    CHECK_THROWS_WITH_AS(predict_topk(kg, fn, "alpha", "works", 2),
                         doctest::Contains("did you mean: works_with"), std::runtime_error);
    CHECK_THROWS_AS(predict_topk(kg, fn, "alpha", "works_with", 0), std::invalid_argument);
}

TEST_CASE("write_report_csv emits the fixed column layout") {
    std::map<std::string, EvalReport> rows;
    rows["ALL"] = {0.375, 0.0, 0.5, 1.0, 4};
    rows["Chem-Gene"] = {1.0, 1.0, 1.0, 1.0, 2};
    std::ostringstream os;
    write_report_csv(os, rows);
    CHECK(os.str() ==
          "bucket,mrr,h1,h3,h10,n\n"
          "ALL,0.375000,0.000000,0.500000,1.000000,4\n"
          "Chem-Gene,1.000000,1.000000,1.000000,1.000000,2\n");
}
