#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "nckge/kg.hpp"
#include "nckge/tensor.hpp"

namespace nckge {

enum class TiePolicy { mid, optimistic, pessimistic };

inline TiePolicy tie_policy_from(const std::string& s) {
    if (s == "mid") return TiePolicy::mid;
    if (s == "optimistic") return TiePolicy::optimistic;
    if (s == "pessimistic") return TiePolicy::pessimistic;
    throw std::invalid_argument("eval.ties: unknown '" + s +
                                "' (expected mid|optimistic|pessimistic)");
}

struct EvalOptions {
    TiePolicy ties = TiePolicy::mid;
    int workers = 1;
};

struct EvalReport {
    double mrr = 0.0, hits1 = 0.0, hits3 = 0.0, hits10 = 0.0;
    int64_t count = 0;  // triples; each contributes a head and a tail rank
};

struct RankResult {
    TripleId triple;
    bool head_direction;
    int64_t rank;
};

/// Rank of the gold among unmasked candidates: 1 + |strictly greater| plus
/// the tie share of the chosen policy.
template <class S>
int64_t rank_triple(const std::vector<S>& scores, int32_t gold, const std::vector<uint8_t>& keep,
                    TiePolicy policy = TiePolicy::mid) {
    if (gold < 0 || static_cast<size_t>(gold) >= scores.size())
        throw std::out_of_range("rank_triple: gold id outside candidate set");
    if (scores.size() != keep.size()) throw std::invalid_argument("rank_triple: mask size mismatch");
    if (!keep[static_cast<size_t>(gold)])
        throw std::invalid_argument("rank_triple: gold candidate is masked out");
    const S gs = scores[static_cast<size_t>(gold)];
    int64_t greater = 0, ties = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (!keep[i] || static_cast<int32_t>(i) == gold) continue;
        if (scores[i] > gs) ++greater;
        else if (scores[i] == gs) ++ties;
    }
    switch (policy) {
        case TiePolicy::optimistic: return 1 + greater;
        case TiePolicy::pessimistic: return 1 + greater + ties;
        case TiePolicy::mid: return 1 + greater + ties / 2;
    }
    return 1 + greater;
}

template <class S>
using ScoreFn = std::function<std::vector<S>(int32_t h, int32_t r)>;

/// Filtered ranking over a split. Head prediction of (h,r,t) runs as tail
/// prediction of (t, inv(r), ?).
template <class S>
std::vector<RankResult> rank_split(const KnowledgeGraph& kg, const ScoreFn<S>& score,
                                   const std::vector<TripleId>& split,
                                   const EvalOptions& opts = {}) {
    if (split.empty()) throw std::invalid_argument("rank_split: empty split");
    if (!kg.has_inverses)
        throw std::invalid_argument("rank_split: graph built without inverse relations");
    std::vector<RankResult> out(2 * split.size());
    parallel_for(opts.workers, static_cast<int64_t>(split.size()), [&](int64_t b, int64_t e) {
        for (int64_t i = b; i < e; ++i) {
            const TripleId t = split[static_cast<size_t>(i)];
            const auto tail_scores = score(t.h, t.r);
            out[static_cast<size_t>(2 * i)] = {
                t, false,
                rank_triple<S>(tail_scores, t.t, kg.filter_candidates(t.h, t.r, t.t), opts.ties)};
            const int32_t ir = kg.inverse_of(t.r);
            const auto head_scores = score(t.t, ir);
            out[static_cast<size_t>(2 * i + 1)] = {
                t, true,
                rank_triple<S>(head_scores, t.h, kg.filter_candidates(t.t, ir, t.h), opts.ties)};
        }
    });
    return out;
}

inline EvalReport summarize(const std::vector<RankResult>& ranks) {
    EvalReport r;
    r.count = static_cast<int64_t>(ranks.size() / 2);
    for (const auto& rr : ranks) {
        r.mrr += 1.0 / static_cast<double>(rr.rank);
        r.hits1 += rr.rank <= 1;
        r.hits3 += rr.rank <= 3;
        r.hits10 += rr.rank <= 10;
    }
    const double n = static_cast<double>(ranks.size());
    r.mrr /= n;
    r.hits1 /= n;
    r.hits3 /= n;
    r.hits10 /= n;
    return r;
}

template <class S>
EvalReport evaluate(const KnowledgeGraph& kg, const ScoreFn<S>& score,
                    const std::vector<TripleId>& split, const EvalOptions& opts = {}) {
    return summarize(rank_split(kg, score, split, opts));
}

/// Per unordered (type(h), type(t)) bucket, plus the ALL row. Untyped
/// entities fall into UNKNOWN.
template <class S>
std::map<std::string, EvalReport> evaluate_subdomains(const KnowledgeGraph& kg,
                                                      const ScoreFn<S>& score,
                                                      const std::vector<TripleId>& split,
                                                      const EvalOptions& opts = {}) {
    if (kg.entity_types.size() == 0)
        throw std::invalid_argument("evaluate_subdomains: no entity types loaded");
    const auto ranks = rank_split(kg, score, split, opts);
    auto type_name = [&kg](int32_t e) -> std::string {
        const int32_t t = kg.type_of[static_cast<size_t>(e)];
        return t < 0 ? "UNKNOWN" : kg.entity_types.name(t);
    };
    std::map<std::string, std::vector<RankResult>> buckets;
    for (size_t i = 0; i < ranks.size(); i += 2) {
        const TripleId t = ranks[i].triple;
        std::string a = type_name(t.h), b = type_name(t.t);
        if (b < a) std::swap(a, b);
        auto& bucket = buckets[a + "-" + b];
        bucket.push_back(ranks[i]);
        bucket.push_back(ranks[i + 1]);
    }
    std::map<std::string, EvalReport> out;
    for (const auto& [name, rs] : buckets) out[name] = summarize(rs);
    out["ALL"] = summarize(ranks);
    return out;
}

/// Top-k candidates for (head, relation) given by strings. Unknown strings
/// raise an error naming prefix-matching vocabulary entries.
template <class S>
std::vector<std::pair<int32_t, S>> predict_topk(const KnowledgeGraph& kg, const ScoreFn<S>& score,
                                                const std::string& head, const std::string& rel,
                                                int64_t k, bool filter_known = false) {
    auto resolve = [](const Vocab& v, const std::string& name, const char* what) {
        const int32_t id = v.id(name);
        if (id >= 0) return id;
        std::string msg = std::string("unknown ") + what + " '" + name + "'";
        int shown = 0;
        for (const auto& cand : v.names()) {
            if (cand.rfind(name, 0) != 0) continue;
            msg += shown++ ? ", " : "; did you mean: ";
            if (shown > 5) {
                msg += "...";
                break;
            }
            msg += cand;
        }
        throw std::runtime_error(msg);
    };
    if (k < 1) throw std::invalid_argument("predict_topk: k must be >= 1");
    const int32_t h = resolve(kg.entities, head, "entity");
    const int32_t r = resolve(kg.relations, rel, "relation");
    const auto scores = score(h, r);
    const auto n = static_cast<int64_t>(scores.size());
    if (k > n) {
        std::fprintf(stderr, "predict: k=%lld clipped to %lld entities\n",
                     static_cast<long long>(k), static_cast<long long>(n));
        k = n;
    }
    std::vector<int32_t> order;
    if (filter_known) {
        const auto& known = kg.known_tails(h, r);
        for (int32_t e = 0; e < n; ++e)
            if (!std::binary_search(known.begin(), known.end(), e)) order.push_back(e);
        if (k > static_cast<int64_t>(order.size())) k = static_cast<int64_t>(order.size());
    } else {
        order.resize(static_cast<size_t>(n));
        for (int32_t e = 0; e < n; ++e) order[static_cast<size_t>(e)] = e;
    }
    std::stable_sort(order.begin(), order.end(), [&scores](int32_t a, int32_t b) {
        return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    });
    std::vector<std::pair<int32_t, S>> out;
    out.reserve(static_cast<size_t>(k));
    for (int64_t i = 0; i < k; ++i)
        out.emplace_back(order[static_cast<size_t>(i)], scores[static_cast<size_t>(order[static_cast<size_t>(i)])]);
    return out;
}

inline void write_report_csv(std::ostream& os, const std::map<std::string, EvalReport>& rows) {
    os << "bucket,mrr,h1,h3,h10,n\n";
    char buf[160];
    for (const auto& [name, r] : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%lld\n", name.c_str(), r.mrr,
                      r.hits1, r.hits3, r.hits10, static_cast<long long>(r.count));
        os << buf;
    }
}

}  // namespace nckge
