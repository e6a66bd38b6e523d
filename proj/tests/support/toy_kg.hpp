#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "nckge/kg.hpp"
#include "nckge/rng.hpp"

namespace toy {

struct Splits {
    std::vector<nckge::Triple> train, valid, test;
};

// Deterministic composition graph on a cycle: relation k steps by strides[k]
// and by 2*strides[k]. The single-step triple always trains; the double-step
// triple is held out per (head, relation) pair on a fixed residue.
inline Splits splits(int n_entities) {
    static const int strides[4] = {1, 7, 11, 17};
    Splits s;
    auto ent = [](int i) { return "e" + std::to_string(i); };
    auto rel = [](int k) { return "r" + std::to_string(k); };
    for (int i = 0; i < n_entities; ++i) {
        for (int k = 0; k < 4; ++k) {
            const int t1 = (i + strides[k]) % n_entities;
            const int t2 = (i + 2 * strides[k]) % n_entities;
            s.train.push_back({ent(i), rel(k), ent(t1)});
            nckge::Triple held{ent(i), rel(k), ent(t2)};
            switch ((i * 4 + k) % 10) {
                case 3: s.valid.push_back(held); break;
                case 7: s.test.push_back(held); break;
                default: s.train.push_back(held);
            }
        }
    }
    return s;
}

inline nckge::KnowledgeGraph graph(int n_entities = 50, bool add_inverses = true) {
    Splits s = splits(n_entities);
    return nckge::build_graph(s.train, s.valid, s.test, add_inverses);
}

inline void write_dataset(const std::string& dir, int n_entities = 50) {
    std::filesystem::create_directories(dir);
    Splits s = splits(n_entities);
    auto dump = [&dir](const char* name, const std::vector<nckge::Triple>& ts) {
        std::ofstream f(dir + "/" + name, std::ios::trunc);
        for (const auto& t : ts) f << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
    };
    dump("train.tsv", s.train);
    dump("valid.tsv", s.valid);
    dump("test.tsv", s.test);
}

// Six entities, two relations; small enough for exhaustive gradient checks.
inline nckge::KnowledgeGraph six_node_graph() {
    std::vector<nckge::Triple> train = {
        {"a", "p", "b"}, {"b", "p", "c"}, {"c", "p", "d"}, {"d", "p", "e"},
        {"e", "p", "f"}, {"f", "p", "a"}, {"a", "q", "c"}, {"c", "q", "e"},
        {"e", "q", "a"}, {"b", "q", "d"},
    };
    std::vector<nckge::Triple> valid = {{"d", "q", "f"}};
    std::vector<nckge::Triple> test = {{"f", "q", "b"}};
    return nckge::build_graph(train, valid, test, true);
}

// Random triples in the PharmKG8k-28 shape: three entity families, 28
// relations, entity_types.tsv alongside the splits.
inline void write_pharm_synth(const std::string& dir, int n_ent = 600, int n_triples = 6000,
                              uint64_t seed = 7) {
    std::filesystem::create_directories(dir);
    const char* families[3] = {"Gene", "Chemical", "Disease"};
    auto ent = [&](int i) {
        return std::string(families[i % 3]) + "_" + std::to_string(i / 3);
    };
    nckge::Rng rng(seed, "pharm.synth");
    std::set<std::string> seen;
    std::vector<nckge::Triple> all;
    while (static_cast<int>(all.size()) < n_triples) {
        const int h = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n_ent)));
        const int r = static_cast<int>(rng.uniform_int(28));
        const int t = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n_ent)));
        if (h == t) continue;
        nckge::Triple tr{ent(h), "rel_" + std::to_string(r), ent(t)};
        if (seen.insert(tr.head + "\t" + tr.relation + "\t" + tr.tail).second) all.push_back(tr);
    }
    std::set<std::string> in_train;
    std::vector<nckge::Triple> train, valid, test;
    for (size_t i = 0; i < all.size(); ++i) {
        const auto& t = all[i];
        const bool fresh = !in_train.count(t.head) || !in_train.count(t.tail) || !in_train.count(t.relation);
        if (fresh || i % 10 > 1) {
            train.push_back(t);
            in_train.insert(t.head);
            in_train.insert(t.tail);
            in_train.insert(t.relation);
        } else if (i % 10 == 0) {
            valid.push_back(t);
        } else {
            test.push_back(t);
        }
    }
    auto dump = [&dir](const char* name, const std::vector<nckge::Triple>& ts) {
        std::ofstream f(dir + "/" + name, std::ios::trunc);
        for (const auto& t : ts) f << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
    };
    dump("train.tsv", train);
    dump("valid.tsv", valid);
    dump("test.tsv", test);
    std::ofstream types(dir + "/entity_types.tsv", std::ios::trunc);
    for (int i = 0; i < n_ent; ++i) types << ent(i) << '\t' << families[i % 3] << '\n';
}

}  // namespace toy
