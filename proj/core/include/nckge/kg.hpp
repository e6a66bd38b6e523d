#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace nckge {

struct Triple {
    std::string head, relation, tail;
    bool operator==(const Triple& o) const {
        return head == o.head && relation == o.relation && tail == o.tail;
    }
};

struct TripleId {
    int32_t h, r, t;
    bool operator==(const TripleId& o) const { return h == o.h && r == o.r && t == o.t; }
};

class Vocab {
public:
    int32_t add(const std::string& name);
    int32_t id(const std::string& name) const;          // -1 when absent
    const std::string& name(int32_t id) const;
    int32_t size() const { return static_cast<int32_t>(names_.size()); }
    const std::vector<std::string>& names() const { return names_; }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, int32_t> ids_;
};

inline uint64_t pack_hr(int32_t h, int32_t r) {
    return (static_cast<uint64_t>(static_cast<uint32_t>(h)) << 32) | static_cast<uint32_t>(r);
}

struct KnowledgeGraph {
    Vocab entities;
    Vocab relations;  // base relations first, then their inverses
    int32_t num_base_relations = 0;
    bool has_inverses = false;

    std::vector<TripleId> train, valid, test;
    std::vector<TripleId> train_aug;  // train plus inverse copies when augmented

    // CSR adjacency over augmented train: neighbors of u are
    // {(adj_entity[i], adj_relation[i]) : adj_offsets[u] <= i < adj_offsets[u+1]}.
    std::vector<int64_t> adj_offsets;
    std::vector<int32_t> adj_entity;
    std::vector<int32_t> adj_relation;

    std::unordered_map<uint64_t, std::vector<int32_t>> positives;     // train tails
    std::unordered_map<uint64_t, std::vector<int32_t>> filter_index;  // all splits

    Vocab entity_types;
    std::vector<int32_t> type_of;  // per entity, -1 when untagged

    int32_t num_entities() const { return entities.size(); }
    int32_t num_relations() const { return relations.size(); }
    int32_t inverse_of(int32_t r) const {
        return r < num_base_relations ? r + num_base_relations : r - num_base_relations;
    }

    const std::vector<int32_t>& positives_of(int32_t h, int32_t r) const;
    const std::vector<int32_t>& known_tails(int32_t h, int32_t r) const;

    // keep[i]=1 iff entity i stays a candidate for (h,r) with the given gold.
    std::vector<uint8_t> filter_candidates(int32_t h, int32_t r, int32_t gold_tail) const;

    const std::vector<TripleId>& split(const std::string& name) const;
};

std::vector<Triple> load_tsv(const std::string& path, const std::string& split);
std::vector<Triple> dedup_triples(const std::vector<Triple>& triples);

KnowledgeGraph build_graph(const std::vector<Triple>& train, const std::vector<Triple>& valid,
                           const std::vector<Triple>& test, bool add_inverses = true);

// Reads train.tsv/valid.tsv/test.tsv plus an optional entity_types.tsv.
KnowledgeGraph load_dataset(const std::string& dir, bool add_inverses = true);

void load_entity_types(const std::string& path, KnowledgeGraph& kg);

}  // namespace nckge
