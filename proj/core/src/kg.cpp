#include "nckge/kg.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

namespace nckge {

int32_t Vocab::add(const std::string& name) {
    auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    const int32_t id = static_cast<int32_t>(names_.size());
    names_.push_back(name);
    ids_.emplace(name, id);
    return id;
}

int32_t Vocab::id(const std::string& name) const {
    auto it = ids_.find(name);
    return it == ids_.end() ? -1 : it->second;
}

const std::string& Vocab::name(int32_t id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("Vocab: id " + std::to_string(id));
    return names_[static_cast<size_t>(id)];
}

std::vector<Triple> load_tsv(const std::string& path, const std::string& split) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(split + ": cannot open " + path);
    std::vector<Triple> out;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const size_t t1 = line.find('\t');
        const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        const size_t t3 = t2 == std::string::npos ? std::string::npos : line.find('\t', t2 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos || t3 != std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected head<TAB>relation<TAB>tail");
        Triple tr{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)};
        if (tr.head.empty() || tr.relation.empty() || tr.tail.empty())
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty field");
        out.push_back(std::move(tr));
    }
    if (out.empty()) throw std::runtime_error(path + ": no triples");
    return out;
}

std::vector<Triple> dedup_triples(const std::vector<Triple>& triples) {
    std::vector<Triple> out;
    std::unordered_set<std::string> seen;
    out.reserve(triples.size());
    for (const auto& t : triples) {
        std::string key = t.head + '\t' + t.relation + '\t' + t.tail;
        if (seen.insert(std::move(key)).second) out.push_back(t);
    }
    return out;
}

namespace {

void index_triple(std::unordered_map<uint64_t, std::vector<int32_t>>& index, int32_t h, int32_t r,
                  int32_t t) {
    index[pack_hr(h, r)].push_back(t);
}

void finalize_index(std::unordered_map<uint64_t, std::vector<int32_t>>& index) {
    for (auto& [key, tails] : index) {
        std::sort(tails.begin(), tails.end());
        tails.erase(std::unique(tails.begin(), tails.end()), tails.end());
    }
}

}  // namespace

KnowledgeGraph build_graph(const std::vector<Triple>& train, const std::vector<Triple>& valid,
                           const std::vector<Triple>& test, bool add_inverses) {
    if (train.empty()) throw std::runtime_error("build_graph: empty train split");
    KnowledgeGraph kg;
    auto intern = [&kg](const std::vector<Triple>& src, std::vector<TripleId>& dst) {
        dst.reserve(src.size());
        for (const auto& t : src)
            dst.push_back({kg.entities.add(t.head), kg.relations.add(t.relation),
                           kg.entities.add(t.tail)});
    };
    intern(train, kg.train);
    intern(valid, kg.valid);
    intern(test, kg.test);
    kg.num_base_relations = kg.relations.size();
    kg.has_inverses = add_inverses;
    if (add_inverses)
        for (int32_t r = 0; r < kg.num_base_relations; ++r)
            kg.relations.add(kg.relations.name(r) + "^-1");

    kg.train_aug = kg.train;
    if (add_inverses) {
        kg.train_aug.reserve(2 * kg.train.size());
        for (const auto& t : kg.train) kg.train_aug.push_back({t.t, kg.inverse_of(t.r), t.h});
    }

    const int32_t n = kg.num_entities();
    std::vector<int64_t> degree(static_cast<size_t>(n) + 1, 0);
    for (const auto& t : kg.train_aug) ++degree[static_cast<size_t>(t.h) + 1];
    kg.adj_offsets.assign(degree.begin(), degree.end());
    for (size_t i = 1; i < kg.adj_offsets.size(); ++i) kg.adj_offsets[i] += kg.adj_offsets[i - 1];
    kg.adj_entity.resize(kg.train_aug.size());
    kg.adj_relation.resize(kg.train_aug.size());
    std::vector<int64_t> cursor(kg.adj_offsets.begin(), kg.adj_offsets.end() - 1);
    for (const auto& t : kg.train_aug) {
        const int64_t slot = cursor[static_cast<size_t>(t.h)]++;
        kg.adj_entity[static_cast<size_t>(slot)] = t.t;
        kg.adj_relation[static_cast<size_t>(slot)] = t.r;
    }

    for (const auto& t : kg.train_aug) index_triple(kg.positives, t.h, t.r, t.t);
    finalize_index(kg.positives);

    auto add_filtered = [&kg, add_inverses](const std::vector<TripleId>& split) {
        for (const auto& t : split) {
            index_triple(kg.filter_index, t.h, t.r, t.t);
            if (add_inverses) index_triple(kg.filter_index, t.t, kg.inverse_of(t.r), t.h);
        }
    };
    add_filtered(kg.train);
    add_filtered(kg.valid);
    add_filtered(kg.test);
    finalize_index(kg.filter_index);

    kg.type_of.assign(static_cast<size_t>(n), -1);
    return kg;
}

const std::vector<int32_t>& KnowledgeGraph::positives_of(int32_t h, int32_t r) const {
    static const std::vector<int32_t> kEmpty;
    auto it = positives.find(pack_hr(h, r));
    return it == positives.end() ? kEmpty : it->second;
}

const std::vector<int32_t>& KnowledgeGraph::known_tails(int32_t h, int32_t r) const {
    static const std::vector<int32_t> kEmpty;
    auto it = filter_index.find(pack_hr(h, r));
    return it == filter_index.end() ? kEmpty : it->second;
}

std::vector<uint8_t> KnowledgeGraph::filter_candidates(int32_t h, int32_t r,
                                                       int32_t gold_tail) const {
    std::vector<uint8_t> keep(static_cast<size_t>(num_entities()), 1);
    for (int32_t t : known_tails(h, r)) keep[static_cast<size_t>(t)] = 0;
    keep[static_cast<size_t>(gold_tail)] = 1;
    return keep;
}

const std::vector<TripleId>& KnowledgeGraph::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "valid") return valid;
    if (name == "test") return test;
    throw std::runtime_error("unknown split '" + name + "' (expected train|valid|test)");
}

KnowledgeGraph load_dataset(const std::string& dir, bool add_inverses) {
    namespace fs = std::filesystem;
    auto train = load_tsv((fs::path(dir) / "train.tsv").string(), "train");
    auto valid = load_tsv((fs::path(dir) / "valid.tsv").string(), "valid");
    auto test = load_tsv((fs::path(dir) / "test.tsv").string(), "test");
    KnowledgeGraph kg = build_graph(train, valid, test, add_inverses);
    const fs::path types = fs::path(dir) / "entity_types.tsv";
    if (fs::exists(types)) load_entity_types(types.string(), kg);
    return kg;
}

void load_entity_types(const std::string& path, KnowledgeGraph& kg) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const size_t tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected entity<TAB>type");
        const std::string ent = line.substr(0, tab), type = line.substr(tab + 1);
        const int32_t eid = kg.entities.id(ent);
        if (eid < 0) continue;  // tags for entities outside this dataset are harmless
        kg.type_of[static_cast<size_t>(eid)] = kg.entity_types.add(type);
    }
}

}  // namespace nckge
