#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nckge/config.hpp"
#include "nckge/kg.hpp"
#include "nckge/model.hpp"
#include "nckge/trainer.hpp"

namespace fs = std::filesystem;
using namespace nckge;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitCheckpointMismatch = 4;

std::vector<std::pair<std::string, std::string>> parse_overrides(
    const std::vector<std::string>& extras) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& raw : extras) {
        if (raw.rfind("--", 0) != 0)
            throw ConfigError("unexpected argument '" + raw + "' (overrides look like --key=value)");
        const size_t eq = raw.find('=');
        if (eq == std::string::npos || eq == 2)
            throw ConfigError("override '" + raw + "' must look like --key=value");
        const std::string key = raw.substr(2, eq - 2);
        if (key.find('.') == std::string::npos)
            throw ConfigError("unknown option '--" + key + "'");
        out.emplace_back(key, raw.substr(eq + 1));
    }
    return out;
}

int cmd_preprocess(const std::string& data_dir, std::string out_dir) {
    if (out_dir.empty()) out_dir = data_dir;
    KnowledgeGraph kg = build_graph(load_tsv((fs::path(data_dir) / "train.tsv").string(), "train"),
                                    load_tsv((fs::path(data_dir) / "valid.tsv").string(), "valid"),
                                    load_tsv((fs::path(data_dir) / "test.tsv").string(), "test"),
                                    /*add_inverses=*/false);
    fs::create_directories(out_dir);
    {
        std::ofstream ents((fs::path(out_dir) / "entities.txt").string(), std::ios::trunc);
        for (const auto& name : kg.entities.names()) ents << name << "\n";
        std::ofstream rels((fs::path(out_dir) / "relations.txt").string(), std::ios::trunc);
        for (const auto& name : kg.relations.names()) rels << name << "\n";
    }
    std::ofstream stats((fs::path(out_dir) / "stats.csv").string(), std::ios::trunc);
    stats << "split,entities,relations,triples\n";
    auto row = [&stats](const std::string& name, const std::vector<TripleId>& split) {
        std::set<int32_t> ents, rels;
        for (const auto& t : split) {
            ents.insert(t.h);
            ents.insert(t.t);
            rels.insert(t.r);
        }
        stats << name << ',' << ents.size() << ',' << rels.size() << ',' << split.size() << "\n";
    };
    row("train", kg.train);
    row("valid", kg.valid);
    row("test", kg.test);
    stats << "total," << kg.entities.size() << ',' << kg.relations.size() << ','
          << kg.train.size() + kg.valid.size() + kg.test.size() << "\n";
    std::cout << "wrote entities.txt, relations.txt, stats.csv to " << out_dir << "\n";
    return 0;
}

template <class S>
int run_train(const RunConfig& cfg) {
    KnowledgeGraph kg = load_dataset(cfg.dataset_dir);
    fs::create_directories(cfg.out_dir);
    cfg.write_resolved((fs::path(cfg.out_dir) / "config.resolved").string());
    Rng init_rng(cfg.seed, "init");
    Model<S> model = build_model<S>(kg, cfg.encoder, cfg.scorer, init_rng);
    TrainResult res = train(kg, model, cfg, cfg.out_dir);
    if (res.best_mrr >= 0)
        std::cout << "best val MRR " << format_double(res.best_mrr) << " at epoch "
                  << res.best_epoch << (res.early_stopped ? " (early stop)" : "") << "\n";
    std::cout << "artifacts in " << cfg.out_dir << "\n";
    return 0;
}

struct LoadedModelArgs {
    std::string checkpoint;
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;
};

template <class S>
struct Loaded {
    RunConfig cfg;
    KnowledgeGraph kg;
    Model<S> model;
};

template <class S>
Loaded<S> load_for_inference(const LoadedModelArgs& args) {
    RunConfig cfg = load_run_config(args.config_path, args.overrides);
    if (cfg.dataset_dir.empty())
        throw ConfigError("dataset.dir is required (set it in the config or via --dataset.dir=...)");
    KnowledgeGraph kg = load_dataset(cfg.dataset_dir);
    CheckpointFile ck = read_checkpoint(args.checkpoint);
    const uint64_t want = cfg.fingerprint(kg.num_entities(), kg.num_relations());
    if (ck.fingerprint != want) {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "checkpoint fingerprint %016llx does not match config fingerprint %016llx",
                      static_cast<unsigned long long>(ck.fingerprint),
                      static_cast<unsigned long long>(want));
        throw std::runtime_error(std::string("fingerprint: ") + buf);
    }
    Rng init_rng(cfg.seed, "init");
    Model<S> model = build_model<S>(kg, cfg.encoder, cfg.scorer, init_rng);
    load_model(model, ck);
    return {std::move(cfg), std::move(kg), std::move(model)};
}

template <class S>
int run_evaluate(const LoadedModelArgs& args, const std::string& split, bool by_type,
                 std::string out_path) {
    Loaded<S> ld = load_for_inference<S>(args);
    const auto& triples = ld.kg.split(split);
    if (by_type && ld.kg.entity_types.size() == 0)
        throw ConfigError("--by-type needs entity_types.tsv next to the dataset splits; none found in " +
                          ld.cfg.dataset_dir);
    auto score = make_score_fn(ld.model, ld.cfg.workers);
    const EvalOptions opts{ld.cfg.ties, ld.cfg.workers};
    std::map<std::string, EvalReport> rows;
    if (by_type) {
        rows = evaluate_subdomains(ld.kg, score, triples, opts);
    } else {
        rows["ALL"] = evaluate(ld.kg, score, triples, opts);
    }
    write_report_csv(std::cout, rows);
    if (out_path.empty())
        out_path = (fs::path(args.checkpoint).parent_path() / ("report_" + split + ".csv")).string();
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    write_report_csv(out, rows);
    return 0;
}

template <class S>
int run_predict(const LoadedModelArgs& args, const std::string& head, const std::string& rel,
                int64_t k, bool filter_known) {
    Loaded<S> ld = load_for_inference<S>(args);
    auto score = make_score_fn(ld.model, ld.cfg.workers);
    const auto top = predict_topk(ld.kg, score, head, rel, k, filter_known);
    for (const auto& [ent, sc] : top)
        std::cout << ld.kg.entities.name(ent) << '\t' << format_double(static_cast<double>(sc))
                  << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"knowledge-graph embeddings with relation-aware attention and a contrastive objective"};
    app.require_subcommand(1);

    auto* pre = app.add_subcommand("preprocess", "write vocabularies and split statistics");
    std::string pre_data, pre_out;
    pre->add_option("--data", pre_data, "dataset directory with train/valid/test TSVs")->required();
    pre->add_option("--out", pre_out, "output directory (default: dataset directory)");

    auto* tr = app.add_subcommand("train", "train a model");
    std::string tr_config;
    tr->add_option("--config", tr_config, "config file of key = value lines");
    tr->allow_extras();

    auto* ev = app.add_subcommand("evaluate", "filtered ranking report for a split");
    LoadedModelArgs ev_args;
    std::string ev_split = "test", ev_out;
    bool ev_by_type = false;
    ev->add_option("--checkpoint", ev_args.checkpoint, "checkpoint file")->required();
    ev->add_option("--config", ev_args.config_path, "config file (e.g. the run's config.resolved)");
    ev->add_option("--split", ev_split, "train|valid|test (default test)");
    ev->add_flag("--by-type", ev_by_type, "per entity-type-pair breakdown");
    ev->add_option("--out", ev_out, "report CSV path (default: next to the checkpoint)");
    ev->allow_extras();

    auto* pr = app.add_subcommand("predict", "top-k tail candidates for (head, relation)");
    LoadedModelArgs pr_args;
    std::string pr_head, pr_rel;
    int64_t pr_k = 10;
    bool pr_filter = false;
    pr->add_option("--checkpoint", pr_args.checkpoint, "checkpoint file")->required();
    pr->add_option("--config", pr_args.config_path, "config file (e.g. the run's config.resolved)");
    pr->add_option("--head", pr_head, "head entity name")->required();
    pr->add_option("--relation", pr_rel, "relation name")->required();
    pr->add_option("-k,--k", pr_k, "number of candidates (default 10)");
    pr->add_flag("--filter-known", pr_filter, "drop tails already known for (head, relation)");
    pr->allow_extras();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (pre->parsed()) return cmd_preprocess(pre_data, pre_out);
        if (tr->parsed()) {
            RunConfig cfg = load_run_config(tr_config, parse_overrides(tr->remaining()));
            if (cfg.dataset_dir.empty())
                throw ConfigError("dataset.dir is required (set it in the config or via --dataset.dir=...)");
            return cfg.precision == "f32" ? run_train<float>(cfg) : run_train<double>(cfg);
        }
        if (ev->parsed()) {
            ev_args.overrides = parse_overrides(ev->remaining());
            RunConfig probe = load_run_config(ev_args.config_path, ev_args.overrides);
            return probe.precision == "f32"
                       ? run_evaluate<float>(ev_args, ev_split, ev_by_type, ev_out)
                       : run_evaluate<double>(ev_args, ev_split, ev_by_type, ev_out);
        }
        if (pr->parsed()) {
            pr_args.overrides = parse_overrides(pr->remaining());
            RunConfig probe = load_run_config(pr_args.config_path, pr_args.overrides);
            return probe.precision == "f32"
                       ? run_predict<float>(pr_args, pr_head, pr_rel, pr_k, pr_filter)
                       : run_predict<double>(pr_args, pr_head, pr_rel, pr_k, pr_filter);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const std::exception& e) {
        const std::string msg = e.what();
        std::cerr << "error: " << msg << "\n";
        return msg.rfind("fingerprint:", 0) == 0 ? kExitCheckpointMismatch : kExitUsage;
    }
    return kExitUsage;
}
