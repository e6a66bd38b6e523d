#include "nckge/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

namespace nckge {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int64_t to_int(const std::string& key, const std::string& v) {
    size_t used = 0;
    int64_t out;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
    if (used != v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return out;
}

uint64_t to_uint(const std::string& key, const std::string& v) {
    size_t used = 0;
    uint64_t out;
    try {
        out = std::stoull(v, &used);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
    }
    if (used != v.size() || v[0] == '-')
        throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    size_t used = 0;
    double out;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    if (used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
}

uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

void RunConfig::apply(const std::string& key, const std::string& value) {
    try {
        if (key == "dataset.dir") dataset_dir = value;
        else if (key == "run.seed") seed = to_uint(key, value);
        else if (key == "run.out_dir") out_dir = value;
        else if (key == "run.workers") workers = static_cast<int>(to_int(key, value));
        else if (key == "run.precision") {
            if (value != "f32" && value != "f64")
                throw ConfigError("run.precision: expected f32 or f64, got '" + value + "'");
            precision = value;
        } else if (key == "encoder.layers") encoder.layers = static_cast<int>(to_int(key, value));
        else if (key == "encoder.heads") encoder.heads = static_cast<int>(to_int(key, value));
        else if (key == "encoder.dim") encoder.dim = to_int(key, value);
        else if (key == "encoder.dropout") encoder.dropout = to_double(key, value);
        else if (key == "encoder.norm") encoder.norm = norm_kind_from(value);
        else if (key == "encoder.self_loops") encoder.self_loops = self_loop_mode_from(value);
        else if (key == "encoder.basis_threshold") encoder.basis_threshold = to_int(key, value);
        else if (key == "encoder.n_bases") encoder.n_bases = to_int(key, value);
        else if (key == "scorer.kind") scorer.kind = scorer_kind_from(value);
        else if (key == "scorer.dim") {
            scorer.dim = to_int(key, value);
            scorer_dim_set_ = true;
        } else if (key == "scorer.transe_norm")
            scorer.transe_norm = static_cast<int>(to_int(key, value));
        else if (key == "scorer.reshape_rows") scorer.reshape_rows = to_int(key, value);
        else if (key == "scorer.reshape_cols") scorer.reshape_cols = to_int(key, value);
        else if (key == "scorer.n_filters") scorer.n_filters = to_int(key, value);
        else if (key == "scorer.filter_h") scorer.filter_h = to_int(key, value);
        else if (key == "scorer.filter_w") scorer.filter_w = to_int(key, value);
        else if (key == "scorer.hidden_dropout") scorer.hidden_dropout = to_double(key, value);
        else if (key == "loss.kind") loss = loss_kind_from(value);
        else if (key == "loss.k_plus") contrastive.k_plus = static_cast<int>(to_int(key, value));
        else if (key == "loss.negatives") {
            if (value == "all") contrastive.n_negatives = 0;
            else {
                contrastive.n_negatives = to_int(key, value);
                if (contrastive.n_negatives < 1)
                    throw ConfigError("loss.negatives: expected 'all' or a count >= 1");
            }
        } else if (key == "loss.q") contrastive.q = to_double(key, value);
        else if (key == "loss.gamma") gamma = to_double(key, value);
        else if (key == "loss.tau.strategy") {
            if (value == "dynamic") tau_dynamic = true;
            else if (value == "fixed") tau_dynamic = false;
            else throw ConfigError("loss.tau.strategy: expected fixed or dynamic, got '" + value + "'");
        } else if (key == "loss.tau.value") tau0 = to_double(key, value);
        else if (key == "train.epochs") epochs = to_int(key, value);
        else if (key == "train.batch_size") batch_size = to_int(key, value);
        else if (key == "train.lr") lr = to_double(key, value);
        else if (key == "train.weight_decay") weight_decay = to_double(key, value);
        else if (key == "train.beta1") beta1 = to_double(key, value);
        else if (key == "train.beta2") beta2 = to_double(key, value);
        else if (key == "train.eps") eps = to_double(key, value);
        else if (key == "train.eval_every") eval_every = to_int(key, value);
        else if (key == "train.patience") patience = static_cast<int>(to_int(key, value));
        else if (key == "eval.ties") ties = tie_policy_from(value);
        else throw ConfigError("unknown config key '" + key + "'");
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

void RunConfig::validate() {
    if (!scorer_dim_set_) scorer.dim = encoder.dim;
    if (scorer.dim != encoder.dim)
        throw ConfigError("scorer.dim (" + std::to_string(scorer.dim) +
                          ") must equal encoder.dim (" + std::to_string(encoder.dim) + ")");
    try {
        encoder.validate();
        scorer.validate();
        contrastive.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (batch_size < 0) throw ConfigError("train.batch_size must be >= 0 (0 = auto)");
    if (lr <= 0) throw ConfigError("train.lr must be positive");
    if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
        throw ConfigError("train.beta1/beta2 must lie in (0,1)");
    if (eps <= 0) throw ConfigError("train.eps must be positive");
    if (eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
    if (patience < 1) throw ConfigError("train.patience must be >= 1");
    if (workers < 1) throw ConfigError("run.workers must be >= 1");
    if (tau0 < 0.1 || tau0 > 1.5) throw ConfigError("loss.tau.value must lie in [0.1,1.5]");
    if (gamma <= 0) throw ConfigError("loss.gamma must be positive");
}

std::map<std::string, std::string> RunConfig::resolved() const {
    std::map<std::string, std::string> m;
    m["dataset.dir"] = dataset_dir;
    m["run.seed"] = std::to_string(seed);
    m["run.out_dir"] = out_dir;
    m["run.workers"] = std::to_string(workers);
    m["run.precision"] = precision;
    m["encoder.layers"] = std::to_string(encoder.layers);
    m["encoder.heads"] = std::to_string(encoder.heads);
    m["encoder.dim"] = std::to_string(encoder.dim);
    m["encoder.dropout"] = format_double(encoder.dropout);
    m["encoder.norm"] = encoder.norm == NormKind::layer ? "layer"
                        : encoder.norm == NormKind::batch ? "batch" : "none";
    m["encoder.self_loops"] = encoder.self_loops == SelfLoopMode::always ? "always"
                              : encoder.self_loops == SelfLoopMode::isolated ? "isolated" : "off";
    m["encoder.basis_threshold"] = std::to_string(encoder.basis_threshold);
    m["encoder.n_bases"] = std::to_string(encoder.n_bases);
    m["scorer.kind"] = scorer_kind_name(scorer.kind);
    m["scorer.dim"] = std::to_string(scorer.dim);
    m["scorer.transe_norm"] = std::to_string(scorer.transe_norm);
    m["scorer.reshape_rows"] = std::to_string(scorer.reshape_rows);
    m["scorer.reshape_cols"] = std::to_string(scorer.reshape_cols);
    m["scorer.n_filters"] = std::to_string(scorer.n_filters);
    m["scorer.filter_h"] = std::to_string(scorer.filter_h);
    m["scorer.filter_w"] = std::to_string(scorer.filter_w);
    m["scorer.hidden_dropout"] = format_double(scorer.hidden_dropout);
    m["loss.kind"] = loss_kind_name(loss);
    m["loss.k_plus"] = std::to_string(contrastive.k_plus);
    m["loss.negatives"] =
        contrastive.n_negatives == 0 ? "all" : std::to_string(contrastive.n_negatives);
    m["loss.q"] = format_double(contrastive.q);
    m["loss.gamma"] = format_double(gamma);
    m["loss.tau.strategy"] = tau_dynamic ? "dynamic" : "fixed";
    m["loss.tau.value"] = format_double(tau0);
    m["train.epochs"] = std::to_string(epochs);
    m["train.batch_size"] = std::to_string(batch_size);
    m["train.lr"] = format_double(lr);
    m["train.weight_decay"] = format_double(weight_decay);
    m["train.beta1"] = format_double(beta1);
    m["train.beta2"] = format_double(beta2);
    m["train.eps"] = format_double(eps);
    m["train.eval_every"] = std::to_string(eval_every);
    m["train.patience"] = std::to_string(patience);
    m["eval.ties"] = ties == TiePolicy::mid ? "mid"
                     : ties == TiePolicy::optimistic ? "optimistic" : "pessimistic";
    return m;
}

void RunConfig::write_resolved(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& [k, v] : resolved()) out << k << " = " << v << "\n";
}

uint64_t RunConfig::fingerprint(int32_t n_entities, int32_t n_relations) const {
    std::string canon;
    for (const auto& [k, v] : resolved())
        if (k.rfind("encoder.", 0) == 0 || k.rfind("scorer.", 0) == 0)
            canon += k + "=" + v + ";";
    canon += "entities=" + std::to_string(n_entities) + ";";
    canon += "relations=" + std::to_string(n_relations) + ";";
    canon += "precision=" + precision + ";";
    return fnv1a64(canon);
}

std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key or value");
        out.emplace_back(std::move(key), std::move(value));
    }
    return out;
}

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig cfg;
    if (!config_path.empty())
        for (const auto& [k, v] : parse_config_file(config_path)) cfg.apply(k, v);
    for (const auto& [k, v] : overrides) cfg.apply(k, v);
    cfg.validate();
    return cfg;
}

}  // namespace nckge
