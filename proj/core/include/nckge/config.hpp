#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nckge/encoder.hpp"
#include "nckge/evaluator.hpp"
#include "nckge/loss.hpp"
#include "nckge/scorer.hpp"

namespace nckge {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Flat dotted-key run configuration. Precedence: CLI override > config file
/// > built-in default. Unknown keys are rejected.
struct RunConfig {
    std::string dataset_dir;
    uint64_t seed = 1;
    std::string out_dir = "run";
    int workers = 1;
    std::string precision = "f64";

    RamhaConfig encoder;
    ScorerConfig scorer;

    LossKind loss = LossKind::nc;
    ContrastiveConfig contrastive;
    double gamma = 1.0;
    bool tau_dynamic = true;
    double tau0 = 1.0;

    int64_t epochs = 200;
    int64_t batch_size = 0;  // 0 = min(1024, |train|)
    double lr = 1e-3;
    double weight_decay = 1e-2;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t eval_every = 1;
    int patience = 50;

    TiePolicy ties = TiePolicy::mid;

    void apply(const std::string& key, const std::string& value);
    void validate();

    std::map<std::string, std::string> resolved() const;
    void write_resolved(const std::string& path) const;
    uint64_t fingerprint(int32_t n_entities, int32_t n_relations) const;

private:
    bool scorer_dim_set_ = false;
};

std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path);

/// Applies the file (optional, empty path skips) then the overrides, then
/// validates.
RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::pair<std::string, std::string>>& overrides);

std::string format_double(double v);

}  // namespace nckge
