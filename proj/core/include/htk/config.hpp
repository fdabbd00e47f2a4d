#pragma once

// Run configuration: JSON files plus key=value overrides, with unknown keys
// rejected by name. The canonical (sorted-key) dump feeds the config hash
// embedded in artifacts.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "htk/data.hpp"
#include "htk/net.hpp"
#include "htk/rng.hpp"
#include "htk/train.hpp"

#include "json.hpp"

namespace htk {

struct ModelConfig {
    int d = 32;
    std::string variant = "full";  // basic | res | l2 | full
    bool l2_pool_count_norm = false;
};

struct TrainSettings {
    double lr = 1e-4;
    double weight_decay = 5e-4;
    int batch_size = 16;
    int epochs = 30;
    int chunk_len = 8;
    std::string ant_loss = "l2";  // l2 | triplet
    double triplet_margin = 0.5;
    double lambda_cls = 1.0;
    double lambda_ant = 0.1;
    double lambda_aux = 1.0;
};

struct MetricsConfig {
    std::string kl_direction = "gt_pred";  // gt_pred | pred_gt
    double center_sigma_frac = 0.25;
    double gt_sigma_frac = 0.05;
    double blur_sigma = 0.0;  // optional smoothing of predicted maps, pixels
};

struct RunConfig {
    std::uint64_t seed = 1;
    GenConfig data;
    ModelConfig model;
    TrainSettings train;
    MetricsConfig metrics;
};

// What a named variant turns on. basic disables the dilated encoder tail and
// the l2 pool; only full enables the anticipation losses.
struct VariantSpec {
    bool dilated = true;
    bool l2_pool = true;
    bool ant_losses = true;
};
VariantSpec variant_spec(const std::string& name);

nlohmann::ordered_json to_json(const RunConfig& cfg);
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// "a.b.c=value" strings; values parse as JSON scalars, bare words as strings.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

std::string canonical_config_dump(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

LossWeights effective_weights(const RunConfig& cfg);
TrainConfig train_config_from(const RunConfig& cfg);
HotspotModel<float> build_model(const RunConfig& cfg, Rng& rng);

}  // namespace htk
