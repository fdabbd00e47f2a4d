#include "htk/config.hpp"

#include <set>

namespace htk {

namespace {

using nlohmann::json;

template <typename T>
T get_as(const json& v, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

void expect_object(const json& j, const std::string& key) {
    if (!j.is_object()) throw ConfigError("config key '" + key + "' must be an object");
}

void apply_data(GenConfig& c, const json& j, const std::string& prefix) {
    expect_object(j, prefix);
    for (const auto& [k, v] : j.items()) {
        const std::string key = prefix + "." + k;
        if (k == "image_size") c.image_size = get_as<int>(v, key);
        else if (k == "clip_len") c.clip_len = get_as<int>(v, key);
        else if (k == "train_per_cell") c.train_per_cell = get_as<int>(v, key);
        else if (k == "test_per_cell") c.test_per_cell = get_as<int>(v, key);
        else if (k == "objects") c.objects = get_as<std::vector<std::string>>(v, key);
        else if (k == "actions") c.actions = get_as<std::vector<std::string>>(v, key);
        else if (k == "noise_sigma") c.noise_sigma = get_as<double>(v, key);
        else if (k == "jitter") c.jitter = get_as<double>(v, key);
        else if (k == "annotators") c.annotators = get_as<int>(v, key);
        else throw ConfigError("unknown config key '" + key + "'");
    }
}

void apply_model(ModelConfig& c, const json& j, const std::string& prefix) {
    expect_object(j, prefix);
    for (const auto& [k, v] : j.items()) {
        const std::string key = prefix + "." + k;
        if (k == "d") c.d = get_as<int>(v, key);
        else if (k == "variant") c.variant = get_as<std::string>(v, key);
        else if (k == "l2_pool_count_norm") c.l2_pool_count_norm = get_as<bool>(v, key);
        else throw ConfigError("unknown config key '" + key + "'");
    }
}

void apply_train(TrainSettings& c, const json& j, const std::string& prefix) {
    expect_object(j, prefix);
    for (const auto& [k, v] : j.items()) {
        const std::string key = prefix + "." + k;
        if (k == "lr") c.lr = get_as<double>(v, key);
        else if (k == "weight_decay") c.weight_decay = get_as<double>(v, key);
        else if (k == "batch_size") c.batch_size = get_as<int>(v, key);
        else if (k == "epochs") c.epochs = get_as<int>(v, key);
        else if (k == "chunk_len") c.chunk_len = get_as<int>(v, key);
        else if (k == "ant_loss") c.ant_loss = get_as<std::string>(v, key);
        else if (k == "triplet_margin") c.triplet_margin = get_as<double>(v, key);
        else if (k == "lambda_cls") c.lambda_cls = get_as<double>(v, key);
        else if (k == "lambda_ant") c.lambda_ant = get_as<double>(v, key);
        else if (k == "lambda_aux") c.lambda_aux = get_as<double>(v, key);
        else throw ConfigError("unknown config key '" + key + "'");
    }
}

void apply_metrics(MetricsConfig& c, const json& j, const std::string& prefix) {
    expect_object(j, prefix);
    for (const auto& [k, v] : j.items()) {
        const std::string key = prefix + "." + k;
        if (k == "kl_direction") c.kl_direction = get_as<std::string>(v, key);
        else if (k == "center_sigma_frac") c.center_sigma_frac = get_as<double>(v, key);
        else if (k == "gt_sigma_frac") c.gt_sigma_frac = get_as<double>(v, key);
        else if (k == "blur_sigma") c.blur_sigma = get_as<double>(v, key);
        else throw ConfigError("unknown config key '" + key + "'");
    }
}

void apply_root(RunConfig& cfg, const json& j) {
    expect_object(j, "<root>");
    for (const auto& [k, v] : j.items()) {
        if (k == "seed") cfg.seed = get_as<std::uint64_t>(v, "seed");
        else if (k == "data") apply_data(cfg.data, v, "data");
        else if (k == "model") apply_model(cfg.model, v, "model");
        else if (k == "train") apply_train(cfg.train, v, "train");
        else if (k == "metrics") apply_metrics(cfg.metrics, v, "metrics");
        else throw ConfigError("unknown config key '" + k + "'");
    }
}

void validate(const RunConfig& cfg) {
    variant_spec(cfg.model.variant);
    if (cfg.model.d < 2 || cfg.model.d % 2 != 0) throw ConfigError("model.d must be an even integer >= 2");
    if (cfg.train.ant_loss != "l2" && cfg.train.ant_loss != "triplet")
        throw ConfigError("train.ant_loss must be 'l2' or 'triplet'");
    if (cfg.train.ant_loss == "triplet" && cfg.train.triplet_margin <= 0)
        throw ConfigError("train.triplet_margin must be positive");
    if (cfg.metrics.kl_direction != "gt_pred" && cfg.metrics.kl_direction != "pred_gt")
        throw ConfigError("metrics.kl_direction must be 'gt_pred' or 'pred_gt'");
    if (cfg.train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (cfg.train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (cfg.train.chunk_len < 2) throw ConfigError("train.chunk_len must be >= 2");
    if (cfg.train.lr <= 0) throw ConfigError("train.lr must be positive");
    if (cfg.train.weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
    if (cfg.metrics.center_sigma_frac <= 0 || cfg.metrics.gt_sigma_frac <= 0)
        throw ConfigError("metrics sigma fractions must be positive");
    if (cfg.metrics.blur_sigma < 0) throw ConfigError("metrics.blur_sigma must be >= 0");
}

}  // namespace

VariantSpec variant_spec(const std::string& name) {
    if (name == "basic") return {false, false, false};
    if (name == "res") return {true, false, false};
    if (name == "l2") return {true, true, false};
    if (name == "full") return {true, true, true};
    throw ConfigError("model.variant must be one of basic, res, l2, full (got '" + name + "')");
}

nlohmann::ordered_json to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["seed"] = cfg.seed;
    j["data"] = {{"image_size", cfg.data.image_size},
                 {"clip_len", cfg.data.clip_len},
                 {"train_per_cell", cfg.data.train_per_cell},
                 {"test_per_cell", cfg.data.test_per_cell},
                 {"objects", cfg.data.objects},
                 {"actions", cfg.data.actions},
                 {"noise_sigma", cfg.data.noise_sigma},
                 {"jitter", cfg.data.jitter},
                 {"annotators", cfg.data.annotators}};
    j["model"] = {{"d", cfg.model.d},
                  {"variant", cfg.model.variant},
                  {"l2_pool_count_norm", cfg.model.l2_pool_count_norm}};
    j["train"] = {{"lr", cfg.train.lr},
                  {"weight_decay", cfg.train.weight_decay},
                  {"batch_size", cfg.train.batch_size},
                  {"epochs", cfg.train.epochs},
                  {"chunk_len", cfg.train.chunk_len},
                  {"ant_loss", cfg.train.ant_loss},
                  {"triplet_margin", cfg.train.triplet_margin},
                  {"lambda_cls", cfg.train.lambda_cls},
                  {"lambda_ant", cfg.train.lambda_ant},
                  {"lambda_aux", cfg.train.lambda_aux}};
    j["metrics"] = {{"kl_direction", cfg.metrics.kl_direction},
                    {"center_sigma_frac", cfg.metrics.center_sigma_frac},
                    {"gt_sigma_frac", cfg.metrics.gt_sigma_frac},
                    {"blur_sigma", cfg.metrics.blur_sigma}};
    return j;
}

RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig cfg;
    apply_root(cfg, j);
    validate(cfg);
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config file " + path.string() + ": " + e.what());
    }
    return parse_run_config(j);
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("override '" + ov + "' is not of the form key=value");
        const std::string path = ov.substr(0, eq);
        const std::string raw = ov.substr(eq + 1);
        nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;  // bare word: treat as string

        // Build the nested object for this dotted path, innermost first.
        nlohmann::json node = value;
        std::vector<std::string> parts;
        std::size_t start = 0;
        while (true) {
            const auto dot = path.find('.', start);
            parts.push_back(path.substr(start, dot == std::string::npos ? dot : dot - start));
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
            if (it->empty()) throw ConfigError("override '" + ov + "' has an empty key segment");
            nlohmann::json wrapped;
            wrapped[*it] = std::move(node);
            node = std::move(wrapped);
        }
        apply_root(cfg, node);
    }
    validate(cfg);
}

std::string canonical_config_dump(const RunConfig& cfg) {
    // Round-trip through the map-backed type sorts keys.
    return nlohmann::json::parse(to_json(cfg).dump()).dump();
}

std::string config_hash(const RunConfig& cfg) { return to_hex(fnv1a64(canonical_config_dump(cfg))); }

LossWeights effective_weights(const RunConfig& cfg) {
    LossWeights w;
    w.cls = cfg.train.lambda_cls;
    if (variant_spec(cfg.model.variant).ant_losses) {
        w.ant = cfg.train.lambda_ant;
        w.aux = cfg.train.lambda_aux;
    } else {
        w.ant = 0.0;
        w.aux = 0.0;
    }
    return w;
}

TrainConfig train_config_from(const RunConfig& cfg) {
    TrainConfig tc;
    tc.lr = cfg.train.lr;
    tc.weight_decay = cfg.train.weight_decay;
    tc.batch_size = cfg.train.batch_size;
    tc.epochs = cfg.train.epochs;
    tc.chunk_len = cfg.train.chunk_len;
    tc.seed = cfg.seed;
    tc.ant_mode = cfg.train.ant_loss == "triplet" ? AntMode::Triplet : AntMode::L2;
    tc.triplet_margin = cfg.train.triplet_margin;
    tc.weights = effective_weights(cfg);
    return tc;
}

HotspotModel<float> build_model(const RunConfig& cfg, Rng& rng) {
    const VariantSpec vs = variant_spec(cfg.model.variant);
    HotspotModel<float> model(default_encoder(cfg.model.d, vs.dilated), cfg.data.actions, cfg.data.objects,
                              vs.l2_pool, rng);
    model.l2_pool_count_norm = cfg.model.l2_pool_count_norm;
    return model;
}

}  // namespace htk
