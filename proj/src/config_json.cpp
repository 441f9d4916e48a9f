#include "dgdata/config_json.hpp"

#include <fstream>
#include <set>

#include "dgdata/errors.hpp"

using nlohmann::json;

namespace dgdata {

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(std::string("config: bad value for '") + key + "'");
        }
    }
}

json weights_to_json(const LossWeights& w) {
    return json{{"reconstruction", w.reconstruction},
                {"mean_variance", w.mean_variance},
                {"class_constraint", w.class_constraint},
                {"domain_constraint", w.domain_constraint},
                {"temporal_state", w.temporal_state}};
}

LossWeights weights_from_json(const json& j, const std::string& where) {
    reject_unknown_keys(j, {"reconstruction", "mean_variance", "class_constraint",
                            "domain_constraint", "temporal_state"},
                        where);
    LossWeights w;
    read_if(j, "reconstruction", w.reconstruction);
    read_if(j, "mean_variance", w.mean_variance);
    read_if(j, "class_constraint", w.class_constraint);
    read_if(j, "domain_constraint", w.domain_constraint);
    read_if(j, "temporal_state", w.temporal_state);
    return w;
}

} // namespace

json train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["adam"] = json{{"lr", cfg.adam.lr},
                     {"beta1", cfg.adam.beta1},
                     {"beta2", cfg.adam.beta2},
                     {"eps", cfg.adam.eps},
                     {"weight_decay", cfg.adam.weight_decay}};
    j["lr_end_ratio"] = cfg.lr_end_ratio;
    j["select_best_on_val"] = cfg.select_best_on_val;
    j["extractor"] = json{{"conv1_channels", cfg.extractor.conv1_channels},
                          {"conv1_kernel", cfg.extractor.conv1_kernel},
                          {"pool1", cfg.extractor.pool1},
                          {"conv2_channels", cfg.extractor.conv2_channels},
                          {"conv2_kernel", cfg.extractor.conv2_kernel},
                          {"pool2", cfg.extractor.pool2}};
    j["encoder_hidden"] = cfg.encoder_hidden;
    j["latent_dim"] = cfg.latent_dim;
    j["adv_hidden"] = cfg.adv_hidden;
    j["var_target"] = cfg.var_target;
    j["fine_weights"] = weights_to_json(cfg.fine_weights);
    j["temporal_weights"] = weights_to_json(cfg.temporal_weights);
    j["classifier_weights"] = weights_to_json(cfg.classifier_weights);
    j["attention"] = json{{"lags", cfg.attention_lags},
                          {"top_k", cfg.attention_top_k},
                          {"rho", cfg.attention_rho}};
    j["states_per_class"] = cfg.states_per_class;
    j["warmup_epochs"] = cfg.warmup_epochs;
    j["seed"] = cfg.seed;
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    reject_unknown_keys(j, {"epochs", "batch_size", "adam", "lr_end_ratio", "select_best_on_val",
                            "extractor", "encoder_hidden", "latent_dim", "adv_hidden",
                            "var_target", "fine_weights", "temporal_weights",
                            "classifier_weights", "attention", "states_per_class",
                            "warmup_epochs", "seed"},
                        "train config");
    TrainConfig cfg;
    read_if(j, "epochs", cfg.epochs);
    read_if(j, "batch_size", cfg.batch_size);
    read_if(j, "lr_end_ratio", cfg.lr_end_ratio);
    read_if(j, "select_best_on_val", cfg.select_best_on_val);
    if (j.contains("adam")) {
        const json& a = j.at("adam");
        reject_unknown_keys(a, {"lr", "beta1", "beta2", "eps", "weight_decay"}, "adam");
        read_if(a, "lr", cfg.adam.lr);
        read_if(a, "beta1", cfg.adam.beta1);
        read_if(a, "beta2", cfg.adam.beta2);
        read_if(a, "eps", cfg.adam.eps);
        read_if(a, "weight_decay", cfg.adam.weight_decay);
    }
    if (j.contains("extractor")) {
        const json& e = j.at("extractor");
        reject_unknown_keys(e, {"conv1_channels", "conv1_kernel", "pool1", "conv2_channels",
                                "conv2_kernel", "pool2"},
                            "extractor");
        read_if(e, "conv1_channels", cfg.extractor.conv1_channels);
        read_if(e, "conv1_kernel", cfg.extractor.conv1_kernel);
        read_if(e, "pool1", cfg.extractor.pool1);
        read_if(e, "conv2_channels", cfg.extractor.conv2_channels);
        read_if(e, "conv2_kernel", cfg.extractor.conv2_kernel);
        read_if(e, "pool2", cfg.extractor.pool2);
    }
    read_if(j, "encoder_hidden", cfg.encoder_hidden);
    read_if(j, "latent_dim", cfg.latent_dim);
    read_if(j, "adv_hidden", cfg.adv_hidden);
    read_if(j, "var_target", cfg.var_target);
    if (j.contains("fine_weights")) cfg.fine_weights = weights_from_json(j.at("fine_weights"), "fine_weights");
    if (j.contains("temporal_weights")) {
        cfg.temporal_weights = weights_from_json(j.at("temporal_weights"), "temporal_weights");
    }
    if (j.contains("classifier_weights")) {
        cfg.classifier_weights = weights_from_json(j.at("classifier_weights"), "classifier_weights");
    }
    if (j.contains("attention")) {
        const json& a = j.at("attention");
        reject_unknown_keys(a, {"lags", "top_k", "rho"}, "attention");
        read_if(a, "lags", cfg.attention_lags);
        read_if(a, "top_k", cfg.attention_top_k);
        read_if(a, "rho", cfg.attention_rho);
    }
    read_if(j, "states_per_class", cfg.states_per_class);
    read_if(j, "warmup_epochs", cfg.warmup_epochs);
    read_if(j, "seed", cfg.seed);
    return cfg;
}

void JobConfig::validate() const {
    train.validate();
    if (window_seconds <= 0.0) throw ConfigError("config: window_seconds must be positive");
    if (overlap < 0.0 || overlap >= 1.0) throw ConfigError("config: overlap must be in [0,1)");
    if (val_fraction <= 0.0 || val_fraction >= 1.0) {
        throw ConfigError("config: val_fraction must be in (0,1)");
    }
}

json job_config_to_json(const JobConfig& cfg) {
    json j = train_config_to_json(cfg.train);
    j["window_seconds"] = cfg.window_seconds;
    j["overlap"] = cfg.overlap;
    j["val_fraction"] = cfg.val_fraction;
    j["schema"] = cfg.schema;
    return j;
}

JobConfig job_config_from_json(const json& j) {
    JobConfig cfg;
    json train_part = j;
    for (const char* key : {"window_seconds", "overlap", "val_fraction", "schema"}) {
        train_part.erase(key);
    }
    cfg.train = train_config_from_json(train_part);
    read_if(j, "window_seconds", cfg.window_seconds);
    read_if(j, "overlap", cfg.overlap);
    read_if(j, "val_fraction", cfg.val_fraction);
    read_if(j, "schema", cfg.schema);
    return cfg;
}

JobConfig load_job_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse failure: " + std::string(e.what()));
    }
    JobConfig cfg = job_config_from_json(j);
    cfg.validate();
    return cfg;
}

json synth_config_to_json(const SynthConfig& cfg) {
    json j;
    j["classes"] = cfg.classes;
    j["states_per_class"] = cfg.states_per_class;
    j["channels"] = cfg.channels;
    j["sample_rate_hz"] = cfg.sample_rate_hz;
    j["window_seconds"] = cfg.window_seconds;
    j["overlap"] = cfg.overlap;
    j["windows_per_user"] = cfg.windows_per_user;
    j["val_fraction"] = cfg.val_fraction;
    j["regime_scale"] = cfg.regime_scale;
    j["state_scatter"] = cfg.state_scatter;
    j["noise_std"] = cfg.noise_std;
    j["mean_state_duration"] = cfg.mean_state_duration;
    j["target_rotation_deg"] = cfg.target_rotation_deg;
    j["target_gains"] = cfg.target_gains;
    j["target_duration_dilation"] = cfg.target_duration_dilation;
    return j;
}

SynthConfig synth_config_from_json(const json& j) {
    reject_unknown_keys(j, {"classes", "states_per_class", "channels", "sample_rate_hz",
                            "window_seconds", "overlap", "windows_per_user", "val_fraction",
                            "regime_scale", "state_scatter", "noise_std", "mean_state_duration",
                            "target_rotation_deg", "target_gains", "target_duration_dilation"},
                        "synth config");
    SynthConfig cfg;
    read_if(j, "classes", cfg.classes);
    read_if(j, "states_per_class", cfg.states_per_class);
    read_if(j, "channels", cfg.channels);
    read_if(j, "sample_rate_hz", cfg.sample_rate_hz);
    read_if(j, "window_seconds", cfg.window_seconds);
    read_if(j, "overlap", cfg.overlap);
    read_if(j, "windows_per_user", cfg.windows_per_user);
    read_if(j, "val_fraction", cfg.val_fraction);
    read_if(j, "regime_scale", cfg.regime_scale);
    read_if(j, "state_scatter", cfg.state_scatter);
    read_if(j, "noise_std", cfg.noise_std);
    read_if(j, "mean_state_duration", cfg.mean_state_duration);
    read_if(j, "target_rotation_deg", cfg.target_rotation_deg);
    read_if(j, "target_gains", cfg.target_gains);
    read_if(j, "target_duration_dilation", cfg.target_duration_dilation);
    cfg.validate();
    return cfg;
}

} // namespace dgdata
