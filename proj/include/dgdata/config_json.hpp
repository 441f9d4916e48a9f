#pragma once

#include <string>

#include <json.hpp>

#include "dgdata/data.hpp"
#include "dgdata/trainer.hpp"

namespace dgdata {

/// Everything one CLI run needs: training hyperparameters plus the windowing
/// protocol applied to the raw recordings.
struct JobConfig {
    TrainConfig train;
    double window_seconds = 3.0;
    double overlap = 0.5;
    double val_fraction = 0.5;
    std::string schema = "generic-csv";

    void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json job_config_to_json(const JobConfig& cfg);
JobConfig job_config_from_json(const nlohmann::json& j);
JobConfig load_job_config(const std::string& path);

nlohmann::json synth_config_to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

} // namespace dgdata
