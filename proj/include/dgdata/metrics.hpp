#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgdata/trainer.hpp"

namespace dgdata {

/// True-by-predicted count table; rows are ground truth.
struct ConfusionMatrix {
    int classes = 0;
    std::vector<long long> counts;

    explicit ConfusionMatrix(int c = 0)
        : classes(c), counts(static_cast<size_t>(c) * static_cast<size_t>(c), 0) {}

    long long& at(int truth, int pred) {
        return counts[static_cast<size_t>(truth) * classes + pred];
    }
    long long at(int truth, int pred) const {
        return counts[static_cast<size_t>(truth) * classes + pred];
    }
    long long total() const;
    long long trace() const;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& truths,
                                 int classes);

struct Metrics {
    double accuracy = 0.0;
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<long long> support;
    ConfusionMatrix confusion;
};

Metrics metrics_from_confusion(const ConfusionMatrix& cm);

/// Deterministic batch inference over labelled windows. Worker threads are
/// capped by the DGDATA_THREADS environment variable; the result does not
/// depend on the thread count.
Metrics evaluate(DgdataModel& model, const std::vector<WindowedSample>& windows, int num_classes);

/// Sanity floor: the same feature extractor with a plain linear classifier,
/// trained on source windows only, evaluated on target_test.
Metrics source_only_baseline(const TrainConfig& cfg, const DatasetSplit& split);

// --- report files ------------------------------------------------------------

void write_metrics_json(const std::string& path, const Metrics& metrics,
                        const std::vector<std::string>& label_names);
Metrics read_metrics_json(const std::string& path);
void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm,
                         const std::vector<std::string>& label_names);
void write_history_csv(const std::string& path, const TrainHistory& history);
void write_history_json(const std::string& path, const TrainHistory& history);
void write_attention_csv(const std::string& path, const TrainHistory& history);

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL);
uint64_t dataset_digest(const DatasetSplit& split);

void write_manifest_json(const std::string& path, const nlohmann::json& config,
                         uint64_t data_digest, uint64_t seed, double wall_clock_sec);

int worker_thread_cap();

} // namespace dgdata
