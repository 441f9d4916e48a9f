#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dgdata/attention.hpp"
#include "dgdata/cvae.hpp"
#include "dgdata/data.hpp"
#include "dgdata/features.hpp"

namespace dgdata {

struct TrainConfig {
    int epochs = 100;
    int batch_size = 32;
    AdamConfig adam; // lr 1e-3, beta1 0.2, beta2 0.999, weight decay 5e-4
    /// Exponential decay of the learning rate over training progress; the
    /// final epoch runs at lr * lr_end_ratio. 1.0 keeps it constant.
    double lr_end_ratio = 1.0;
    /// Keep a snapshot of the parameters at the best target-validation
    /// accuracy; inference then uses that snapshot (never target-test).
    bool select_best_on_val = true;

    FeatureExtractorConfig extractor; // in_channels/window overwritten from the data
    int encoder_hidden = 64;
    int latent_dim = 64;
    int adv_hidden = 32;
    double var_target = 1.0;

    LossWeights fine_weights;
    LossWeights temporal_weights;
    LossWeights classifier_weights;

    int attention_lags = 4;
    int attention_top_k = 2;
    double attention_rho = 0.5;
    int states_per_class = 3;

    int warmup_epochs = 1; // epochs before target pseudo-class labels join the losses
    uint64_t seed = 17;

    void validate() const;
};

/// Adversarial ramp for the reversed-gradient coefficient;
/// 2 / (1 + exp(-10 progress)) - 1 over training progress in [0,1].
double grl_lambda(double progress);

struct EpochStats {
    int epoch = 0;
    LossBreakdown fine;
    LossBreakdown temporal;
    LossBreakdown classifier;
    double val_accuracy = 0.0;
    double state_churn = 0.0;
    double lambda = 0.0;
    std::vector<double> attention_beta;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
};

/// Everything inference needs.
struct DgdataModel {
    FeatureExtractor extractor;
    CvaeComponent fine;
    CvaeComponent temporal;
    CvaeComponent classifier;
    FeatureRange range;
};

/// Per-window pseudo labels over the concatenated (source, target) training
/// windows, refreshed every epoch.
struct PseudoLabelState {
    std::vector<int> state;              // temporal state per window
    std::vector<int> prev_state;         // previous epoch, for churn
    std::vector<int> target_pseudo_class; // per target window, -1 until refreshed
    int epoch = 0;
};

/// Iterative training loop: per epoch the fine-grained component sweeps first,
/// then the temporal component sweeps and refreshes the attention fit and
/// temporal-state labels, then the classifier sweeps under the current
/// reversal coefficient. Target pseudo-class labels refresh from the
/// classifier after the warmup epoch.
class Trainer {
public:
    /// `split` must outlive the trainer.
    Trainer(const TrainConfig& cfg, const DatasetSplit& split);
    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    /// Runs epochs until the configured total; returns the history.
    const TrainHistory& run();
    void run_one_epoch();

    /// Invoked after every completed epoch (checkpointing, label dumps).
    std::function<void(Trainer&)> on_epoch;

    int epoch() const { return epoch_; }
    const TrainConfig& config() const { return cfg_; }
    const TrainHistory& history() const { return history_; }
    DgdataModel& model() { return model_; }
    const DgdataModel& model() const { return model_; }
    /// Model to use for inference: the best-validation snapshot when
    /// select_best_on_val is set and at least one epoch finished, else the
    /// live parameters.
    DgdataModel& selected_model();
    double best_val_accuracy() const { return best_val_; }
    int best_epoch() const { return best_epoch_; }
    const PseudoLabelState& pseudo_labels() const { return pseudo_; }

    /// One row per training window of the current pseudo-label assignment:
    /// (uid, class or -1, state, composite or -1).
    struct LabelRow {
        int uid;
        int class_label;
        int state;
        int composite;
    };
    std::vector<LabelRow> label_dump() const;

    // Checkpoint plumbing.
    std::vector<Parameter*> all_params();
    NamedTensors all_buffers();
    std::vector<Parameter*> best_params();
    NamedTensors best_buffers();
    FeatureRange& best_range() { return best_model_.range; }
    FeatureRange& range() { return model_.range; }
    PseudoLabelState& pseudo_state() { return pseudo_; }
    Rng& train_rng() { return train_rng_; }
    void set_epoch(int e) { epoch_ = e; }
    void set_best(double val, int epoch) {
        best_val_ = val;
        best_epoch_ = epoch;
    }

private:
    struct WindowRef {
        const WindowedSample* window;
        int class_label; // true label for source, -1 for target
        bool source;
    };

    Batch assemble_batch(const std::vector<int>& rows) const;
    LossBreakdown sweep_component(CvaeComponent& component, Adam& optimizer, double lambda_value,
                                  bool update_extractor, bool detach_adversarial);
    void refresh_states_and_attention(EpochStats& stats);
    void refresh_target_pseudo_classes();
    double validation_accuracy();
    std::vector<std::vector<double>> all_train_features();
    int class_label_of(int row) const; // true or pseudo, -1 if unknown

    TrainConfig cfg_;
    const DatasetSplit* split_;
    std::vector<WindowRef> windows_; // source block then target block
    int n_source_ = 0;
    int n_target_ = 0;

    DgdataModel model_;
    DgdataModel best_model_;
    double best_val_ = -1.0;
    int best_epoch_ = 0;
    Adam opt_extractor_;
    Adam opt_fine_;
    Adam opt_temporal_;
    Adam opt_classifier_;

    PseudoLabelState pseudo_;
    Rng train_rng_;
    TrainHistory history_;
    int epoch_ = 0;
};

} // namespace dgdata
