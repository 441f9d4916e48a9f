#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dgdata/rng.hpp"
#include "dgdata/tensor.hpp"

namespace dgdata {

enum class Domain { Source = 0, Target = 1 };

/// One continuous sensor stream from a single user, already reduced to the
/// retained channels and rows with a defined activity.
struct RawRecording {
    std::string user_id;
    double sample_rate_hz = 0.0;
    std::vector<std::string> channel_names;
    std::vector<std::vector<double>> samples; // [T][channels]
    std::vector<int> activity;                // per-sample activity id

    int length() const { return static_cast<int>(samples.size()); }
    int channels() const { return static_cast<int>(channel_names.size()); }
};

struct WindowedSample {
    Tensor values; // [channels, W]
    Domain domain = Domain::Source;
    std::optional<int> activity;
    int seq_index = 0;     // start slot within the recording; gaps reveal discards
    int recording_id = 0;  // provenance across the whole dataset
    int uid = -1;          // assigned by the pipeline, unique per split
};

/// Training view of the target user: exposes everything except the label.
struct UnlabeledView {
    const WindowedSample* window = nullptr;

    const Tensor& values() const { return window->values; }
    int seq_index() const { return window->seq_index; }
    int recording_id() const { return window->recording_id; }
    int uid() const { return window->uid; }
};

struct DatasetSplit {
    std::vector<WindowedSample> source_train;            // labelled
    std::vector<WindowedSample> target_train;            // activity stripped
    std::vector<int> target_train_truth;                 // evaluation diagnostics only
    std::vector<WindowedSample> target_val;              // labelled, evaluation only
    std::vector<WindowedSample> target_test;             // labelled, evaluation only
    int num_classes = 0;
    std::vector<std::string> label_names;

    int n_source() const { return static_cast<int>(source_train.size()); }
    int n_target() const { return static_cast<int>(target_train.size()); }

    std::vector<UnlabeledView> target_train_view() const;
};

// --- Loading ------------------------------------------------------------------

struct DatasetInfo {
    std::vector<RawRecording> recordings; // grouped by user (stable order)
    std::vector<std::string> label_names;
    double sample_rate_hz = 0.0;
};

/// Schemas: "generic-csv" (manifest.json + per-user CSV), "oppt", "pamap2",
/// "dsads" (public dataset layouts, lower-right-arm accelerometer + gyroscope).
DatasetInfo load_dataset(const std::string& path, const std::string& schema_name);

/// Number of activity classes a schema declares.
int schema_num_classes(const std::string& schema_name);

// --- Windowing -----------------------------------------------------------------

int window_length(double window_seconds, double sample_rate_hz);
int window_stride(int window, double overlap);

/// Slice a recording into fixed windows. Windows that span more than one
/// activity are discarded; survivors carry the uniform activity inside them.
std::vector<WindowedSample> segment_windows(const RawRecording& rec, double window_seconds,
                                            double overlap, Domain domain);

// --- Normalization ---------------------------------------------------------------

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

/// Per-channel statistics; call with source training windows only.
ChannelStats compute_channel_stats(const std::vector<WindowedSample>& windows);

/// (x - mean) / std per channel, in place. Channels with zero spread pass
/// through unchanged.
void normalize_channels(std::vector<WindowedSample>& windows, const ChannelStats& stats);

// --- Target split -----------------------------------------------------------------

/// Stratified split of labelled target windows into validation and test parts.
/// A class with fewer than 2 windows is kept whole in test.
std::pair<std::vector<WindowedSample>, std::vector<WindowedSample>> split_target(
    const std::vector<WindowedSample>& windows, double val_fraction, uint64_t seed);

// --- Synthetic cross-user task -----------------------------------------------------

/// Generator for a desk-scale two-user dataset. Every activity is a cyclic
/// left-to-right Markov chain over Gaussian emission regimes; the target user
/// observes the same process through a fixed channel rotation, per-channel
/// gain, and state-duration dilation.
struct SynthConfig {
    int classes = 3;
    int states_per_class = 3;
    int channels = 6; // generic-csv interop expects the 6 declared sensor channels
    double sample_rate_hz = 16.0;
    double window_seconds = 2.0;
    double overlap = 0.5;
    int windows_per_user = 200;
    double val_fraction = 0.5;

    double regime_scale = 1.0;         // overall scale of the emission geometry
    double state_scatter = 0.9;        // spread of state regimes around their class center
    double noise_std = 0.35;           // within-regime sample noise
    double mean_state_duration = 48.0; // samples, source user

    double target_rotation_deg = 48.0; // applied within the class-center plane
    std::vector<double> target_gains = {1.6, 0.7, 1.25, 1.4, 0.8, 1.1}; // recycled if short
    double target_duration_dilation = 1.3;

    void validate() const;
};

struct RecordingStateTrace {
    std::string user_id;
    int class_id = 0;
    std::vector<int> states; // per-sample hidden state
};

struct SynthResult {
    DatasetSplit split;
    // Diagnostics: ground-truth per-window majority states, never used in training.
    std::vector<int> source_state_truth;
    std::vector<int> target_state_truth;
    std::vector<RecordingStateTrace> traces;
};

/// Raw recordings for both users (source first), with hidden state traces.
std::pair<std::vector<RawRecording>, std::vector<RecordingStateTrace>> synth_recordings(
    const SynthConfig& cfg, uint64_t seed);

/// Full pipeline: generate, window, normalize with source statistics, split target.
SynthResult synth_crossuser(const SynthConfig& cfg, uint64_t seed);

/// Orthogonal channel-mixing matrix built from Givens rotations of `angle_deg`.
std::vector<double> channel_mixing_matrix(int channels, double angle_deg);

/// Write recordings as a generic-csv dataset (manifest.json plus one CSV per user).
void write_generic_csv(const std::string& dir, const std::vector<RawRecording>& recordings,
                       const std::vector<std::string>& label_names, double sample_rate_hz);

/// Assemble a DatasetSplit from labelled recordings of two users.
DatasetSplit build_split(const DatasetInfo& info, const std::string& source_user,
                         const std::string& target_user, double window_seconds, double overlap,
                         double val_fraction, uint64_t split_seed);

} // namespace dgdata
