#pragma once

#include <vector>

#include "dgdata/rng.hpp"

namespace dgdata {

/// Lag coefficients from regressing each feature onto its p predecessors.
struct AttentionWeights {
    std::vector<double> beta; // beta[0] is lag 1
    double residual = 0.0;    // root mean squared fit residual

    int lags() const { return static_cast<int>(beta.size()); }
};

/// Chronologically ordered features of consecutive windows from one recording.
struct FeatureSequence {
    std::vector<std::vector<double>> features; // [T][D]
    std::vector<int> uids;                     // window identities, same order
    int recording_id = 0;
    bool from_source = true;

    int length() const { return static_cast<int>(features.size()); }
};

/// Pooled least squares over every sequence: each feature dimension is
/// regressed onto its own p lags, the per-dimension coefficient vectors are
/// averaged into one beta per lag. Normal equations with a small ridge keep
/// rank-deficient inputs (constant sequences) at the minimum-norm solution.
/// At least one sequence must be longer than p.
AttentionWeights fit_attention(const std::vector<FeatureSequence>& sequences, int p,
                               double ridge = 1e-8);

/// Blend each feature with its top_k most significant lags:
/// refined_t = (1-rho) h_t + rho * sum_i w_i h_{t-i}, where w are the selected
/// coefficients renormalized by total absolute value (signs kept). The first p
/// entries of each sequence pass through unrefined.
std::vector<FeatureSequence> refine_features(const std::vector<FeatureSequence>& sequences,
                                             const AttentionWeights& weights, int top_k,
                                             double rho);

/// Inputs for per-class temporal-state clustering, one entry per window.
struct StateAssignmentInput {
    int uid = 0;
    int class_label = -1; // -1 windows are skipped
    int recording_id = 0;
    int seq_index = 0;
    bool from_source = true;
    const std::vector<double>* feature = nullptr;
};

/// Per-class k-means over refined features pooled from both users, followed by
/// a width-3 median pass along each recording and canonical state ids ordered
/// by first chronological appearance in the source user. Returns one state per
/// input (-1 where class_label was -1). Deterministic given the seed and
/// independent of input order.
std::vector<int> assign_temporal_states(const std::vector<StateAssignmentInput>& windows,
                                        int states_per_class, uint64_t seed);

/// Joint (class, temporal state) label: class * states_per_class + state.
int composite_pseudo_label(int class_label, int state, int states_per_class);
/// Inverse of composite_pseudo_label.
std::pair<int, int> split_composite_label(int label, int states_per_class);

// Exposed for tests: k-means with deterministic k-means++ seeding.
std::vector<int> kmeans_assign(const std::vector<const std::vector<double>*>& points, int k,
                               Rng& rng, int max_iters = 50);

} // namespace dgdata
