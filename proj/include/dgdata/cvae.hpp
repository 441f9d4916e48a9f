#pragma once

#include <optional>
#include <vector>

#include "dgdata/features.hpp"
#include "dgdata/nn.hpp"

namespace dgdata {

/// The three adversarially trained generative components share one structure:
/// encoder mean/log-variance heads, reparameterized sampling, a sigmoid
/// decoder, and constraint heads that differ per role.
enum class ComponentKind {
    FineGrained,        // composite class-state + domain constraints, no reversal
    TemporalRelation,   // temporal-state constraint; domain and class heads reversed
    ClassifierLearning, // temporal-state + source-class constraints; domain head reversed
};

struct CvaeConfig {
    int feature_dim = 0;
    int encoder_hidden = 64;
    int latent_dim = 64;
    int adv_hidden = 32;
    int num_classes = 0;
    int states_per_class = 3;
    double var_target = 1.0;

    void validate() const;
};

struct LossWeights {
    double reconstruction = 1.0;
    double mean_variance = 10.0;
    double class_constraint = 30.0;
    double domain_constraint = 1.0;
    double temporal_state = 10.0;

    void validate() const;
};

/// Per-term scalar losses plus the weighted total, in accumulation order:
/// reconstruction, mean-variance, class, domain, temporal-state.
struct LossBreakdown {
    double reconstruction = 0.0;
    double mean_variance = 0.0;
    double class_constraint = 0.0;
    double domain_constraint = 0.0;
    double temporal_state = 0.0;
    double total = 0.0;
    bool has_temporal_state = false;
};

/// Graph handles for every loss term; tests can backpropagate a single term.
struct ComponentLossVars {
    Var reconstruction;
    Var mean_variance;
    Var class_constraint;
    Var domain_constraint;
    Var temporal_state;
    Var total;
    bool has_temporal_state = false;
};

/// One training minibatch. Label vectors use -1 for "not available"; rows so
/// marked are excluded from the corresponding cross-entropy.
struct Batch {
    Tensor inputs;                        // [n, ch, W]
    std::vector<int> domains;             // 0 source, 1 target
    std::vector<int> class_labels;        // true for source, pseudo for target
    std::vector<int> source_class_labels; // true for source, -1 for target
    std::vector<int> state_labels;        // temporal-state pseudo labels
    std::vector<int> composite_labels;    // class * K + state

    int size() const { return inputs.rank() > 0 ? inputs.dim(0) : 0; }
};

class CvaeComponent {
public:
    CvaeComponent() = default;
    CvaeComponent(ComponentKind kind, const CvaeConfig& cfg, Rng& init);

    Var encode_mean(Tape& tape, Var features);
    Var encode_logvar(Tape& tape, Var features);
    Var decode(Tape& tape, Var z);

    /// Pre-softmax logits of a constraint head. Simple heads are one linear
    /// map; adversarial heads are linear -> batch norm -> ReLU -> linear fed
    /// through gradient reversal by the loss builder.
    Var class_logits(Tape& tape, Var z, bool train_mode);
    Var domain_logits(Tape& tape, Var z, bool train_mode);
    Var state_logits(Tape& tape, Var z);

    ComponentKind kind() const { return kind_; }
    const CvaeConfig& config() const { return cfg_; }
    bool has_state_head() const { return state_head_.has_value(); }
    bool trained() const;

    void params(std::vector<Parameter*>& out);
    void buffers(NamedTensors& out);

private:
    ComponentKind kind_ = ComponentKind::FineGrained;
    CvaeConfig cfg_;
    LinearLayer enc_mean1_, enc_mean2_;
    LinearLayer enc_logvar1_, enc_logvar2_;
    LinearLayer dec1_, dec2_;
    std::optional<LinearLayer> class_head_simple_;
    std::optional<DeepHead> class_head_adv_;
    std::optional<LinearLayer> state_head_;
    std::optional<LinearLayer> domain_head_simple_;
    std::optional<DeepHead> domain_head_adv_;
};

enum class GrlMode { Apply, Bypass };

/// Assemble the full component loss on the tape. `grl_lambda` scales the
/// reversed gradient of the adversarial heads (ignored by the fine-grained
/// component, which has none). With `detach_adversarial_features` the
/// adversarial heads read an identically-valued latent recomputed from
/// detached features, so their reversed gradients reach the component's
/// encoder but not the shared extractor.
ComponentLossVars build_component_loss(Tape& tape, FeatureExtractor& extractor,
                                       CvaeComponent& component, const Batch& batch,
                                       const LossWeights& weights, double grl_lambda,
                                       Rng& sample_rng, FeatureRange& range, bool train_mode,
                                       GrlMode grl_mode = GrlMode::Apply,
                                       bool detach_adversarial_features = false);

LossBreakdown read_breakdown(const Tape& tape, const ComponentLossVars& vars);

/// Deterministic inference path: feature extractor in eval mode, latent mean
/// (no sampling), source-class head, softmax.
struct TargetPrediction {
    std::vector<int> labels;
    Tensor probabilities; // [n, C]
};

TargetPrediction classify_target(FeatureExtractor& extractor, CvaeComponent& classifier,
                                 const Tensor& windows);

} // namespace dgdata
