#include "dgdata/cvae.hpp"

#include <iostream>

#include "dgdata/errors.hpp"

namespace dgdata {

void CvaeConfig::validate() const {
    if (feature_dim < 1) throw ConfigError("cvae: feature_dim must be >= 1");
    if (encoder_hidden < 1 || latent_dim < 1 || adv_hidden < 1) {
        throw ConfigError("cvae: layer widths must be >= 1");
    }
    if (num_classes < 1) throw ConfigError("cvae: num_classes must be >= 1");
    if (states_per_class < 1) throw ConfigError("cvae: states_per_class must be >= 1");
    if (var_target <= 0.0) throw ConfigError("cvae: var_target must be positive");
}

void LossWeights::validate() const {
    if (reconstruction < 0.0 || mean_variance < 0.0 || class_constraint < 0.0 ||
        domain_constraint < 0.0 || temporal_state < 0.0) {
        throw ConfigError("loss weights must be >= 0");
    }
}

namespace {
const char* kind_tag(ComponentKind k) {
    switch (k) {
        case ComponentKind::FineGrained: return "fine";
        case ComponentKind::TemporalRelation: return "temporal";
        case ComponentKind::ClassifierLearning: return "classifier";
    }
    return "?";
}
} // namespace

CvaeComponent::CvaeComponent(ComponentKind kind, const CvaeConfig& cfg, Rng& init)
    : kind_(kind), cfg_(cfg) {
    cfg_.validate();
    std::string tag = kind_tag(kind);
    enc_mean1_ = LinearLayer(tag + ".enc_mean1", cfg.feature_dim, cfg.encoder_hidden, init);
    enc_mean2_ = LinearLayer(tag + ".enc_mean2", cfg.encoder_hidden, cfg.latent_dim, init);
    enc_logvar1_ = LinearLayer(tag + ".enc_logvar1", cfg.feature_dim, cfg.encoder_hidden, init);
    enc_logvar2_ = LinearLayer(tag + ".enc_logvar2", cfg.encoder_hidden, cfg.latent_dim, init);
    dec1_ = LinearLayer(tag + ".dec1", cfg.latent_dim, cfg.encoder_hidden, init);
    dec2_ = LinearLayer(tag + ".dec2", cfg.encoder_hidden, cfg.feature_dim, init);

    switch (kind) {
        case ComponentKind::FineGrained:
            class_head_simple_.emplace(tag + ".composite_head", cfg.latent_dim,
                                       cfg.num_classes * cfg.states_per_class, init);
            domain_head_simple_.emplace(tag + ".domain_head", cfg.latent_dim, 2, init);
            break;
        case ComponentKind::TemporalRelation:
            state_head_.emplace(tag + ".state_head", cfg.latent_dim, cfg.states_per_class, init);
            domain_head_adv_.emplace(tag + ".domain_head", cfg.latent_dim, cfg.adv_hidden, 2, init);
            class_head_adv_.emplace(tag + ".class_head", cfg.latent_dim, cfg.adv_hidden,
                                    cfg.num_classes, init);
            break;
        case ComponentKind::ClassifierLearning:
            state_head_.emplace(tag + ".state_head", cfg.latent_dim, cfg.states_per_class, init);
            domain_head_adv_.emplace(tag + ".domain_head", cfg.latent_dim, cfg.adv_hidden, 2, init);
            class_head_simple_.emplace(tag + ".class_head", cfg.latent_dim, cfg.num_classes, init);
            break;
    }
}

Var CvaeComponent::encode_mean(Tape& tape, Var features) {
    return enc_mean2_.forward(tape, relu(enc_mean1_.forward(tape, features)));
}

Var CvaeComponent::encode_logvar(Tape& tape, Var features) {
    return enc_logvar2_.forward(tape, relu(enc_logvar1_.forward(tape, features)));
}

Var CvaeComponent::decode(Tape& tape, Var z) {
    return sigmoid(dec2_.forward(tape, relu(dec1_.forward(tape, z))));
}

Var CvaeComponent::class_logits(Tape& tape, Var z, bool train_mode) {
    if (class_head_simple_) return class_head_simple_->forward(tape, z);
    if (class_head_adv_) return class_head_adv_->forward(tape, z, train_mode);
    throw StateError("component has no class head");
}

Var CvaeComponent::domain_logits(Tape& tape, Var z, bool train_mode) {
    if (domain_head_simple_) return domain_head_simple_->forward(tape, z);
    if (domain_head_adv_) return domain_head_adv_->forward(tape, z, train_mode);
    throw StateError("component has no domain head");
}

Var CvaeComponent::state_logits(Tape& tape, Var z) {
    if (!state_head_) throw StateError("component has no temporal-state head");
    return state_head_->forward(tape, z);
}

bool CvaeComponent::trained() const { return enc_mean1_.weight.step > 0; }

void CvaeComponent::params(std::vector<Parameter*>& out) {
    enc_mean1_.params(out);
    enc_mean2_.params(out);
    enc_logvar1_.params(out);
    enc_logvar2_.params(out);
    dec1_.params(out);
    dec2_.params(out);
    if (class_head_simple_) class_head_simple_->params(out);
    if (class_head_adv_) class_head_adv_->params(out);
    if (state_head_) state_head_->params(out);
    if (domain_head_simple_) domain_head_simple_->params(out);
    if (domain_head_adv_) domain_head_adv_->params(out);
}

void CvaeComponent::buffers(NamedTensors& out) {
    if (class_head_adv_) class_head_adv_->buffers(out);
    if (domain_head_adv_) domain_head_adv_->buffers(out);
}

ComponentLossVars build_component_loss(Tape& tape, FeatureExtractor& extractor,
                                       CvaeComponent& component, const Batch& batch,
                                       const LossWeights& weights, double grl_lambda,
                                       Rng& sample_rng, FeatureRange& range, bool train_mode,
                                       GrlMode grl_mode, bool detach_adversarial_features) {
    weights.validate();
    int n = batch.size();
    if (n == 0) throw DataError("component loss: empty batch");
    if (static_cast<int>(batch.domains.size()) != n) {
        throw DimensionError("component loss: one domain label per row required");
    }

    Var x = tape.leaf(batch.inputs, false);
    Var features = extractor.forward(tape, x, train_mode);

    if (train_mode) range.update(tape.value(features));
    Var recon_target = squash01(features, range);

    Var mean = component.encode_mean(tape, features);
    Var logvar = component.encode_logvar(tape, features);
    Tensor eps(tape.value(mean).shape);
    for (double& e : eps.data) e = sample_rng.normal();
    Var z = reparam_sample_given(mean, logvar, eps);
    Var recon = component.decode(tape, z);

    // Same sampled latent, recomputed from detached features: forward values
    // are identical, but the adversarial gradient stops at the encoder.
    Var z_adv = z;
    if (detach_adversarial_features) {
        Var frozen = tape.leaf(tape.value(features), false);
        Var mean_adv = component.encode_mean(tape, frozen);
        Var logvar_adv = component.encode_logvar(tape, frozen);
        z_adv = reparam_sample_given(mean_adv, logvar_adv, eps);
    }

    ComponentLossVars vars;
    vars.reconstruction = mse(recon, recon_target);
    Var zero_mean = tape.leaf(Tensor(tape.value(mean).shape), false);
    vars.mean_variance = add(mse(mean, zero_mean),
                             gaussian_kl_to_var(logvar, component.config().var_target));

    auto reversed_latent = [&]() {
        return grl_mode == GrlMode::Apply ? grad_reverse(z_adv, grl_lambda) : z_adv;
    };

    switch (component.kind()) {
        case ComponentKind::FineGrained: {
            if (static_cast<int>(batch.composite_labels.size()) != n) {
                throw StateError("fine-grained loss: composite pseudo labels missing");
            }
            vars.class_constraint =
                softmax_cross_entropy(component.class_logits(tape, z, train_mode),
                                      batch.composite_labels);
            // discriminative (unreversed) head; z_adv gates it off the extractor
            vars.domain_constraint = softmax_cross_entropy(
                component.domain_logits(tape, z_adv, train_mode), batch.domains);
            vars.has_temporal_state = false;
            break;
        }
        case ComponentKind::TemporalRelation: {
            if (static_cast<int>(batch.state_labels.size()) != n) {
                throw StateError("temporal loss: state pseudo labels missing");
            }
            vars.temporal_state =
                softmax_cross_entropy(component.state_logits(tape, z), batch.state_labels);
            vars.domain_constraint = softmax_cross_entropy(
                component.domain_logits(tape, reversed_latent(), train_mode), batch.domains);
            vars.class_constraint = softmax_cross_entropy(
                component.class_logits(tape, reversed_latent(), train_mode), batch.class_labels);
            vars.has_temporal_state = true;
            break;
        }
        case ComponentKind::ClassifierLearning: {
            if (static_cast<int>(batch.state_labels.size()) != n) {
                throw StateError("classifier loss: state pseudo labels missing");
            }
            bool any_source = false;
            for (int d : batch.domains) any_source |= d == 0;
            if (!any_source) {
                throw StateError("classifier loss: batch has no source windows");
            }
            vars.temporal_state =
                softmax_cross_entropy(component.state_logits(tape, z), batch.state_labels);
            vars.domain_constraint = softmax_cross_entropy(
                component.domain_logits(tape, reversed_latent(), train_mode), batch.domains);
            vars.class_constraint =
                softmax_cross_entropy(component.class_logits(tape, z, train_mode),
                                      batch.source_class_labels);
            vars.has_temporal_state = true;
            break;
        }
    }

    Var total = add(scale(vars.reconstruction, weights.reconstruction),
                    scale(vars.mean_variance, weights.mean_variance));
    total = add(total, scale(vars.class_constraint, weights.class_constraint));
    total = add(total, scale(vars.domain_constraint, weights.domain_constraint));
    if (vars.has_temporal_state) {
        total = add(total, scale(vars.temporal_state, weights.temporal_state));
    }
    vars.total = total;
    return vars;
}

LossBreakdown read_breakdown(const Tape& tape, const ComponentLossVars& vars) {
    LossBreakdown b;
    b.reconstruction = tape.value(vars.reconstruction).data[0];
    b.mean_variance = tape.value(vars.mean_variance).data[0];
    b.class_constraint = tape.value(vars.class_constraint).data[0];
    b.domain_constraint = tape.value(vars.domain_constraint).data[0];
    b.has_temporal_state = vars.has_temporal_state;
    if (vars.has_temporal_state) b.temporal_state = tape.value(vars.temporal_state).data[0];
    b.total = tape.value(vars.total).data[0];
    return b;
}

TargetPrediction classify_target(FeatureExtractor& extractor, CvaeComponent& classifier,
                                 const Tensor& windows) {
    if (classifier.kind() != ComponentKind::ClassifierLearning) {
        throw StateError("classify_target requires the classifier component");
    }
    if (!classifier.trained()) {
        std::cerr << "warning: classify_target on untrained parameters\n";
    }
    Tape tape;
    Var x = tape.leaf(windows, false);
    Var features = extractor.forward(tape, x, /*train_mode=*/false);
    Var mean = classifier.encode_mean(tape, features);
    Var logits = classifier.class_logits(tape, mean, /*train_mode=*/false);

    TargetPrediction pred;
    pred.probabilities = softmax_rows(tape.value(logits));
    int n = pred.probabilities.dim(0);
    int classes = pred.probabilities.dim(1);
    pred.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        int best = 0;
        for (int j = 1; j < classes; ++j) {
            if (pred.probabilities(i, j) > pred.probabilities(i, best)) best = j;
        }
        pred.labels[static_cast<size_t>(i)] = best;
    }
    return pred;
}

} // namespace dgdata
