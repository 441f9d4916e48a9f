#include "dgdata/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>

#include "dgdata/errors.hpp"

namespace dgdata {

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 2 || batch_size % 2 != 0) {
        throw ConfigError("train: batch_size must be even and >= 2 (batches are domain balanced)");
    }
    adam.validate();
    fine_weights.validate();
    temporal_weights.validate();
    classifier_weights.validate();
    if (encoder_hidden < 1 || latent_dim < 1 || adv_hidden < 1) {
        throw ConfigError("train: network widths must be >= 1");
    }
    if (var_target <= 0.0) throw ConfigError("train: var_target must be positive");
    if (attention_lags < 1) throw ConfigError("train: attention_lags must be >= 1");
    if (attention_top_k < 1 || attention_top_k > attention_lags) {
        throw ConfigError("train: attention_top_k must be in [1, attention_lags]");
    }
    if (attention_rho < 0.0 || attention_rho > 1.0) {
        throw ConfigError("train: attention_rho must be in [0,1]");
    }
    if (states_per_class < 1) throw ConfigError("train: states_per_class must be >= 1");
    if (warmup_epochs < 0) throw ConfigError("train: warmup_epochs must be >= 0");
    if (lr_end_ratio <= 0.0 || lr_end_ratio > 1.0) {
        throw ConfigError("train: lr_end_ratio must be in (0,1]");
    }
}

double grl_lambda(double progress) {
    if (progress < 0.0 || progress > 1.0) throw ConfigError("grl_lambda: progress must be in [0,1]");
    return 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0;
}

namespace {

CvaeConfig component_config(const TrainConfig& cfg, int feature_dim, int num_classes) {
    CvaeConfig c;
    c.feature_dim = feature_dim;
    c.encoder_hidden = cfg.encoder_hidden;
    c.latent_dim = cfg.latent_dim;
    c.adv_hidden = cfg.adv_hidden;
    c.num_classes = num_classes;
    c.states_per_class = cfg.states_per_class;
    c.var_target = cfg.var_target;
    return c;
}

} // namespace

Trainer::Trainer(const TrainConfig& cfg, const DatasetSplit& split) : cfg_(cfg), split_(&split) {
    cfg_.validate();
    if (split.source_train.empty() || split.target_train.empty()) {
        throw DataError("train: both source and target training windows are required");
    }
    if (split.num_classes < 1) throw DataError("train: split declares no classes");

    const Tensor& first = split.source_train.front().values;
    cfg_.extractor.in_channels = first.dim(0);
    cfg_.extractor.window = first.dim(1);
    cfg_.extractor.validate();

    for (const auto& w : split.source_train) {
        if (!w.activity.has_value()) throw DataError("train: unlabelled source window");
        if (*w.activity < 0 || *w.activity >= split.num_classes) {
            throw LabelError("train: source label outside declared classes");
        }
        windows_.push_back(WindowRef{&w, *w.activity, true});
    }
    n_source_ = static_cast<int>(windows_.size());
    for (const auto& w : split.target_train) {
        windows_.push_back(WindowRef{&w, -1, false});
    }
    n_target_ = static_cast<int>(windows_.size()) - n_source_;

    Rng master(cfg_.seed);
    Rng init_rng = master.fork(101);
    train_rng_ = master.fork(202);

    int feature_dim = cfg_.extractor.feature_dim();
    CvaeConfig comp_cfg = component_config(cfg_, feature_dim, split.num_classes);
    model_.extractor = FeatureExtractor(cfg_.extractor, init_rng);
    model_.fine = CvaeComponent(ComponentKind::FineGrained, comp_cfg, init_rng);
    model_.temporal = CvaeComponent(ComponentKind::TemporalRelation, comp_cfg, init_rng);
    model_.classifier = CvaeComponent(ComponentKind::ClassifierLearning, comp_cfg, init_rng);

    std::vector<Parameter*> fx_params, fine_params, temporal_params, classifier_params;
    model_.extractor.params(fx_params);
    model_.fine.params(fine_params);
    model_.temporal.params(temporal_params);
    model_.classifier.params(classifier_params);
    opt_extractor_ = Adam(cfg_.adam, fx_params);
    opt_fine_ = Adam(cfg_.adam, fine_params);
    opt_temporal_ = Adam(cfg_.adam, temporal_params);
    opt_classifier_ = Adam(cfg_.adam, classifier_params);

    // Every temporal-state label starts at zero.
    pseudo_.state.assign(windows_.size(), 0);
    pseudo_.prev_state.assign(windows_.size(), 0);
    pseudo_.target_pseudo_class.assign(static_cast<size_t>(n_target_), -1);
    pseudo_.epoch = 0;

    best_model_ = model_;
}

int Trainer::class_label_of(int row) const {
    const WindowRef& ref = windows_[static_cast<size_t>(row)];
    if (ref.source) return ref.class_label;
    return pseudo_.target_pseudo_class[static_cast<size_t>(row - n_source_)];
}

Batch Trainer::assemble_batch(const std::vector<int>& rows) const {
    std::vector<const WindowedSample*> ptrs;
    ptrs.reserve(rows.size());
    for (int r : rows) ptrs.push_back(windows_[static_cast<size_t>(r)].window);

    Batch batch;
    batch.inputs = stack_windows(ptrs);
    for (int r : rows) {
        const WindowRef& ref = windows_[static_cast<size_t>(r)];
        int cls = class_label_of(r);
        int state = pseudo_.state[static_cast<size_t>(r)];
        batch.domains.push_back(ref.source ? 0 : 1);
        batch.class_labels.push_back(cls);
        batch.source_class_labels.push_back(ref.source ? ref.class_label : -1);
        batch.state_labels.push_back(state);
        batch.composite_labels.push_back(
            cls < 0 ? -1 : composite_pseudo_label(cls, state, cfg_.states_per_class));
    }
    return batch;
}

LossBreakdown Trainer::sweep_component(CvaeComponent& component, Adam& optimizer,
                                       double lambda_value, bool update_extractor,
                                       bool detach_adversarial) {
    std::vector<int> src_rows(static_cast<size_t>(n_source_));
    std::vector<int> tgt_rows(static_cast<size_t>(n_target_));
    for (int i = 0; i < n_source_; ++i) src_rows[static_cast<size_t>(i)] = i;
    for (int i = 0; i < n_target_; ++i) tgt_rows[static_cast<size_t>(i)] = n_source_ + i;
    train_rng_.shuffle(src_rows);
    train_rng_.shuffle(tgt_rows);

    int half = cfg_.batch_size / 2;
    int passes = (std::max(n_source_, n_target_) + half - 1) / half;

    LossBreakdown sum;
    for (int b = 0; b < passes; ++b) {
        std::vector<int> rows;
        rows.reserve(static_cast<size_t>(cfg_.batch_size));
        for (int i = 0; i < half; ++i) {
            rows.push_back(src_rows[static_cast<size_t>((b * half + i) % n_source_)]);
        }
        for (int i = 0; i < half; ++i) {
            rows.push_back(tgt_rows[static_cast<size_t>((b * half + i) % n_target_)]);
        }
        Batch batch = assemble_batch(rows);

        opt_extractor_.zero_grad();
        optimizer.zero_grad();
        Tape tape;
        const LossWeights& w = component.kind() == ComponentKind::FineGrained
                                   ? cfg_.fine_weights
                                   : (component.kind() == ComponentKind::TemporalRelation
                                          ? cfg_.temporal_weights
                                          : cfg_.classifier_weights);
        ComponentLossVars vars =
            build_component_loss(tape, model_.extractor, component, batch, w, lambda_value,
                                 train_rng_, model_.range, /*train_mode=*/true, GrlMode::Apply,
                                 detach_adversarial);
        LossBreakdown bd = read_breakdown(tape, vars);
        if (!std::isfinite(bd.total)) {
            throw NumericalError("training diverged: non-finite component loss");
        }
        tape.backward(vars.total);
        if (update_extractor) opt_extractor_.step();
        optimizer.step();

        sum.reconstruction += bd.reconstruction;
        sum.mean_variance += bd.mean_variance;
        sum.class_constraint += bd.class_constraint;
        sum.domain_constraint += bd.domain_constraint;
        sum.temporal_state += bd.temporal_state;
        sum.total += bd.total;
        sum.has_temporal_state = bd.has_temporal_state;
    }
    double inv = 1.0 / passes;
    sum.reconstruction *= inv;
    sum.mean_variance *= inv;
    sum.class_constraint *= inv;
    sum.domain_constraint *= inv;
    sum.temporal_state *= inv;
    sum.total *= inv;
    return sum;
}

std::vector<std::vector<double>> Trainer::all_train_features() {
    const int chunk = 256;
    std::vector<std::vector<double>> features;
    features.reserve(windows_.size());
    for (size_t start = 0; start < windows_.size(); start += chunk) {
        size_t end = std::min(windows_.size(), start + chunk);
        std::vector<const WindowedSample*> ptrs;
        for (size_t i = start; i < end; ++i) ptrs.push_back(windows_[i].window);
        Tape tape;
        Var x = tape.leaf(stack_windows(ptrs), false);
        Var f = model_.extractor.forward(tape, x, /*train_mode=*/false);
        const Tensor& fv = tape.value(f);
        int d = fv.dim(1);
        for (int i = 0; i < fv.dim(0); ++i) {
            std::vector<double> row(static_cast<size_t>(d));
            for (int j = 0; j < d; ++j) row[static_cast<size_t>(j)] = fv(i, j);
            features.push_back(std::move(row));
        }
    }
    return features;
}

void Trainer::refresh_states_and_attention(EpochStats& stats) {
    std::vector<std::vector<double>> features = all_train_features();

    // Chronological sequences per recording, split where windows were discarded.
    std::map<std::pair<int, int>, std::vector<int>> groups; // (source?0:1, recording) -> rows
    for (size_t i = 0; i < windows_.size(); ++i) {
        const WindowRef& ref = windows_[i];
        groups[{ref.source ? 0 : 1, ref.window->recording_id}].push_back(static_cast<int>(i));
    }
    std::vector<FeatureSequence> sequences;
    for (auto& [key, rows] : groups) {
        std::sort(rows.begin(), rows.end(), [&](int a, int b) {
            return windows_[static_cast<size_t>(a)].window->seq_index <
                   windows_[static_cast<size_t>(b)].window->seq_index;
        });
        FeatureSequence seq;
        seq.recording_id = key.second;
        seq.from_source = key.first == 0;
        int prev_seq_index = -2;
        for (int r : rows) {
            int si = windows_[static_cast<size_t>(r)].window->seq_index;
            if (prev_seq_index >= 0 && si != prev_seq_index + 1 && !seq.features.empty()) {
                sequences.push_back(std::move(seq));
                seq = FeatureSequence{};
                seq.recording_id = key.second;
                seq.from_source = key.first == 0;
            }
            seq.features.push_back(features[static_cast<size_t>(r)]);
            seq.uids.push_back(r);
            prev_seq_index = si;
        }
        if (!seq.features.empty()) sequences.push_back(std::move(seq));
    }

    AttentionWeights weights = fit_attention(sequences, cfg_.attention_lags);
    stats.attention_beta = weights.beta;
    std::vector<FeatureSequence> refined =
        refine_features(sequences, weights, cfg_.attention_top_k, cfg_.attention_rho);

    std::vector<StateAssignmentInput> inputs;
    for (const auto& seq : refined) {
        for (int t = 0; t < seq.length(); ++t) {
            int row = seq.uids[static_cast<size_t>(t)];
            StateAssignmentInput in;
            in.uid = row;
            in.class_label = class_label_of(row);
            in.recording_id = seq.recording_id;
            in.seq_index = windows_[static_cast<size_t>(row)].window->seq_index;
            in.from_source = seq.from_source;
            in.feature = &seq.features[static_cast<size_t>(t)];
            inputs.push_back(in);
        }
    }
    // One fixed clustering seed per run: with slowly moving features the
    // k-means++ picks stay put, so state labels only change when the feature
    // geometry genuinely does.
    uint64_t state_seed = Rng(cfg_.seed).fork(303).next_u64();
    std::vector<int> assigned = assign_temporal_states(inputs, cfg_.states_per_class, state_seed);

    pseudo_.prev_state = pseudo_.state;
    long long changed = 0, counted = 0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        if (assigned[i] < 0) continue;
        int row = inputs[i].uid;
        ++counted;
        if (pseudo_.prev_state[static_cast<size_t>(row)] != assigned[i]) ++changed;
        pseudo_.state[static_cast<size_t>(row)] = assigned[i];
    }
    stats.state_churn = counted == 0 ? 0.0 : static_cast<double>(changed) / counted;
}

void Trainer::refresh_target_pseudo_classes() {
    std::vector<const WindowedSample*> ptrs;
    ptrs.reserve(static_cast<size_t>(n_target_));
    for (int i = 0; i < n_target_; ++i) {
        ptrs.push_back(windows_[static_cast<size_t>(n_source_ + i)].window);
    }
    TargetPrediction pred =
        classify_target(model_.extractor, model_.classifier, stack_windows(ptrs));
    for (int i = 0; i < n_target_; ++i) {
        pseudo_.target_pseudo_class[static_cast<size_t>(i)] = pred.labels[static_cast<size_t>(i)];
    }
}

double Trainer::validation_accuracy() {
    const auto& val = split_->target_val;
    if (val.empty()) return -1.0;
    std::vector<const WindowedSample*> ptrs;
    for (const auto& w : val) ptrs.push_back(&w);
    TargetPrediction pred =
        classify_target(model_.extractor, model_.classifier, stack_windows(ptrs));
    long long hit = 0;
    for (size_t i = 0; i < val.size(); ++i) {
        if (val[i].activity.has_value() && pred.labels[i] == *val[i].activity) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(val.size());
}

void Trainer::run_one_epoch() {
    int e = epoch_ + 1;
    if (e > cfg_.epochs) throw StateError("run_one_epoch past configured epochs");
    double progress = cfg_.epochs > 1 ? static_cast<double>(e - 1) / (cfg_.epochs - 1) : 1.0;
    EpochStats stats;
    stats.epoch = e;
    stats.lambda = grl_lambda(progress);

    double lr = cfg_.adam.lr * std::pow(cfg_.lr_end_ratio, progress);
    opt_extractor_.set_lr(lr);
    opt_fine_.set_lr(lr);
    opt_temporal_.set_lr(lr);
    opt_classifier_.set_lr(lr);

    try {
        // The fine-grained component's class-state constraint shapes the shared
        // extractor, but its discriminative domain head only trains itself:
        // routing domain separation into the extractor would undo the
        // alignment the other two components drive through their reversals.
        stats.fine = sweep_component(model_.fine, opt_fine_, 0.0, /*update_extractor=*/true,
                                     /*detach_adversarial=*/true);
        stats.temporal = sweep_component(model_.temporal, opt_temporal_, 1.0, true, false);
        refresh_states_and_attention(stats);
        stats.classifier =
            sweep_component(model_.classifier, opt_classifier_, stats.lambda, true, false);
    } catch (const NumericalError& err) {
        std::cerr << "divergence at epoch " << e << ": " << err.what() << "\n";
        throw;
    }

    if (e >= std::max(1, cfg_.warmup_epochs)) refresh_target_pseudo_classes();
    stats.val_accuracy = validation_accuracy();
    if (cfg_.select_best_on_val && stats.val_accuracy > best_val_) {
        best_val_ = stats.val_accuracy;
        best_epoch_ = e;
        best_model_ = model_;
    }

    if (e == 1) model_.range.frozen = true; // bounds collected during warmup only
    pseudo_.epoch = e;
    epoch_ = e;
    history_.epochs.push_back(std::move(stats));
    if (on_epoch) on_epoch(*this);
}

const TrainHistory& Trainer::run() {
    while (epoch_ < cfg_.epochs) run_one_epoch();
    return history_;
}

std::vector<Trainer::LabelRow> Trainer::label_dump() const {
    std::vector<LabelRow> rows;
    rows.reserve(windows_.size());
    for (size_t i = 0; i < windows_.size(); ++i) {
        LabelRow row;
        row.uid = windows_[i].window->uid;
        row.class_label = class_label_of(static_cast<int>(i));
        row.state = pseudo_.state[i];
        row.composite = row.class_label < 0 ? -1
                                            : composite_pseudo_label(row.class_label, row.state,
                                                                     cfg_.states_per_class);
        rows.push_back(row);
    }
    return rows;
}

std::vector<Parameter*> Trainer::all_params() {
    std::vector<Parameter*> out;
    model_.extractor.params(out);
    model_.fine.params(out);
    model_.temporal.params(out);
    model_.classifier.params(out);
    return out;
}

NamedTensors Trainer::all_buffers() {
    NamedTensors out;
    model_.extractor.buffers(out);
    model_.fine.buffers(out);
    model_.temporal.buffers(out);
    model_.classifier.buffers(out);
    return out;
}

std::vector<Parameter*> Trainer::best_params() {
    std::vector<Parameter*> out;
    best_model_.extractor.params(out);
    best_model_.fine.params(out);
    best_model_.temporal.params(out);
    best_model_.classifier.params(out);
    return out;
}

NamedTensors Trainer::best_buffers() {
    NamedTensors out;
    best_model_.extractor.buffers(out);
    best_model_.fine.buffers(out);
    best_model_.temporal.buffers(out);
    best_model_.classifier.buffers(out);
    return out;
}

DgdataModel& Trainer::selected_model() {
    if (cfg_.select_best_on_val && best_val_ >= 0.0) return best_model_;
    return model_;
}

} // namespace dgdata
