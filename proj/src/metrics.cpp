#include "dgdata/metrics.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "dgdata/errors.hpp"

using nlohmann::json;

namespace dgdata {

long long ConfusionMatrix::total() const {
    long long t = 0;
    for (long long c : counts) t += c;
    return t;
}

long long ConfusionMatrix::trace() const {
    long long t = 0;
    for (int i = 0; i < classes; ++i) t += at(i, i);
    return t;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& truths,
                                 int classes) {
    if (preds.size() != truths.size()) throw DimensionError("confusion: preds/truths length mismatch");
    ConfusionMatrix cm(classes);
    for (size_t i = 0; i < preds.size(); ++i) {
        int p = preds[i], t = truths[i];
        if (p < 0 || p >= classes || t < 0 || t >= classes) {
            throw LabelError("confusion: label outside [0," + std::to_string(classes) + ")");
        }
        cm.at(t, p) += 1;
    }
    return cm;
}

Metrics metrics_from_confusion(const ConfusionMatrix& cm) {
    Metrics m;
    m.confusion = cm;
    long long total = cm.total();
    m.accuracy = total == 0 ? 0.0 : static_cast<double>(cm.trace()) / static_cast<double>(total);
    m.precision.assign(static_cast<size_t>(cm.classes), 0.0);
    m.recall.assign(static_cast<size_t>(cm.classes), 0.0);
    m.support.assign(static_cast<size_t>(cm.classes), 0);
    for (int c = 0; c < cm.classes; ++c) {
        long long row = 0, col = 0;
        for (int j = 0; j < cm.classes; ++j) {
            row += cm.at(c, j);
            col += cm.at(j, c);
        }
        m.support[static_cast<size_t>(c)] = row;
        m.recall[static_cast<size_t>(c)] = row == 0 ? 0.0 : static_cast<double>(cm.at(c, c)) / row;
        m.precision[static_cast<size_t>(c)] = col == 0 ? 0.0 : static_cast<double>(cm.at(c, c)) / col;
    }
    return m;
}

int worker_thread_cap() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* env = std::getenv("DGDATA_THREADS")) {
        int cap = std::atoi(env);
        if (cap >= 1) hw = std::min(hw, cap);
    }
    return hw;
}

Metrics evaluate(DgdataModel& model, const std::vector<WindowedSample>& windows, int num_classes) {
    if (windows.empty()) throw DataError("evaluate: no windows");
    std::vector<int> preds(windows.size(), -1);
    std::vector<int> truths(windows.size(), -1);
    for (size_t i = 0; i < windows.size(); ++i) {
        if (!windows[i].activity.has_value()) throw DataError("evaluate: unlabelled window");
        truths[i] = *windows[i].activity;
    }

    const size_t block = 64;
    size_t n_blocks = (windows.size() + block - 1) / block;
    int threads = std::min<int>(worker_thread_cap(), static_cast<int>(n_blocks));
    auto work = [&](size_t tid) {
        for (size_t b = tid; b < n_blocks; b += static_cast<size_t>(threads)) {
            size_t lo = b * block;
            size_t hi = std::min(windows.size(), lo + block);
            std::vector<const WindowedSample*> ptrs;
            ptrs.reserve(hi - lo);
            for (size_t i = lo; i < hi; ++i) ptrs.push_back(&windows[i]);
            TargetPrediction pred =
                classify_target(model.extractor, model.classifier, stack_windows(ptrs));
            for (size_t i = lo; i < hi; ++i) preds[i] = pred.labels[i - lo];
        }
    };
    if (threads <= 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(work, static_cast<size_t>(t));
        for (auto& th : pool) th.join();
    }
    return metrics_from_confusion(confusion_matrix(preds, truths, num_classes));
}

Metrics source_only_baseline(const TrainConfig& cfg, const DatasetSplit& split) {
    TrainConfig local = cfg;
    if (split.source_train.empty()) throw DataError("baseline: no source windows");
    const Tensor& first = split.source_train.front().values;
    local.extractor.in_channels = first.dim(0);
    local.extractor.window = first.dim(1);
    local.extractor.validate();

    Rng master(local.seed);
    Rng init_rng = master.fork(301);
    Rng order_rng = master.fork(302);

    FeatureExtractor extractor(local.extractor, init_rng);
    LinearLayer head("baseline.head", local.extractor.feature_dim(), split.num_classes, init_rng);

    std::vector<Parameter*> params;
    extractor.params(params);
    head.params(params);
    Adam opt(local.adam, params);

    int n = static_cast<int>(split.source_train.size());
    int bs = std::min(local.batch_size, n);
    if (bs < 2) throw DataError("baseline: needs at least 2 source windows");
    int passes = (n + bs - 1) / bs;

    std::vector<int> rows(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) rows[static_cast<size_t>(i)] = i;

    for (int epoch = 0; epoch < local.epochs; ++epoch) {
        order_rng.shuffle(rows);
        for (int b = 0; b < passes; ++b) {
            std::vector<const WindowedSample*> ptrs;
            std::vector<int> labels;
            for (int i = 0; i < bs; ++i) {
                int r = rows[static_cast<size_t>((b * bs + i) % n)];
                ptrs.push_back(&split.source_train[static_cast<size_t>(r)]);
                labels.push_back(*split.source_train[static_cast<size_t>(r)].activity);
            }
            opt.zero_grad();
            Tape tape;
            Var x = tape.leaf(stack_windows(ptrs), false);
            Var f = extractor.forward(tape, x, true);
            Var logits = head.forward(tape, f);
            Var loss = softmax_cross_entropy(logits, labels);
            if (!std::isfinite(tape.value(loss).data[0])) {
                throw NumericalError("baseline training diverged");
            }
            tape.backward(loss);
            opt.step();
        }
    }

    // evaluate on target_test
    const auto& test = split.target_test;
    if (test.empty()) throw DataError("baseline: empty target test set");
    std::vector<int> preds(test.size()), truths(test.size());
    const size_t block = 128;
    for (size_t lo = 0; lo < test.size(); lo += block) {
        size_t hi = std::min(test.size(), lo + block);
        std::vector<const WindowedSample*> ptrs;
        for (size_t i = lo; i < hi; ++i) ptrs.push_back(&test[i]);
        Tape tape;
        Var x = tape.leaf(stack_windows(ptrs), false);
        Var f = extractor.forward(tape, x, false);
        Var logits = head.forward(tape, f);
        const Tensor& lv = tape.value(logits);
        for (size_t i = lo; i < hi; ++i) {
            int best = 0;
            for (int j = 1; j < split.num_classes; ++j) {
                if (lv(static_cast<int>(i - lo), j) > lv(static_cast<int>(i - lo), best)) best = j;
            }
            preds[i] = best;
            truths[i] = *test[i].activity;
        }
    }
    return metrics_from_confusion(confusion_matrix(preds, truths, split.num_classes));
}

// --- report files -----------------------------------------------------------------

namespace {
std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

json metrics_to_json(const Metrics& metrics, const std::vector<std::string>& label_names) {
    json per_class = json::array();
    for (int c = 0; c < metrics.confusion.classes; ++c) {
        per_class.push_back(
            json{{"label", c < static_cast<int>(label_names.size())
                               ? label_names[static_cast<size_t>(c)]
                               : "class_" + std::to_string(c)},
                 {"precision", metrics.precision[static_cast<size_t>(c)]},
                 {"recall", metrics.recall[static_cast<size_t>(c)]},
                 {"support", metrics.support[static_cast<size_t>(c)]}});
    }
    json cm = json::array();
    for (int t = 0; t < metrics.confusion.classes; ++t) {
        json row = json::array();
        for (int p = 0; p < metrics.confusion.classes; ++p) row.push_back(metrics.confusion.at(t, p));
        cm.push_back(row);
    }
    return json{{"accuracy", metrics.accuracy},
                {"n_windows", metrics.confusion.total()},
                {"per_class", per_class},
                {"confusion", cm}};
}
} // namespace

void write_metrics_json(const std::string& path, const Metrics& metrics,
                        const std::vector<std::string>& label_names) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << metrics_to_json(metrics, label_names).dump(2) << "\n";
    if (!out) throw DataError("write failed: " + path);
}

Metrics read_metrics_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("metrics parse failure: " + std::string(e.what()));
    }
    auto cm_rows = j.at("confusion");
    int classes = static_cast<int>(cm_rows.size());
    ConfusionMatrix cm(classes);
    for (int t = 0; t < classes; ++t) {
        for (int p = 0; p < classes; ++p) cm.at(t, p) = cm_rows.at(t).at(p).get<long long>();
    }
    Metrics m = metrics_from_confusion(cm);
    m.accuracy = j.at("accuracy").get<double>();
    return m;
}

void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm,
                         const std::vector<std::string>& label_names) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "true\\pred";
    for (int p = 0; p < cm.classes; ++p) {
        out << ',' << (p < static_cast<int>(label_names.size()) ? label_names[static_cast<size_t>(p)]
                                                                : "class_" + std::to_string(p));
    }
    out << '\n';
    for (int t = 0; t < cm.classes; ++t) {
        out << (t < static_cast<int>(label_names.size()) ? label_names[static_cast<size_t>(t)]
                                                         : "class_" + std::to_string(t));
        for (int p = 0; p < cm.classes; ++p) out << ',' << cm.at(t, p);
        out << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

void write_history_csv(const std::string& path, const TrainHistory& history) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "epoch,fine_recon,fine_mv,fine_class,fine_domain,fine_total,"
           "temporal_recon,temporal_mv,temporal_class,temporal_domain,temporal_state,temporal_total,"
           "classifier_recon,classifier_mv,classifier_class,classifier_domain,classifier_state,"
           "classifier_total,val_accuracy,state_churn,grl_lambda\n";
    for (const auto& e : history.epochs) {
        out << e.epoch << ',' << fmt_double(e.fine.reconstruction) << ','
            << fmt_double(e.fine.mean_variance) << ',' << fmt_double(e.fine.class_constraint) << ','
            << fmt_double(e.fine.domain_constraint) << ',' << fmt_double(e.fine.total) << ','
            << fmt_double(e.temporal.reconstruction) << ',' << fmt_double(e.temporal.mean_variance)
            << ',' << fmt_double(e.temporal.class_constraint) << ','
            << fmt_double(e.temporal.domain_constraint) << ',' << fmt_double(e.temporal.temporal_state)
            << ',' << fmt_double(e.temporal.total) << ',' << fmt_double(e.classifier.reconstruction)
            << ',' << fmt_double(e.classifier.mean_variance) << ','
            << fmt_double(e.classifier.class_constraint) << ','
            << fmt_double(e.classifier.domain_constraint) << ','
            << fmt_double(e.classifier.temporal_state) << ',' << fmt_double(e.classifier.total) << ','
            << fmt_double(e.val_accuracy) << ',' << fmt_double(e.state_churn) << ','
            << fmt_double(e.lambda) << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

namespace {
json breakdown_to_json(const LossBreakdown& b) {
    json j{{"reconstruction", b.reconstruction},
           {"mean_variance", b.mean_variance},
           {"class_constraint", b.class_constraint},
           {"domain_constraint", b.domain_constraint},
           {"total", b.total}};
    if (b.has_temporal_state) j["temporal_state"] = b.temporal_state;
    return j;
}
} // namespace

void write_history_json(const std::string& path, const TrainHistory& history) {
    json rows = json::array();
    for (const auto& e : history.epochs) {
        rows.push_back(json{{"epoch", e.epoch},
                            {"fine", breakdown_to_json(e.fine)},
                            {"temporal", breakdown_to_json(e.temporal)},
                            {"classifier", breakdown_to_json(e.classifier)},
                            {"val_accuracy", e.val_accuracy},
                            {"state_churn", e.state_churn},
                            {"grl_lambda", e.lambda}});
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << rows.dump(2) << "\n";
    if (!out) throw DataError("write failed: " + path);
}

void write_attention_csv(const std::string& path, const TrainHistory& history) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    size_t lags = 0;
    for (const auto& e : history.epochs) lags = std::max(lags, e.attention_beta.size());
    out << "epoch";
    for (size_t i = 1; i <= lags; ++i) out << ",beta_" << i;
    out << '\n';
    for (const auto& e : history.epochs) {
        out << e.epoch;
        for (size_t i = 0; i < lags; ++i) {
            out << ',';
            if (i < e.attention_beta.size()) out << fmt_double(e.attention_beta[i]);
        }
        out << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t dataset_digest(const DatasetSplit& split) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_windows = [&](const std::vector<WindowedSample>& windows) {
        for (const auto& w : windows) {
            h = fnv1a64(w.values.data.data(), w.values.data.size() * sizeof(double), h);
            int label = w.activity.value_or(-1);
            h = fnv1a64(&label, sizeof label, h);
            h = fnv1a64(&w.seq_index, sizeof w.seq_index, h);
        }
    };
    mix_windows(split.source_train);
    mix_windows(split.target_train);
    mix_windows(split.target_val);
    mix_windows(split.target_test);
    return h;
}

void write_manifest_json(const std::string& path, const json& config, uint64_t data_digest,
                         uint64_t seed, double wall_clock_sec) {
    json j;
    j["tool"] = "dgdata 0.1.0";
    j["config"] = config;
    std::ostringstream digest_hex;
    digest_hex << std::hex << std::setw(16) << std::setfill('0') << data_digest;
    j["data_digest"] = digest_hex.str();
    j["seed"] = seed;
    j["wall_clock_sec"] = wall_clock_sec;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << j.dump(2) << "\n";
    if (!out) throw DataError("write failed: " + path);
}

} // namespace dgdata
