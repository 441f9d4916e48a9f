// Command-line front end: synthesize datasets, train, evaluate, and report
// cross-user activity-recognition runs.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "dgdata/checkpoint.hpp"
#include "dgdata/config_json.hpp"
#include "dgdata/errors.hpp"
#include "dgdata/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dgdata;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

JobConfig load_config_or_default(const std::string& path) {
    if (path.empty()) {
        JobConfig cfg;
        cfg.validate();
        return cfg;
    }
    return load_job_config(path);
}

DatasetSplit prepare_split(const JobConfig& cfg, const std::string& data_dir,
                           const std::string& source_user, const std::string& target_user) {
    DatasetInfo info = load_dataset(data_dir, cfg.schema);
    uint64_t split_seed = Rng(cfg.train.seed).fork(404).next_u64();
    return build_split(info, source_user, target_user, cfg.window_seconds, cfg.overlap,
                       cfg.val_fraction, split_seed);
}

void write_label_dump_header(const std::string& path) {
    std::ofstream out(path);
    out << "epoch,window_uid,class,state,composite\n";
}

void append_label_dump(const std::string& path, Trainer& trainer) {
    std::ofstream out(path, std::ios::app);
    for (const auto& row : trainer.label_dump()) {
        out << trainer.epoch() << ',' << row.uid << ',' << row.class_label << ',' << row.state
            << ',' << row.composite << '\n';
    }
}

void write_run_reports(const std::string& out_dir, const JobConfig& cfg,
                       const DatasetSplit& split, const Metrics& metrics,
                       const TrainHistory& history, double wall_clock) {
    fs::create_directories(out_dir);
    fs::path base(out_dir);
    write_metrics_json((base / "metrics.json").string(), metrics, split.label_names);
    write_confusion_csv((base / "confusion.csv").string(), metrics.confusion, split.label_names);
    write_history_csv((base / "history.csv").string(), history);
    write_history_json((base / "history.json").string(), history);
    write_attention_csv((base / "attention.csv").string(), history);
    write_manifest_json((base / "manifest.json").string(), job_config_to_json(cfg),
                        dataset_digest(split), cfg.train.seed, wall_clock);
}

int cmd_synth(const std::string& out_dir, const std::string& config_path, uint64_t seed) {
    SynthConfig cfg;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("cannot open synth config: " + config_path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ConfigError("synth config parse failure: " + std::string(e.what()));
        }
        cfg = synth_config_from_json(j);
    }
    cfg.validate();
    auto [recordings, traces] = synth_recordings(cfg, seed);
    std::vector<std::string> labels;
    for (int c = 0; c < cfg.classes; ++c) labels.push_back("activity_" + std::to_string(c));
    write_generic_csv(out_dir, recordings, labels, cfg.sample_rate_hz);

    // Hidden-state traces are diagnostics only; training never reads them.
    std::ofstream states(fs::path(out_dir) / "true_states.csv");
    states << "user,activity,sample_index,state\n";
    for (const auto& trace : traces) {
        for (size_t t = 0; t < trace.states.size(); ++t) {
            states << trace.user_id << ',' << trace.class_id << ',' << t << ',' << trace.states[t]
                   << '\n';
        }
    }
    std::ofstream cfg_out(fs::path(out_dir) / "synth_config.json");
    cfg_out << synth_config_to_json(cfg).dump(2) << "\n";
    std::cout << "wrote synthetic dataset to " << out_dir << "\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& source_user,
              const std::string& target_user, std::optional<uint64_t> seed,
              const std::string& resume_path, int checkpoint_every) {
    auto start = std::chrono::steady_clock::now();
    JobConfig cfg = load_config_or_default(config_path);
    if (!resume_path.empty()) cfg.train = checkpoint_config(resume_path);
    if (seed) cfg.train.seed = *seed;
    cfg.validate();

    DatasetSplit split = prepare_split(cfg, data_dir, source_user, target_user);
    std::cout << "windows: source=" << split.n_source() << " target=" << split.n_target()
              << " val=" << split.target_val.size() << " test=" << split.target_test.size()
              << " classes=" << split.num_classes << "\n";

    Trainer trainer(cfg.train, split);
    if (!resume_path.empty()) load_checkpoint(resume_path, trainer);

    fs::create_directories(out_dir);
    fs::path base(out_dir);
    std::string labels_csv = (base / "pseudo_labels.csv").string();
    if (trainer.epoch() == 0) write_label_dump_header(labels_csv);
    std::string ckpt_path = (base / "checkpoint.bin").string();
    trainer.on_epoch = [&](Trainer& t) {
        append_label_dump(labels_csv, t);
        if (checkpoint_every > 0 && t.epoch() % checkpoint_every == 0) {
            save_checkpoint(ckpt_path, t);
        }
        if (t.epoch() % 10 == 0 || t.epoch() == t.config().epochs) {
            const EpochStats& s = t.history().epochs.back();
            std::cout << "epoch " << t.epoch() << " val_acc=" << s.val_accuracy
                      << " churn=" << s.state_churn << "\n";
        }
    };
    trainer.run();
    save_checkpoint(ckpt_path, trainer);

    Metrics metrics = evaluate(trainer.selected_model(), split.target_test, split.num_classes);
    write_run_reports(out_dir, cfg, split, metrics, trainer.history(), seconds_since(start));
    std::cout << "target test accuracy: " << metrics.accuracy << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& run_dir, const std::string& data_dir,
             const std::string& source_user, const std::string& target_user,
             const std::string& which_split, const std::string& out_dir) {
    fs::path base(run_dir);
    std::ifstream mf(base / "manifest.json");
    if (!mf) throw DataError("run directory has no manifest.json: " + run_dir);
    json manifest;
    mf >> manifest;
    JobConfig cfg = job_config_from_json(manifest.at("config"));
    cfg.validate();

    DatasetSplit split = prepare_split(cfg, data_dir, source_user, target_user);
    Trainer trainer(cfg.train, split);
    load_checkpoint((base / "checkpoint.bin").string(), trainer);

    const auto& windows = which_split == "val" ? split.target_val : split.target_test;
    Metrics metrics = evaluate(trainer.selected_model(), windows, split.num_classes);
    std::cout << which_split << " accuracy: " << metrics.accuracy << "\n";
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_metrics_json((fs::path(out_dir) / "metrics.json").string(), metrics,
                           split.label_names);
        write_confusion_csv((fs::path(out_dir) / "confusion.csv").string(), metrics.confusion,
                            split.label_names);
    }
    return kExitOk;
}

int cmd_baseline(const std::string& config_path, const std::string& data_dir,
                 const std::string& out_dir, const std::string& source_user,
                 const std::string& target_user, std::optional<uint64_t> seed) {
    auto start = std::chrono::steady_clock::now();
    JobConfig cfg = load_config_or_default(config_path);
    if (seed) cfg.train.seed = *seed;
    cfg.validate();
    DatasetSplit split = prepare_split(cfg, data_dir, source_user, target_user);
    Metrics metrics = source_only_baseline(cfg.train, split);
    std::cout << "baseline target test accuracy: " << metrics.accuracy << "\n";
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_metrics_json((fs::path(out_dir) / "metrics.json").string(), metrics,
                           split.label_names);
        write_confusion_csv((fs::path(out_dir) / "confusion.csv").string(), metrics.confusion,
                            split.label_names);
        write_manifest_json((fs::path(out_dir) / "manifest.json").string(),
                            job_config_to_json(cfg), dataset_digest(split), cfg.train.seed,
                            seconds_since(start));
    }
    return kExitOk;
}

int cmd_report(const std::string& run_dir) {
    fs::path base(run_dir);
    Metrics metrics = read_metrics_json((base / "metrics.json").string());
    std::cout << "run: " << run_dir << "\n";
    std::cout << "windows evaluated: " << metrics.confusion.total() << "\n";
    std::cout << "accuracy: " << metrics.accuracy << "\n";
    std::cout << "class  precision  recall  support\n";
    for (int c = 0; c < metrics.confusion.classes; ++c) {
        std::cout << "  " << c << "      " << metrics.precision[static_cast<size_t>(c)] << "    "
                  << metrics.recall[static_cast<size_t>(c)] << "    "
                  << metrics.support[static_cast<size_t>(c)] << "\n";
    }
    std::ifstream hist(base / "history.csv");
    if (hist) {
        std::string line, last;
        std::getline(hist, line); // header
        while (std::getline(hist, line)) {
            if (!line.empty()) last = line;
        }
        if (!last.empty()) std::cout << "final history row: " << last << "\n";
    }
    return kExitOk;
}

int cmd_replicate(const std::string& data_dir, const std::string& dataset,
                  const std::string& source_user, const std::string& target_user,
                  const std::string& out_dir, const std::string& config_path,
                  std::optional<uint64_t> seed) {
    if (!fs::exists(data_dir)) {
        std::cout << "replicate: dataset directory '" << data_dir
                  << "' not present; skipping (supply the " << dataset
                  << " download to run this pair)\n";
        return kExitOk;
    }
    JobConfig cfg = load_config_or_default(config_path);
    cfg.schema = dataset;
    cfg.window_seconds = 3.0; // fixed evaluation protocol: 3 s windows, 50% overlap
    cfg.overlap = 0.5;
    if (seed) cfg.train.seed = *seed;
    cfg.validate();

    std::cout << "replicate " << dataset << " " << source_user << " -> " << target_user << "\n";
    auto start = std::chrono::steady_clock::now();
    DatasetSplit split = prepare_split(cfg, data_dir, source_user, target_user);
    std::cout << "windows: source=" << split.n_source() << " target=" << split.n_target() << "\n";

    Trainer trainer(cfg.train, split);
    trainer.on_epoch = [](Trainer& t) {
        if (t.epoch() % 5 == 0) {
            std::cout << "epoch " << t.epoch() << " val_acc="
                      << t.history().epochs.back().val_accuracy << "\n";
        }
    };
    trainer.run();
    Metrics metrics = evaluate(trainer.selected_model(), split.target_test, split.num_classes);
    Metrics base_metrics = source_only_baseline(cfg.train, split);
    std::cout << "adapted accuracy:  " << metrics.accuracy << "\n";
    std::cout << "baseline accuracy: " << base_metrics.accuracy << "\n";
    if (!out_dir.empty()) {
        write_run_reports(out_dir, cfg, split, metrics, trainer.history(), seconds_since(start));
        save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), trainer);
        write_metrics_json((fs::path(out_dir) / "baseline_metrics.json").string(), base_metrics,
                           split.label_names);
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-user activity recognition via adversarial generative domain adaptation"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_dir, source_user = "source", target_user = "target";
    std::string resume_path, run_dir, which_split = "test", dataset = "oppt";
    std::optional<uint64_t> seed;
    uint64_t synth_seed = 7;
    int checkpoint_every = 0;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic two-user dataset");
    synth->add_option("--out", out_dir, "Output directory")->required();
    synth->add_option("--config", config_path, "Synth config JSON");
    synth->add_option("--seed", synth_seed, "Generator seed");

    auto* train = app.add_subcommand("train", "Train the adaptation pipeline");
    train->add_option("--config", config_path, "Job config JSON");
    train->add_option("--data", data_dir, "Dataset directory")->required();
    train->add_option("--out", out_dir, "Output directory")->required();
    train->add_option("--source-user", source_user, "Labelled user id");
    train->add_option("--target-user", target_user, "Unlabelled user id");
    train->add_option("--seed", seed, "Override config seed");
    train->add_option("--resume", resume_path, "Checkpoint to resume from");
    train->add_option("--checkpoint-every", checkpoint_every, "Save checkpoint every N epochs");

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a finished run");
    eval_cmd->add_option("--run", run_dir, "Training output directory")->required();
    eval_cmd->add_option("--data", data_dir, "Dataset directory")->required();
    eval_cmd->add_option("--source-user", source_user, "Labelled user id");
    eval_cmd->add_option("--target-user", target_user, "Unlabelled user id");
    eval_cmd->add_option("--split", which_split, "val or test")
        ->check(CLI::IsMember({"val", "test"}));
    eval_cmd->add_option("--out", out_dir, "Optional output directory");

    auto* baseline = app.add_subcommand("baseline", "Source-only baseline");
    baseline->add_option("--config", config_path, "Job config JSON");
    baseline->add_option("--data", data_dir, "Dataset directory")->required();
    baseline->add_option("--out", out_dir, "Output directory");
    baseline->add_option("--source-user", source_user, "Labelled user id");
    baseline->add_option("--target-user", target_user, "Unlabelled user id");
    baseline->add_option("--seed", seed, "Override config seed");

    auto* report = app.add_subcommand("report", "Summarize a run directory");
    report->add_option("--run", run_dir, "Run directory")->required();

    auto* replicate = app.add_subcommand("replicate", "Run a real-dataset user pair if present");
    replicate->add_option("--data", data_dir, "Dataset root directory")->required();
    replicate->add_option("--dataset", dataset, "oppt, pamap2 or dsads")
        ->check(CLI::IsMember({"oppt", "pamap2", "dsads"}));
    replicate->add_option("--source-user", source_user, "Labelled user id")->required();
    replicate->add_option("--target-user", target_user, "Unlabelled user id")->required();
    replicate->add_option("--out", out_dir, "Output directory");
    replicate->add_option("--config", config_path, "Job config JSON");
    replicate->add_option("--seed", seed, "Override config seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(out_dir, config_path, synth_seed);
        if (train->parsed()) {
            return cmd_train(config_path, data_dir, out_dir, source_user, target_user, seed,
                             resume_path, checkpoint_every);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(run_dir, data_dir, source_user, target_user, which_split, out_dir);
        }
        if (baseline->parsed()) {
            return cmd_baseline(config_path, data_dir, out_dir, source_user, target_user, seed);
        }
        if (report->parsed()) return cmd_report(run_dir);
        if (replicate->parsed()) {
            return cmd_replicate(data_dir, dataset, source_user, target_user, out_dir, config_path,
                                 seed);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericalError& e) {
        std::cerr << "training divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const LabelError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const IntegrityError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
