#include "dgdata/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dgdata/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dgdata {

std::vector<UnlabeledView> DatasetSplit::target_train_view() const {
    std::vector<UnlabeledView> views;
    views.reserve(target_train.size());
    for (const auto& w : target_train) views.push_back(UnlabeledView{&w});
    return views;
}

// --- parsing helpers -----------------------------------------------------------

namespace {

std::vector<std::string> split_line(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool parse_double(const std::string& tok, double& out) {
    const char* begin = tok.c_str();
    char* end = nullptr;
    out = std::strtod(begin, &end);
    return end != begin;
}

// Tokenize a whitespace-separated line of numbers; non-numeric tokens ("NaN")
// become quiet NaN.
std::vector<double> parse_number_row(const std::string& line) {
    std::vector<double> row;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) {
        double v;
        if (parse_double(tok, v)) {
            row.push_back(v);
        } else {
            row.push_back(std::numeric_limits<double>::quiet_NaN());
        }
    }
    return row;
}

const std::vector<std::string> kSensorChannels = {"acc_x", "acc_y", "acc_z",
                                                  "gyr_x", "gyr_y", "gyr_z"};

struct ColumnSchema {
    // 0-indexed column positions
    std::vector<int> sensor_cols;
    int label_col = -1;
    double sample_rate_hz = 0.0;
    std::map<int, int> label_map; // raw activity id -> class index
    std::vector<std::string> label_names;
};

ColumnSchema oppt_schema() {
    ColumnSchema s;
    // Lower-right-arm inertial unit: accelerometer then gyroscope.
    s.sensor_cols = {63, 64, 65, 66, 67, 68};
    s.label_col = 243; // locomotion track
    s.sample_rate_hz = 30.0;
    s.label_map = {{1, 0}, {2, 1}, {4, 2}, {5, 3}};
    s.label_names = {"standing", "walking", "sitting", "lying"};
    return s;
}

ColumnSchema pamap2_schema() {
    ColumnSchema s;
    // Hand (wrist) unit: 16g accelerometer cols 5-7, gyroscope cols 11-13 (1-indexed).
    s.sensor_cols = {4, 5, 6, 10, 11, 12};
    s.label_col = 1;
    s.sample_rate_hz = 100.0;
    const int raw_ids[] = {1, 2, 3, 4, 5, 6, 7, 12, 13, 16, 17};
    for (int i = 0; i < 11; ++i) s.label_map[raw_ids[i]] = i;
    s.label_names = {"lying",          "sitting",          "standing",
                     "walking",        "running",          "cycling",
                     "nordic_walking", "ascending_stairs", "descending_stairs",
                     "vacuum_cleaning", "ironing"};
    return s;
}

std::vector<std::string> dsads_label_names() {
    return {"sitting",
            "standing",
            "lying_back",
            "lying_right",
            "ascending_stairs",
            "descending_stairs",
            "standing_in_elevator",
            "moving_in_elevator",
            "walking_parking_lot",
            "walking_treadmill_flat",
            "walking_treadmill_incline",
            "running_treadmill",
            "stepper",
            "cross_trainer",
            "cycling_horizontal",
            "cycling_vertical",
            "rowing",
            "jumping",
            "playing_basketball"};
}

RawRecording make_recording(const std::string& user, double fs) {
    RawRecording rec;
    rec.user_id = user;
    rec.sample_rate_hz = fs;
    rec.channel_names = kSensorChannels;
    return rec;
}

// Columnar .dat loader shared by the OPPT and PAMAP2 layouts: one recording
// per file, rows with a missing sensor value or unmapped activity dropped.
RawRecording load_dat_file(const fs::path& file, const std::string& user,
                           const ColumnSchema& schema) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot open " + file.string());
    RawRecording rec = make_recording(user, schema.sample_rate_hz);
    std::string line;
    int min_cols = schema.label_col;
    for (int c : schema.sensor_cols) min_cols = std::max(min_cols, c);
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        std::vector<double> row = parse_number_row(line);
        if (static_cast<int>(row.size()) <= min_cols) {
            throw DataError(file.string() + ": row has too few columns for schema");
        }
        double raw_label = row[static_cast<size_t>(schema.label_col)];
        if (!std::isfinite(raw_label)) continue;
        auto it = schema.label_map.find(static_cast<int>(raw_label));
        if (it == schema.label_map.end()) continue; // undefined activity
        std::vector<double> sensors;
        sensors.reserve(schema.sensor_cols.size());
        bool ok = true;
        for (int c : schema.sensor_cols) {
            double v = row[static_cast<size_t>(c)];
            if (!std::isfinite(v)) {
                ok = false;
                break;
            }
            sensors.push_back(v);
        }
        if (!ok) continue;
        rec.samples.push_back(std::move(sensors));
        rec.activity.push_back(it->second);
    }
    if (rec.samples.empty()) throw DataError(file.string() + ": no usable rows");
    return rec;
}

DatasetInfo load_oppt(const fs::path& root) {
    ColumnSchema schema = oppt_schema();
    DatasetInfo info;
    info.label_names = schema.label_names;
    info.sample_rate_hz = schema.sample_rate_hz;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.path().extension() == ".dat") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .dat files under " + root.string());
    for (const auto& f : files) {
        std::string stem = f.stem().string(); // e.g. S1-ADL1
        std::string user = stem.substr(0, stem.find('-'));
        info.recordings.push_back(load_dat_file(f, user, schema));
    }
    return info;
}

DatasetInfo load_pamap2(const fs::path& root) {
    ColumnSchema schema = pamap2_schema();
    DatasetInfo info;
    info.label_names = schema.label_names;
    info.sample_rate_hz = schema.sample_rate_hz;
    std::vector<fs::path> files;
    for (const fs::path& dir : {root, root / "Protocol"}) {
        if (!fs::is_directory(dir)) continue;
        for (const auto& e : fs::directory_iterator(dir)) {
            std::string stem = e.path().stem().string();
            if (e.path().extension() == ".dat" && stem.rfind("subject", 0) == 0) {
                files.push_back(e.path());
            }
        }
        if (!files.empty()) break;
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no subject*.dat files under " + root.string());
    for (const auto& f : files) {
        std::string stem = f.stem().string(); // subject101
        std::string id = stem.substr(7);      // "101"
        if (id.size() == 3 && id[0] == '1') id = id.substr(1 + (id[1] == '0' ? 1 : 0));
        info.recordings.push_back(load_dat_file(f, id, schema));
    }
    return info;
}

DatasetInfo load_dsads(const fs::path& root) {
    DatasetInfo info;
    info.label_names = dsads_label_names();
    info.sample_rate_hz = 25.0;
    // Layout: a01..a19 / p1..p8 / s01..s60.txt, comma separated, 45 columns.
    // Right-arm unit: accelerometer cols 10-12, gyroscope cols 13-15 (1-indexed).
    const std::vector<int> sensor_cols = {9, 10, 11, 12, 13, 14};
    std::vector<fs::path> activity_dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        std::string name = e.path().filename().string();
        if (e.is_directory() && name.size() == 3 && name[0] == 'a') activity_dirs.push_back(e.path());
    }
    std::sort(activity_dirs.begin(), activity_dirs.end());
    if (activity_dirs.empty()) throw DataError("no a?? activity dirs under " + root.string());

    // One recording per (user, activity): the 5 s segments concatenated in order.
    std::map<std::string, std::vector<fs::path>> by_user_activity_order; // kept deterministic
    for (const auto& adir : activity_dirs) {
        int class_id = std::stoi(adir.filename().string().substr(1)) - 1;
        std::vector<fs::path> user_dirs;
        for (const auto& u : fs::directory_iterator(adir)) {
            if (u.is_directory()) user_dirs.push_back(u.path());
        }
        std::sort(user_dirs.begin(), user_dirs.end());
        for (const auto& udir : user_dirs) {
            std::string user = udir.filename().string(); // p2
            if (!user.empty() && user[0] == 'p') user = user.substr(1);
            RawRecording rec = make_recording(user, info.sample_rate_hz);
            std::vector<fs::path> segs;
            for (const auto& s : fs::directory_iterator(udir)) {
                if (s.path().extension() == ".txt") segs.push_back(s.path());
            }
            std::sort(segs.begin(), segs.end());
            for (const auto& seg : segs) {
                std::ifstream in(seg);
                if (!in) throw DataError("cannot open " + seg.string());
                std::string line;
                while (std::getline(in, line)) {
                    if (trim(line).empty()) continue;
                    std::vector<std::string> toks = split_line(line, ',');
                    if (static_cast<int>(toks.size()) < 15) {
                        throw DataError(seg.string() + ": row has too few columns for schema");
                    }
                    std::vector<double> sensors;
                    bool ok = true;
                    for (int c : sensor_cols) {
                        double v;
                        if (!parse_double(toks[static_cast<size_t>(c)], v) || !std::isfinite(v)) {
                            ok = false;
                            break;
                        }
                        sensors.push_back(v);
                    }
                    if (!ok) continue;
                    rec.samples.push_back(std::move(sensors));
                    rec.activity.push_back(class_id);
                }
            }
            if (!rec.samples.empty()) info.recordings.push_back(std::move(rec));
        }
    }
    if (info.recordings.empty()) throw DataError("no usable rows under " + root.string());
    return info;
}

DatasetInfo load_generic_csv(const fs::path& path) {
    fs::path manifest_path = fs::is_directory(path) ? path / "manifest.json" : path;
    std::ifstream mf(manifest_path);
    if (!mf) throw DataError("cannot open manifest " + manifest_path.string());
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw DataError("manifest parse failure: " + std::string(e.what()));
    }
    for (const char* key : {"sample_rate_hz", "labels", "users"}) {
        if (!manifest.contains(key)) throw DataError(std::string("manifest missing '") + key + "'");
    }
    DatasetInfo info;
    info.sample_rate_hz = manifest["sample_rate_hz"].get<double>();
    if (info.sample_rate_hz <= 0.0) throw DataError("manifest sample_rate_hz must be positive");
    info.label_names = manifest["labels"].get<std::vector<std::string>>();
    std::map<std::string, int> label_ids;
    for (size_t i = 0; i < info.label_names.size(); ++i) {
        label_ids[info.label_names[i]] = static_cast<int>(i);
    }

    fs::path base = manifest_path.parent_path();
    std::vector<std::pair<std::string, std::string>> users;
    for (const auto& [user, file] : manifest["users"].items()) {
        users.emplace_back(user, file.get<std::string>());
    }
    std::sort(users.begin(), users.end());

    const std::string expected_header = "timestamp,user,activity,acc_x,acc_y,acc_z,gyr_x,gyr_y,gyr_z";
    for (const auto& [user, file] : users) {
        std::ifstream in(base / file);
        if (!in) throw DataError("cannot open " + (base / file).string());
        std::string line;
        if (!std::getline(in, line) || trim(line) != expected_header) {
            throw DataError(file + ": header does not match generic-csv schema");
        }
        RawRecording rec = make_recording(user, info.sample_rate_hz);
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            std::vector<std::string> toks = split_line(line, ',');
            if (toks.size() != 9) throw DataError(file + ": expected 9 columns");
            if (trim(toks[1]) != user) {
                throw DataError(file + ": row user '" + trim(toks[1]) + "' does not match manifest");
            }
            auto it = label_ids.find(trim(toks[2]));
            if (it == label_ids.end()) continue; // undefined activity
            std::vector<double> sensors(6);
            bool ok = true;
            for (int c = 0; c < 6; ++c) {
                if (!parse_double(toks[static_cast<size_t>(c + 3)], sensors[static_cast<size_t>(c)])) {
                    ok = false;
                    break;
                }
            }
            if (!ok) continue;
            rec.samples.push_back(std::move(sensors));
            rec.activity.push_back(it->second);
        }
        if (rec.samples.empty()) throw DataError(file + ": no usable rows");
        info.recordings.push_back(std::move(rec));
    }
    if (info.recordings.empty()) throw DataError("manifest declares no users");
    return info;
}

} // namespace

DatasetInfo load_dataset(const std::string& path, const std::string& schema_name) {
    if (!fs::exists(path)) throw DataError("dataset path does not exist: " + path);
    if (schema_name == "generic-csv") return load_generic_csv(path);
    if (schema_name == "oppt") return load_oppt(path);
    if (schema_name == "pamap2") return load_pamap2(path);
    if (schema_name == "dsads") return load_dsads(path);
    throw ConfigError("unknown dataset schema: " + schema_name);
}

int schema_num_classes(const std::string& schema_name) {
    if (schema_name == "oppt") return 4;
    if (schema_name == "pamap2") return 11;
    if (schema_name == "dsads") return 19;
    throw ConfigError("schema has no fixed class count: " + schema_name);
}

// --- windowing -------------------------------------------------------------------

int window_length(double window_seconds, double sample_rate_hz) {
    if (window_seconds <= 0.0 || sample_rate_hz <= 0.0) {
        throw ConfigError("window length requires positive duration and sample rate");
    }
    long long w = std::llround(window_seconds * sample_rate_hz);
    if (w < 1) throw ConfigError("window shorter than one sample");
    return static_cast<int>(w);
}

int window_stride(int window, double overlap) {
    if (overlap < 0.0 || overlap >= 1.0) throw ConfigError("overlap must be in [0,1)");
    long long s = std::llround(static_cast<double>(window) * (1.0 - overlap));
    return static_cast<int>(std::max<long long>(1, s));
}

std::vector<WindowedSample> segment_windows(const RawRecording& rec, double window_seconds,
                                            double overlap, Domain domain) {
    int w = window_length(window_seconds, rec.sample_rate_hz);
    int stride = window_stride(w, overlap);
    int total = rec.length();
    if (total < w) {
        throw DataError("recording from user " + rec.user_id + " shorter than one window");
    }
    int ch = rec.channels();
    std::vector<WindowedSample> out;
    for (int start = 0; start + w <= total; start += stride) {
        int first = rec.activity[static_cast<size_t>(start)];
        bool uniform = true;
        for (int i = 1; i < w; ++i) {
            if (rec.activity[static_cast<size_t>(start + i)] != first) {
                uniform = false;
                break;
            }
        }
        if (!uniform) continue; // spans an activity boundary
        WindowedSample sample;
        sample.values = Tensor({ch, w});
        for (int i = 0; i < w; ++i) {
            const auto& row = rec.samples[static_cast<size_t>(start + i)];
            for (int c = 0; c < ch; ++c) sample.values(c, i) = row[static_cast<size_t>(c)];
        }
        sample.domain = domain;
        sample.activity = first;
        sample.seq_index = start / stride;
        out.push_back(std::move(sample));
    }
    return out;
}

// --- normalization -----------------------------------------------------------------

ChannelStats compute_channel_stats(const std::vector<WindowedSample>& windows) {
    if (windows.empty()) throw DataError("cannot compute channel stats from zero windows");
    int ch = windows.front().values.dim(0);
    std::vector<double> sum(static_cast<size_t>(ch), 0.0), sumsq(static_cast<size_t>(ch), 0.0);
    long long count = 0;
    for (const auto& win : windows) {
        int w = win.values.dim(1);
        for (int c = 0; c < ch; ++c) {
            for (int i = 0; i < w; ++i) {
                double v = win.values(c, i);
                sum[static_cast<size_t>(c)] += v;
                sumsq[static_cast<size_t>(c)] += v * v;
            }
        }
        count += w;
    }
    ChannelStats stats;
    stats.mean.resize(static_cast<size_t>(ch));
    stats.stddev.resize(static_cast<size_t>(ch));
    for (int c = 0; c < ch; ++c) {
        double m = sum[static_cast<size_t>(c)] / static_cast<double>(count);
        double var = sumsq[static_cast<size_t>(c)] / static_cast<double>(count) - m * m;
        stats.mean[static_cast<size_t>(c)] = m;
        stats.stddev[static_cast<size_t>(c)] = std::sqrt(std::max(0.0, var));
    }
    return stats;
}

void normalize_channels(std::vector<WindowedSample>& windows, const ChannelStats& stats) {
    for (auto& win : windows) {
        int ch = win.values.dim(0);
        int w = win.values.dim(1);
        if (static_cast<size_t>(ch) != stats.mean.size()) {
            throw DimensionError("normalize_channels: channel count mismatch");
        }
        for (int c = 0; c < ch; ++c) {
            double sd = stats.stddev[static_cast<size_t>(c)];
            if (sd < 1e-12) continue; // zero-spread channel passes through
            double m = stats.mean[static_cast<size_t>(c)];
            for (int i = 0; i < w; ++i) win.values(c, i) = (win.values(c, i) - m) / sd;
        }
    }
}

// --- target split ---------------------------------------------------------------------

std::pair<std::vector<WindowedSample>, std::vector<WindowedSample>> split_target(
    const std::vector<WindowedSample>& windows, double val_fraction, uint64_t seed) {
    if (val_fraction <= 0.0 || val_fraction >= 1.0) {
        throw ConfigError("val_fraction must be in (0,1)");
    }
    std::map<int, std::vector<int>> by_class;
    for (size_t i = 0; i < windows.size(); ++i) {
        if (!windows[i].activity.has_value()) {
            throw DataError("split_target requires labelled windows");
        }
        by_class[*windows[i].activity].push_back(static_cast<int>(i));
    }
    // Largest-remainder allocation keeps each class within one window of the
    // requested fraction while the overall split hits it exactly.
    std::vector<int> split_classes;
    long long splittable = 0;
    for (auto& [cls, idx] : by_class) {
        if (idx.size() < 2) continue;
        split_classes.push_back(cls);
        splittable += static_cast<long long>(idx.size());
    }
    long long val_total = std::llround(val_fraction * static_cast<double>(splittable));
    std::map<int, int> val_count;
    std::vector<std::pair<double, int>> remainders;
    long long assigned = 0;
    for (int cls : split_classes) {
        double ideal = val_fraction * static_cast<double>(by_class[cls].size());
        int base = static_cast<int>(std::floor(ideal));
        base = std::clamp(base, 1, static_cast<int>(by_class[cls].size()) - 1);
        val_count[cls] = base;
        assigned += base;
        remainders.emplace_back(-(ideal - std::floor(ideal)), cls);
    }
    std::sort(remainders.begin(), remainders.end());
    for (const auto& [neg_rem, cls] : remainders) {
        if (assigned >= val_total) break;
        if (val_count[cls] < static_cast<int>(by_class[cls].size()) - 1) {
            val_count[cls] += 1;
            ++assigned;
        }
    }

    Rng rng(seed);
    std::vector<WindowedSample> val, test;
    for (auto& [cls, idx] : by_class) {
        if (idx.size() < 2) {
            std::cerr << "warning: class " << cls << " has " << idx.size()
                      << " window(s); kept whole in test\n";
            for (int i : idx) test.push_back(windows[static_cast<size_t>(i)]);
            continue;
        }
        rng.shuffle(idx);
        int n_val = val_count[cls];
        for (size_t k = 0; k < idx.size(); ++k) {
            const auto& w = windows[static_cast<size_t>(idx[k])];
            (k < static_cast<size_t>(n_val) ? val : test).push_back(w);
        }
    }
    return {std::move(val), std::move(test)};
}

// --- synthetic generator ----------------------------------------------------------------

void SynthConfig::validate() const {
    if (classes < 1) throw ConfigError("synth: classes must be >= 1");
    if (states_per_class < 1) throw ConfigError("synth: states_per_class must be >= 1");
    if (channels < 1) throw ConfigError("synth: channels must be >= 1");
    if (sample_rate_hz <= 0.0) throw ConfigError("synth: sample_rate_hz must be positive");
    if (windows_per_user < classes) throw ConfigError("synth: need at least one window per class");
    if (state_scatter < 0.0) throw ConfigError("synth: state_scatter must be >= 0");
    if (mean_state_duration < 1.0) throw ConfigError("synth: mean_state_duration must be >= 1");
    if (target_duration_dilation <= 0.0) throw ConfigError("synth: duration dilation must be positive");
    for (double g : target_gains) {
        if (g == 0.0) throw ConfigError("synth: zero channel gain makes the transform singular");
    }
    if (noise_std < 0.0) throw ConfigError("synth: noise_std must be >= 0");
}

std::vector<double> channel_mixing_matrix(int channels, double angle_deg) {
    // Identity, then a Givens rotation applied in each adjacent channel plane.
    std::vector<double> m(static_cast<size_t>(channels) * channels, 0.0);
    for (int i = 0; i < channels; ++i) m[static_cast<size_t>(i) * channels + i] = 1.0;
    double a = angle_deg * M_PI / 180.0;
    double c = std::cos(a), s = std::sin(a);
    for (int p = 0; p + 1 < channels; ++p) {
        // rotate rows p, p+1 of m
        for (int j = 0; j < channels; ++j) {
            double r0 = m[static_cast<size_t>(p) * channels + j];
            double r1 = m[static_cast<size_t>(p + 1) * channels + j];
            m[static_cast<size_t>(p) * channels + j] = c * r0 - s * r1;
            m[static_cast<size_t>(p + 1) * channels + j] = s * r0 + c * r1;
        }
    }
    return m;
}

namespace {

struct EmissionModel {
    // mean[class][state][channel]
    std::vector<std::vector<std::vector<double>>> mean;
    // orthonormal basis of the class-center plane, empty when degenerate
    std::vector<double> plane_u1, plane_u2;
};

EmissionModel draw_emissions(const SynthConfig& cfg, Rng& rng) {
    int ch = cfg.channels;
    EmissionModel em;
    em.mean.assign(static_cast<size_t>(cfg.classes), {});

    // Class centers sit on a regular simplex over the leading channels, so the
    // separation geometry and the bite of the target transform are the same
    // for every seed; state offsets, durations and noise carry the variety.
    std::vector<std::vector<double>> centers(static_cast<size_t>(cfg.classes),
                                             std::vector<double>(static_cast<size_t>(ch), 0.0));
    if (cfg.classes <= ch) {
        double pairwise = 3.2 * cfg.regime_scale;
        double scale = pairwise / std::sqrt(2.0);
        double centroid = scale / cfg.classes;
        for (int c = 0; c < cfg.classes; ++c) {
            for (int j = 0; j < cfg.classes; ++j) {
                centers[static_cast<size_t>(c)][static_cast<size_t>(j)] = -centroid;
            }
            centers[static_cast<size_t>(c)][static_cast<size_t>(c)] += scale;
        }
    } else {
        for (auto& center : centers) {
            for (double& v : center) v = cfg.regime_scale * rng.normal();
        }
    }

    for (int c = 0; c < cfg.classes; ++c) {
        em.mean[static_cast<size_t>(c)].assign(static_cast<size_t>(cfg.states_per_class), {});
        for (int s = 0; s < cfg.states_per_class; ++s) {
            std::vector<double> mu(static_cast<size_t>(ch));
            for (int j = 0; j < ch; ++j) {
                mu[static_cast<size_t>(j)] = centers[static_cast<size_t>(c)][static_cast<size_t>(j)] +
                                             cfg.state_scatter * cfg.regime_scale * rng.normal();
            }
            em.mean[static_cast<size_t>(c)][static_cast<size_t>(s)] = std::move(mu);
        }
    }

    // Orthonormal basis spanning the class centers (plus random fill-ins),
    // Gram-Schmidt over center differences.
    if (cfg.classes >= 2) {
        std::vector<std::vector<double>> candidates;
        for (int c = 1; c < cfg.classes; ++c) {
            std::vector<double> d(static_cast<size_t>(ch));
            for (int j = 0; j < ch; ++j) {
                d[static_cast<size_t>(j)] = centers[static_cast<size_t>(c)][static_cast<size_t>(j)] -
                                            centers[0][static_cast<size_t>(j)];
            }
            candidates.push_back(std::move(d));
        }
        for (int extra = 0; extra < ch; ++extra) {
            std::vector<double> d(static_cast<size_t>(ch));
            for (double& v : d) v = rng.normal();
            candidates.push_back(std::move(d));
        }
        std::vector<std::vector<double>> basis;
        for (auto& cand : candidates) {
            if (basis.size() == 2) break;
            std::vector<double> v = cand;
            for (const auto& b : basis) {
                double dot = 0.0;
                for (int j = 0; j < ch; ++j) dot += v[static_cast<size_t>(j)] * b[static_cast<size_t>(j)];
                for (int j = 0; j < ch; ++j) v[static_cast<size_t>(j)] -= dot * b[static_cast<size_t>(j)];
            }
            double norm = 0.0;
            for (double x : v) norm += x * x;
            if (norm < 1e-10) continue;
            norm = std::sqrt(norm);
            for (double& x : v) x /= norm;
            basis.push_back(std::move(v));
        }
        if (basis.size() == 2) {
            em.plane_u1 = basis[0];
            em.plane_u2 = basis[1];
        }
    }
    return em;
}

// Rotation by angle_deg within the plane spanned by orthonormal u1, u2.
std::vector<double> in_plane_rotation(const std::vector<double>& u1, const std::vector<double>& u2,
                                      double angle_deg) {
    int n = static_cast<int>(u1.size());
    double a = angle_deg * M_PI / 180.0;
    double c = std::cos(a), s = std::sin(a);
    std::vector<double> m(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double v = (i == j) ? 1.0 : 0.0;
            v += (c - 1.0) * (u1[static_cast<size_t>(i)] * u1[static_cast<size_t>(j)] +
                              u2[static_cast<size_t>(i)] * u2[static_cast<size_t>(j)]);
            v += s * (u2[static_cast<size_t>(i)] * u1[static_cast<size_t>(j)] -
                      u1[static_cast<size_t>(i)] * u2[static_cast<size_t>(j)]);
            m[static_cast<size_t>(i) * n + j] = v;
        }
    }
    return m;
}

} // namespace

std::pair<std::vector<RawRecording>, std::vector<RecordingStateTrace>> synth_recordings(
    const SynthConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng master(seed);
    Rng emission_rng = master.fork(1);
    Rng source_rng = master.fork(2);
    Rng target_rng = master.fork(3);
    EmissionModel em = draw_emissions(cfg, emission_rng);

    int w = window_length(cfg.window_seconds, cfg.sample_rate_hz);
    int stride = window_stride(w, cfg.overlap);

    std::vector<double> identity = channel_mixing_matrix(cfg.channels, 0.0);
    // Rotate within the class-center plane when it exists: the class geometry
    // then shifts by the same angle regardless of the seed's frame.
    std::vector<double> rotation =
        (!em.plane_u1.empty() && cfg.target_rotation_deg != 0.0)
            ? in_plane_rotation(em.plane_u1, em.plane_u2, cfg.target_rotation_deg)
            : channel_mixing_matrix(cfg.channels, cfg.target_rotation_deg);
    std::vector<double> target_map(rotation);
    for (int i = 0; i < cfg.channels; ++i) {
        double gain = cfg.target_gains.empty()
                          ? 1.0
                          : cfg.target_gains[static_cast<size_t>(i) % cfg.target_gains.size()];
        if (gain == 0.0) throw ConfigError("synth: zero channel gain makes the transform singular");
        for (int j = 0; j < cfg.channels; ++j) {
            target_map[static_cast<size_t>(i) * cfg.channels + j] *= gain;
        }
    }

    std::vector<RawRecording> recordings;
    std::vector<RecordingStateTrace> traces;
    const char* users[2] = {"source", "target"};
    for (int u = 0; u < 2; ++u) {
        Rng& rng = (u == 0) ? source_rng : target_rng;
        const std::vector<double>& mix = (u == 0) ? identity : target_map;
        double duration = cfg.mean_state_duration * (u == 0 ? 1.0 : cfg.target_duration_dilation);
        double advance_p = 1.0 / duration;
        for (int cls = 0; cls < cfg.classes; ++cls) {
            int n_windows = cfg.windows_per_user / cfg.classes +
                            (cls < cfg.windows_per_user % cfg.classes ? 1 : 0);
            int total = w + (n_windows - 1) * stride;
            RawRecording rec;
            rec.user_id = users[u];
            rec.sample_rate_hz = cfg.sample_rate_hz;
            rec.channel_names.reserve(static_cast<size_t>(cfg.channels));
            for (int c = 0; c < cfg.channels; ++c) {
                rec.channel_names.push_back(c < 6 ? kSensorChannels[static_cast<size_t>(c)]
                                                  : "ch_" + std::to_string(c));
            }
            RecordingStateTrace trace;
            trace.user_id = users[u];
            trace.class_id = cls;
            int state = 0;
            for (int t = 0; t < total; ++t) {
                if (t > 0 && rng.uniform() < advance_p) {
                    state = (state + 1) % cfg.states_per_class;
                }
                const auto& mu = em.mean[static_cast<size_t>(cls)][static_cast<size_t>(state)];
                std::vector<double> canonical(static_cast<size_t>(cfg.channels));
                for (int j = 0; j < cfg.channels; ++j) {
                    canonical[static_cast<size_t>(j)] =
                        mu[static_cast<size_t>(j)] + cfg.noise_std * rng.normal();
                }
                std::vector<double> mixed(static_cast<size_t>(cfg.channels), 0.0);
                for (int i = 0; i < cfg.channels; ++i) {
                    double acc = 0.0;
                    for (int j = 0; j < cfg.channels; ++j) {
                        acc += mix[static_cast<size_t>(i) * cfg.channels + j] *
                               canonical[static_cast<size_t>(j)];
                    }
                    mixed[static_cast<size_t>(i)] = acc;
                }
                rec.samples.push_back(std::move(mixed));
                rec.activity.push_back(cls);
                trace.states.push_back(state);
            }
            recordings.push_back(std::move(rec));
            traces.push_back(std::move(trace));
        }
    }
    return {std::move(recordings), std::move(traces)};
}

namespace {

int majority_state(const std::vector<int>& states, int start, int len) {
    std::map<int, int> counts;
    for (int i = 0; i < len; ++i) counts[states[static_cast<size_t>(start + i)]]++;
    int best = -1, best_count = -1;
    for (auto [s, n] : counts) {
        if (n > best_count) {
            best = s;
            best_count = n;
        }
    }
    return best;
}

} // namespace

SynthResult synth_crossuser(const SynthConfig& cfg, uint64_t seed) {
    auto [recordings, traces] = synth_recordings(cfg, seed);

    std::vector<std::string> labels;
    for (int c = 0; c < cfg.classes; ++c) labels.push_back("activity_" + std::to_string(c));
    DatasetInfo info;
    info.recordings = std::move(recordings);
    info.label_names = labels;
    info.sample_rate_hz = cfg.sample_rate_hz;

    SynthResult result;
    result.traces = std::move(traces);
    result.split = build_split(info, "source", "target", cfg.window_seconds, cfg.overlap,
                               cfg.val_fraction, seed ^ 0x5eedULL);

    // Per-window majority ground-truth states, aligned with the split ordering.
    int w = window_length(cfg.window_seconds, cfg.sample_rate_hz);
    int stride = window_stride(w, cfg.overlap);
    auto states_for = [&](const std::string& user, std::vector<int>& out) {
        for (const auto& trace : result.traces) {
            if (trace.user_id != user) continue;
            for (int start = 0; start + w <= static_cast<int>(trace.states.size());
                 start += stride) {
                out.push_back(majority_state(trace.states, start, w));
            }
        }
    };
    states_for("source", result.source_state_truth);
    states_for("target", result.target_state_truth);
    return result;
}

void write_generic_csv(const std::string& dir, const std::vector<RawRecording>& recordings,
                       const std::vector<std::string>& label_names, double sample_rate_hz) {
    fs::create_directories(dir);
    std::map<std::string, std::vector<const RawRecording*>> by_user;
    for (const auto& rec : recordings) {
        if (rec.channels() != 6) {
            throw ConfigError("generic-csv requires exactly the 6 declared sensor channels");
        }
        by_user[rec.user_id].push_back(&rec);
    }
    json manifest;
    manifest["sample_rate_hz"] = sample_rate_hz;
    manifest["labels"] = label_names;
    json users = json::object();
    for (const auto& [user, recs] : by_user) users[user] = user + ".csv";
    manifest["users"] = users;
    std::ofstream mf(fs::path(dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";

    for (const auto& [user, recs] : by_user) {
        std::ofstream out(fs::path(dir) / (user + ".csv"));
        out << "timestamp,user,activity,acc_x,acc_y,acc_z,gyr_x,gyr_y,gyr_z\n";
        out.precision(17);
        long long row_idx = 0;
        for (const RawRecording* rec : recs) {
            for (int t = 0; t < rec->length(); ++t, ++row_idx) {
                out << (static_cast<double>(row_idx) / sample_rate_hz) << ',' << user << ','
                    << label_names[static_cast<size_t>(rec->activity[static_cast<size_t>(t)])];
                for (int c = 0; c < 6; ++c) out << ',' << rec->samples[static_cast<size_t>(t)][static_cast<size_t>(c)];
                out << '\n';
            }
        }
    }
}

DatasetSplit build_split(const DatasetInfo& info, const std::string& source_user,
                         const std::string& target_user, double window_seconds, double overlap,
                         double val_fraction, uint64_t split_seed) {
    DatasetSplit split;
    split.label_names = info.label_names;
    split.num_classes = static_cast<int>(info.label_names.size());

    std::vector<WindowedSample> target_all;
    int recording_id = 0;
    bool saw_source = false, saw_target = false;
    for (const auto& rec : info.recordings) {
        bool is_source = rec.user_id == source_user;
        bool is_target = rec.user_id == target_user;
        if (!is_source && !is_target) {
            ++recording_id;
            continue;
        }
        saw_source |= is_source;
        saw_target |= is_target;
        Domain domain = is_source ? Domain::Source : Domain::Target;
        auto windows = segment_windows(rec, window_seconds, overlap, domain);
        for (auto& w : windows) {
            w.recording_id = recording_id;
            (is_source ? split.source_train : target_all).push_back(std::move(w));
        }
        ++recording_id;
    }
    if (!saw_source) throw DataError("source user not found: " + source_user);
    if (!saw_target) throw DataError("target user not found: " + target_user);
    if (split.source_train.empty()) throw DataError("no source windows survive segmentation");
    if (target_all.empty()) throw DataError("no target windows survive segmentation");

    // Normalization statistics come from the source training windows only.
    ChannelStats stats = compute_channel_stats(split.source_train);
    normalize_channels(split.source_train, stats);
    normalize_channels(target_all, stats);

    int uid = 0;
    for (auto& w : split.source_train) w.uid = uid++;
    for (auto& w : target_all) w.uid = uid++;

    auto [val, test] = split_target(target_all, val_fraction, split_seed);
    split.target_val = std::move(val);
    split.target_test = std::move(test);

    split.target_train.reserve(target_all.size());
    split.target_train_truth.reserve(target_all.size());
    for (auto& w : target_all) {
        split.target_train_truth.push_back(w.activity.value_or(-1));
        w.activity.reset(); // training never sees target labels
        split.target_train.push_back(std::move(w));
    }
    return split;
}

} // namespace dgdata
