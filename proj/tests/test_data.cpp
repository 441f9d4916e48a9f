#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <doctest.h>

#include "dgdata/data.hpp"
#include "dgdata/errors.hpp"

using namespace dgdata;
namespace fs = std::filesystem;

namespace {

RawRecording constant_activity_recording(int total, double fs, int channels = 2,
                                         int activity = 0) {
    RawRecording rec;
    rec.user_id = "u";
    rec.sample_rate_hz = fs;
    for (int c = 0; c < channels; ++c) rec.channel_names.push_back("ch" + std::to_string(c));
    for (int t = 0; t < total; ++t) {
        std::vector<double> row(static_cast<size_t>(channels));
        for (int c = 0; c < channels; ++c) row[static_cast<size_t>(c)] = t * 0.1 + c;
        rec.samples.push_back(row);
        rec.activity.push_back(activity);
    }
    return rec;
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("window length and stride follow the protocol") {
    CHECK(window_length(3.0, 30.0) == 90);
    CHECK(window_stride(90, 0.5) == 45);
    CHECK(window_length(2.0, 16.0) == 32);
    CHECK(window_stride(32, 0.0) == 32);
    CHECK_THROWS_AS(window_stride(32, 1.0), ConfigError);
    CHECK_THROWS_AS(window_stride(32, -0.1), ConfigError);
}

TEST_CASE("segment_windows count formula and brute force agree") {
    RawRecording rec = constant_activity_recording(1000, 30.0);
    auto windows = segment_windows(rec, 3.0, 0.5, Domain::Source);
    CHECK(windows.size() == 21); // floor((1000-90)/45)+1

    Rng rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        int total = 50 + rng.uniform_int(2000);
        double fs = 10.0 + rng.uniform_int(90);
        double seconds = (1 + rng.uniform_int(40)) / 10.0;
        double overlap = rng.uniform_int(10) / 10.0;
        int w;
        try {
            w = window_length(seconds, fs);
        } catch (const ConfigError&) {
            continue;
        }
        if (w > total) continue;
        int stride = window_stride(w, overlap);
        int brute = 0;
        for (int start = 0; start + w <= total; start += stride) ++brute;
        RawRecording r = constant_activity_recording(total, fs);
        CHECK(static_cast<int>(segment_windows(r, seconds, overlap, Domain::Source).size()) == brute);
    }
}

TEST_CASE("segment_windows discards activity-boundary windows and keeps chronology") {
    RawRecording rec = constant_activity_recording(200, 10.0);
    for (int t = 100; t < 200; ++t) rec.activity[static_cast<size_t>(t)] = 1;
    auto windows = segment_windows(rec, 2.0, 0.5, Domain::Target); // W=20, stride=10
    int prev = -1;
    for (const auto& w : windows) {
        CHECK(w.activity.has_value());
        CHECK(w.seq_index > prev);
        prev = w.seq_index;
        CHECK(w.domain == Domain::Target);
    }
    // starts 90 (spans 90..109, mixed) is dropped
    std::set<int> seqs;
    for (const auto& w : windows) seqs.insert(w.seq_index);
    CHECK(!seqs.count(9));
    CHECK(seqs.count(8));
    CHECK(seqs.count(10));

    RawRecording tiny = constant_activity_recording(5, 10.0);
    CHECK_THROWS_AS(segment_windows(tiny, 2.0, 0.5, Domain::Source), DataError);
}

TEST_CASE("normalize_channels standardizes and guards zero spread") {
    RawRecording rec = constant_activity_recording(400, 20.0, 3);
    // make channel 2 constant
    for (auto& row : rec.samples) row[2] = 7.0;
    auto windows = segment_windows(rec, 1.0, 0.0, Domain::Source);
    ChannelStats stats = compute_channel_stats(windows);
    normalize_channels(windows, stats);

    ChannelStats post = compute_channel_stats(windows);
    CHECK(std::abs(post.mean[0]) < 1e-9);
    CHECK(std::abs(post.stddev[0] - 1.0) < 1e-9);
    CHECK(std::abs(post.mean[1]) < 1e-9);
    for (const auto& w : windows) {
        for (int i = 0; i < w.values.dim(1); ++i) CHECK(w.values(2, i) == 7.0);
    }

    // already standardized stays put
    ChannelStats unit;
    unit.mean = {0.0, 0.0, 0.0};
    unit.stddev = {1.0, 1.0, 1.0};
    auto copy = windows;
    normalize_channels(copy, unit);
    for (size_t i = 0; i < copy.size(); ++i) {
        for (size_t k = 0; k < copy[i].values.data.size(); ++k) {
            CHECK(copy[i].values.data[k] == doctest::Approx(windows[i].values.data[k]).epsilon(1e-12));
        }
    }
}

TEST_CASE("split_target stratifies deterministically") {
    std::vector<WindowedSample> windows;
    for (int i = 0; i < 100; ++i) {
        WindowedSample w;
        w.values = Tensor({1, 4});
        w.activity = i % 4;
        w.uid = i;
        windows.push_back(std::move(w));
    }
    auto [val, test] = split_target(windows, 0.5, 99);
    CHECK(val.size() == 50);
    CHECK(test.size() == 50);

    auto [val2, test2] = split_target(windows, 0.5, 99);
    REQUIRE(val2.size() == val.size());
    for (size_t i = 0; i < val.size(); ++i) CHECK(val[i].uid == val2[i].uid);

    std::set<int> val_uids, test_uids;
    for (const auto& w : val) val_uids.insert(w.uid);
    for (const auto& w : test) test_uids.insert(w.uid);
    for (int uid : val_uids) CHECK(!test_uids.count(uid));

    // per-class proportions within one window of the global fraction
    for (int cls = 0; cls < 4; ++cls) {
        long long in_val = 0;
        for (const auto& w : val) in_val += *w.activity == cls;
        CHECK(std::abs(in_val - 12.5) <= 1.0);
    }

    CHECK_THROWS_AS(split_target(windows, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(split_target(windows, 1.0, 1), ConfigError);
}

TEST_CASE("split_target keeps a one-window class whole in test") {
    std::vector<WindowedSample> windows;
    for (int i = 0; i < 9; ++i) {
        WindowedSample w;
        w.values = Tensor({1, 2});
        w.activity = i < 8 ? 0 : 1; // class 1 has a single window
        w.uid = i;
        windows.push_back(std::move(w));
    }
    auto [val, test] = split_target(windows, 0.5, 7);
    int lone_in_val = 0, lone_in_test = 0;
    for (const auto& w : val) lone_in_val += *w.activity == 1;
    for (const auto& w : test) lone_in_test += *w.activity == 1;
    CHECK(lone_in_val == 0);
    CHECK(lone_in_test == 1);
    CHECK(val.size() + test.size() == 9);
}

TEST_CASE("generic-csv loader round-trips a synthetic dataset") {
    SynthConfig cfg;
    cfg.windows_per_user = 30;
    auto [recordings, traces] = synth_recordings(cfg, 5);
    (void)traces;
    std::vector<std::string> labels = {"activity_0", "activity_1", "activity_2"};
    fs::path dir = fresh_dir("dgdata_test_csv");
    write_generic_csv(dir.string(), recordings, labels, cfg.sample_rate_hz);

    DatasetInfo info = load_dataset(dir.string(), "generic-csv");
    CHECK(info.label_names == labels);
    CHECK(info.sample_rate_hz == cfg.sample_rate_hz);
    REQUIRE(info.recordings.size() == 2); // one concatenated stream per user

    // exact float round-trip through the CSV
    long long sample_count = 0;
    for (const auto& rec : info.recordings) sample_count += rec.length();
    long long expected = 0;
    for (const auto& rec : recordings) expected += rec.length();
    CHECK(sample_count == expected);

    const RawRecording* loaded_source = nullptr;
    for (const auto& rec : info.recordings) {
        if (rec.user_id == "source") loaded_source = &rec;
    }
    REQUIRE(loaded_source != nullptr);
    int offset = 0;
    for (const auto& rec : recordings) {
        if (rec.user_id != "source") continue;
        for (int t = 0; t < rec.length(); ++t) {
            for (int c = 0; c < 6; ++c) {
                CHECK(loaded_source->samples[static_cast<size_t>(offset + t)][static_cast<size_t>(c)] ==
                      rec.samples[static_cast<size_t>(t)][static_cast<size_t>(c)]);
            }
        }
        offset += rec.length();
    }
}

TEST_CASE("generic-csv loader validates schema") {
    fs::path dir = fresh_dir("dgdata_test_badcsv");
    {
        std::ofstream mf(dir / "manifest.json");
        mf << R"({"sample_rate_hz": 10.0, "labels": ["walk"], "users": {"u1": "u1.csv"}})";
        std::ofstream csv(dir / "u1.csv");
        csv << "timestamp,user,activity,acc_x\n0,u1,walk,1\n";
    }
    CHECK_THROWS_AS(load_dataset(dir.string(), "generic-csv"), DataError);
    CHECK_THROWS_AS(load_dataset("/nonexistent/path/xyz", "generic-csv"), DataError);
    CHECK_THROWS_AS(load_dataset(dir.string(), "no-such-schema"), ConfigError);

    // unknown activity labels are dropped, not errors
    {
        std::ofstream csv(dir / "u1.csv");
        csv << "timestamp,user,activity,acc_x,acc_y,acc_z,gyr_x,gyr_y,gyr_z\n";
        for (int i = 0; i < 4; ++i) csv << i << ",u1,walk,1,2,3,4,5,6\n";
        csv << "4,u1,mystery,1,2,3,4,5,6\n";
    }
    DatasetInfo info = load_dataset(dir.string(), "generic-csv");
    CHECK(info.recordings.front().length() == 4);

    // 2-user 2-class hand-written fixture
    fs::path dir2 = fresh_dir("dgdata_test_csv2");
    {
        std::ofstream mf(dir2 / "manifest.json");
        mf << R"({"sample_rate_hz": 5.0, "labels": ["sit", "walk"],
                  "users": {"a": "a.csv", "b": "b.csv"}})";
        for (const char* u : {"a", "b"}) {
            std::ofstream csv(dir2 / (std::string(u) + ".csv"));
            csv << "timestamp,user,activity,acc_x,acc_y,acc_z,gyr_x,gyr_y,gyr_z\n";
            for (int i = 0; i < 10; ++i) {
                csv << i << ',' << u << ',' << (i < 5 ? "sit" : "walk") << ",1,2,3,4,5,6\n";
            }
        }
    }
    DatasetInfo two = load_dataset(dir2.string(), "generic-csv");
    CHECK(two.recordings.size() == 2);
    CHECK(two.label_names.size() == 2);
}

TEST_CASE("declared class counts per schema") {
    CHECK(schema_num_classes("oppt") == 4);
    CHECK(schema_num_classes("pamap2") == 11);
    CHECK(schema_num_classes("dsads") == 19);
    CHECK_THROWS_AS(schema_num_classes("generic-csv"), ConfigError);
}

TEST_CASE("oppt fixture file parses the documented columns") {
    fs::path dir = fresh_dir("dgdata_test_oppt");
    {
        std::ofstream f(dir / "S1-ADL1.dat");
        // 250 columns; put recognizable values in the retained ones
        for (int row = 0; row < 6; ++row) {
            for (int col = 1; col <= 250; ++col) {
                double v = 0.0;
                if (col >= 64 && col <= 69) v = col + row * 0.001;
                if (col == 244) v = (row < 3) ? 1 : (row == 3 ? 0 : 2); // stand/null/walk
                f << v << (col == 250 ? '\n' : ' ');
            }
        }
    }
    DatasetInfo info = load_dataset(dir.string(), "oppt");
    CHECK(info.label_names.size() == 4);
    REQUIRE(info.recordings.size() == 1);
    const RawRecording& rec = info.recordings.front();
    CHECK(rec.user_id == "S1");
    CHECK(rec.sample_rate_hz == 30.0);
    CHECK(rec.length() == 5); // null-label row dropped
    CHECK(rec.samples[0][0] == doctest::Approx(64.0));
    CHECK(rec.samples[0][5] == doctest::Approx(69.0));
    CHECK(rec.activity[0] == 0);
    CHECK(rec.activity[3] == 1);
}

TEST_CASE("pamap2 fixture file parses the documented columns") {
    fs::path dir = fresh_dir("dgdata_test_pamap2");
    {
        std::ofstream f(dir / "subject101.dat");
        // 54 columns: timestamp, activityID, heart rate, then hand/chest/ankle units
        for (int row = 0; row < 5; ++row) {
            for (int col = 1; col <= 54; ++col) {
                std::string v = "0";
                if (col == 1) v = std::to_string(row * 0.01);
                if (col == 2) v = (row == 2) ? "0" : "4"; // transient row dropped
                if (col >= 5 && col <= 7) v = std::to_string(col);     // 16g accelerometer
                if (col >= 11 && col <= 13) v = std::to_string(col);   // gyroscope
                if (col == 3) v = "NaN"; // heart rate unused
                f << v << (col == 54 ? '\n' : ' ');
            }
        }
    }
    DatasetInfo info = load_dataset(dir.string(), "pamap2");
    CHECK(info.label_names.size() == 11);
    REQUIRE(info.recordings.size() == 1);
    const RawRecording& rec = info.recordings.front();
    CHECK(rec.user_id == "1");
    CHECK(rec.sample_rate_hz == 100.0);
    CHECK(rec.length() == 4);
    CHECK(rec.samples[0][0] == doctest::Approx(5.0));
    CHECK(rec.samples[0][3] == doctest::Approx(11.0));
    CHECK(rec.activity[0] == 3); // raw id 4 = walking
}

TEST_CASE("dsads fixture tree parses the documented columns") {
    fs::path dir = fresh_dir("dgdata_test_dsads");
    for (const char* adir : {"a01", "a03"}) {
        fs::create_directories(dir / adir / "p2");
        for (const char* seg : {"s01.txt", "s02.txt"}) {
            std::ofstream f(dir / adir / "p2" / seg);
            for (int row = 0; row < 3; ++row) {
                for (int col = 1; col <= 45; ++col) {
                    f << (col >= 10 && col <= 15 ? col : 0.0) << (col == 45 ? '\n' : ',');
                }
            }
        }
    }
    DatasetInfo info = load_dataset(dir.string(), "dsads");
    CHECK(info.label_names.size() == 19);
    REQUIRE(info.recordings.size() == 2); // one per (user, activity)
    CHECK(info.recordings[0].user_id == "2");
    CHECK(info.recordings[0].length() == 6); // two segments concatenated
    CHECK(info.recordings[0].samples[0][0] == doctest::Approx(10.0));
    CHECK(info.recordings[0].samples[0][5] == doctest::Approx(15.0));
    CHECK(info.recordings[0].activity[0] == 0);
    CHECK(info.recordings[1].activity[0] == 2);
}

TEST_CASE("synthetic generator accounting and transforms") {
    SynthConfig cfg;
    cfg.windows_per_user = 200;
    SynthResult result = synth_crossuser(cfg, 11);
    const DatasetSplit& split = result.split;
    CHECK(split.n_source() == 200);
    CHECK(split.n_target() == 200);
    CHECK(split.num_classes == 3);
    CHECK(split.target_val.size() + split.target_test.size() == 200);
    CHECK(result.source_state_truth.size() == 200);
    CHECK(result.target_state_truth.size() == 200);
    for (const auto& w : split.target_train) CHECK(!w.activity.has_value());
    CHECK(split.target_train_truth.size() == 200);

    // hidden state sequences only stay or advance cyclically
    for (const auto& trace : result.traces) {
        for (size_t t = 1; t < trace.states.size(); ++t) {
            int prev = trace.states[t - 1], cur = trace.states[t];
            bool ok = cur == prev || cur == (prev + 1) % cfg.states_per_class;
            CHECK(ok);
        }
    }
}

TEST_CASE("identity target transform leaves marginals aligned") {
    SynthConfig cfg;
    cfg.windows_per_user = 120;
    cfg.target_rotation_deg = 0.0;
    cfg.target_gains = {1.0};
    cfg.target_duration_dilation = 1.0;
    auto [recordings, traces] = synth_recordings(cfg, 21);
    (void)traces;

    // Two-sample channel-mean comparison, difference below 3 standard errors.
    // The streams are serially correlated through state persistence, so the
    // estimator variance comes from block means (blocks span several states).
    const int block = 160;
    for (int c = 0; c < cfg.channels; ++c) {
        std::vector<double> blocks[2];
        for (const auto& rec : recordings) {
            int u = rec.user_id == "source" ? 0 : 1;
            for (int start = 0; start + block <= rec.length(); start += block) {
                double s = 0.0;
                for (int t = 0; t < block; ++t) {
                    s += rec.samples[static_cast<size_t>(start + t)][static_cast<size_t>(c)];
                }
                blocks[u].push_back(s / block);
            }
        }
        double m[2], v[2];
        for (int u = 0; u < 2; ++u) {
            double s = 0.0, sq = 0.0;
            for (double b : blocks[u]) {
                s += b;
                sq += b * b;
            }
            double n = static_cast<double>(blocks[u].size());
            m[u] = s / n;
            v[u] = sq / n - m[u] * m[u];
        }
        double se = std::sqrt(v[0] / blocks[0].size() + v[1] / blocks[1].size());
        CHECK(std::abs(m[0] - m[1]) < 3.0 * se + 1e-12);
    }

    CHECK_THROWS_AS([&] {
        SynthConfig bad = cfg;
        bad.target_gains = {0.0};
        bad.validate();
    }(), ConfigError);
}

TEST_CASE("pipeline determinism from load to split") {
    SynthConfig cfg;
    cfg.windows_per_user = 60;
    SynthResult a = synth_crossuser(cfg, 33);
    SynthResult b = synth_crossuser(cfg, 33);
    REQUIRE(a.split.source_train.size() == b.split.source_train.size());
    for (size_t i = 0; i < a.split.source_train.size(); ++i) {
        const auto& wa = a.split.source_train[i];
        const auto& wb = b.split.source_train[i];
        REQUIRE(wa.values.data.size() == wb.values.data.size());
        for (size_t k = 0; k < wa.values.data.size(); ++k) {
            CHECK(wa.values.data[k] == wb.values.data[k]);
        }
    }
    REQUIRE(a.split.target_val.size() == b.split.target_val.size());
    for (size_t i = 0; i < a.split.target_val.size(); ++i) {
        CHECK(a.split.target_val[i].uid == b.split.target_val[i].uid);
    }
}
