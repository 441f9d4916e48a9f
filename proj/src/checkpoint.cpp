#include "dgdata/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dgdata/config_json.hpp"
#include "dgdata/errors.hpp"

namespace fs = std::filesystem;

namespace dgdata {

namespace {

constexpr char kMagic[8] = {'D', 'G', 'D', 'T', 'C', 'K', 'P', 'T'};
constexpr char kEndMagic[8] = {'D', 'G', 'D', 'T', 'E', 'N', 'D', '.'};
constexpr uint32_t kVersion = 1;

struct Writer {
    std::ostream& out;

    void bytes(const void* p, size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void u32(uint32_t v) { bytes(&v, sizeof v); }
    void i64(int64_t v) { bytes(&v, sizeof v); }
    void f64(double v) { bytes(&v, sizeof v); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void tensor(const Tensor& t) {
        u32(static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) u32(static_cast<uint32_t>(d));
        for (double v : t.data) f64(v);
    }
    void ints(const std::vector<int>& v) {
        u32(static_cast<uint32_t>(v.size()));
        for (int x : v) i64(x);
    }
};

struct Reader {
    std::istream& in;

    void bytes(void* p, size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in) throw IntegrityError("checkpoint truncated");
    }
    uint32_t u32() {
        uint32_t v;
        bytes(&v, sizeof v);
        return v;
    }
    int64_t i64() {
        int64_t v;
        bytes(&v, sizeof v);
        return v;
    }
    double f64() {
        double v;
        bytes(&v, sizeof v);
        return v;
    }
    std::string str() {
        uint32_t n = u32();
        if (n > (1u << 28)) throw IntegrityError("checkpoint string length implausible");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    Tensor tensor() {
        uint32_t rank = u32();
        if (rank == 0 || rank > 4) throw IntegrityError("checkpoint tensor rank implausible");
        std::vector<int> shape;
        long long numel = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            uint32_t d = u32();
            if (d == 0 || d > (1u << 28)) throw IntegrityError("checkpoint tensor dim implausible");
            shape.push_back(static_cast<int>(d));
            numel *= d;
        }
        Tensor t;
        t.shape = std::move(shape);
        t.data.resize(static_cast<size_t>(numel));
        for (auto& v : t.data) v = f64();
        return t;
    }
    std::vector<int> ints() {
        uint32_t n = u32();
        if (n > (1u << 28)) throw IntegrityError("checkpoint vector length implausible");
        std::vector<int> v(n);
        for (auto& x : v) x = static_cast<int>(i64());
        return v;
    }
};

void check_shape(const Tensor& loaded, const Tensor& expected, const std::string& name) {
    if (!loaded.same_shape(expected)) {
        throw IntegrityError("checkpoint blob '" + name + "' has shape " + loaded.shape_str() +
                             ", expected " + expected.shape_str());
    }
}

} // namespace

void save_checkpoint(const std::string& path, Trainer& trainer) {
    std::ostringstream buf(std::ios::binary);
    Writer w{buf};
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kVersion);
    w.str(train_config_to_json(trainer.config()).dump());

    std::vector<Parameter*> params = trainer.all_params();
    w.u32(static_cast<uint32_t>(params.size()));
    for (Parameter* p : params) {
        w.str(p->name);
        w.i64(p->step);
        w.tensor(p->value);
        w.tensor(p->moment1);
        w.tensor(p->moment2);
    }

    NamedTensors buffers = trainer.all_buffers();
    w.u32(static_cast<uint32_t>(buffers.size()));
    for (auto& [name, tensor] : buffers) {
        w.str(name);
        w.tensor(*tensor);
    }

    const FeatureRange& range = trainer.range();
    w.u32(range.initialized ? 1 : 0);
    w.u32(range.frozen ? 1 : 0);
    if (range.initialized) {
        w.tensor(range.min);
        w.tensor(range.max);
    }

    const PseudoLabelState& pseudo = trainer.pseudo_state();
    w.ints(pseudo.state);
    w.ints(pseudo.prev_state);
    w.ints(pseudo.target_pseudo_class);
    w.i64(pseudo.epoch);

    // best-validation snapshot: values only, optimizer state is never resumed from it
    std::vector<Parameter*> best = trainer.best_params();
    w.u32(static_cast<uint32_t>(best.size()));
    for (Parameter* p : best) {
        w.str(p->name);
        w.tensor(p->value);
    }
    NamedTensors best_buffers = trainer.best_buffers();
    w.u32(static_cast<uint32_t>(best_buffers.size()));
    for (auto& [name, tensor] : best_buffers) {
        w.str(name);
        w.tensor(*tensor);
    }
    const FeatureRange& best_range = trainer.best_range();
    w.u32(best_range.initialized ? 1 : 0);
    w.u32(best_range.frozen ? 1 : 0);
    if (best_range.initialized) {
        w.tensor(best_range.min);
        w.tensor(best_range.max);
    }
    w.f64(trainer.best_val_accuracy());
    w.i64(trainer.best_epoch());

    w.str(trainer.train_rng().serialize());
    w.i64(trainer.epoch());
    w.bytes(kEndMagic, sizeof kEndMagic);

    fs::path tmp = fs::path(path).concat(".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint: " + path);
        const std::string payload = buf.str();
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!out) throw DataError("checkpoint write failed: " + path);
    }
    fs::rename(tmp, path);
}

TrainConfig checkpoint_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    Reader r{in};
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw IntegrityError("not a checkpoint file: " + path);
    }
    uint32_t version = r.u32();
    if (version != kVersion) {
        throw IntegrityError("checkpoint format version " + std::to_string(version) +
                             " incompatible with supported version " + std::to_string(kVersion));
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(r.str());
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError("checkpoint config unreadable: " + std::string(e.what()));
    }
    return train_config_from_json(j);
}

void load_checkpoint(const std::string& path, Trainer& trainer) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    Reader r{in};
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw IntegrityError("not a checkpoint file: " + path);
    }
    uint32_t version = r.u32();
    if (version != kVersion) {
        throw IntegrityError("checkpoint format version " + std::to_string(version) +
                             " incompatible with supported version " + std::to_string(kVersion));
    }
    std::string cfg_json = r.str();
    (void)cfg_json; // config equality is the caller's contract; shapes are checked below

    // Stage everything before touching the trainer so a truncated file cannot
    // leave partial state behind.
    std::vector<Parameter*> params = trainer.all_params();
    uint32_t n_params = r.u32();
    if (n_params != params.size()) {
        throw IntegrityError("checkpoint parameter count mismatch");
    }
    struct ParamBlob {
        int64_t step;
        Tensor value, m1, m2;
    };
    std::vector<ParamBlob> blobs(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        std::string name = r.str();
        if (name != params[i]->name) {
            throw IntegrityError("checkpoint parameter '" + name + "' does not match expected '" +
                                 params[i]->name + "'");
        }
        blobs[i].step = r.i64();
        blobs[i].value = r.tensor();
        blobs[i].m1 = r.tensor();
        blobs[i].m2 = r.tensor();
        check_shape(blobs[i].value, params[i]->value, name);
        check_shape(blobs[i].m1, params[i]->moment1, name);
        check_shape(blobs[i].m2, params[i]->moment2, name);
    }

    NamedTensors buffers = trainer.all_buffers();
    uint32_t n_buffers = r.u32();
    if (n_buffers != buffers.size()) throw IntegrityError("checkpoint buffer count mismatch");
    std::vector<Tensor> buffer_blobs(buffers.size());
    for (size_t i = 0; i < buffers.size(); ++i) {
        std::string name = r.str();
        if (name != buffers[i].first) {
            throw IntegrityError("checkpoint buffer '" + name + "' does not match expected '" +
                                 buffers[i].first + "'");
        }
        buffer_blobs[i] = r.tensor();
        check_shape(buffer_blobs[i], *buffers[i].second, name);
    }

    uint32_t range_init = r.u32();
    uint32_t range_frozen = r.u32();
    Tensor range_min, range_max;
    if (range_init) {
        range_min = r.tensor();
        range_max = r.tensor();
    }

    std::vector<int> state = r.ints();
    std::vector<int> prev_state = r.ints();
    std::vector<int> target_pseudo = r.ints();
    int64_t pseudo_epoch = r.i64();
    if (state.size() != trainer.pseudo_state().state.size() ||
        prev_state.size() != trainer.pseudo_state().prev_state.size() ||
        target_pseudo.size() != trainer.pseudo_state().target_pseudo_class.size()) {
        throw IntegrityError("checkpoint pseudo-label sizes do not match the dataset");
    }

    std::vector<Parameter*> best = trainer.best_params();
    uint32_t n_best = r.u32();
    if (n_best != best.size()) throw IntegrityError("checkpoint best-snapshot count mismatch");
    std::vector<Tensor> best_values(best.size());
    for (size_t i = 0; i < best.size(); ++i) {
        std::string name = r.str();
        if (name != best[i]->name) {
            throw IntegrityError("checkpoint best-snapshot blob '" + name + "' unexpected");
        }
        best_values[i] = r.tensor();
        check_shape(best_values[i], best[i]->value, name);
    }
    NamedTensors best_buffers = trainer.best_buffers();
    uint32_t n_best_buffers = r.u32();
    if (n_best_buffers != best_buffers.size()) {
        throw IntegrityError("checkpoint best-buffer count mismatch");
    }
    std::vector<Tensor> best_buffer_values(best_buffers.size());
    for (size_t i = 0; i < best_buffers.size(); ++i) {
        std::string name = r.str();
        if (name != best_buffers[i].first) {
            throw IntegrityError("checkpoint best buffer '" + name + "' unexpected");
        }
        best_buffer_values[i] = r.tensor();
        check_shape(best_buffer_values[i], *best_buffers[i].second, name);
    }
    uint32_t best_range_init = r.u32();
    uint32_t best_range_frozen = r.u32();
    Tensor best_range_min, best_range_max;
    if (best_range_init) {
        best_range_min = r.tensor();
        best_range_max = r.tensor();
    }
    double best_val = r.f64();
    int64_t best_epoch = r.i64();

    std::string rng_state = r.str();
    int64_t epoch = r.i64();
    char end[8];
    r.bytes(end, sizeof end);
    if (std::memcmp(end, kEndMagic, sizeof kEndMagic) != 0) {
        throw IntegrityError("checkpoint end marker missing");
    }
    if (in.peek() != EOF) throw IntegrityError("checkpoint has trailing bytes");

    // Commit.
    for (size_t i = 0; i < params.size(); ++i) {
        params[i]->step = blobs[i].step;
        params[i]->value = std::move(blobs[i].value);
        params[i]->moment1 = std::move(blobs[i].m1);
        params[i]->moment2 = std::move(blobs[i].m2);
        params[i]->zero_grad();
    }
    for (size_t i = 0; i < buffers.size(); ++i) *buffers[i].second = std::move(buffer_blobs[i]);
    FeatureRange& range = trainer.range();
    range.initialized = range_init != 0;
    range.frozen = range_frozen != 0;
    if (range.initialized) {
        range.min = std::move(range_min);
        range.max = std::move(range_max);
    }
    PseudoLabelState& pseudo = trainer.pseudo_state();
    pseudo.state = std::move(state);
    pseudo.prev_state = std::move(prev_state);
    pseudo.target_pseudo_class = std::move(target_pseudo);
    pseudo.epoch = static_cast<int>(pseudo_epoch);
    for (size_t i = 0; i < best.size(); ++i) {
        best[i]->value = std::move(best_values[i]);
        best[i]->step = blobs[i].step; // live and snapshot params are collected in the same order
    }
    for (size_t i = 0; i < best_buffers.size(); ++i) {
        *best_buffers[i].second = std::move(best_buffer_values[i]);
    }
    FeatureRange& brange = trainer.best_range();
    brange.initialized = best_range_init != 0;
    brange.frozen = best_range_frozen != 0;
    if (brange.initialized) {
        brange.min = std::move(best_range_min);
        brange.max = std::move(best_range_max);
    }
    trainer.set_best(best_val, static_cast<int>(best_epoch));
    trainer.train_rng().deserialize(rng_state);
    trainer.set_epoch(static_cast<int>(epoch));
}

} // namespace dgdata
