// SPDX-License-Identifier: Apache-2.0

#include "crrn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace crrn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'R', 'R', 'N'};

template <class T>
void put(std::string& out, T value) {
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    out.append(raw, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <class T>
    T get(const char* what) {
        T value;
        std::memcpy(&value, take(sizeof(T), what), sizeof(T));
        return value;
    }
    std::string get_string(std::size_t n, const char* what) { return {take(n, what), n}; }
    bool done() const { return pos_ == bytes_.size(); }

private:
    const char* take(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

template <class Fn>
void for_each_stats_tensor(std::vector<ResidualStats>& stats, Fn&& fn) {
    for (std::size_t i = 0; i < stats.size(); ++i) {
        const std::string prefix = direction_prefix(i, stats.size()) + "stats.";
        fn(prefix + "bn1.mean", stats[i].bn1.mean);
        fn(prefix + "bn1.var", stats[i].bn1.var);
        fn(prefix + "bn2.mean", stats[i].bn2.mean);
        fn(prefix + "bn2.var", stats[i].bn2.var);
    }
}

void put_tensor(std::string& out, const std::string& name, const Tensor& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
    const TrainState& s = ck.state;
    std::ostringstream rng;
    rng << s.rng;
    nlohmann::json initialized = nlohmann::json::array();
    for (const auto& st : s.params.stats) initialized.push_back({st.bn1.initialized, st.bn2.initialized});
    const nlohmann::json meta{{"model", s.params.config},
                              {"train", ck.train},
                              {"optimizer",
                               {{"epoch", s.epoch}, {"learning_rate", s.learning_rate}, {"best_val_pa", s.best_val_pa}}},
                              {"rng", rng.str()},
                              {"stats_initialized", initialized}};
    const std::string meta_text = meta.dump();

    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, meta_text.size());
    out += meta_text;
    s.params.for_each_tensor([&out](const std::string& name, const Tensor& t) { put_tensor(out, name, t); });
    auto stats = s.params.stats;
    for_each_stats_tensor(stats, [&out](const std::string& name, const Tensor& t) { put_tensor(out, name, t); });
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    Reader in(bytes);
    if (in.get_string(4, "magic") != std::string(kMagic, 4)) throw CheckpointError("not a checkpoint (bad magic)");
    const auto version = in.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    const auto meta_len = in.get<std::uint64_t>("metadata length");
    if (meta_len > bytes.size()) throw CheckpointError("checkpoint truncated while reading metadata");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(in.get_string(meta_len, "metadata"));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("bad checkpoint metadata: ") + e.what());
    }

    Checkpoint ck;
    try {
        const ModelConfig model = meta.at("model").get<ModelConfig>();
        model.validate();
        ck.train = meta.at("train").get<TrainConfig>();
        ck.state.params = CrrnParams::zeros(model);
        const auto& opt = meta.at("optimizer");
        ck.state.epoch = opt.at("epoch").get<std::size_t>();
        ck.state.learning_rate = opt.at("learning_rate").get<double>();
        ck.state.best_val_pa = opt.at("best_val_pa").get<double>();
        std::istringstream rng(meta.at("rng").get<std::string>());
        rng >> ck.state.rng;
        if (!rng) throw CheckpointError("bad generator state in checkpoint");
        const auto& initialized = meta.at("stats_initialized");
        if (initialized.size() != ck.state.params.stats.size()) throw CheckpointError("stats flag count mismatch");
        for (std::size_t i = 0; i < initialized.size(); ++i) {
            ck.state.params.stats[i].bn1.initialized = initialized.at(i).at(0).get<bool>();
            ck.state.params.stats[i].bn2.initialized = initialized.at(i).at(1).get<bool>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("bad checkpoint metadata: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("bad checkpoint metadata: ") + e.what());
    }

    std::map<std::string, Tensor*> slots;
    ck.state.params.for_each_tensor([&slots](const std::string& name, Tensor& t) { slots[name] = &t; });
    for_each_stats_tensor(ck.state.params.stats, [&slots](const std::string& name, Tensor& t) { slots[name] = &t; });

    std::size_t loaded = 0;
    while (!in.done()) {
        const auto name_len = in.get<std::uint32_t>("tensor name length");
        const std::string name = in.get_string(name_len, "tensor name");
        const auto it = slots.find(name);
        if (it == slots.end() || it->second == nullptr) throw CheckpointError("unexpected or repeated tensor " + name);
        const auto rank = in.get<std::uint32_t>("tensor rank");
        Shape shape(rank);
        for (auto& d : shape) d = in.get<std::uint64_t>("tensor extent");
        Tensor& slot = *it->second;
        if (shape != slot.shape()) {
            throw CheckpointError("tensor " + name + " has shape " + shape_string(shape) + ", model expects " +
                                  shape_string(slot.shape()));
        }
        const std::string raw = in.get_string(slot.size() * sizeof(double), "tensor values");
        std::memcpy(slot.data(), raw.data(), raw.size());
        it->second = nullptr;
        ++loaded;
    }
    if (loaded != slots.size()) {
        throw CheckpointError("checkpoint holds " + std::to_string(loaded) + " of " + std::to_string(slots.size()) +
                              " tensors");
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    const std::string bytes = serialize_checkpoint(checkpoint);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_checkpoint(buf.str());
}

}  // namespace crrn
