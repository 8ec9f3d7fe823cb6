#include "mtr/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <sstream>

namespace mtr {

namespace {

constexpr char kMagic[8] = {'M', 'T', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    put_u32(out, static_cast<std::uint32_t>(v & 0xFFFFFFFFULL));
    put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw CheckpointError("checkpoint truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in) {
    std::uint64_t lo = get_u32(in);
    std::uint64_t hi = get_u32(in);
    return lo | (hi << 32);
}

void put_str(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& in) {
    std::uint32_t n = get_u32(in);
    if (n > (1u << 28)) throw CheckpointError("checkpoint corrupt (string length)");
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw CheckpointError("checkpoint truncated");
    return s;
}

void put_mat(std::ostream& out, const ad::Mat& m) {
    put_u64(out, static_cast<std::uint64_t>(m.rows()));
    put_u64(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(m.size())));
}

ad::Mat get_mat(std::istream& in) {
    auto rows = static_cast<Eigen::Index>(get_u64(in));
    auto cols = static_cast<Eigen::Index>(get_u64(in));
    if (rows < 0 || cols < 0 || rows * cols > (1LL << 30))
        throw CheckpointError("checkpoint corrupt (tensor shape)");
    ad::Mat m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(m.size())));
    if (!in) throw CheckpointError("checkpoint truncated");
    return m;
}

nlohmann::json meta_to_json(const CheckpointMeta& meta, bool has_inferrer) {
    nlohmann::json j;
    j["kind"] = meta.kind;
    j["epoch"] = meta.epoch;
    j["schedule"] = {{"epoch", meta.schedule.epoch},   {"beta_f", meta.schedule.beta_f},
                     {"beta_o", meta.schedule.beta_o}, {"tf_rate", meta.schedule.tf_rate},
                     {"lr", meta.schedule.lr}};
    j["voice_instruments"] = meta.voice_instruments;
    j["hints_trained"] = meta.hints_trained;
    j["n_voices"] = meta.n_voices;
    j["has_inferrer"] = has_inferrer;
    return j;
}

}  // namespace

void save_checkpoint(std::ostream& out, const MultiTrackVae& model,
                     const CheckpointMeta& meta, const nn::AdamState* opt) {
    out.write(kMagic, 8);
    put_u32(out, kVersion);
    std::string cfg = model.config().to_json_text();
    put_str(out, cfg);
    put_u64(out, model.config().hash());
    put_str(out, meta_to_json(meta, model.has_voice_inferrer()).dump());

    auto items = model.params().items();
    put_u32(out, static_cast<std::uint32_t>(items.size()));
    for (const auto& [name, t] : items) {
        put_str(out, name);
        put_mat(out, t->value);
    }
    out.put(opt ? 1 : 0);
    if (opt) {
        put_u64(out, static_cast<std::uint64_t>(opt->step));
        put_u32(out, static_cast<std::uint32_t>(opt->moments.size()));
        for (const auto& [name, mv] : opt->moments) {
            put_str(out, name);
            put_mat(out, mv.first);
            put_mat(out, mv.second);
        }
    }
    if (!out) throw CheckpointError("failed writing checkpoint");
}

void save_checkpoint(const std::string& path, const MultiTrackVae& model,
                     const CheckpointMeta& meta, const nn::AdamState* opt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint: " + path);
    save_checkpoint(out, model, meta, opt);
}

LoadedCheckpoint load_checkpoint(std::istream& in,
                                 const std::vector<std::string>* expected_vocab) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 7) != 0)
        throw CheckpointError("not a checkpoint file");
    if (magic[7] != kMagic[7])
        throw CheckpointError("unsupported checkpoint version (legacy format)");
    std::uint32_t version = get_u32(in);
    if (version != kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

    std::string cfg_text = get_str(in);
    std::uint64_t stored_hash = get_u64(in);
    ModelConfig cfg;
    nlohmann::json jm;
    try {
        cfg = ModelConfig::from_json_text(cfg_text);
        jm = nlohmann::json::parse(get_str(in));
    } catch (const nlohmann::json::exception&) {
        throw CheckpointError("checkpoint corrupt (metadata unreadable)");
    }
    if (cfg.hash() != stored_hash)
        throw CheckpointError("checkpoint config hash mismatch");
    if (expected_vocab && *expected_vocab != cfg.instruments)
        throw CheckpointError("checkpoint instrument vocabulary mismatch");

    LoadedCheckpoint lc;
    lc.meta.kind = jm.at("kind").get<std::string>();
    lc.meta.epoch = jm.at("epoch").get<int>();
    lc.meta.schedule.epoch = jm.at("schedule").at("epoch").get<int>();
    lc.meta.schedule.beta_f = jm.at("schedule").at("beta_f").get<double>();
    lc.meta.schedule.beta_o = jm.at("schedule").at("beta_o").get<double>();
    lc.meta.schedule.tf_rate = jm.at("schedule").at("tf_rate").get<double>();
    lc.meta.schedule.lr = jm.at("schedule").at("lr").get<double>();
    lc.meta.voice_instruments = jm.at("voice_instruments").get<std::vector<int>>();
    lc.meta.hints_trained = jm.at("hints_trained").get<bool>();
    lc.meta.n_voices = jm.at("n_voices").get<int>();
    bool has_inferrer = jm.at("has_inferrer").get<bool>();

    lc.model = std::make_unique<MultiTrackVae>(cfg, 0);
    if (has_inferrer) lc.model->enable_voice_inferrer(0);

    std::uint32_t count = get_u32(in);
    auto items = lc.model->params().items();
    if (count != items.size())
        throw CheckpointError("checkpoint parameter count mismatch");
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = get_str(in);
        ad::Mat m = get_mat(in);
        ad::Tensor& t = lc.model->params().get(name);
        if (t.value.rows() != m.rows() || t.value.cols() != m.cols())
            throw CheckpointError("checkpoint tensor shape mismatch for " + name);
        t.value = std::move(m);
        t.grad.setZero();
    }
    int has_opt = in.get();
    if (has_opt == 1) {
        lc.has_opt = true;
        lc.opt.step = static_cast<long>(get_u64(in));
        std::uint32_t n = get_u32(in);
        for (std::uint32_t i = 0; i < n; ++i) {
            std::string name = get_str(in);
            ad::Mat m1 = get_mat(in);
            ad::Mat m2 = get_mat(in);
            lc.opt.moments[name] = {std::move(m1), std::move(m2)};
        }
    }
    return lc;
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::vector<std::string>* expected_vocab) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    return load_checkpoint(in, expected_vocab);
}

std::unique_ptr<MultiTrackVae> clone_model(const MultiTrackVae& model) {
    std::stringstream buf;
    save_checkpoint(buf, model, CheckpointMeta{});
    buf.seekg(0);
    return load_checkpoint(buf).model;
}

}  // namespace mtr
