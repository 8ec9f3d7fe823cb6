#include "mtr/manifest.hpp"

#include "mtr/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace mtr {

void CorpusManifest::save(const std::string& path) const {
    nlohmann::json j;
    j["version"] = version;
    j["pieces"] = nlohmann::json::array();
    for (const PieceEntry& p : pieces) {
        nlohmann::json jp;
        jp["id"] = p.id;
        jp["path"] = p.path;
        jp["corpus"] = p.corpus;
        jp["split"] = p.split;
        jp["eight_beat_windows"] = p.eight_beat_windows;
        jp["tempo_bpm"] = p.tempo_bpm;
        jp["segments"] = nlohmann::json::array();
        for (const SegmentEntry& s : p.segments) {
            nlohmann::json js;
            js["index"] = s.index;
            js["instruments"] = s.instruments;
            js["roles"] = s.roles;
            js["note_count"] = s.note_count;
            jp["segments"].push_back(js);
        }
        j["pieces"].push_back(jp);
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

CorpusManifest CorpusManifest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    nlohmann::json j;
    in >> j;
    CorpusManifest m;
    m.version = j.at("version").get<int>();
    if (m.version != 1) throw std::runtime_error("unsupported manifest version");
    for (const auto& jp : j.at("pieces")) {
        PieceEntry p;
        p.id = jp.at("id").get<std::string>();
        p.path = jp.at("path").get<std::string>();
        p.corpus = jp.at("corpus").get<std::string>();
        p.split = jp.at("split").get<std::string>();
        p.eight_beat_windows = jp.at("eight_beat_windows").get<bool>();
        p.tempo_bpm = jp.value("tempo_bpm", 120.0);
        for (const auto& js : jp.at("segments")) {
            SegmentEntry s;
            s.index = js.at("index").get<int>();
            s.instruments = js.at("instruments").get<std::vector<std::string>>();
            s.roles = js.at("roles").get<std::vector<std::string>>();
            s.note_count = js.at("note_count").get<int>();
            p.segments.push_back(std::move(s));
        }
        m.pieces.push_back(std::move(p));
    }
    return m;
}

std::string manifest_dir_of(const std::string& manifest_path) {
    fs::path p(manifest_path);
    auto dir = p.parent_path();
    return dir.empty() ? std::string(".") : dir.string();
}

CorpusManifest prepare_corpus(const std::vector<std::string>& midi_paths,
                              const std::string& manifest_dir,
                              const InstrumentTable& table, const PrepareOptions& opts,
                              std::vector<std::string>* warnings) {
    CorpusManifest m;
    IngestConfig icfg;
    icfg.eight_beat_windows = opts.eight_beat_windows;
    for (const std::string& path : midi_paths) {
        try {
            auto bytes = read_file_bytes(path);
            IngestResult res = ingest_midi(bytes, table, icfg);
            if (warnings)
                for (const auto& w : res.warnings)
                    warnings->push_back(path + ": " + w);
            if (res.piece.segments.empty()) {
                if (warnings) warnings->push_back(path + ": no usable segments");
                continue;
            }
            PieceEntry p;
            p.id = fs::path(path).stem().string();
            p.path = fs::relative(fs::path(path), fs::path(manifest_dir)).string();
            p.corpus = opts.corpus_tag;
            p.eight_beat_windows = opts.eight_beat_windows;
            p.tempo_bpm = res.piece.tempo_bpm;
            for (size_t i = 0; i < res.piece.segments.size(); ++i) {
                const Segment& seg = res.piece.segments[i];
                SegmentEntry s;
                s.index = static_cast<int>(i);
                for (const TrackRoll& tr : seg.tracks) {
                    s.instruments.push_back(table.at(tr.instrument).name);
                    s.roles.push_back(role_name(tr.role));
                }
                s.note_count = seg.note_count();
                p.segments.push_back(std::move(s));
            }
            m.pieces.push_back(std::move(p));
        } catch (const std::exception& e) {
            if (warnings) warnings->push_back(path + ": " + e.what());
        }
    }
    // piece-level split assignment, deterministic in (seed, order)
    std::vector<size_t> order(m.pieces.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(Rng::mix(opts.seed, "splits"));
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    size_t n = order.size();
    size_t n_train = static_cast<size_t>(std::lround(opts.train_ratio * static_cast<double>(n)));
    size_t n_val = static_cast<size_t>(std::lround(opts.val_ratio * static_cast<double>(n)));
    if (n > 0 && n_train == 0) n_train = 1;
    for (size_t i = 0; i < n; ++i) {
        std::string split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
        m.pieces[order[i]].split = split;
    }
    return m;
}

namespace {
bool split_wanted(const std::vector<std::string>& splits, const std::string& s) {
    if (splits.empty()) return true;
    return std::find(splits.begin(), splits.end(), s) != splits.end();
}
}  // namespace

std::vector<LoadedSegment> load_segments(const CorpusManifest& manifest,
                                         const std::string& manifest_dir,
                                         const InstrumentTable& table,
                                         const LoadOptions& opts) {
    std::vector<LoadedSegment> out;
    for (const PieceEntry& p : manifest.pieces) {
        if (!split_wanted(opts.splits, p.split)) continue;
        auto bytes = read_file_bytes((fs::path(manifest_dir) / p.path).string());
        IngestConfig icfg;
        icfg.eight_beat_windows = p.eight_beat_windows;
        IngestResult res = ingest_midi(bytes, table, icfg);
        if (res.piece.segments.size() != p.segments.size())
            throw std::runtime_error("manifest out of date for piece " + p.id +
                                     " (segment count mismatch)");
        for (size_t i = 0; i < res.piece.segments.size(); ++i) {
            const Segment& full = res.piece.segments[i];
            Segment seg;
            seg.source_id = p.id + ":" + std::to_string(i);
            for (const TrackRoll& tr : full.tracks)
                if (!tr.empty()) seg.tracks.push_back(tr);
            if (seg.tracks.empty() && opts.drop_empty_segments) continue;
            LoadedSegment ls;
            ls.segment = std::move(seg);
            ls.piece_id = p.id;
            ls.corpus = p.corpus;
            ls.split = p.split;
            ls.index = static_cast<int>(i);
            out.push_back(std::move(ls));
        }
    }
    return out;
}

std::vector<Piece> load_pieces(const CorpusManifest& manifest,
                               const std::string& manifest_dir,
                               const InstrumentTable& table,
                               const std::vector<std::string>& splits) {
    std::vector<Piece> out;
    for (const PieceEntry& p : manifest.pieces) {
        if (!split_wanted(splits, p.split)) continue;
        auto bytes = read_file_bytes((fs::path(manifest_dir) / p.path).string());
        IngestConfig icfg;
        icfg.eight_beat_windows = p.eight_beat_windows;
        IngestResult res = ingest_midi(bytes, table, icfg);
        res.piece.id = p.id;
        out.push_back(std::move(res.piece));
    }
    return out;
}

}  // namespace mtr
