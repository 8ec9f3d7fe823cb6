#include "mtr/rearrange.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace fs = std::filesystem;

namespace mtr {

namespace {

Eigen::VectorXd query_of(MultiTrackVae& model, const TrackFunction& f) {
    auto [zp, zt] = model.encode_function(f);
    Eigen::VectorXd q(zp.mean.size() + zt.mean.size());
    q << zp.mean, zt.mean;
    return q;
}

TrackRoll decode_to_track(MultiTrackVae& model, const Eigen::VectorXd& z, int instrument,
                          TrackRole role) {
    NoteEventSequence seq = model.decode_track(z);
    TrackRoll tr;
    tr.grid = events_to_roll(seq);
    tr.instrument = instrument;
    tr.role = role;
    return tr;
}

// reference track with the highest mean pitch centre over sounding steps
int most_melodic_instrument(const Segment& reference, int fallback) {
    double best = -1.0;
    int inst = fallback;
    for (const TrackRoll& tr : reference.tracks) {
        AuxFeatures aux = aux_features(tr);
        double sum = 0.0;
        int n = 0;
        for (int t = 0; t < kSteps; ++t) {
            if (aux.rhythm[t] > 0) {
                sum += aux.pitch_centre[t];
                ++n;
            }
        }
        if (n == 0) continue;
        double mean = sum / n;
        if (mean > best) {
            best = mean;
            inst = tr.instrument;
        }
    }
    return inst;
}

Segment run_pipeline(const Segment& source, const Segment& reference,
                     MultiTrackVae& model, const RearrangeOptions& opts,
                     bool with_melody_query, RearrangeTrace* trace) {
    if (reference.tracks.empty())
        throw std::invalid_argument("rearrange: reference has no tracks");

    const TrackRoll* melody = nullptr;
    if (with_melody_query) {
        for (const TrackRoll& tr : source.tracks)
            if (tr.role == TrackRole::Melody) {
                melody = &tr;
                break;
            }
        if (!melody)
            throw std::invalid_argument(
                "orchestrate: preserve_melody set but source has no melody-tagged track");
    }

    Mixture mix = condense_mixture(source);
    LatentGaussian z_mix = model.encode_mixture(mix);

    std::vector<std::pair<Eigen::VectorXd, int>> queries;
    std::vector<TrackRole> roles;
    std::vector<int> instruments;
    for (const TrackRoll& tr : reference.tracks) {
        queries.emplace_back(query_of(model, track_function(tr)), tr.instrument);
        roles.push_back(tr.role);
        instruments.push_back(tr.instrument);
    }
    if (melody) {
        int mel_inst =
            most_melodic_instrument(reference, model.instrument_id("flute"));
        queries.emplace_back(query_of(model, track_function(*melody)), mel_inst);
        roles.push_back(TrackRole::Melody);
        instruments.push_back(mel_inst);
    }

    std::vector<LatentGaussian> posts = model.separate(z_mix.mean, queries);

    Segment out;
    out.beats_per_bar = source.beats_per_bar;
    out.resolution = source.resolution;
    out.source_id = source.source_id;
    Rng rng(Rng::mix(opts.seed, "melody_sample"));
    for (size_t m = 0; m < posts.size(); ++m) {
        bool is_melody = melody && m + 1 == posts.size();
        Eigen::VectorXd z = (is_melody && opts.sample_melody_posterior)
                                ? posts[m].sample(rng)
                                : posts[m].mean;
        out.tracks.push_back(decode_to_track(model, z, instruments[m], roles[m]));
        if (trace) trace->z_tracks.push_back(z);
    }
    if (trace) {
        trace->z_mix = z_mix.mean;
        for (const auto& [q, inst] : queries) trace->z_queries.push_back(q);
    }
    return out;
}

}  // namespace

Segment rearrange(const Segment& source, const Segment& reference, MultiTrackVae& model,
                  const RearrangeOptions& opts, RearrangeTrace* trace) {
    return run_pipeline(source, reference, model, opts, false, trace);
}

Segment orchestrate(const Segment& source, const Segment& reference, MultiTrackVae& model,
                    const RearrangeOptions& opts, RearrangeTrace* trace) {
    if (!opts.preserve_melody)
        throw std::invalid_argument("orchestrate requires preserve_melody");
    return run_pipeline(source, reference, model, opts, true, trace);
}

ReferenceDB ReferenceDB::build(const std::vector<LoadedSegment>& segments) {
    ReferenceDB db;
    for (const LoadedSegment& ls : segments) {
        if (ls.segment.tracks.empty() || ls.segment.note_count() == 0) continue;
        Entry e;
        e.segment = ls.segment;
        e.mixture_fn = track_function(condense_mixture(ls.segment).grid);
        for (const TrackRoll& tr : ls.segment.tracks)
            e.track_fns.push_back(track_function(tr));
        e.piece_id = ls.piece_id;
        e.seg_index = ls.index;
        db.entries_.push_back(std::move(e));
    }
    return db;
}

std::vector<std::pair<std::string, std::vector<size_t>>> ReferenceDB::pieces() const {
    std::vector<std::pair<std::string, std::vector<size_t>>> out;
    std::map<std::string, size_t> pos;
    for (size_t i = 0; i < entries_.size(); ++i) {
        auto it = pos.find(entries_[i].piece_id);
        if (it == pos.end()) {
            pos[entries_[i].piece_id] = out.size();
            out.push_back({entries_[i].piece_id, {i}});
        } else {
            out[it->second].second.push_back(i);
        }
    }
    for (auto& [id, idxs] : out)
        std::sort(idxs.begin(), idxs.end(), [this](size_t a, size_t b) {
            return entries_[a].seg_index < entries_[b].seg_index;
        });
    return out;
}

namespace {

void put_fn(std::ofstream& out, const TrackFunction& f) {
    out.write(reinterpret_cast<const char*>(f.pitch_fn.data()), sizeof(double) * kPitches);
    out.write(reinterpret_cast<const char*>(f.time_fn.data()), sizeof(double) * kSteps);
}

TrackFunction get_fn(std::ifstream& in) {
    TrackFunction f;
    in.read(reinterpret_cast<char*>(f.pitch_fn.data()), sizeof(double) * kPitches);
    in.read(reinterpret_cast<char*>(f.time_fn.data()), sizeof(double) * kSteps);
    return f;
}

}  // namespace

void ReferenceDB::save(const std::string& dir, const InstrumentTable& table) const {
    fs::create_directories(dir);
    nlohmann::json j;
    j["version"] = 1;
    j["entries"] = nlohmann::json::array();
    std::ofstream bin((fs::path(dir) / "features.bin").string(), std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write reference db sidecar");
    for (const Entry& e : entries_) {
        nlohmann::json je;
        je["piece_id"] = e.piece_id;
        je["seg_index"] = e.seg_index;
        je["source_id"] = e.segment.source_id;
        nlohmann::json insts = nlohmann::json::array();
        nlohmann::json roles = nlohmann::json::array();
        for (const TrackRoll& tr : e.segment.tracks) {
            insts.push_back(table.at(tr.instrument).name);
            roles.push_back(role_name(tr.role));
        }
        je["instruments"] = insts;
        je["roles"] = roles;
        j["entries"].push_back(je);

        put_fn(bin, e.mixture_fn);
        std::uint32_t nt = static_cast<std::uint32_t>(e.track_fns.size());
        bin.write(reinterpret_cast<const char*>(&nt), sizeof(nt));
        for (const TrackFunction& f : e.track_fns) put_fn(bin, f);
        for (const TrackRoll& tr : e.segment.tracks) {
            NoteEventSequence seq = roll_to_events(tr.grid);
            std::uint32_t nn = static_cast<std::uint32_t>(seq.note_count());
            bin.write(reinterpret_cast<const char*>(&nn), sizeof(nn));
            for (int t = 0; t < kSteps; ++t)
                for (const NoteEvent& ev : seq.steps[static_cast<size_t>(t)]) {
                    unsigned char rec[3] = {static_cast<unsigned char>(ev.pitch),
                                            static_cast<unsigned char>(t),
                                            static_cast<unsigned char>(ev.duration)};
                    bin.write(reinterpret_cast<const char*>(rec), 3);
                }
        }
    }
    std::ofstream mf((fs::path(dir) / "refdb.json").string());
    if (!mf) throw std::runtime_error("cannot write reference db manifest");
    mf << j.dump(2) << "\n";
}

ReferenceDB ReferenceDB::load(const std::string& dir, const InstrumentTable& table) {
    std::ifstream mf((fs::path(dir) / "refdb.json").string());
    if (!mf) throw std::runtime_error("cannot open reference db: " + dir);
    nlohmann::json j;
    mf >> j;
    if (j.at("version").get<int>() != 1)
        throw std::runtime_error("unsupported reference db version");
    std::ifstream bin((fs::path(dir) / "features.bin").string(), std::ios::binary);
    if (!bin) throw std::runtime_error("missing reference db sidecar");
    ReferenceDB db;
    for (const auto& je : j.at("entries")) {
        Entry e;
        e.piece_id = je.at("piece_id").get<std::string>();
        e.seg_index = je.at("seg_index").get<int>();
        e.segment.source_id = je.at("source_id").get<std::string>();
        auto insts = je.at("instruments").get<std::vector<std::string>>();
        auto roles = je.at("roles").get<std::vector<std::string>>();
        e.mixture_fn = get_fn(bin);
        std::uint32_t nt = 0;
        bin.read(reinterpret_cast<char*>(&nt), sizeof(nt));
        if (!bin || nt != insts.size())
            throw std::runtime_error("reference db sidecar out of sync");
        for (std::uint32_t i = 0; i < nt; ++i) e.track_fns.push_back(get_fn(bin));
        for (std::uint32_t i = 0; i < nt; ++i) {
            TrackRoll tr;
            tr.instrument = table.id_of(insts[i]);
            tr.role = role_from_name(roles[i]);
            std::uint32_t nn = 0;
            bin.read(reinterpret_cast<char*>(&nn), sizeof(nn));
            for (std::uint32_t k = 0; k < nn; ++k) {
                unsigned char rec[3];
                bin.read(reinterpret_cast<char*>(rec), 3);
                if (!bin) throw std::runtime_error("reference db sidecar truncated");
                tr.grid(rec[0], rec[1]) = rec[2];
            }
            e.segment.tracks.push_back(std::move(tr));
        }
        db.entries_.push_back(std::move(e));
    }
    return db;
}

namespace {
double safe_cos(const TrackFunction& a, const TrackFunction& b) {
    if (a.all_zero() || b.all_zero()) return 0.0;
    return mixture_similarity(a, b);
}
}  // namespace

size_t search_reference(const Segment& source, const ReferenceDB& db, double alpha,
                        Rng& rng) {
    if (db.empty()) throw std::invalid_argument("search_reference: reference db is empty");
    TrackFunction src = track_function(condense_mixture(source).grid);
    double best = -1e300;
    size_t best_i = 0;
    for (size_t i = 0; i < db.size(); ++i) {
        double score = safe_cos(db.at(i).mixture_fn, src);
        if (alpha != 0.0) score += alpha * rng.normal();
        if (score > best) {
            best = score;
            best_i = i;
        }
    }
    return best_i;
}

std::string search_reference_piece(const Piece& source, const ReferenceDB& db,
                                   double alpha, Rng& rng) {
    if (db.empty()) throw std::invalid_argument("search_reference: reference db is empty");
    std::vector<TrackFunction> src_fns;
    for (const Segment& seg : source.segments)
        src_fns.push_back(track_function(condense_mixture(seg).grid));

    double best = -1e300;
    std::string best_id;
    for (const auto& [piece_id, idxs] : db.pieces()) {
        if (idxs.size() < src_fns.size()) continue;
        double score = 0.0;
        for (size_t w = 0; w < src_fns.size(); ++w)
            score += safe_cos(db.at(idxs[w]).mixture_fn, src_fns[w]);
        score /= static_cast<double>(src_fns.size());
        if (alpha != 0.0) score += alpha * rng.normal();
        if (score > best) {
            best = score;
            best_id = piece_id;
        }
    }
    if (best_id.empty())
        throw std::invalid_argument(
            "search_reference: no reference piece is as long as the source");
    return best_id;
}

Piece reference_piece_from_db(const ReferenceDB& db, const std::string& piece_id) {
    Piece p;
    p.id = piece_id;
    for (const auto& [id, idxs] : db.pieces()) {
        if (id != piece_id) continue;
        for (size_t i : idxs) p.segments.push_back(db.at(i).segment);
        return p;
    }
    throw std::invalid_argument("reference db has no piece " + piece_id);
}

Piece rearrange_piece(const Piece& source, const Piece& reference, MultiTrackVae& model,
                      const RearrangeOptions& opts, bool melody_queries) {
    if (reference.num_segments() < source.num_segments())
        throw std::invalid_argument("reference piece is shorter than the source");
    Piece out;
    out.id = source.id;
    out.tempo_bpm = source.tempo_bpm;
    for (int w = 0; w < source.num_segments(); ++w) {
        const Segment& src = source.segments[static_cast<size_t>(w)];
        const Segment& ref = reference.segments[static_cast<size_t>(w)];
        RearrangeOptions wopts = opts;
        wopts.seed = Rng::mix(opts.seed, "window" + std::to_string(w));
        Segment res = melody_queries ? orchestrate(src, ref, model, wopts)
                                     : rearrange(src, ref, model, wopts);
        out.segments.push_back(std::move(res));
    }
    return out;
}

}  // namespace mtr
