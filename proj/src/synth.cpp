#include "mtr/synth.hpp"

#include "mtr/midi.hpp"
#include "mtr/rng.hpp"

#include <algorithm>
#include <filesystem>
#include <stdexcept>

namespace fs = std::filesystem;

namespace mtr {

namespace {

const int kMajorScale[7] = {0, 2, 4, 5, 7, 9, 11};

int scale_pitch(int key, int degree) {
    int oct = degree >= 0 ? degree / 7 : -((-degree + 6) / 7);
    int idx = degree - oct * 7;
    return key + kMajorScale[idx] + 12 * oct;
}

int nearest_degree(int key, int pitch) {
    int best = 0;
    int best_d = 1 << 20;
    for (int deg = -40; deg <= 60; ++deg) {
        int d = std::abs(scale_pitch(key, deg) - pitch);
        if (d < best_d) {
            best_d = d;
            best = deg;
        }
    }
    return best;
}

TrackRoll make_melody(int key, Rng& rng, int lo, int hi, const std::vector<int>& onsets,
                      int dur) {
    TrackRoll tr;
    int deg = nearest_degree(key, (lo + hi) / 2 + rng.uniform_int(-3, 3));
    for (int t : onsets) {
        int step = rng.uniform_int(-2, 2);
        deg += step;
        int pitch = scale_pitch(key, deg);
        while (pitch < lo) {
            deg += 2;
            pitch = scale_pitch(key, deg);
        }
        while (pitch > hi) {
            deg -= 2;
            pitch = scale_pitch(key, deg);
        }
        tr.grid(pitch, t) = std::min(dur, kSteps - t);
    }
    return tr;
}

std::vector<int> melody_onsets(int pattern) {
    switch (pattern) {
        case 0: {
            std::vector<int> v;
            for (int t = 0; t < kSteps; t += 2) v.push_back(t);
            return v;
        }
        case 1: {
            std::vector<int> v;
            for (int t = 0; t < kSteps; t += 4) v.push_back(t);
            return v;
        }
        default: {
            std::vector<int> v;
            for (int bar = 0; bar < 2; ++bar) {
                int b = bar * 16;
                for (int t : {0, 2, 4, 8, 10, 12}) v.push_back(b + t);
            }
            return v;
        }
    }
}

Segment make_pop_segment(int key, int layout, int pattern, Rng& rng,
                         const InstrumentTable& table, int accomp_inst, int bass_inst) {
    Segment seg;
    TrackRoll mel = make_melody(key, rng, 60, 79, melody_onsets(pattern),
                                pattern == 1 ? 4 : 2);
    mel.instrument = table.id_of("piano_melody");
    mel.role = TrackRole::Melody;
    seg.tracks.push_back(std::move(mel));

    static const int kProgressions[3][4] = {{0, 3, 4, 0}, {0, 5, 3, 4}, {0, 4, 5, 3}};
    int prog = rng.uniform_int(0, 2);
    if (layout >= 2) {
        TrackRoll acc;
        acc.instrument = accomp_inst;
        acc.role = TrackRole::Accompaniment;
        for (int c = 0; c < 4; ++c) {
            int t = c * 8;
            int deg = kProgressions[prog][c];
            for (int off : {0, 2, 4}) {
                int pitch = scale_pitch(key, deg + off) + 48;
                while (pitch > 67) pitch -= 12;
                while (pitch < 48) pitch += 12;
                if (acc.grid(pitch, t) == 0) acc.grid(pitch, t) = 8;
            }
        }
        seg.tracks.push_back(std::move(acc));
    }
    if (layout >= 3) {
        TrackRoll bass;
        bass.instrument = bass_inst;
        bass.role = TrackRole::Other;
        for (int c = 0; c < 2; ++c) {
            int t = c * 16;
            int deg = kProgressions[prog][c * 2];
            int pitch = scale_pitch(key, deg) + 36;
            while (pitch > 47) pitch -= 12;
            while (pitch < 34) pitch += 12;
            bass.grid(pitch, t) = 16;
        }
        seg.tracks.push_back(std::move(bass));
    }
    return seg;
}

Segment make_voices_segment(int key, Rng& rng) {
    struct Stratum {
        int lo, hi;
    };
    static const Stratum kStrata[4] = {{72, 84}, {64, 71}, {55, 63}, {43, 54}};
    Segment seg;
    for (int v = 0; v < 4; ++v) {
        std::vector<int> onsets;
        for (int t = 0; t < kSteps; t += 4) onsets.push_back(t);
        TrackRoll tr = make_melody(key, rng, kStrata[v].lo, kStrata[v].hi, onsets, 4);
        tr.role = TrackRole::Other;
        seg.tracks.push_back(std::move(tr));
    }
    return seg;
}

}  // namespace

std::vector<Piece> synth_corpus(const SynthOptions& opts, const InstrumentTable& table) {
    std::vector<Piece> pieces;
    const int violin = table.id_of("violin");
    const int viola = table.id_of("viola");
    const int cello = table.id_of("cello");
    static const char* kAccomp[] = {"acoustic_piano", "organ", "clean_electric_guitar",
                                    "string_ensemble"};
    static const char* kBass[] = {"acoustic_bass", "electric_bass"};

    for (int pi = 0; pi < opts.num_pieces; ++pi) {
        Rng rng(Rng::mix(opts.seed, "piece" + std::to_string(pi)));
        Piece piece;
        piece.tempo_bpm = 120.0;
        if (opts.preset == SynthOptions::Preset::Pop) {
            piece.id = "pop_" + std::to_string(pi);
            int key = rng.uniform_int(0, 11);
            int layout = 1 + (pi % 4 == 0 ? 0 : (pi % 2) + 1);  // mix of 1/2/3 tracks
            int accomp = table.id_of(kAccomp[rng.uniform_int(0, 3)]);
            int bass = table.id_of(kBass[rng.uniform_int(0, 1)]);
            int pattern = rng.uniform_int(0, 2);
            for (int s = 0; s < opts.segments_per_piece; ++s)
                piece.segments.push_back(
                    make_pop_segment(key, layout, pattern, rng, table, accomp, bass));
        } else {
            piece.id = "voices_" + std::to_string(pi);
            int key = rng.uniform_int(0, 11);
            for (int s = 0; s < opts.segments_per_piece; ++s) {
                Segment seg = make_voices_segment(key, rng);
                seg.tracks[0].instrument = violin;
                seg.tracks[1].instrument = violin;
                seg.tracks[2].instrument = viola;
                seg.tracks[3].instrument = cello;
                piece.segments.push_back(std::move(seg));
            }
        }
        for (size_t s = 0; s < piece.segments.size(); ++s)
            piece.segments[s].source_id = piece.id + ":" + std::to_string(s);
        pieces.push_back(std::move(piece));
    }
    return pieces;
}

std::vector<std::string> write_synth_corpus(const SynthOptions& opts,
                                            const InstrumentTable& table,
                                            const std::string& dir) {
    fs::create_directories(dir);
    std::vector<std::string> paths;
    for (const Piece& piece : synth_corpus(opts, table)) {
        auto bytes = render_midi(piece, table);
        std::string path = (fs::path(dir) / (piece.id + ".mid")).string();
        write_file_bytes(path, bytes);
        paths.push_back(path);
    }
    return paths;
}

}  // namespace mtr
