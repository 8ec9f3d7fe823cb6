#include "mtr/types.hpp"

#include <algorithm>
#include <stdexcept>

namespace mtr {

std::string role_name(TrackRole role) {
    switch (role) {
        case TrackRole::Melody: return "melody";
        case TrackRole::Accompaniment: return "accompaniment";
        case TrackRole::Other: return "other";
        default: return "none";
    }
}

TrackRole role_from_name(const std::string& name) {
    if (name == "melody") return TrackRole::Melody;
    if (name == "accompaniment") return TrackRole::Accompaniment;
    if (name == "other") return TrackRole::Other;
    return TrackRole::None;
}

int TrackRoll::note_count() const {
    return static_cast<int>((grid.array() > 0).count());
}

void TrackRoll::validate() const {
    if (grid.rows() != kPitches || grid.cols() != kSteps)
        throw std::invalid_argument("track grid must be 128x32");
    for (int t = 0; t < kSteps; ++t) {
        for (int p = 0; p < kPitches; ++p) {
            int v = grid(p, t);
            if (v < 0 || v > kMaxDuration)
                throw std::invalid_argument("grid entry outside [0,32]");
            if (v > kSteps - t)
                throw std::invalid_argument("note extends past segment boundary");
        }
    }
}

int Segment::note_count() const {
    int n = 0;
    for (const auto& tr : tracks) n += tr.note_count();
    return n;
}

int Mixture::note_count() const {
    return static_cast<int>((grid.array() > 0).count());
}

int NoteEventSequence::note_count() const {
    int n = 0;
    for (const auto& s : steps) n += static_cast<int>(s.size());
    return n;
}

Mixture condense_mixture(const Segment& seg) {
    if (seg.tracks.empty())
        throw std::invalid_argument("condense_mixture: segment has no tracks");
    Mixture mix;
    mix.grid = seg.tracks.front().grid;
    for (size_t n = 1; n < seg.tracks.size(); ++n)
        mix.grid = mix.grid.cwiseMax(seg.tracks[n].grid);
    return mix;
}

Grid transpose_grid(const Grid& grid, int semitones) {
    Grid out = Grid::Zero(kPitches, kSteps);
    for (int p = 0; p < kPitches; ++p) {
        int q = p + semitones;
        if (q < 0 || q >= kPitches) continue;
        out.row(q) = grid.row(p);
    }
    return out;
}

Segment transpose(const Segment& seg, int semitones) {
    if (semitones < -11 || semitones > 11)
        throw std::invalid_argument("transpose: |semitones| must be <= 11");
    Segment out = seg;
    for (auto& tr : out.tracks) tr.grid = transpose_grid(tr.grid, semitones);
    return out;
}

NoteEventSequence roll_to_events(const Grid& grid) {
    NoteEventSequence seq;
    for (int t = 0; t < kSteps; ++t) {
        for (int p = 0; p < kPitches; ++p) {
            int d = grid(p, t);
            if (d > 0) seq.steps[t].push_back({p, d});
        }
    }
    return seq;
}

Grid events_to_roll(const NoteEventSequence& seq) {
    if (seq.steps.size() != static_cast<size_t>(kSteps))
        throw std::invalid_argument("events_to_roll: sequence must have 32 steps");
    Grid grid = Grid::Zero(kPitches, kSteps);
    for (int t = 0; t < kSteps; ++t) {
        int last_pitch = -1;
        for (const auto& ev : seq.steps[t]) {
            if (ev.pitch < 0 || ev.pitch >= kPitches)
                throw std::invalid_argument("events_to_roll: pitch out of range");
            if (ev.duration < 1 || ev.duration > kMaxDuration)
                throw std::invalid_argument("events_to_roll: duration out of range");
            if (ev.pitch == last_pitch)
                throw std::invalid_argument("events_to_roll: duplicate pitch within a step");
            if (ev.pitch < last_pitch)
                throw std::invalid_argument("events_to_roll: pitches not ascending");
            grid(ev.pitch, t) = ev.duration;
            last_pitch = ev.pitch;
        }
    }
    return grid;
}

}  // namespace mtr
