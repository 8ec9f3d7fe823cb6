#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mtr {

inline constexpr int kPitches = 128;     // MIDI pitch rows
inline constexpr int kSteps = 32;        // 2 bars of 4/4 at 1/4-beat resolution
inline constexpr int kStepsPerBeat = 4;
inline constexpr int kMaxDuration = kSteps;

using Grid = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;  // kPitches x kSteps

enum class TrackRole { None, Melody, Accompaniment, Other };

std::string role_name(TrackRole role);
TrackRole role_from_name(const std::string& name);

// One track of a segment: a pitch-time matrix whose nonzero entry at (p, t)
// is the duration in steps of a note starting at step t, plus the
// instrument class playing it.
struct TrackRoll {
    Grid grid = Grid::Zero(kPitches, kSteps);
    int instrument = 0;
    TrackRole role = TrackRole::None;

    int note_count() const;
    bool empty() const { return note_count() == 0; }
    void validate() const;  // throws std::invalid_argument on bad entries
};

// An N-track bundle; the unit of all model I/O. Meter and resolution are
// fixed (4/4, 4 steps per beat) but carried for the file interfaces.
struct Segment {
    std::vector<TrackRoll> tracks;
    int beats_per_bar = 4;
    int resolution = kStepsPerBeat;
    std::string source_id;

    int num_tracks() const { return static_cast<int>(tracks.size()); }
    int note_count() const;
    bool empty() const { return note_count() == 0; }
};

struct Mixture {
    Grid grid = Grid::Zero(kPitches, kSteps);
    int note_count() const;
};

struct NoteEvent {
    int pitch = 0;     // 0..127
    int duration = 1;  // 1..32
    friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

// Per time step, notes in strictly ascending pitch order.
struct NoteEventSequence {
    std::vector<std::vector<NoteEvent>> steps{static_cast<size_t>(kSteps)};

    int note_count() const;
    friend bool operator==(const NoteEventSequence&, const NoteEventSequence&) = default;
};

// Position-wise maximum over all tracks.
Mixture condense_mixture(const Segment& seg);

// Shift every pitch by `semitones`; notes leaving [0,127] are dropped.
// Precondition: |semitones| <= 11.
Segment transpose(const Segment& seg, int semitones);
Grid transpose_grid(const Grid& grid, int semitones);

NoteEventSequence roll_to_events(const Grid& grid);
// Exact inverse of roll_to_events. Throws std::invalid_argument on
// out-of-range pitches/durations or duplicate pitches within a step.
Grid events_to_roll(const NoteEventSequence& seq);

// A contiguous run of segments from one source file.
struct Piece {
    std::string id;
    std::vector<Segment> segments;
    double tempo_bpm = 120.0;

    int num_segments() const { return static_cast<int>(segments.size()); }
};

}  // namespace mtr
