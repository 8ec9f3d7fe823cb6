#pragma once

#include "mtr/instruments.hpp"
#include "mtr/types.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtr {

struct MidiError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IngestConfig {
    // Voice-separation corpora are windowed by raw 8-beat spans regardless
    // of meter; the standard path only segments 4/4 sections.
    bool eight_beat_windows = false;
};

struct IngestResult {
    Piece piece;
    std::vector<long> window_starts;  // global step index of each segment
    std::vector<std::string> warnings;
};

// Parse a standard MIDI file (format 0/1), quantize note on/offsets to the
// 1/4-beat grid and cut 2-bar (32 step) segments. Drum channels are
// dropped; MIDI tracks are never merged (each (track, channel) lane with
// notes becomes one TrackRoll per segment).
IngestResult ingest_midi(std::span<const std::uint8_t> bytes,
                         const InstrumentTable& table,
                         const IngestConfig& cfg = {});

// Serialize a piece back to a format-1 standard MIDI file. Instrument
// classes map to General-MIDI programs via the table; velocity is fixed
// (performance dynamics are out of scope).
std::vector<std::uint8_t> render_midi(const Piece& piece, const InstrumentTable& table);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace mtr
