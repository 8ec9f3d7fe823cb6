#pragma once

#include "mtr/instruments.hpp"
#include "mtr/midi.hpp"
#include "mtr/types.hpp"

#include <string>
#include <vector>

namespace mtr {

// Human-readable corpus listing: pieces, their segments, instruments, and
// split assignments. MIDI paths are stored relative to the manifest file.
struct SegmentEntry {
    int index = 0;
    std::vector<std::string> instruments;
    std::vector<std::string> roles;
    int note_count = 0;
};

struct PieceEntry {
    std::string id;
    std::string path;
    std::string corpus;
    std::string split;  // train | val | test
    bool eight_beat_windows = false;
    double tempo_bpm = 120.0;
    std::vector<SegmentEntry> segments;
};

struct CorpusManifest {
    int version = 1;
    std::vector<PieceEntry> pieces;

    void save(const std::string& path) const;
    static CorpusManifest load(const std::string& path);
};

struct PrepareOptions {
    std::string corpus_tag = "default";
    bool eight_beat_windows = false;
    // piece-level split ratio train:val:test
    double train_ratio = 0.8;
    double val_ratio = 0.1;
    std::uint64_t seed = 0;
};

// Scan MIDI files into a manifest. Unreadable files produce a warning and
// are skipped; the batch continues.
CorpusManifest prepare_corpus(const std::vector<std::string>& midi_paths,
                              const std::string& manifest_dir,
                              const InstrumentTable& table, const PrepareOptions& opts,
                              std::vector<std::string>* warnings = nullptr);

struct LoadedSegment {
    Segment segment;  // empty tracks dropped
    std::string piece_id;
    std::string corpus;
    std::string split;
    int index = 0;
};

struct LoadOptions {
    std::vector<std::string> splits;  // empty = all
    bool drop_empty_segments = true;
};

std::vector<LoadedSegment> load_segments(const CorpusManifest& manifest,
                                         const std::string& manifest_dir,
                                         const InstrumentTable& table,
                                         const LoadOptions& opts = {});

// Load whole pieces (all lanes kept) for long-form rearrangement.
std::vector<Piece> load_pieces(const CorpusManifest& manifest,
                               const std::string& manifest_dir,
                               const InstrumentTable& table,
                               const std::vector<std::string>& splits = {});

std::string manifest_dir_of(const std::string& manifest_path);

}  // namespace mtr
