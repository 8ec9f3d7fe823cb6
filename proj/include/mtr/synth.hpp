#pragma once

#include "mtr/instruments.hpp"
#include "mtr/types.hpp"

#include <string>
#include <vector>

namespace mtr {

// Desk-scale synthetic corpora. "pop" pieces carry a tagged melody line
// over chordal accompaniment (optionally bass); "voices4" pieces are four
// monophonic non-crossing voices ordered high to low.
struct SynthOptions {
    enum class Preset { Pop, Voices4 };
    Preset preset = Preset::Pop;
    int num_pieces = 16;
    int segments_per_piece = 2;
    std::uint64_t seed = 0;
};

std::vector<Piece> synth_corpus(const SynthOptions& opts, const InstrumentTable& table);

// Render a synthetic corpus to MIDI files in `dir` and return the paths.
std::vector<std::string> write_synth_corpus(const SynthOptions& opts,
                                            const InstrumentTable& table,
                                            const std::string& dir);

}  // namespace mtr
