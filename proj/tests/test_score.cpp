#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mtr/functions.hpp"
#include "mtr/instruments.hpp"
#include "mtr/manifest.hpp"
#include "mtr/midi.hpp"
#include "mtr/rng.hpp"
#include "mtr/synth.hpp"
#include "mtr/types.hpp"

#include <filesystem>
#include <set>

using namespace mtr;
namespace fs = std::filesystem;

namespace {

Grid random_grid(Rng& rng, int max_notes = 40) {
    Grid g = Grid::Zero(kPitches, kSteps);
    int n = rng.uniform_int(0, max_notes);
    for (int i = 0; i < n; ++i) {
        int p = rng.uniform_int(0, kPitches - 1);
        int t = rng.uniform_int(0, kSteps - 1);
        g(p, t) = rng.uniform_int(1, kSteps - t);
    }
    return g;
}

Segment random_segment(Rng& rng, int tracks) {
    Segment seg;
    for (int i = 0; i < tracks; ++i) {
        TrackRoll tr;
        tr.grid = random_grid(rng);
        tr.instrument = rng.uniform_int(0, 33);
        seg.tracks.push_back(std::move(tr));
    }
    return seg;
}

// minimal SMF builder for ingestion tests
struct TestMidiBuilder {
    std::vector<std::uint8_t> bytes;
    std::vector<std::vector<std::uint8_t>> tracks;

    static void vlq(std::vector<std::uint8_t>& v, std::uint32_t x) {
        std::uint8_t buf[4];
        int n = 0;
        buf[n++] = x & 0x7F;
        while (x >>= 7) buf[n++] = 0x80 | (x & 0x7F);
        while (n--) v.push_back(buf[n]);
    }
    void add_track() { tracks.emplace_back(); }
    void note(int trk, long on_tick, long off_tick, int ch, int pitch) {
        events.push_back({on_tick, trk, ch, pitch, true});
        events.push_back({off_tick, trk, ch, pitch, false});
    }
    void timesig(int trk, long tick, int num, int den_pow) {
        meta.push_back({tick, trk, num, den_pow});
    }
    struct Ev {
        long tick;
        int trk, ch, pitch;
        bool on;
    };
    struct Ts {
        long tick;
        int trk, num, den_pow;
    };
    std::vector<Ev> events;
    std::vector<Ts> meta;

    std::vector<std::uint8_t> build(int tpq = 480) {
        std::vector<std::uint8_t> out = {'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 1};
        out.push_back(static_cast<std::uint8_t>(tracks.size() >> 8));
        out.push_back(static_cast<std::uint8_t>(tracks.size() & 0xFF));
        out.push_back(static_cast<std::uint8_t>(tpq >> 8));
        out.push_back(static_cast<std::uint8_t>(tpq & 0xFF));
        for (size_t t = 0; t < tracks.size(); ++t) {
            struct Item {
                long tick;
                int order;
                std::vector<std::uint8_t> payload;
            };
            std::vector<Item> items;
            for (const Ts& ts : meta)
                if (ts.trk == static_cast<int>(t))
                    items.push_back({ts.tick, 0,
                                     {0xFF, 0x58, 0x04, static_cast<std::uint8_t>(ts.num),
                                      static_cast<std::uint8_t>(ts.den_pow), 24, 8}});
            for (const Ev& e : events)
                if (e.trk == static_cast<int>(t))
                    items.push_back(
                        {e.tick, e.on ? 2 : 1,
                         {static_cast<std::uint8_t>((e.on ? 0x90 : 0x80) | e.ch),
                          static_cast<std::uint8_t>(e.pitch),
                          static_cast<std::uint8_t>(e.on ? 90 : 0)}});
            std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
                return a.tick != b.tick ? a.tick < b.tick : a.order < b.order;
            });
            std::vector<std::uint8_t> body;
            long tick = 0;
            for (const Item& it : items) {
                vlq(body, static_cast<std::uint32_t>(it.tick - tick));
                tick = it.tick;
                body.insert(body.end(), it.payload.begin(), it.payload.end());
            }
            vlq(body, 0);
            body.insert(body.end(), {0xFF, 0x2F, 0x00});
            out.insert(out.end(), {'M', 'T', 'r', 'k'});
            out.push_back(static_cast<std::uint8_t>(body.size() >> 24));
            out.push_back(static_cast<std::uint8_t>((body.size() >> 16) & 0xFF));
            out.push_back(static_cast<std::uint8_t>((body.size() >> 8) & 0xFF));
            out.push_back(static_cast<std::uint8_t>(body.size() & 0xFF));
            out.insert(out.end(), body.begin(), body.end());
        }
        return out;
    }
};

}  // namespace

TEST_CASE("mixture is the position-wise maximum") {
    Segment seg;
    TrackRoll a, b;
    a.grid(60, 4) = 2;
    b.grid(60, 4) = 4;
    a.grid(52, 0) = 8;
    b.grid(70, 12) = 3;
    seg.tracks = {a, b};
    Mixture mix = condense_mixture(seg);
    CHECK(mix.grid(60, 4) == 4);
    CHECK(mix.grid(52, 0) == 8);
    CHECK(mix.grid(70, 12) == 3);

    Segment single;
    single.tracks = {a};
    CHECK(condense_mixture(single).grid == a.grid);
}

TEST_CASE("mixture law on random segments") {
    Rng rng(11);
    for (int it = 0; it < 50; ++it) {
        Segment seg = random_segment(rng, rng.uniform_int(1, 5));
        Mixture mix = condense_mixture(seg);
        for (int p = 0; p < kPitches; ++p)
            for (int t = 0; t < kSteps; ++t) {
                int mx = 0;
                for (const auto& tr : seg.tracks) mx = std::max(mx, tr.grid(p, t));
                REQUIRE(mix.grid(p, t) == mx);
            }
    }
}

TEST_CASE("transpose shifts pitches and drops at the boundary") {
    Segment seg;
    TrackRoll tr;
    tr.grid(60, 0) = 4;
    tr.grid(127, 8) = 2;
    seg.tracks = {tr};

    Segment same = transpose(seg, 0);
    CHECK(same.tracks[0].grid == tr.grid);

    Segment up = transpose(seg, 1);
    CHECK(up.tracks[0].grid(61, 0) == 4);
    CHECK(up.tracks[0].grid(60, 0) == 0);
    // the note at 127 leaves the range
    int count = up.tracks[0].note_count();
    CHECK(count == 1);

    CHECK_THROWS_AS((void)transpose(seg, 12), std::invalid_argument);
}

TEST_CASE("transpose commutes with condense when nothing drops") {
    Rng rng(5);
    for (int it = 0; it < 20; ++it) {
        Segment seg;
        for (int n = 0; n < 3; ++n) {
            TrackRoll tr;
            for (int i = 0; i < 10; ++i) {
                int p = rng.uniform_int(30, 90);
                int t = rng.uniform_int(0, kSteps - 1);
                tr.grid(p, t) = rng.uniform_int(1, kSteps - t);
            }
            seg.tracks.push_back(std::move(tr));
        }
        int k = rng.uniform_int(-11, 11);
        Grid a = condense_mixture(transpose(seg, k)).grid;
        Grid b = transpose_grid(condense_mixture(seg).grid, k);
        REQUIRE(a == b);
    }
}

TEST_CASE("note event codec round trips") {
    Grid g = Grid::Zero(kPitches, kSteps);
    SUBCASE("empty grid") {
        NoteEventSequence seq = roll_to_events(g);
        CHECK(seq.note_count() == 0);
        CHECK(events_to_roll(seq) == g);
    }
    SUBCASE("ordering within a step") {
        g(64, 0) = 4;
        g(60, 0) = 4;
        NoteEventSequence seq = roll_to_events(g);
        REQUIRE(seq.steps[0].size() == 2);
        CHECK(seq.steps[0][0].pitch == 60);
        CHECK(seq.steps[0][1].pitch == 64);
    }
    SUBCASE("single event") {
        NoteEventSequence seq;
        seq.steps[3].push_back({60, 4});
        Grid r = events_to_roll(seq);
        CHECK(r(60, 3) == 4);
        CHECK(r.sum() == 4);
    }
    SUBCASE("random round trips") {
        Rng rng(99);
        for (int it = 0; it < 200; ++it) {
            Grid r = random_grid(rng);
            REQUIRE(events_to_roll(roll_to_events(r)) == r);
        }
    }
    SUBCASE("duplicate pitch rejected") {
        NoteEventSequence seq;
        seq.steps[0].push_back({60, 4});
        seq.steps[0].push_back({60, 2});
        CHECK_THROWS_AS((void)events_to_roll(seq), std::invalid_argument);
    }
}

TEST_CASE("instrument taxonomy covers the GM space") {
    InstrumentTable table = InstrumentTable::builtin();
    CHECK(table.size() == 37);
    std::set<int> seen;
    for (int p = 0; p < 128; ++p) {
        int c = table.class_for_program(p);
        REQUIRE(c >= 0);
        REQUIRE(c < table.size());
        seen.insert(c);
    }
    CHECK(seen.size() == 34);  // the three track-name classes map no programs
    CHECK(table.id_of("flute") == table.fallback_melodic());
    CHECK(table.class_for_track_name("MELODY").has_value());
    // round trip via config file
    fs::create_directories("test_tmp");
    table.save("test_tmp/instruments.json");
    InstrumentTable loaded = InstrumentTable::load("test_tmp/instruments.json");
    CHECK(loaded.names() == table.names());
    CHECK(loaded.at(table.id_of("piano_melody")).role == TrackRole::Melody);
}

TEST_CASE("ingest: 4-bar two-track file gives two 2-track segments") {
    TestMidiBuilder b;
    b.add_track();
    b.add_track();
    // 4 bars at tpq 480: bar = 1920 ticks
    for (int bar = 0; bar < 4; ++bar) {
        b.note(0, bar * 1920, bar * 1920 + 480, 0, 60 + bar);
        b.note(1, bar * 1920, bar * 1920 + 960, 1, 40 + bar);
    }
    InstrumentTable table = InstrumentTable::builtin();
    IngestResult res = ingest_midi(b.build(), table);
    REQUIRE(res.piece.segments.size() == 2);
    CHECK(res.piece.segments[0].num_tracks() == 2);
    CHECK(res.piece.segments[1].num_tracks() == 2);
    // beat 0 note of bar 0: pitch 60, one beat = 4 steps
    CHECK(res.piece.segments[0].tracks[0].grid(60, 0) == 4);
    // bar 2 starts the second segment
    CHECK(res.piece.segments[1].tracks[0].grid(62, 0) == 4);
}

TEST_CASE("ingest: drum-only file gives an empty list") {
    TestMidiBuilder b;
    b.add_track();
    b.note(0, 0, 480, 9, 36);
    b.note(0, 480, 960, 9, 38);
    InstrumentTable table = InstrumentTable::builtin();
    IngestResult res = ingest_midi(b.build(), table);
    CHECK(res.piece.segments.empty());
    REQUIRE(!res.warnings.empty());
}

TEST_CASE("ingest: 3.1-beat note quantizes to 12 steps") {
    TestMidiBuilder b;
    b.add_track();
    // 3.1 beats at tpq 480 = 1488 ticks
    b.note(0, 0, 1488, 0, 72);
    InstrumentTable table = InstrumentTable::builtin();
    IngestResult res = ingest_midi(b.build(), table);
    REQUIRE(res.piece.segments.size() == 1);
    CHECK(res.piece.segments[0].tracks[0].grid(72, 0) == 12);
}

TEST_CASE("ingest: non-4/4 sections are skipped with a warning") {
    TestMidiBuilder b;
    b.add_track();
    b.timesig(0, 0, 3, 2);  // 3/4 from the start
    b.timesig(0, 2880, 4, 2);  // 4/4 after two 3/4 bars
    b.note(0, 0, 480, 0, 60);          // inside 3/4: skipped
    b.note(0, 2880, 3360, 0, 64);      // inside 4/4
    InstrumentTable table = InstrumentTable::builtin();
    IngestResult res = ingest_midi(b.build(), table);
    REQUIRE(res.piece.segments.size() == 1);
    CHECK(res.piece.segments[0].tracks[0].grid(64, 0) == 4);
    bool warned = false;
    for (const auto& w : res.warnings)
        if (w.find("non-4/4") != std::string::npos) warned = true;
    CHECK(warned);

    SUBCASE("eight-beat windows ignore the meter") {
        IngestConfig cfg;
        cfg.eight_beat_windows = true;
        IngestResult r2 = ingest_midi(b.build(), table, cfg);
        // both notes land in the first 8-beat window (steps 0 and 24)
        REQUIRE(r2.piece.segments.size() == 1);
        CHECK(r2.piece.segments[0].tracks[0].grid(60, 0) == 4);
        CHECK(r2.piece.segments[0].tracks[0].grid(64, 24) == 4);
    }
}

TEST_CASE("ingest: malformed file raises a parse error") {
    std::vector<std::uint8_t> junk = {'M', 'T', 'h', 'x', 1, 2, 3};
    InstrumentTable table = InstrumentTable::builtin();
    CHECK_THROWS_AS((void)ingest_midi(junk, table), MidiError);
}

TEST_CASE("ingest grids stay within [0,32]") {
    InstrumentTable table = InstrumentTable::builtin();
    TestMidiBuilder b;
    b.add_track();
    // long note crossing the segment boundary gets clipped
    b.note(0, 480, 480 + 1920 * 4, 0, 55);
    IngestResult res = ingest_midi(b.build(), table);
    for (const Segment& seg : res.piece.segments)
        for (const TrackRoll& tr : seg.tracks)
            CHECK_NOTHROW(tr.validate());
    CHECK(res.piece.segments[0].tracks[0].grid(55, 4) == kSteps - 4);
}

TEST_CASE("render/ingest round trip preserves instruments and notes") {
    InstrumentTable table = InstrumentTable::builtin();
    SynthOptions so;
    so.num_pieces = 3;
    so.segments_per_piece = 2;
    so.seed = 42;
    for (const Piece& piece : synth_corpus(so, table)) {
        auto bytes = render_midi(piece, table);
        IngestResult res = ingest_midi(bytes, table);
        REQUIRE(res.piece.segments.size() == piece.segments.size());
        for (size_t s = 0; s < piece.segments.size(); ++s) {
            const Segment& orig = piece.segments[s];
            const Segment& back = res.piece.segments[s];
            REQUIRE(back.num_tracks() == orig.num_tracks());
            for (int n = 0; n < orig.num_tracks(); ++n) {
                CHECK(back.tracks[n].instrument == orig.tracks[n].instrument);
                CHECK(back.tracks[n].grid == orig.tracks[n].grid);
            }
        }
    }
}

TEST_CASE("voices corpus is non-crossing and high-to-low") {
    InstrumentTable table = InstrumentTable::builtin();
    SynthOptions so;
    so.preset = SynthOptions::Preset::Voices4;
    so.num_pieces = 4;
    so.segments_per_piece = 2;
    so.seed = 3;
    for (const Piece& piece : synth_corpus(so, table)) {
        for (const Segment& seg : piece.segments) {
            REQUIRE(seg.num_tracks() == 4);
            int prev_lo = 128;
            for (const TrackRoll& tr : seg.tracks) {
                int hi = -1, lo = 128;
                for (int p = 0; p < kPitches; ++p)
                    for (int t = 0; t < kSteps; ++t)
                        if (tr.grid(p, t) > 0) {
                            hi = std::max(hi, p);
                            lo = std::min(lo, p);
                        }
                REQUIRE(hi >= 0);
                CHECK(hi < prev_lo);  // strictly below the previous voice
                prev_lo = lo;
            }
        }
    }
}

TEST_CASE("manifest round trip and segment loading") {
    InstrumentTable table = InstrumentTable::builtin();
    fs::create_directories("test_tmp/corpus");
    SynthOptions so;
    so.num_pieces = 5;
    so.segments_per_piece = 2;
    so.seed = 9;
    auto paths = write_synth_corpus(so, table, "test_tmp/corpus/midi");
    PrepareOptions popts;
    popts.corpus_tag = "pop";
    popts.seed = 1;
    std::vector<std::string> warnings;
    CorpusManifest m = prepare_corpus(paths, "test_tmp/corpus", table, popts, &warnings);
    CHECK(warnings.empty());
    REQUIRE(m.pieces.size() == 5);
    m.save("test_tmp/corpus/manifest.json");
    CorpusManifest m2 = CorpusManifest::load("test_tmp/corpus/manifest.json");
    REQUIRE(m2.pieces.size() == m.pieces.size());
    CHECK(m2.pieces[0].segments.size() == m.pieces[0].segments.size());

    auto segs = load_segments(m2, "test_tmp/corpus", table, {});
    CHECK(segs.size() == 10);
    int trains = 0;
    for (const auto& ls : segs)
        if (ls.split == "train") ++trains;
    CHECK(trains >= 6);

    // invalid file produces a warning, batch continues
    write_file_bytes("test_tmp/corpus/midi/broken.mid",
                     std::vector<std::uint8_t>{1, 2, 3});
    auto paths2 = paths;
    paths2.push_back("test_tmp/corpus/midi/broken.mid");
    warnings.clear();
    CorpusManifest m3 = prepare_corpus(paths2, "test_tmp/corpus", table, popts, &warnings);
    CHECK(m3.pieces.size() == 5);
    CHECK(!warnings.empty());
}
