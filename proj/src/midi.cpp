#include "mtr/midi.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>

namespace mtr {

namespace {

struct Reader {
    std::span<const std::uint8_t> data;
    size_t pos = 0;

    bool eof() const { return pos >= data.size(); }
    std::uint8_t u8() {
        if (pos >= data.size()) throw MidiError("unexpected end of MIDI data");
        return data[pos++];
    }
    std::uint32_t u16() { return (static_cast<std::uint32_t>(u8()) << 8) | u8(); }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
        return v;
    }
    std::uint32_t vlq() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            std::uint8_t b = u8();
            v = (v << 7) | (b & 0x7F);
            if (!(b & 0x80)) return v;
        }
        throw MidiError("variable-length quantity too long");
    }
    void skip(size_t n) {
        if (pos + n > data.size()) throw MidiError("unexpected end of MIDI data");
        pos += n;
    }
    std::string str(size_t n) {
        if (pos + n > data.size()) throw MidiError("unexpected end of MIDI data");
        std::string s(reinterpret_cast<const char*>(data.data() + pos), n);
        pos += n;
        return s;
    }
};

struct RawNote {
    long onset_tick = 0;
    long offset_tick = 0;
    int pitch = 0;
};

struct Lane {
    int midi_track = 0;
    int channel = 0;
    int program = 0;  // first program change, default 0
    bool program_seen = false;
    std::string track_name;
    std::vector<RawNote> notes;
};

struct TimeSig {
    long tick = 0;
    int num = 4;
    int den = 4;
};

struct ParsedFile {
    int division = 480;
    double tempo_bpm = 120.0;
    bool tempo_seen = false;
    std::vector<Lane> lanes;
    std::vector<TimeSig> timesigs;
    long max_tick = 0;
};

ParsedFile parse_smf(std::span<const std::uint8_t> bytes) {
    Reader r{bytes};
    if (r.str(4) != "MThd") throw MidiError("missing MThd header");
    std::uint32_t hlen = r.u32();
    if (hlen < 6) throw MidiError("bad MThd length");
    int format = static_cast<int>(r.u16());
    int ntrks = static_cast<int>(r.u16());
    std::uint32_t division_raw = r.u16();
    if (hlen > 6) r.skip(hlen - 6);
    if (format != 0 && format != 1)
        throw MidiError("unsupported MIDI format (only 0 and 1)");
    if (division_raw & 0x8000)
        throw MidiError("SMPTE time division is not supported");
    ParsedFile out;
    out.division = static_cast<int>(division_raw);
    if (out.division <= 0) throw MidiError("bad time division");

    for (int trk = 0; trk < ntrks; ++trk) {
        if (r.str(4) != "MTrk") throw MidiError("missing MTrk chunk");
        std::uint32_t tlen = r.u32();
        size_t trk_end = r.pos + tlen;
        if (trk_end > bytes.size()) throw MidiError("track chunk overruns file");

        long tick = 0;
        std::uint8_t running = 0;
        std::string track_name;
        // key: channel*128 + pitch -> onset tick stack (FIFO per pitch)
        std::map<int, std::vector<long>> open_notes;
        std::map<int, Lane> lanes;  // by channel

        auto lane_of = [&](int ch) -> Lane& {
            auto it = lanes.find(ch);
            if (it == lanes.end()) {
                Lane l;
                l.midi_track = trk;
                l.channel = ch;
                it = lanes.emplace(ch, std::move(l)).first;
            }
            return it->second;
        };
        auto close_note = [&](int ch, int pitch, long off_tick) {
            auto it = open_notes.find(ch * 128 + pitch);
            if (it == open_notes.end() || it->second.empty()) return;
            long on_tick = it->second.front();
            it->second.erase(it->second.begin());
            if (off_tick > on_tick)
                lane_of(ch).notes.push_back({on_tick, off_tick, pitch});
        };

        while (r.pos < trk_end) {
            tick += r.vlq();
            out.max_tick = std::max(out.max_tick, tick);
            std::uint8_t status = r.u8();
            if (status < 0x80) {
                if (running == 0) throw MidiError("dangling data byte (no running status)");
                --r.pos;
                status = running;
            }
            if (status == 0xFF) {
                std::uint8_t type = r.u8();
                std::uint32_t len = r.vlq();
                if (type == 0x51 && len == 3) {
                    std::uint32_t us = (static_cast<std::uint32_t>(r.u8()) << 16) |
                                       (static_cast<std::uint32_t>(r.u8()) << 8) | r.u8();
                    if (us > 0 && !out.tempo_seen) {
                        out.tempo_bpm = 60000000.0 / us;
                        out.tempo_seen = true;
                    }
                } else if (type == 0x58 && len >= 2) {
                    int num = r.u8();
                    int den_pow = r.u8();
                    r.skip(len - 2);
                    out.timesigs.push_back({tick, num, 1 << den_pow});
                } else if (type == 0x03) {
                    track_name = r.str(len);
                } else {
                    r.skip(len);
                }
                running = 0;
            } else if (status == 0xF0 || status == 0xF7) {
                std::uint32_t len = r.vlq();
                r.skip(len);
                running = 0;
            } else {
                running = status;
                int kind = status & 0xF0;
                int ch = status & 0x0F;
                switch (kind) {
                    case 0x80: {
                        int pitch = r.u8();
                        r.u8();
                        close_note(ch, pitch, tick);
                        break;
                    }
                    case 0x90: {
                        int pitch = r.u8();
                        int vel = r.u8();
                        if (vel == 0) {
                            close_note(ch, pitch, tick);
                        } else {
                            open_notes[ch * 128 + pitch].push_back(tick);
                            lane_of(ch);
                        }
                        break;
                    }
                    case 0xA0:
                    case 0xB0:
                    case 0xE0:
                        r.u8();
                        r.u8();
                        break;
                    case 0xC0: {
                        int prog = r.u8();
                        Lane& l = lane_of(ch);
                        if (!l.program_seen) {
                            l.program = prog;
                            l.program_seen = true;
                        }
                        break;
                    }
                    case 0xD0:
                        r.u8();
                        break;
                    default:
                        throw MidiError("unknown MIDI status byte");
                }
            }
        }
        if (r.pos != trk_end) throw MidiError("track chunk length mismatch");
        // close any notes left hanging at end of track
        for (auto& [key, stack] : open_notes)
            for (long on_tick : stack)
                if (tick > on_tick)
                    lanes[key / 128].notes.push_back({on_tick, tick, key % 128});
        for (auto& [ch, lane] : lanes) {
            lane.track_name = track_name;
            out.lanes.push_back(std::move(lane));
        }
    }
    return out;
}

struct QuantNote {
    long onset_step = 0;
    int duration = 1;
    int pitch = 0;
};

std::vector<QuantNote> quantize_lane(const Lane& lane, double ticks_per_step) {
    std::vector<QuantNote> out;
    out.reserve(lane.notes.size());
    for (const RawNote& n : lane.notes) {
        long on = std::lround(n.onset_tick / ticks_per_step);
        long off = std::lround(n.offset_tick / ticks_per_step);
        int dur = static_cast<int>(std::max<long>(1, off - on));
        out.push_back({on, dur, n.pitch});
    }
    return out;
}

}  // namespace

IngestResult ingest_midi(std::span<const std::uint8_t> bytes,
                         const InstrumentTable& table,
                         const IngestConfig& cfg) {
    ParsedFile pf = parse_smf(bytes);
    IngestResult res;
    res.piece.tempo_bpm = pf.tempo_bpm;

    double ticks_per_step = static_cast<double>(pf.division) / kStepsPerBeat;

    // keep only lanes with non-drum notes
    std::vector<const Lane*> lanes;
    bool saw_drums = false;
    for (const Lane& l : pf.lanes) {
        if (l.channel == 9) {
            if (!l.notes.empty()) saw_drums = true;
            continue;
        }
        if (!l.notes.empty()) lanes.push_back(&l);
    }
    if (saw_drums) res.warnings.push_back("drum channel dropped");
    if (lanes.empty()) return res;  // zero non-drum notes: empty result, not an error

    std::vector<int> lane_instrument(lanes.size(), 0);
    std::vector<TrackRole> lane_role(lanes.size(), TrackRole::None);
    for (size_t i = 0; i < lanes.size(); ++i) {
        if (auto id = table.class_for_track_name(lanes[i]->track_name)) {
            lane_instrument[i] = *id;
            lane_role[i] = table.at(*id).role;
        } else {
            lane_instrument[i] = table.class_for_program(lanes[i]->program);
            lane_role[i] = table.at(lane_instrument[i]).role;
        }
    }

    std::vector<std::vector<QuantNote>> lane_notes;
    long max_onset = 0;
    for (const Lane* l : lanes) {
        lane_notes.push_back(quantize_lane(*l, ticks_per_step));
        for (const QuantNote& n : lane_notes.back())
            max_onset = std::max(max_onset, n.onset_step);
    }

    // determine segment windows: (start step, exclusive content end)
    struct Window {
        long start;
        long end;
    };
    std::vector<Window> windows;
    auto window_has_note = [&](long w, long end) {
        for (const auto& notes : lane_notes)
            for (const QuantNote& n : notes)
                if (n.onset_step >= w && n.onset_step < end) return true;
        return false;
    };
    if (cfg.eight_beat_windows) {
        for (long w = 0; w <= max_onset; w += kSteps)
            windows.push_back({w, w + kSteps});
    } else {
        // 4/4 sections only; content under other meters is skipped
        std::vector<TimeSig> sigs = pf.timesigs;
        std::sort(sigs.begin(), sigs.end(),
                  [](const TimeSig& a, const TimeSig& b) { return a.tick < b.tick; });
        if (sigs.empty() || sigs.front().tick > 0)
            sigs.insert(sigs.begin(), {0, 4, 4});
        bool skipped = false;
        for (size_t i = 0; i < sigs.size(); ++i) {
            long sec_start = std::lround(sigs[i].tick / ticks_per_step);
            long sec_end = (i + 1 < sigs.size())
                               ? std::lround(sigs[i + 1].tick / ticks_per_step)
                               : max_onset + 1;
            if (sigs[i].num != 4 || sigs[i].den != 4) {
                if (window_has_note(sec_start, sec_end)) skipped = true;
                continue;
            }
            for (long w = sec_start; w < sec_end; w += kSteps) {
                long content_end = std::min<long>(w + kSteps, sec_end);
                // interior windows are kept even when silent, so contiguous
                // pieces stay contiguous; trailing silence is dropped
                if (window_has_note(w, content_end) || w + kSteps <= max_onset)
                    windows.push_back({w, content_end});
            }
        }
        if (skipped)
            res.warnings.push_back("non-4/4 section skipped");
    }

    for (const Window& win : windows) {
        Segment seg;
        seg.source_id = "w" + std::to_string(win.start / kSteps);
        for (size_t i = 0; i < lanes.size(); ++i) {
            TrackRoll tr;
            tr.instrument = lane_instrument[i];
            tr.role = lane_role[i];
            for (const QuantNote& n : lane_notes[i]) {
                if (n.onset_step < win.start || n.onset_step >= win.end) continue;
                int t = static_cast<int>(n.onset_step - win.start);
                int dur = std::min(n.duration, kSteps - t);  // clip at the boundary
                // simultaneous duplicate pitches keep the longer duration
                tr.grid(n.pitch, t) = std::max(tr.grid(n.pitch, t), dur);
            }
            seg.tracks.push_back(std::move(tr));
        }
        res.piece.segments.push_back(std::move(seg));
        res.window_starts.push_back(win.start);
    }
    return res;
}

namespace {

struct OutEvent {
    long tick;
    int order;  // sort tiebreak: offs before ons
    std::vector<std::uint8_t> bytes;
};

void push_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
    std::uint8_t buf[4];
    int n = 0;
    buf[n++] = v & 0x7F;
    while (v >>= 7) buf[n++] = 0x80 | (v & 0x7F);
    while (n--) out.push_back(buf[n]);
}

void push_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back((v >> 24) & 0xFF);
    out.push_back((v >> 16) & 0xFF);
    out.push_back((v >> 8) & 0xFF);
    out.push_back(v & 0xFF);
}

std::vector<std::uint8_t> finish_track(std::vector<OutEvent>& events) {
    std::stable_sort(events.begin(), events.end(), [](const OutEvent& a, const OutEvent& b) {
        return a.tick != b.tick ? a.tick < b.tick : a.order < b.order;
    });
    std::vector<std::uint8_t> body;
    long tick = 0;
    for (const OutEvent& e : events) {
        push_vlq(body, static_cast<std::uint32_t>(e.tick - tick));
        tick = e.tick;
        body.insert(body.end(), e.bytes.begin(), e.bytes.end());
    }
    push_vlq(body, 0);
    body.insert(body.end(), {0xFF, 0x2F, 0x00});
    std::vector<std::uint8_t> chunk;
    chunk.insert(chunk.end(), {'M', 'T', 'r', 'k'});
    push_u32(chunk, static_cast<std::uint32_t>(body.size()));
    chunk.insert(chunk.end(), body.begin(), body.end());
    return chunk;
}

}  // namespace

std::vector<std::uint8_t> render_midi(const Piece& piece, const InstrumentTable& table) {
    constexpr int kTpq = 480;
    constexpr int kTicksPerStep = kTpq / kStepsPerBeat;
    // usable channels skip the drum channel
    static const int kChannels[] = {0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 12, 13, 14, 15};

    int num_lanes = 0;
    for (const Segment& seg : piece.segments)
        num_lanes = std::max(num_lanes, seg.num_tracks());

    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'M', 'T', 'h', 'd'});
    push_u32(out, 6);
    out.insert(out.end(), {0x00, 0x01});  // format 1
    int ntrks = num_lanes + 1;
    out.push_back(static_cast<std::uint8_t>((ntrks >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>(ntrks & 0xFF));
    out.push_back((kTpq >> 8) & 0xFF);
    out.push_back(kTpq & 0xFF);

    {
        std::vector<OutEvent> meta;
        double bpm = piece.tempo_bpm > 0 ? piece.tempo_bpm : 120.0;
        std::uint32_t us = static_cast<std::uint32_t>(std::lround(60000000.0 / bpm));
        meta.push_back({0, 0, {0xFF, 0x51, 0x03,
                               static_cast<std::uint8_t>((us >> 16) & 0xFF),
                               static_cast<std::uint8_t>((us >> 8) & 0xFF),
                               static_cast<std::uint8_t>(us & 0xFF)}});
        meta.push_back({0, 1, {0xFF, 0x58, 0x04, 0x04, 0x02, 0x18, 0x08}});
        auto chunk = finish_track(meta);
        out.insert(out.end(), chunk.begin(), chunk.end());
    }

    for (int lane = 0; lane < num_lanes; ++lane) {
        int ch = kChannels[lane % 15];
        std::vector<OutEvent> events;
        int instrument = -1;
        for (size_t si = 0; si < piece.segments.size(); ++si) {
            const Segment& seg = piece.segments[si];
            if (lane >= seg.num_tracks()) continue;
            const TrackRoll& tr = seg.tracks[lane];
            if (instrument < 0) {
                instrument = tr.instrument;
                const InstrumentClass& cls = table.at(instrument);
                std::string name = !cls.track_name.empty() ? cls.track_name : cls.name;
                std::vector<std::uint8_t> nm = {0xFF, 0x03,
                                                static_cast<std::uint8_t>(name.size())};
                nm.insert(nm.end(), name.begin(), name.end());
                events.push_back({0, 0, std::move(nm)});
                events.push_back({0, 1, {static_cast<std::uint8_t>(0xC0 | ch),
                                         static_cast<std::uint8_t>(cls.gm_program)}});
            }
            long base = static_cast<long>(si) * kSteps;
            for (int t = 0; t < kSteps; ++t) {
                for (int p = 0; p < kPitches; ++p) {
                    int d = tr.grid(p, t);
                    if (d <= 0) continue;
                    long on = (base + t) * kTicksPerStep;
                    long off = on + static_cast<long>(d) * kTicksPerStep;
                    events.push_back({on, 3, {static_cast<std::uint8_t>(0x90 | ch),
                                              static_cast<std::uint8_t>(p), 80}});
                    events.push_back({off, 2, {static_cast<std::uint8_t>(0x80 | ch),
                                               static_cast<std::uint8_t>(p), 64}});
                }
            }
        }
        if (instrument < 0) {
            // lane absent from every segment: emit an empty named track
            events.push_back({0, 0, {0xFF, 0x03, 0x05, 'e', 'm', 'p', 't', 'y'}});
        }
        auto chunk = finish_track(events);
        out.insert(out.end(), chunk.begin(), chunk.end());
    }
    return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                     std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

}  // namespace mtr
