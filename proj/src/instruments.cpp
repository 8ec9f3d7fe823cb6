#include "mtr/instruments.hpp"

#include <json.hpp>

#include <fstream>
#include <stdexcept>

namespace mtr {

namespace {

std::vector<int> range(int lo, int hi) {
    std::vector<int> v;
    for (int p = lo; p <= hi; ++p) v.push_back(p);
    return v;
}

std::vector<InstrumentClass> builtin_classes() {
    std::vector<InstrumentClass> c;
    auto add = [&](std::string name, int gm, std::vector<int> progs) {
        c.push_back({std::move(name), gm, std::move(progs), "", TrackRole::None});
    };
    add("acoustic_piano", 0, {0, 1, 3});
    add("electric_piano", 4, {2, 4, 5});
    add("harpsichord", 6, {6, 7});
    add("chromatic_percussion", 11, range(8, 15));
    add("organ", 19, range(16, 20));
    add("accordion", 21, range(21, 23));
    add("acoustic_guitar", 24, {24, 25});
    add("clean_electric_guitar", 27, range(26, 28));
    add("distorted_guitar", 30, range(29, 31));
    add("acoustic_bass", 32, {32});
    add("electric_bass", 33, range(33, 39));
    add("violin", 40, {40});
    add("viola", 41, {41});
    add("cello", 42, {42});
    add("contrabass", 43, {43});
    add("strings_other", 45, {44, 45, 55});
    add("harp", 46, {46});
    add("timpani", 47, {47});
    add("string_ensemble", 48, {48, 49});
    add("synth_strings", 50, {50, 51});
    add("choir_voice", 52, range(52, 54));
    add("trumpet", 56, {56, 59});
    add("trombone", 57, {57});
    add("tuba", 58, {58});
    add("french_horn", 60, {60});
    add("brass_section", 61, range(61, 63));
    add("sax_soprano_alto", 65, {64, 65});
    add("sax_tenor", 66, {66});
    add("sax_baritone", 67, {67});
    add("double_reed", 68, range(68, 70));
    add("clarinet", 71, {71});
    add("flute", 73, range(72, 79));
    add("synth_lead", 80, range(80, 87));
    add("synth_pad_other", 88, range(88, 127));
    // POP909-style piano arrangement tracks, mapped by MIDI track name.
    c.push_back({"piano_melody", 0, {}, "MELODY", TrackRole::Melody});
    c.push_back({"piano_lead", 0, {}, "BRIDGE", TrackRole::Other});
    c.push_back({"piano_accomp", 0, {}, "PIANO", TrackRole::Accompaniment});
    return c;
}

}  // namespace

InstrumentTable InstrumentTable::builtin() {
    InstrumentTable t;
    t.classes_ = builtin_classes();
    t.index();
    return t;
}

void InstrumentTable::index() {
    program_to_class_.assign(128, -1);
    for (size_t i = 0; i < classes_.size(); ++i) {
        for (int p : classes_[i].programs) {
            if (p < 0 || p > 127)
                throw std::runtime_error("instrument table: program out of range");
            if (program_to_class_[p] != -1)
                throw std::runtime_error("instrument table: program mapped twice");
            program_to_class_[p] = static_cast<int>(i);
        }
    }
    for (int p = 0; p < 128; ++p)
        if (program_to_class_[p] == -1)
            throw std::runtime_error("instrument table: program unmapped");
}

InstrumentTable InstrumentTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open instrument table: " + path);
    nlohmann::json j;
    in >> j;
    InstrumentTable t;
    for (const auto& jc : j.at("classes")) {
        InstrumentClass c;
        c.name = jc.at("name").get<std::string>();
        c.gm_program = jc.at("gm_program").get<int>();
        if (jc.contains("programs"))
            c.programs = jc.at("programs").get<std::vector<int>>();
        if (jc.contains("track_name"))
            c.track_name = jc.at("track_name").get<std::string>();
        if (jc.contains("role"))
            c.role = role_from_name(jc.at("role").get<std::string>());
        t.classes_.push_back(std::move(c));
    }
    t.index();
    return t;
}

void InstrumentTable::save(const std::string& path) const {
    nlohmann::json j;
    j["classes"] = nlohmann::json::array();
    for (const auto& c : classes_) {
        nlohmann::json jc;
        jc["name"] = c.name;
        jc["gm_program"] = c.gm_program;
        if (!c.programs.empty()) jc["programs"] = c.programs;
        if (!c.track_name.empty()) jc["track_name"] = c.track_name;
        if (c.role != TrackRole::None) jc["role"] = role_name(c.role);
        j["classes"].push_back(jc);
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write instrument table: " + path);
    out << j.dump(2) << "\n";
}

const InstrumentClass& InstrumentTable::at(int id) const {
    if (id < 0 || id >= size())
        throw std::out_of_range("instrument id out of range");
    return classes_[id];
}

int InstrumentTable::id_of(const std::string& name) const {
    auto id = find(name);
    if (!id) throw std::runtime_error("unknown instrument class: " + name);
    return *id;
}

std::optional<int> InstrumentTable::find(const std::string& name) const {
    for (size_t i = 0; i < classes_.size(); ++i)
        if (classes_[i].name == name) return static_cast<int>(i);
    return std::nullopt;
}

int InstrumentTable::class_for_program(int gm_program) const {
    if (gm_program < 0 || gm_program > 127)
        throw std::invalid_argument("GM program out of range");
    return program_to_class_[gm_program];
}

std::optional<int> InstrumentTable::class_for_track_name(const std::string& track_name) const {
    for (size_t i = 0; i < classes_.size(); ++i)
        if (!classes_[i].track_name.empty() && classes_[i].track_name == track_name)
            return static_cast<int>(i);
    return std::nullopt;
}

int InstrumentTable::gm_program_of(int id) const { return at(id).gm_program; }

std::vector<std::string> InstrumentTable::names() const {
    std::vector<std::string> v;
    v.reserve(classes_.size());
    for (const auto& c : classes_) v.push_back(c.name);
    return v;
}

int InstrumentTable::fallback_melodic() const { return id_of("flute"); }

}  // namespace mtr
