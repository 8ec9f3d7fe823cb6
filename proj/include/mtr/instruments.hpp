#pragma once

#include "mtr/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mtr {

// One instrument class of the 34-class taxonomy (plus the three
// piano-track classes used by POP909-style corpora).
struct InstrumentClass {
    std::string name;
    int gm_program = 0;               // program used when writing MIDI
    std::vector<int> programs;        // GM programs mapped to this class
    std::string track_name;           // MIDI track-name trigger, if any
    TrackRole role = TrackRole::None; // role implied by the class, if any
};

class InstrumentTable {
public:
    static InstrumentTable builtin();
    static InstrumentTable load(const std::string& path);
    void save(const std::string& path) const;

    int size() const { return static_cast<int>(classes_.size()); }
    const InstrumentClass& at(int id) const;
    const std::vector<InstrumentClass>& classes() const { return classes_; }

    int id_of(const std::string& name) const;              // throws if unknown
    std::optional<int> find(const std::string& name) const;
    int class_for_program(int gm_program) const;           // 0..127
    std::optional<int> class_for_track_name(const std::string& track_name) const;
    int gm_program_of(int id) const;

    std::vector<std::string> names() const;
    int fallback_melodic() const;  // the flute-family class

private:
    std::vector<InstrumentClass> classes_;
    void index();
    std::vector<int> program_to_class_;  // 128 entries
};

}  // namespace mtr
