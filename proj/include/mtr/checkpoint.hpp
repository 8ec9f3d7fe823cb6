#pragma once

#include "mtr/model.hpp"
#include "mtr/training.hpp"

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mtr {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
    std::string kind = "base";  // "base" | "voicesep"
    int epoch = 0;
    ScheduleState schedule;
    std::vector<int> voice_instruments;  // voicesep checkpoints
    bool hints_trained = false;
    int n_voices = 4;
};

struct LoadedCheckpoint {
    std::unique_ptr<MultiTrackVae> model;
    CheckpointMeta meta;
    nn::AdamState opt;
    bool has_opt = false;
};

void save_checkpoint(std::ostream& out, const MultiTrackVae& model,
                     const CheckpointMeta& meta, const nn::AdamState* opt = nullptr);
void save_checkpoint(const std::string& path, const MultiTrackVae& model,
                     const CheckpointMeta& meta, const nn::AdamState* opt = nullptr);

// Throws CheckpointError on version, hash, or vocabulary mismatch.
LoadedCheckpoint load_checkpoint(std::istream& in,
                                 const std::vector<std::string>* expected_vocab = nullptr);
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::vector<std::string>* expected_vocab = nullptr);

// Deep copy via an in-memory round trip.
std::unique_ptr<MultiTrackVae> clone_model(const MultiTrackVae& model);

}  // namespace mtr
