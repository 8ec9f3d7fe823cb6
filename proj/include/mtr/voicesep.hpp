#pragma once

#include "mtr/checkpoint.hpp"
#include "mtr/manifest.hpp"
#include "mtr/model.hpp"
#include "mtr/training.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mtr {

struct MixNote {
    int pitch = 0;
    int onset = 0;
    int duration = 1;
};

// Every mixture note gets exactly one voice (0 = highest). Residual
// same-voice overlaps that greedy re-assignment could not clear stay
// assigned and are counted here.
struct VoiceAssignment {
    std::vector<MixNote> notes;   // canonical order: onset, then pitch
    std::vector<int> voice_of;    // parallel to notes
    int residual_conflicts = 0;
};

inline constexpr double kVoiceDistanceLambda = 2.0;

// d((p1,t1),(p2,t2)) = |p1-p2| + lambda*|t1-t2| against the nearest
// generated note of each voice; overlap conflicts are cleared greedily by
// moving the note with the least added distance to its next-nearest voice.
VoiceAssignment assign_mixture_notes(const Mixture& mix,
                                     const std::vector<NoteEventSequence>& generated,
                                     double lambda = kVoiceDistanceLambda);

std::vector<MixNote> mixture_notes(const Mixture& mix);

struct VoiceSepResult {
    std::vector<TrackRoll> voices;             // mixture notes partitioned
    std::vector<NoteEventSequence> generated;  // assignment anchors
    VoiceAssignment assignment;
};

// Full pipeline: encode mixture, infer per-voice function latents
// autoregressively (high to low), separate, decode, then assign the
// original mixture notes to voices.
VoiceSepResult separate_voices(
    const Mixture& mix, MultiTrackVae& model, const std::vector<int>& voice_instruments,
    const std::vector<std::optional<MultiTrackVae::VoiceHint>>* hints = nullptr);

// Fine-tune objective: the query-net posterior is replaced by the
// inferrer's (mixture-conditioned) one; everything downstream is shared.
ElboResult build_voicesep_elbo(ad::Graph& g, MultiTrackVae& model,
                               std::span<const Segment> batch, const ScheduleState& sched,
                               Rng& rng, bool training, bool with_hints);

// Voices sorted high to low by mean pitch; returns a copy.
Segment order_voices_high_to_low(const Segment& seg);

// Ground-truth voice of each mixture note: the lowest-index voice whose
// grid carries the mixture's duration at that cell.
std::vector<int> ground_truth_voices(const Segment& voiced, const Mixture& mix);

std::vector<std::optional<MultiTrackVae::VoiceHint>> entry_hints(const Segment& voiced);

double voice_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

struct VoiceSepEvalConfig {
    int folds = 10;
    int finetune_epochs = 8;
    int batch_size = 4;
    bool augment = false;
    std::uint64_t seed = 0;
    bool run_without_hints = true;
    bool run_with_hints = true;
    int n_voices = 4;
};

struct FoldReport {
    int fold = 0;
    double accuracy_no_hints = 0;
    double accuracy_hints = 0;
    long notes = 0;
};

struct VoiceSepEvalReport {
    std::vector<FoldReport> folds;
    double mean_no_hints = 0;
    double mean_hints = 0;
    std::string to_json_text() const;
};

// K-fold cross validation: per fold, fine-tune a copy of the base model on
// the other folds and score note-level voice accuracy on the held-out one.
VoiceSepEvalReport evaluate_voicesep(const std::vector<LoadedSegment>& corpus,
                                     const MultiTrackVae& base,
                                     const VoiceSepEvalConfig& cfg);

// Fine-tune `model` (inferrer enabled in place) on the given voiced
// segments; returns the per-voice-index majority instruments.
std::vector<int> finetune_voicesep(MultiTrackVae& model, nn::AdamState& opt,
                                   const std::vector<LoadedSegment>& train_set,
                                   const TrainConfig& cfg, bool with_hints, int n_voices);

}  // namespace mtr
