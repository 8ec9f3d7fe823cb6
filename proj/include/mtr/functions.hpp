#pragma once

#include "mtr/types.hpp"

#include <Eigen/Dense>

#include <string>

namespace mtr {

// Normalization constants for the auxiliary features. The voice-intensity
// cap keeps the feature corpus-independent.
inline constexpr double kVoiceIntensityCap = 16.0;
inline constexpr double kPitchCentreNorm = 127.0;

// Instrument-agnostic style descriptor of a track: onset-count histograms
// along the pitch axis (length 128) and the time axis (length 32), both
// normalized to [0,1]. Durations are ignored; only onsets count.
struct TrackFunction {
    Eigen::VectorXd pitch_fn = Eigen::VectorXd::Zero(kPitches);
    Eigen::VectorXd time_fn = Eigen::VectorXd::Zero(kSteps);

    Eigen::VectorXd concat() const;  // [pitch_fn; time_fn], length 160
    bool all_zero() const;
};

// Per-step symbolic features decoded ahead of the notes.
struct AuxFeatures {
    Eigen::VectorXd pitch_centre = Eigen::VectorXd::Zero(kSteps);
    Eigen::VectorXd voice_intensity = Eigen::VectorXd::Zero(kSteps);
    Eigen::VectorXd rhythm = Eigen::VectorXd::Zero(kSteps);
};

TrackFunction track_function(const TrackRoll& track);
TrackFunction track_function(const Grid& grid);

AuxFeatures aux_features(const TrackRoll& track);
AuxFeatures aux_features(const Grid& grid);

// Cosine similarity of the concatenated [pitch_fn; time_fn] vectors.
// Throws std::invalid_argument when both arguments are all-zero.
double mixture_similarity(const TrackFunction& a, const TrackFunction& b);

// Debug dumps as structured text.
std::string to_json_text(const TrackFunction& f);
std::string to_json_text(const AuxFeatures& f);

}  // namespace mtr
