#include "mtr/functions.hpp"

#include <json.hpp>

#include <cmath>
#include <stdexcept>

namespace mtr {

Eigen::VectorXd TrackFunction::concat() const {
    Eigen::VectorXd v(kPitches + kSteps);
    v << pitch_fn, time_fn;
    return v;
}

bool TrackFunction::all_zero() const {
    return pitch_fn.isZero(0.0) && time_fn.isZero(0.0);
}

TrackFunction track_function(const Grid& grid) {
    TrackFunction f;
    for (int p = 0; p < kPitches; ++p) {
        int onsets = 0;
        for (int t = 0; t < kSteps; ++t)
            if (grid(p, t) > 0) ++onsets;
        f.pitch_fn[p] = static_cast<double>(onsets) / kSteps;
    }
    for (int t = 0; t < kSteps; ++t) {
        int onsets = 0;
        for (int p = 0; p < kPitches; ++p)
            if (grid(p, t) > 0) ++onsets;
        f.time_fn[t] = static_cast<double>(onsets) / kPitches;
    }
    return f;
}

TrackFunction track_function(const TrackRoll& track) {
    return track_function(track.grid);
}

AuxFeatures aux_features(const Grid& grid) {
    AuxFeatures a;
    for (int t = 0; t < kSteps; ++t) {
        int onsets = 0;
        double pitch_sum = 0.0;
        for (int p = 0; p < kPitches; ++p) {
            if (grid(p, t) > 0) {
                ++onsets;
                pitch_sum += p;
            }
        }
        if (onsets == 0) continue;
        a.pitch_centre[t] = (pitch_sum / onsets) / kPitchCentreNorm;
        a.voice_intensity[t] = std::min(1.0, onsets / kVoiceIntensityCap);
        a.rhythm[t] = 1.0;
    }
    return a;
}

AuxFeatures aux_features(const TrackRoll& track) {
    return aux_features(track.grid);
}

double mixture_similarity(const TrackFunction& a, const TrackFunction& b) {
    Eigen::VectorXd va = a.concat();
    Eigen::VectorXd vb = b.concat();
    double na = va.norm();
    double nb = vb.norm();
    if (na == 0.0 && nb == 0.0)
        throw std::invalid_argument("mixture_similarity: both functions are all-zero");
    if (na == 0.0 || nb == 0.0) return 0.0;
    return va.dot(vb) / (na * nb);
}

namespace {
nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}
}  // namespace

std::string to_json_text(const TrackFunction& f) {
    nlohmann::json j;
    j["pitch_fn"] = vec_to_json(f.pitch_fn);
    j["time_fn"] = vec_to_json(f.time_fn);
    return j.dump(2);
}

std::string to_json_text(const AuxFeatures& f) {
    nlohmann::json j;
    j["pitch_centre"] = vec_to_json(f.pitch_centre);
    j["voice_intensity"] = vec_to_json(f.voice_intensity);
    j["rhythm"] = vec_to_json(f.rhythm);
    return j.dump(2);
}

}  // namespace mtr
