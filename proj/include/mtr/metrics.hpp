#pragma once

#include "mtr/model.hpp"
#include "mtr/types.hpp"

#include <span>
#include <vector>

namespace mtr {

// Onset-wise note F1 between aligned track lists: a note matches when
// (track index, pitch, onset step) agree; durations are not scored.
double note_f1(const Segment& reference, const Segment& hypothesis);
double note_f1(std::span<const Segment> reference, std::span<const Segment> hypothesis);

// Per-note pitch accuracy with fully teacher-forced decoding, posterior
// means, dropout off: the reconstruction chain run end to end.
struct ReconReport {
    double pitch_acc = 0;
    double dur_acc = 0;
    double rhythm_acc = 0;        // predicted rhythm thresholded at 0.5
    double function_mse = 0;      // decoded-function reconstruction error
    long notes = 0;
};
ReconReport reconstruction_report(MultiTrackVae& model, std::span<const Segment> segments);

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace mtr
