#include "mtr/metrics.hpp"

#include "mtr/functions.hpp"
#include "mtr/layers.hpp"
#include "mtr/training.hpp"

#include <cmath>
#include <set>
#include <tuple>

namespace mtr {

namespace {

std::set<std::tuple<int, int, int>> note_set(const Segment& seg) {
    std::set<std::tuple<int, int, int>> s;
    for (int n = 0; n < seg.num_tracks(); ++n)
        for (int t = 0; t < kSteps; ++t)
            for (int p = 0; p < kPitches; ++p)
                if (seg.tracks[static_cast<size_t>(n)].grid(p, t) > 0) s.insert({n, p, t});
    return s;
}

}  // namespace

double note_f1(const Segment& reference, const Segment& hypothesis) {
    return note_f1(std::span<const Segment>(&reference, 1),
                   std::span<const Segment>(&hypothesis, 1));
}

double note_f1(std::span<const Segment> reference, std::span<const Segment> hypothesis) {
    long tp = 0, fp = 0, fn = 0;
    size_t n = std::min(reference.size(), hypothesis.size());
    for (size_t i = 0; i < n; ++i) {
        auto ref = note_set(reference[i]);
        auto hyp = note_set(hypothesis[i]);
        for (const auto& e : hyp)
            if (ref.count(e))
                ++tp;
            else
                ++fp;
        for (const auto& e : ref)
            if (!hyp.count(e)) ++fn;
    }
    if (tp == 0) return 0.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

ReconReport reconstruction_report(MultiTrackVae& model, std::span<const Segment> segments) {
    ReconReport rep;
    long pitch_hits = 0, dur_hits = 0, notes = 0;
    long rhythm_hits = 0, rhythm_total = 0;
    double fn_mse_sum = 0;
    long fn_count = 0;
    Rng rng(0);

    for (const Segment& seg : segments) {
        Mixture mix = condense_mixture(seg);
        ad::Graph g;
        auto zmix = model.encode_mixture_g(g, mix.grid);
        std::vector<ad::Var> queries;
        std::vector<int> instruments;
        for (const TrackRoll& tr : seg.tracks) {
            TrackFunction f = track_function(tr);
            auto [zp, zt] = model.encode_function_g(g, f);
            auto [fp, ft] = model.decode_function_g(g, zp.mean, zt.mean);
            fn_mse_sum += (g.val(fp).col(0) - f.pitch_fn).squaredNorm() / kPitches;
            fn_mse_sum += (g.val(ft).col(0) - f.time_fn).squaredNorm() / kSteps;
            fn_count += 2;
            std::vector<ad::Var> cat{zp.mean, zt.mean};
            queries.push_back(g.concat_rows(cat));
            instruments.push_back(tr.instrument);
        }
        auto posts = model.separate_g(g, zmix.mean, queries, instruments, false, rng);
        for (int i = 0; i < seg.num_tracks(); ++i) {
            const TrackRoll& tr = seg.tracks[static_cast<size_t>(i)];
            auto aux = model.predict_aux_g(g, posts[static_cast<size_t>(i)].mean);
            AuxFeatures gt = aux_features(tr);
            const auto& rl = g.val(aux.rhythm_logits);
            for (int t = 0; t < kSteps; ++t) {
                bool pred = rl(t, 0) > 0.0;  // sigmoid(x) > 0.5
                bool truth = gt.rhythm[t] > 0.5;
                if (pred == truth) ++rhythm_hits;
                ++rhythm_total;
            }
            NoteEventSequence teacher = roll_to_events(tr.grid);
            auto dec = model.decode_track_teacher_g(g, posts[static_cast<size_t>(i)].mean,
                                                    aux, teacher, 1.0, rng);
            pitch_hits += dec.pitch_correct;
            dur_hits += dec.dur_correct;
            notes += dec.note_positions;
        }
    }
    rep.notes = notes;
    rep.pitch_acc = notes > 0 ? static_cast<double>(pitch_hits) / notes : 0.0;
    rep.dur_acc = notes > 0 ? static_cast<double>(dur_hits) / notes : 0.0;
    rep.rhythm_acc =
        rhythm_total > 0 ? static_cast<double>(rhythm_hits) / rhythm_total : 0.0;
    rep.function_mse = fn_count > 0 ? fn_mse_sum / fn_count : 0.0;
    return rep;
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size() || a.size() == 0) return 0.0;
    double ma = a.mean(), mb = b.mean();
    Eigen::VectorXd da = a.array() - ma;
    Eigen::VectorXd db = b.array() - mb;
    double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
    if (denom == 0.0) return 0.0;
    return da.dot(db) / denom;
}

}  // namespace mtr
