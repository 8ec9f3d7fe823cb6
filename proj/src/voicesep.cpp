#include "mtr/voicesep.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace mtr {

using ad::Graph;
using ad::Var;

std::vector<MixNote> mixture_notes(const Mixture& mix) {
    std::vector<MixNote> notes;
    for (int t = 0; t < kSteps; ++t)
        for (int p = 0; p < kPitches; ++p)
            if (mix.grid(p, t) > 0) notes.push_back({p, t, mix.grid(p, t)});
    std::sort(notes.begin(), notes.end(), [](const MixNote& a, const MixNote& b) {
        return a.onset != b.onset ? a.onset < b.onset : a.pitch < b.pitch;
    });
    return notes;
}

namespace {

struct GenNote {
    int pitch, onset;
};

bool overlaps(const MixNote& a, const MixNote& b) {
    return a.onset < b.onset + b.duration && b.onset < a.onset + a.duration;
}

int count_conflicts(const std::vector<MixNote>& notes, const std::vector<int>& voice_of) {
    int c = 0;
    for (size_t i = 0; i < notes.size(); ++i)
        for (size_t j = i + 1; j < notes.size(); ++j)
            if (voice_of[i] == voice_of[j] && overlaps(notes[i], notes[j])) ++c;
    return c;
}

}  // namespace

VoiceAssignment assign_mixture_notes(const Mixture& mix,
                                     const std::vector<NoteEventSequence>& generated,
                                     double lambda) {
    const int V = static_cast<int>(generated.size());
    if (V < 1) throw std::invalid_argument("assign_mixture_notes: no generated tracks");
    VoiceAssignment out;
    out.notes = mixture_notes(mix);
    const size_t N = out.notes.size();
    out.voice_of.assign(N, 0);
    if (N == 0) return out;

    std::vector<std::vector<GenNote>> gen(V);
    for (int v = 0; v < V; ++v)
        for (int t = 0; t < kSteps; ++t)
            for (const NoteEvent& ev : generated[static_cast<size_t>(v)].steps[static_cast<size_t>(t)])
                gen[static_cast<size_t>(v)].push_back({ev.pitch, t});

    constexpr double kInf = std::numeric_limits<double>::infinity();
    // distance of each mixture note to each voice's nearest generated note
    std::vector<std::vector<double>> dist(N, std::vector<double>(V, kInf));
    for (size_t i = 0; i < N; ++i) {
        for (int v = 0; v < V; ++v) {
            double best = kInf;
            for (const GenNote& gn : gen[static_cast<size_t>(v)]) {
                double d = std::abs(out.notes[i].pitch - gn.pitch) +
                           lambda * std::abs(out.notes[i].onset - gn.onset);
                best = std::min(best, d);
            }
            dist[i][static_cast<size_t>(v)] = best;
        }
    }

    // per-note ranking of voices by (distance, index); infinite distances last
    std::vector<std::vector<int>> ranking(N);
    std::vector<size_t> rank_pos(N, 0);
    for (size_t i = 0; i < N; ++i) {
        std::vector<int> order(static_cast<size_t>(V));
        for (int v = 0; v < V; ++v) order[static_cast<size_t>(v)] = v;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return dist[i][static_cast<size_t>(a)] < dist[i][static_cast<size_t>(b)];
        });
        ranking[i] = std::move(order);
        out.voice_of[i] = ranking[i][0];
    }

    int conflicts = count_conflicts(out.notes, out.voice_of);
    // greedy: move the conflicted note with the least added distance to its
    // next-nearest voice; moves that would add conflicts are not legal
    int guard = static_cast<int>(N) * V + 8;
    while (conflicts > 0 && guard-- > 0) {
        std::vector<bool> in_conflict(N, false);
        for (size_t i = 0; i < N; ++i)
            for (size_t j = i + 1; j < N; ++j)
                if (out.voice_of[i] == out.voice_of[j] && overlaps(out.notes[i], out.notes[j]))
                    in_conflict[i] = in_conflict[j] = true;

        double best_added = kInf;
        size_t best_note = N;
        int best_conflicts = conflicts;
        for (size_t i = 0; i < N; ++i) {
            if (!in_conflict[i]) continue;
            size_t next = rank_pos[i] + 1;
            if (next >= ranking[i].size()) continue;
            int target = ranking[i][next];
            if (!std::isfinite(dist[i][static_cast<size_t>(target)])) continue;
            double added = dist[i][static_cast<size_t>(target)] -
                           dist[i][static_cast<size_t>(ranking[i][rank_pos[i]])];
            if (added >= best_added) continue;
            int saved_voice = out.voice_of[i];
            out.voice_of[i] = target;
            int c = count_conflicts(out.notes, out.voice_of);
            out.voice_of[i] = saved_voice;
            if (c > conflicts) continue;  // would add conflicts
            best_added = added;
            best_note = i;
            best_conflicts = c;
        }
        if (best_note == N) break;  // no legal move
        ++rank_pos[best_note];
        out.voice_of[best_note] = ranking[best_note][rank_pos[best_note]];
        conflicts = best_conflicts;
    }
    out.residual_conflicts = count_conflicts(out.notes, out.voice_of);
    return out;
}

VoiceSepResult separate_voices(
    const Mixture& mix, MultiTrackVae& model, const std::vector<int>& voice_instruments,
    const std::vector<std::optional<MultiTrackVae::VoiceHint>>* hints) {
    if (!model.has_voice_inferrer())
        throw std::logic_error("separate_voices: model has no voice-function inferrer");
    int n_voices = static_cast<int>(voice_instruments.size());
    LatentGaussian z_mix = model.encode_mixture(mix);
    std::vector<LatentGaussian> zfs =
        model.infer_voice_functions(z_mix.mean, n_voices, hints);

    std::vector<std::pair<Eigen::VectorXd, int>> queries;
    for (int v = 0; v < n_voices; ++v)
        queries.emplace_back(zfs[static_cast<size_t>(v)].mean,
                             voice_instruments[static_cast<size_t>(v)]);
    std::vector<LatentGaussian> posts = model.separate(z_mix.mean, queries);

    VoiceSepResult res;
    for (int v = 0; v < n_voices; ++v)
        res.generated.push_back(model.decode_track(posts[static_cast<size_t>(v)].mean));
    res.assignment = assign_mixture_notes(mix, res.generated);

    res.voices.resize(static_cast<size_t>(n_voices));
    for (int v = 0; v < n_voices; ++v)
        res.voices[static_cast<size_t>(v)].instrument = voice_instruments[static_cast<size_t>(v)];
    for (size_t i = 0; i < res.assignment.notes.size(); ++i) {
        const MixNote& n = res.assignment.notes[i];
        res.voices[static_cast<size_t>(res.assignment.voice_of[i])].grid(n.pitch, n.onset) =
            n.duration;
    }
    return res;
}

Segment order_voices_high_to_low(const Segment& seg) {
    Segment out = seg;
    std::vector<double> mean_pitch(out.tracks.size(), -1.0);
    for (size_t v = 0; v < out.tracks.size(); ++v) {
        double sum = 0;
        int n = 0;
        for (int t = 0; t < kSteps; ++t)
            for (int p = 0; p < kPitches; ++p)
                if (out.tracks[v].grid(p, t) > 0) {
                    sum += p;
                    ++n;
                }
        if (n > 0) mean_pitch[v] = sum / n;
    }
    std::vector<size_t> order(out.tracks.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return mean_pitch[a] > mean_pitch[b]; });
    Segment sorted = out;
    sorted.tracks.clear();
    for (size_t i : order) sorted.tracks.push_back(out.tracks[i]);
    return sorted;
}

std::vector<int> ground_truth_voices(const Segment& voiced, const Mixture& mix) {
    std::vector<MixNote> notes = mixture_notes(mix);
    std::vector<int> gt(notes.size(), 0);
    for (size_t i = 0; i < notes.size(); ++i) {
        for (size_t v = 0; v < voiced.tracks.size(); ++v) {
            if (voiced.tracks[v].grid(notes[i].pitch, notes[i].onset) == notes[i].duration) {
                gt[i] = static_cast<int>(v);
                break;
            }
        }
    }
    return gt;
}

std::vector<std::optional<MultiTrackVae::VoiceHint>> entry_hints(const Segment& voiced) {
    std::vector<std::optional<MultiTrackVae::VoiceHint>> hints;
    for (const TrackRoll& tr : voiced.tracks) {
        std::optional<MultiTrackVae::VoiceHint> h;
        for (int t = 0; t < kSteps && !h; ++t)
            for (int p = 0; p < kPitches; ++p)
                if (tr.grid(p, t) > 0) {
                    h = MultiTrackVae::VoiceHint{p, t};
                    break;
                }
        hints.push_back(h);
    }
    return hints;
}

double voice_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
    if (predicted.size() != truth.size())
        throw std::invalid_argument("voice_accuracy: size mismatch");
    if (predicted.empty()) return 0.0;
    long hits = 0;
    for (size_t i = 0; i < predicted.size(); ++i)
        if (predicted[i] == truth[i]) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(predicted.size());
}

ElboResult build_voicesep_elbo(Graph& g, MultiTrackVae& model,
                               std::span<const Segment> batch, const ScheduleState& sched,
                               Rng& rng, bool training, bool with_hints) {
    if (batch.empty()) throw std::invalid_argument("voicesep elbo: empty batch");
    std::vector<Var> track_recons, fn_recons, aux_recons, kl_mixes, kl_fns, kl_tracks;
    long pitch_correct = 0, dur_correct = 0, note_positions = 0;

    for (const Segment& seg : batch) {
        int n = seg.num_tracks();
        Mixture mix = condense_mixture(seg);
        auto zmix = model.encode_mixture_g(g, mix.grid);
        kl_mixes.push_back(g.kl_std_normal(zmix.mean, zmix.log_var));
        Var zmix_s = nn::sample_gaussian(g, zmix.mean, zmix.log_var, rng);

        std::vector<std::optional<MultiTrackVae::VoiceHint>> hints;
        if (with_hints) hints = entry_hints(seg);
        auto zf_posts = model.infer_voice_functions_g(
            g, zmix_s, n, with_hints ? &hints : nullptr, training, rng);

        std::vector<Var> queries;
        std::vector<int> instruments;
        std::vector<Var> seg_kl_fn, seg_fn_recon;
        int zfn = model.config().z_fn;
        for (int v = 0; v < n; ++v) {
            const TrackRoll& tr = seg.tracks[static_cast<size_t>(v)];
            seg_kl_fn.push_back(g.kl_std_normal(zf_posts[static_cast<size_t>(v)].mean,
                                                zf_posts[static_cast<size_t>(v)].log_var));
            Var zf = nn::sample_gaussian(g, zf_posts[static_cast<size_t>(v)].mean,
                                         zf_posts[static_cast<size_t>(v)].log_var, rng);
            TrackFunction f = track_function(tr);
            auto [fp, ft] = model.decode_function_g(g, g.slice_rows(zf, 0, zfn),
                                                    g.slice_rows(zf, zfn, zfn));
            std::vector<Var> recs{g.mse(fp, f.pitch_fn), g.mse(ft, f.time_fn)};
            seg_fn_recon.push_back(g.add_n(recs));
            queries.push_back(zf);
            instruments.push_back(tr.instrument);
        }
        kl_fns.push_back(g.affine(g.add_n(seg_kl_fn), 1.0 / n, 0.0));
        fn_recons.push_back(g.affine(g.add_n(seg_fn_recon), 1.0 / n, 0.0));

        auto posts = model.separate_g(g, zmix_s, queries, instruments, training, rng);
        std::vector<Var> seg_kl_track, seg_aux, seg_track;
        for (int v = 0; v < n; ++v) {
            const TrackRoll& tr = seg.tracks[static_cast<size_t>(v)];
            seg_kl_track.push_back(g.kl_std_normal(posts[static_cast<size_t>(v)].mean,
                                                   posts[static_cast<size_t>(v)].log_var));
            Var z = nn::sample_gaussian(g, posts[static_cast<size_t>(v)].mean,
                                        posts[static_cast<size_t>(v)].log_var, rng);
            auto aux = model.predict_aux_g(g, z);
            AuxFeatures gt = aux_features(tr);
            std::vector<Var> aux_terms{g.mse(aux.pitch_centre, gt.pitch_centre),
                                       g.mse(aux.voice_intensity, gt.voice_intensity),
                                       g.bce_logits(aux.rhythm_logits, gt.rhythm)};
            seg_aux.push_back(g.add_n(aux_terms));
            NoteEventSequence teacher = roll_to_events(tr.grid);
            auto dec = model.decode_track_teacher_g(g, z, aux, teacher, sched.tf_rate, rng);
            std::vector<Var> rec{dec.pitch_ce, dec.dur_ce};
            seg_track.push_back(g.add_n(rec));
            pitch_correct += dec.pitch_correct;
            dur_correct += dec.dur_correct;
            note_positions += dec.note_positions;
        }
        kl_tracks.push_back(g.affine(g.add_n(seg_kl_track), 1.0 / n, 0.0));
        aux_recons.push_back(g.affine(g.add_n(seg_aux), 1.0 / n, 0.0));
        track_recons.push_back(g.affine(g.add_n(seg_track), 1.0 / n, 0.0));
    }

    auto mean_of = [&](std::vector<Var>& terms) {
        return g.affine(g.add_n(terms), 1.0 / static_cast<double>(terms.size()), 0.0);
    };
    Var track_recon = mean_of(track_recons);
    Var fn_recon = mean_of(fn_recons);
    Var aux_recon = mean_of(aux_recons);
    Var kl_mix = mean_of(kl_mixes);
    Var kl_fn = mean_of(kl_fns);
    Var kl_track = mean_of(kl_tracks);
    std::vector<Var> total_terms{track_recon, fn_recon, aux_recon,
                                 g.affine(kl_fn, sched.beta_f, 0.0),
                                 g.affine(g.add(kl_mix, kl_track), sched.beta_o, 0.0)};
    Var total = g.add_n(total_terms);

    ElboResult res;
    res.total = total;
    res.breakdown.track_recon = g.scalar(track_recon);
    res.breakdown.function_recon = g.scalar(fn_recon);
    res.breakdown.aux_recon = g.scalar(aux_recon);
    res.breakdown.kl_mix = g.scalar(kl_mix);
    res.breakdown.kl_function = g.scalar(kl_fn);
    res.breakdown.kl_track = g.scalar(kl_track);
    res.breakdown.total = g.scalar(total);
    res.breakdown.beta_f = sched.beta_f;
    res.breakdown.beta_o = sched.beta_o;
    res.breakdown.note_positions = note_positions;
    res.breakdown.pitch_acc =
        note_positions > 0 ? static_cast<double>(pitch_correct) / note_positions : 0.0;
    res.breakdown.dur_acc =
        note_positions > 0 ? static_cast<double>(dur_correct) / note_positions : 0.0;
    return res;
}

std::vector<int> finetune_voicesep(MultiTrackVae& model, nn::AdamState& opt,
                                   const std::vector<LoadedSegment>& train_set,
                                   const TrainConfig& cfg, bool with_hints, int n_voices) {
    if (!model.has_voice_inferrer())
        model.enable_voice_inferrer(Rng::mix(cfg.seed, "inferrer"));

    std::vector<LoadedSegment> ordered;
    std::map<int, std::map<int, int>> inst_votes;  // voice index -> instrument -> count
    for (const LoadedSegment& ls : train_set) {
        if (ls.segment.num_tracks() != n_voices) continue;
        LoadedSegment copy = ls;
        copy.segment = order_voices_high_to_low(ls.segment);
        for (int v = 0; v < n_voices; ++v)
            inst_votes[v][copy.segment.tracks[static_cast<size_t>(v)].instrument]++;
        ordered.push_back(std::move(copy));
    }
    if (ordered.empty())
        throw std::invalid_argument("voicesep fine-tune: no segments with the preset voice count");

    LossBuilder builder = [with_hints](Graph& g, MultiTrackVae& m,
                                       std::span<const Segment> b, const ScheduleState& s,
                                       Rng& r, bool training) {
        return build_voicesep_elbo(g, m, b, s, r, training, with_hints);
    };
    train_model(model, opt, ordered, {}, cfg, {}, {}, builder);

    std::vector<int> voice_instruments;
    for (int v = 0; v < n_voices; ++v) {
        int best_inst = 0, best_count = -1;
        for (const auto& [inst, count] : inst_votes[v])
            if (count > best_count) {
                best_count = count;
                best_inst = inst;
            }
        voice_instruments.push_back(best_inst);
    }
    return voice_instruments;
}

std::string VoiceSepEvalReport::to_json_text() const {
    nlohmann::json j;
    j["folds"] = nlohmann::json::array();
    for (const FoldReport& f : folds) {
        j["folds"].push_back({{"fold", f.fold},
                              {"accuracy_no_hints", f.accuracy_no_hints},
                              {"accuracy_hints", f.accuracy_hints},
                              {"notes", f.notes}});
    }
    j["mean_no_hints"] = mean_no_hints;
    j["mean_hints"] = mean_hints;
    return j.dump(2);
}

VoiceSepEvalReport evaluate_voicesep(const std::vector<LoadedSegment>& corpus,
                                     const MultiTrackVae& base,
                                     const VoiceSepEvalConfig& cfg) {
    if (static_cast<int>(corpus.size()) < cfg.folds)
        throw std::invalid_argument("evaluate_voicesep: fewer segments than folds");

    VoiceSepEvalReport report;
    double sum_nh = 0, sum_h = 0;
    int nh_folds = 0, h_folds = 0;
    for (int fold = 0; fold < cfg.folds; ++fold) {
        std::vector<LoadedSegment> train_set, test_set;
        for (size_t i = 0; i < corpus.size(); ++i) {
            if (static_cast<int>(i % static_cast<size_t>(cfg.folds)) == fold)
                test_set.push_back(corpus[i]);
            else
                train_set.push_back(corpus[i]);
        }
        FoldReport fr;
        fr.fold = fold;

        auto run_condition = [&](bool hints) {
            auto model = clone_model(base);
            nn::AdamState opt;
            TrainConfig tc;
            tc.epochs = cfg.finetune_epochs;
            tc.batch_size = cfg.batch_size;
            tc.augment = cfg.augment;
            tc.seed = Rng::mix(cfg.seed, "fold" + std::to_string(fold));
            std::vector<int> voice_inst =
                finetune_voicesep(*model, opt, train_set, tc, hints, cfg.n_voices);
            long hits = 0, total = 0;
            for (const LoadedSegment& ls : test_set) {
                if (ls.segment.num_tracks() != cfg.n_voices) continue;
                Segment ordered = order_voices_high_to_low(ls.segment);
                Mixture mix = condense_mixture(ordered);
                auto gt = ground_truth_voices(ordered, mix);
                auto hint_list = entry_hints(ordered);
                VoiceSepResult res = separate_voices(mix, *model, voice_inst,
                                                     hints ? &hint_list : nullptr);
                for (size_t i = 0; i < gt.size(); ++i) {
                    if (res.assignment.voice_of[i] == gt[i]) ++hits;
                    ++total;
                }
            }
            fr.notes = total;
            return total > 0 ? 100.0 * static_cast<double>(hits) / static_cast<double>(total)
                             : 0.0;
        };

        if (cfg.run_without_hints) {
            fr.accuracy_no_hints = run_condition(false);
            sum_nh += fr.accuracy_no_hints;
            ++nh_folds;
        }
        if (cfg.run_with_hints) {
            fr.accuracy_hints = run_condition(true);
            sum_h += fr.accuracy_hints;
            ++h_folds;
        }
        report.folds.push_back(fr);
    }
    report.mean_no_hints = nh_folds > 0 ? sum_nh / nh_folds : 0.0;
    report.mean_hints = h_folds > 0 ? sum_h / h_folds : 0.0;
    return report;
}

}  // namespace mtr
