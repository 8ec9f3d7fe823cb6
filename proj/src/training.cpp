#include "mtr/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace mtr {

using ad::Graph;
using ad::Var;

ScheduleState step_schedule(const ScheduleState& sched, int epoch, int total_epochs) {
    if (epoch < 0 || total_epochs <= 0)
        throw std::invalid_argument("step_schedule: bad epoch/total");
    double f = std::min(1.0, static_cast<double>(epoch) / total_epochs);
    ScheduleState s = sched;
    s.epoch = epoch;
    s.beta_f = 0.5 * std::min(1.0, 2.0 * f);
    s.beta_o = 0.01 * std::min(1.0, 2.0 * f);
    s.tf_rate = 0.8 * (1.0 - f);
    s.lr = 1e-3 * std::pow(1e-2, f);
    return s;
}

namespace {

Var mean_of(Graph& g, std::vector<Var>& terms) {
    if (terms.empty()) return g.input(ad::Mat::Zero(1, 1));
    return g.affine(g.add_n(terms), 1.0 / static_cast<double>(terms.size()), 0.0);
}

}  // namespace

ElboResult build_elbo(Graph& g, MultiTrackVae& model, std::span<const Segment> batch,
                      const ScheduleState& sched, Rng& rng, bool training) {
    if (batch.empty()) throw std::invalid_argument("elbo: empty batch");
    std::vector<Var> track_recons, fn_recons, aux_recons, kl_mixes, kl_fns, kl_tracks;
    long pitch_correct = 0, dur_correct = 0, note_positions = 0;

    for (const Segment& seg : batch) {
        if (seg.tracks.empty()) throw std::invalid_argument("elbo: segment with no tracks");
        Mixture mix = condense_mixture(seg);
        auto zmix = model.encode_mixture_g(g, mix.grid);
        kl_mixes.push_back(g.kl_std_normal(zmix.mean, zmix.log_var));
        Var zmix_s = nn::sample_gaussian(g, zmix.mean, zmix.log_var, rng);

        int n = seg.num_tracks();
        std::vector<Var> queries;
        std::vector<int> instruments;
        std::vector<Var> seg_kl_fn, seg_fn_recon;
        for (const TrackRoll& tr : seg.tracks) {
            TrackFunction f = track_function(tr);
            auto [zp, zt] = model.encode_function_g(g, f);
            std::vector<Var> kls{g.kl_std_normal(zp.mean, zp.log_var),
                                 g.kl_std_normal(zt.mean, zt.log_var)};
            seg_kl_fn.push_back(g.add_n(kls));
            Var zp_s = nn::sample_gaussian(g, zp.mean, zp.log_var, rng);
            Var zt_s = nn::sample_gaussian(g, zt.mean, zt.log_var, rng);
            auto [fp, ft] = model.decode_function_g(g, zp_s, zt_s);
            std::vector<Var> recs{g.mse(fp, f.pitch_fn), g.mse(ft, f.time_fn)};
            seg_fn_recon.push_back(g.add_n(recs));
            std::vector<Var> cat{zp_s, zt_s};
            queries.push_back(g.concat_rows(cat));
            instruments.push_back(tr.instrument);
        }
        kl_fns.push_back(mean_of(g, seg_kl_fn));
        fn_recons.push_back(mean_of(g, seg_fn_recon));

        auto posts = model.separate_g(g, zmix_s, queries, instruments, training, rng);
        std::vector<Var> seg_kl_track, seg_aux, seg_track;
        for (int i = 0; i < n; ++i) {
            const TrackRoll& tr = seg.tracks[static_cast<size_t>(i)];
            seg_kl_track.push_back(g.kl_std_normal(posts[static_cast<size_t>(i)].mean,
                                                   posts[static_cast<size_t>(i)].log_var));
            Var z = nn::sample_gaussian(g, posts[static_cast<size_t>(i)].mean,
                                        posts[static_cast<size_t>(i)].log_var, rng);
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
        kl_tracks.push_back(mean_of(g, seg_kl_track));
        aux_recons.push_back(mean_of(g, seg_aux));
        track_recons.push_back(mean_of(g, seg_track));
    }

    Var track_recon = mean_of(g, track_recons);
    Var fn_recon = mean_of(g, fn_recons);
    Var aux_recon = mean_of(g, aux_recons);
    Var kl_mix = mean_of(g, kl_mixes);
    Var kl_fn = mean_of(g, kl_fns);
    Var kl_track = mean_of(g, kl_tracks);

    std::vector<Var> total_terms{
        track_recon, fn_recon, aux_recon,
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

LossBreakdown elbo_loss(std::span<const Segment> batch, MultiTrackVae& model,
                        const ScheduleState& sched, Rng& rng) {
    Graph g;
    return build_elbo(g, model, batch, sched, rng, false).breakdown;
}

std::string TrainConfig::to_json_text() const {
    nlohmann::json j;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["augment"] = augment;
    j["clip_norm"] = clip_norm;
    j["seed"] = seed;
    j["schedule_epochs"] = schedule_epochs;
    return j.dump();
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.augment = j.value("augment", c.augment);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.seed = j.value("seed", static_cast<std::uint64_t>(0));
    c.schedule_epochs = j.value("schedule_epochs", c.schedule_epochs);
    return c;
}

int draw_key_offset(Rng& rng) { return rng.uniform_int(-5, 6); }

TrainResult train_model(
    MultiTrackVae& model, nn::AdamState& opt, const std::vector<LoadedSegment>& train_set,
    const std::vector<LoadedSegment>& val_set, const TrainConfig& cfg,
    const std::function<void(const EpochLog&)>& on_epoch,
    const std::function<void(const MultiTrackVae&, const EpochLog&)>& on_best,
    const LossBuilder& loss_builder) {
    if (train_set.empty())
        throw std::invalid_argument("training split is empty");

    LossBuilder build = loss_builder;
    if (!build)
        build = [](Graph& g, MultiTrackVae& m, std::span<const Segment> b,
                   const ScheduleState& s, Rng& r, bool training) {
            return build_elbo(g, m, b, s, r, training);
        };

    // group by (corpus, track count): batches never mix corpora or pad queries
    std::map<std::pair<std::string, int>, std::vector<const Segment*>> groups;
    for (const LoadedSegment& ls : train_set)
        groups[{ls.corpus, ls.segment.num_tracks()}].push_back(&ls.segment);

    int total_sched = cfg.schedule_epochs > 0 ? cfg.schedule_epochs : cfg.epochs;
    TrainResult result;
    ScheduleState sched;
    Rng rng(Rng::mix(cfg.seed, "train"));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        sched = step_schedule(sched, epoch, total_sched);

        // shuffle within groups, then shuffle the batch order
        struct BatchRef {
            std::vector<const Segment*> segs;
        };
        std::vector<BatchRef> batches;
        for (auto& [key, segs] : groups) {
            for (size_t i = segs.size(); i > 1; --i)
                std::swap(segs[i - 1],
                          segs[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
            for (size_t i = 0; i < segs.size(); i += static_cast<size_t>(cfg.batch_size)) {
                BatchRef b;
                for (size_t k = i; k < std::min(segs.size(), i + static_cast<size_t>(cfg.batch_size)); ++k)
                    b.segs.push_back(segs[k]);
                batches.push_back(std::move(b));
            }
        }
        for (size_t i = batches.size(); i > 1; --i)
            std::swap(batches[i - 1],
                      batches[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);

        LossBreakdown train_mean;
        long nb = 0;
        for (const BatchRef& bref : batches) {
            std::vector<Segment> batch;
            batch.reserve(bref.segs.size());
            int offset = cfg.augment ? draw_key_offset(rng) : 0;
            for (const Segment* s : bref.segs)
                batch.push_back(offset == 0 ? *s : transpose(*s, offset));

            Graph g;
            ElboResult er = build(g, model, batch, sched, rng, true);
            model.params().zero_grad();
            g.backward(er.total);
            nn::adam_step(model.params(), opt, sched.lr, cfg.clip_norm);

            train_mean.total += er.breakdown.total;
            train_mean.track_recon += er.breakdown.track_recon;
            train_mean.function_recon += er.breakdown.function_recon;
            train_mean.aux_recon += er.breakdown.aux_recon;
            train_mean.kl_mix += er.breakdown.kl_mix;
            train_mean.kl_function += er.breakdown.kl_function;
            train_mean.kl_track += er.breakdown.kl_track;
            train_mean.pitch_acc += er.breakdown.pitch_acc;
            ++nb;
        }
        if (nb > 0) {
            train_mean.total /= nb;
            train_mean.track_recon /= nb;
            train_mean.function_recon /= nb;
            train_mean.aux_recon /= nb;
            train_mean.kl_mix /= nb;
            train_mean.kl_function /= nb;
            train_mean.kl_track /= nb;
            train_mean.pitch_acc /= nb;
        }
        train_mean.beta_f = sched.beta_f;
        train_mean.beta_o = sched.beta_o;

        // deterministic validation pass: eval mode, fully teacher forced
        double val_total = 0;
        if (!val_set.empty()) {
            Rng vrng(Rng::mix(cfg.seed, "val"));
            ScheduleState vsched = sched;
            vsched.tf_rate = 1.0;
            long nv = 0;
            for (const LoadedSegment& ls : val_set) {
                Graph g;
                std::vector<Segment> one{ls.segment};
                val_total += build(g, model, one, vsched, vrng, false).breakdown.total;
                ++nv;
            }
            val_total /= static_cast<double>(nv);
        } else {
            val_total = train_mean.total;
        }

        EpochLog log;
        log.epoch = epoch;
        log.train = train_mean;
        log.val_total = val_total;
        log.sched = sched;
        result.logs.push_back(log);
        if (on_epoch) on_epoch(log);
        if (result.best_epoch < 0 || val_total < result.best_val) {
            result.best_epoch = epoch;
            result.best_val = val_total;
            if (on_best) on_best(model, log);
        }
    }
    return result;
}

}  // namespace mtr
