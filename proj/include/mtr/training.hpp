#pragma once

#include "mtr/manifest.hpp"
#include "mtr/model.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mtr {

struct LossBreakdown {
    double track_recon = 0;
    double function_recon = 0;
    double aux_recon = 0;
    double kl_mix = 0;
    double kl_function = 0;
    double kl_track = 0;
    double total = 0;
    double beta_f = 0;
    double beta_o = 0;
    // diagnostics
    double pitch_acc = 0;
    double dur_acc = 0;
    long note_positions = 0;
};

struct ScheduleState {
    int epoch = 0;
    double beta_f = 0.0;
    double beta_o = 0.0;
    double tf_rate = 0.8;
    double lr = 1e-3;
};

// Endpoints follow the training recipe: beta_f 0 -> 0.5 and beta_o
// 0 -> 0.01 rising linearly over the first half then holding, teacher
// forcing 0.8 -> 0 linearly, learning rate 1e-3 -> 1e-5 exponentially.
ScheduleState step_schedule(const ScheduleState& sched, int epoch, int total_epochs);

struct ElboResult {
    LossBreakdown breakdown;
    ad::Var total;
};

// Full posterior chain and reconstruction losses for a batch of segments.
// All reconstruction terms are per-element means averaged over tracks and
// batch; KL terms are per-dimension means.
ElboResult build_elbo(ad::Graph& g, MultiTrackVae& model, std::span<const Segment> batch,
                      const ScheduleState& sched, Rng& rng, bool training = true);

LossBreakdown elbo_loss(std::span<const Segment> batch, MultiTrackVae& model,
                        const ScheduleState& sched, Rng& rng);

struct TrainConfig {
    int epochs = 30;
    int batch_size = 8;
    bool augment = true;
    double clip_norm = 5.0;
    std::uint64_t seed = 0;
    int schedule_epochs = -1;  // defaults to epochs

    std::string to_json_text() const;
    static TrainConfig from_json_text(const std::string& text);
};

struct EpochLog {
    int epoch = 0;
    LossBreakdown train;
    double val_total = 0;
    ScheduleState sched;
};

struct TrainResult {
    int best_epoch = -1;
    double best_val = 0;
    std::vector<EpochLog> logs;
};

using LossBuilder =
    std::function<ElboResult(ad::Graph&, MultiTrackVae&, std::span<const Segment>,
                             const ScheduleState&, Rng&, bool)>;

// Mini-batch training with 12-key transposition augmentation, grouped
// batching (equal track count, one corpus per batch) and per-epoch
// validation. `on_best` fires whenever validation improves.
TrainResult train_model(
    MultiTrackVae& model, nn::AdamState& opt, const std::vector<LoadedSegment>& train_set,
    const std::vector<LoadedSegment>& val_set, const TrainConfig& cfg,
    const std::function<void(const EpochLog&)>& on_epoch = {},
    const std::function<void(const MultiTrackVae&, const EpochLog&)>& on_best = {},
    const LossBuilder& loss_builder = {});

// Uniform draw from the 12 keys, offsets -5..+6.
int draw_key_offset(Rng& rng);

}  // namespace mtr
