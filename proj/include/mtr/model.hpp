#pragma once

#include "mtr/autodiff.hpp"
#include "mtr/functions.hpp"
#include "mtr/layers.hpp"
#include "mtr/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mtr {

// pitch-symbol vocabulary of the note decoder: 128 pitches + start + end
inline constexpr int kPitchStart = 128;
inline constexpr int kPitchEnd = 129;
inline constexpr int kPitchSymbols = 130;

// Diagonal-Gaussian posterior parameters.
struct LatentGaussian {
    Eigen::VectorXd mean;
    Eigen::VectorXd log_var;

    int dim() const { return static_cast<int>(mean.size()); }
    Eigen::VectorXd sample(Rng& rng) const;
    bool finite() const;
};

struct ModelConfig {
    // latent dimensions
    int z_mix = 256;
    int z_track = 256;
    int z_fn = 128;  // each of the pitch / time function latents

    // mixture encoder and track decoder
    int note_emb = 64;
    int dur_emb = 16;
    int enc_note_hidden = 128;  // per direction
    int enc_time_hidden = 256;
    int dec_time_hidden = 256;
    int dec_note_hidden = 128;
    int aux_hidden = 128;

    // function query-net
    int fn_channels = 4;
    int fn_dec_hidden = 256;
    int fn_pitch_kernel = 12;
    int fn_time_kernel = 4;
    // fixed input gains: the raw functions are onset counts over 32 resp.
    // 128 slots, so their scales differ by ~4x; these bring both branches
    // to unit order before the convolution
    double fn_pitch_gain = 4.0;
    double fn_time_gain = 32.0;

    // track separator
    int d_model = 512;
    int d_ff = 1024;
    int heads = 8;
    int sep_layers = 2;
    double dropout = 0.1;

    // voice-function inferrer (Q&A-style voice separation variant)
    int infer_hidden = 256;

    int max_notes_per_step = 16;

    std::vector<std::string> instruments;

    static ModelConfig defaults(std::vector<std::string> vocab);
    // Smaller recurrent/embedding widths for desk-scale corpora; latent and
    // separator dimensions keep their defaults.
    static ModelConfig desk(std::vector<std::string> vocab);
    // Minimal widths for finite-difference gradient checks.
    static ModelConfig tiny(std::vector<std::string> vocab);

    std::string to_json_text() const;
    static ModelConfig from_json_text(const std::string& text);
    std::uint64_t hash() const;
};

// The learnable system: mixture encoder, function query-net, track
// separator, and track decoder with its auxiliary-feature predictor.
class MultiTrackVae {
public:
    struct GaussVar {
        ad::Var mean;
        ad::Var log_var;
    };
    struct AuxVar {
        ad::Var pitch_centre;    // 32x1, in [0,1]
        ad::Var voice_intensity; // 32x1, in [0,1]
        ad::Var rhythm_logits;   // 32x1
        std::vector<ad::Var> step_feat;  // per step: 3x1 (pc, vi, rhythm prob)
    };
    struct TeacherResult {
        ad::Var pitch_ce;  // mean cross entropy over pitch positions
        ad::Var dur_ce;    // mean cross entropy over note positions
        int pitch_positions = 0;
        int note_positions = 0;
        int pitch_correct = 0;  // argmax hits at note positions
        int dur_correct = 0;
    };
    struct VoiceHint {
        int pitch = 0;
        int onset = 0;
    };

    MultiTrackVae(ModelConfig cfg, std::uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }
    int instrument_id(const std::string& name) const;  // throws on unknown name

    // --- graph-building passes (training and inference share these) ---
    GaussVar encode_mixture_g(ad::Graph& g, const Grid& mix);
    std::pair<GaussVar, GaussVar> encode_function_g(ad::Graph& g, const TrackFunction& f);
    std::pair<ad::Var, ad::Var> decode_function_g(ad::Graph& g, ad::Var z_pitch,
                                                  ad::Var z_time);
    // queries: one latent (2*z_fn) per track plus its instrument id.
    std::vector<GaussVar> separate_g(ad::Graph& g, ad::Var z_mix,
                                     const std::vector<ad::Var>& queries,
                                     const std::vector<int>& instruments, bool training,
                                     Rng& rng);
    AuxVar predict_aux_g(ad::Graph& g, ad::Var z_track);
    TeacherResult decode_track_teacher_g(ad::Graph& g, ad::Var z_track, const AuxVar& aux,
                                         const NoteEventSequence& teacher, double tf_rate,
                                         Rng& rng);
    NoteEventSequence decode_track_greedy_g(ad::Graph& g, ad::Var z_track,
                                            const AuxVar& aux);

    // --- value-level API (eval mode) ---
    LatentGaussian encode_mixture(const Mixture& mix);
    std::pair<LatentGaussian, LatentGaussian> encode_function(const TrackFunction& f);
    TrackFunction decode_function(const Eigen::VectorXd& z_pitch,
                                  const Eigen::VectorXd& z_time);
    std::vector<LatentGaussian> separate(
        const Eigen::VectorXd& z_mix,
        const std::vector<std::pair<Eigen::VectorXd, int>>& queries);
    AuxFeatures predict_aux(const Eigen::VectorXd& z_track);
    NoteEventSequence decode_track(const Eigen::VectorXd& z_track);

    // --- voice-function inferrer ---
    void enable_voice_inferrer(std::uint64_t init_seed);
    bool has_voice_inferrer() const { return has_inferrer_; }
    std::vector<GaussVar> infer_voice_functions_g(
        ad::Graph& g, ad::Var z_mix, int n_voices,
        const std::vector<std::optional<VoiceHint>>* hints, bool sample_chain, Rng& rng);
    std::vector<LatentGaussian> infer_voice_functions(
        const Eigen::VectorXd& z_mix, int n_voices = 4,
        const std::vector<std::optional<VoiceHint>>* hints = nullptr);

private:
    ModelConfig cfg_;
    nn::ParamStore ps_;

    // mixture encoder
    nn::Embedding pitch_emb_, dur_emb_;
    nn::GRUCell enc_note_fwd_, enc_note_bwd_, enc_time_;
    ad::Tensor* enc_empty_step_ = nullptr;
    nn::Linear enc_mean_, enc_logvar_;

    // function query-net
    ad::Tensor *fnp_conv_w_ = nullptr, *fnp_conv_b_ = nullptr;
    ad::Tensor *fnt_conv_w_ = nullptr, *fnt_conv_b_ = nullptr;
    nn::Linear fnp_mean_, fnp_logvar_, fnt_mean_, fnt_logvar_;
    nn::Linear fnp_dec1_, fnp_dec2_, fnt_dec1_, fnt_dec2_;

    // track separator
    nn::Linear sep_in_mix_, sep_in_query_;
    ad::Tensor* sep_mix_type_ = nullptr;
    nn::Embedding sep_inst_emb_;
    std::vector<nn::TransformerLayer> sep_stack_;
    nn::Linear sep_mean_, sep_logvar_;

    // auxiliary-feature predictor
    nn::Linear aux_init_;
    nn::GRUCell aux_gru_;
    nn::Linear aux_head_;

    // track decoder
    nn::Linear dec_init_;
    nn::GRUCell dec_time_;
    nn::Linear dec_note_init_;
    nn::GRUCell dec_note_;
    nn::Linear dec_pitch_head_, dec_dur_head_;
    ad::Tensor* dec_summary0_ = nullptr;

    // voice-function inferrer
    bool has_inferrer_ = false;
    nn::GRUCell inf_gru_;
    nn::Linear inf_init_, inf_mean_, inf_logvar_, inf_hint_;
    ad::Tensor* inf_start_ = nullptr;

    ad::Var note_input(ad::Graph& g, int pitch_symbol, int duration) const;
};

}  // namespace mtr
