#include "mtr/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mtr {

using ad::Graph;
using ad::Mat;
using ad::Var;

Eigen::VectorXd LatentGaussian::sample(Rng& rng) const {
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index i = 0; i < mean.size(); ++i)
        z[i] = mean[i] + std::exp(0.5 * log_var[i]) * rng.normal();
    return z;
}

bool LatentGaussian::finite() const {
    return mean.allFinite() && log_var.allFinite();
}

ModelConfig ModelConfig::defaults(std::vector<std::string> vocab) {
    ModelConfig c;
    c.instruments = std::move(vocab);
    return c;
}

ModelConfig ModelConfig::desk(std::vector<std::string> vocab) {
    ModelConfig c = defaults(std::move(vocab));
    c.note_emb = 32;
    c.dur_emb = 8;
    c.enc_note_hidden = 48;
    c.enc_time_hidden = 96;
    c.dec_time_hidden = 96;
    c.dec_note_hidden = 64;
    c.aux_hidden = 48;
    c.fn_dec_hidden = 64;
    c.infer_hidden = 96;
    return c;
}

ModelConfig ModelConfig::tiny(std::vector<std::string> vocab) {
    ModelConfig c = defaults(std::move(vocab));
    c.z_mix = 12;
    c.z_track = 12;
    c.z_fn = 6;
    c.note_emb = 6;
    c.dur_emb = 4;
    c.enc_note_hidden = 8;
    c.enc_time_hidden = 10;
    c.dec_time_hidden = 10;
    c.dec_note_hidden = 8;
    c.aux_hidden = 8;
    c.fn_channels = 2;
    c.fn_dec_hidden = 10;
    c.d_model = 16;
    c.d_ff = 24;
    c.heads = 2;
    c.infer_hidden = 10;
    c.max_notes_per_step = 8;
    return c;
}

std::string ModelConfig::to_json_text() const {
    nlohmann::json j;
    j["z_mix"] = z_mix;
    j["z_track"] = z_track;
    j["z_fn"] = z_fn;
    j["note_emb"] = note_emb;
    j["dur_emb"] = dur_emb;
    j["enc_note_hidden"] = enc_note_hidden;
    j["enc_time_hidden"] = enc_time_hidden;
    j["dec_time_hidden"] = dec_time_hidden;
    j["dec_note_hidden"] = dec_note_hidden;
    j["aux_hidden"] = aux_hidden;
    j["fn_channels"] = fn_channels;
    j["fn_dec_hidden"] = fn_dec_hidden;
    j["fn_pitch_kernel"] = fn_pitch_kernel;
    j["fn_time_kernel"] = fn_time_kernel;
    j["fn_pitch_gain"] = fn_pitch_gain;
    j["fn_time_gain"] = fn_time_gain;
    j["d_model"] = d_model;
    j["d_ff"] = d_ff;
    j["heads"] = heads;
    j["sep_layers"] = sep_layers;
    j["dropout"] = dropout;
    j["infer_hidden"] = infer_hidden;
    j["max_notes_per_step"] = max_notes_per_step;
    j["instruments"] = instruments;
    return j.dump();
}

ModelConfig ModelConfig::from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ModelConfig c;
    c.z_mix = j.at("z_mix").get<int>();
    c.z_track = j.at("z_track").get<int>();
    c.z_fn = j.at("z_fn").get<int>();
    c.note_emb = j.at("note_emb").get<int>();
    c.dur_emb = j.at("dur_emb").get<int>();
    c.enc_note_hidden = j.at("enc_note_hidden").get<int>();
    c.enc_time_hidden = j.at("enc_time_hidden").get<int>();
    c.dec_time_hidden = j.at("dec_time_hidden").get<int>();
    c.dec_note_hidden = j.at("dec_note_hidden").get<int>();
    c.aux_hidden = j.at("aux_hidden").get<int>();
    c.fn_channels = j.at("fn_channels").get<int>();
    c.fn_dec_hidden = j.at("fn_dec_hidden").get<int>();
    c.fn_pitch_kernel = j.at("fn_pitch_kernel").get<int>();
    c.fn_time_kernel = j.at("fn_time_kernel").get<int>();
    c.fn_pitch_gain = j.at("fn_pitch_gain").get<double>();
    c.fn_time_gain = j.at("fn_time_gain").get<double>();
    c.d_model = j.at("d_model").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.heads = j.at("heads").get<int>();
    c.sep_layers = j.at("sep_layers").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.infer_hidden = j.at("infer_hidden").get<int>();
    c.max_notes_per_step = j.at("max_notes_per_step").get<int>();
    c.instruments = j.at("instruments").get<std::vector<std::string>>();
    return c;
}

std::uint64_t ModelConfig::hash() const {
    return Rng::mix(0x9e3779b97f4a7c15ULL, to_json_text());
}

namespace {
int conv_out_len(int in, int kernel) { return in - kernel + 1; }
int pool_out_len(int in, int kernel, int stride) { return (in - kernel) / stride + 1; }
}  // namespace

MultiTrackVae::MultiTrackVae(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    const ModelConfig& c = cfg_;
    if (c.instruments.empty())
        throw std::invalid_argument("model config needs an instrument vocabulary");
    int note_in = c.note_emb + c.dur_emb;

    pitch_emb_ = nn::Embedding(ps_, "emb.pitch", c.note_emb, kPitchSymbols);
    dur_emb_ = nn::Embedding(ps_, "emb.dur", c.dur_emb, kMaxDuration + 1);

    enc_note_fwd_ = nn::GRUCell(ps_, "enc.note_fwd", note_in, c.enc_note_hidden);
    enc_note_bwd_ = nn::GRUCell(ps_, "enc.note_bwd", note_in, c.enc_note_hidden);
    enc_time_ = nn::GRUCell(ps_, "enc.time", 2 * c.enc_note_hidden, c.enc_time_hidden);
    enc_empty_step_ = &ps_.add("enc.empty_step", 2 * c.enc_note_hidden, 1, nn::Init::Normal02);
    enc_mean_ = nn::Linear(ps_, "enc.mean", c.enc_time_hidden, c.z_mix);
    enc_logvar_ = nn::Linear(ps_, "enc.logvar", c.enc_time_hidden, c.z_mix);

    int p_flat = c.fn_channels * pool_out_len(conv_out_len(kPitches, c.fn_pitch_kernel), 4, 4);
    int t_flat = c.fn_channels * pool_out_len(conv_out_len(kSteps, c.fn_time_kernel), 4, 4);
    fnp_conv_w_ = &ps_.add("fn.pitch_conv.W", c.fn_channels, c.fn_pitch_kernel, nn::Init::Xavier);
    fnp_conv_b_ = &ps_.add("fn.pitch_conv.b", c.fn_channels, 1, nn::Init::Zero);
    fnt_conv_w_ = &ps_.add("fn.time_conv.W", c.fn_channels, c.fn_time_kernel, nn::Init::Xavier);
    fnt_conv_b_ = &ps_.add("fn.time_conv.b", c.fn_channels, 1, nn::Init::Zero);
    fnp_mean_ = nn::Linear(ps_, "fn.pitch_mean", p_flat, c.z_fn);
    fnp_logvar_ = nn::Linear(ps_, "fn.pitch_logvar", p_flat, c.z_fn);
    fnt_mean_ = nn::Linear(ps_, "fn.time_mean", t_flat, c.z_fn);
    fnt_logvar_ = nn::Linear(ps_, "fn.time_logvar", t_flat, c.z_fn);
    fnp_dec1_ = nn::Linear(ps_, "fn.pitch_dec1", c.z_fn, c.fn_dec_hidden);
    fnp_dec2_ = nn::Linear(ps_, "fn.pitch_dec2", c.fn_dec_hidden, kPitches);
    fnt_dec1_ = nn::Linear(ps_, "fn.time_dec1", c.z_fn, c.fn_dec_hidden);
    fnt_dec2_ = nn::Linear(ps_, "fn.time_dec2", c.fn_dec_hidden, kSteps);

    sep_in_mix_ = nn::Linear(ps_, "sep.in_mix", c.z_mix, c.d_model);
    sep_in_query_ = nn::Linear(ps_, "sep.in_query", 2 * c.z_fn, c.d_model);
    sep_mix_type_ = &ps_.add("sep.mix_type", c.d_model, 1, nn::Init::Normal02);
    sep_inst_emb_ = nn::Embedding(ps_, "sep.inst_emb", c.d_model,
                                  static_cast<int>(c.instruments.size()));
    for (int l = 0; l < c.sep_layers; ++l)
        sep_stack_.emplace_back(ps_, "sep.layer" + std::to_string(l), c.d_model, c.d_ff,
                                c.heads);
    sep_mean_ = nn::Linear(ps_, "sep.mean", c.d_model, c.z_track);
    sep_logvar_ = nn::Linear(ps_, "sep.logvar", c.d_model, c.z_track);

    aux_init_ = nn::Linear(ps_, "aux.init", c.z_track, c.aux_hidden);
    aux_gru_ = nn::GRUCell(ps_, "aux.gru", c.z_track, c.aux_hidden);
    aux_head_ = nn::Linear(ps_, "aux.head", c.aux_hidden, 3);

    dec_init_ = nn::Linear(ps_, "dec.init", c.z_track, c.dec_time_hidden);
    dec_time_ = nn::GRUCell(ps_, "dec.time", c.dec_note_hidden + 3 + c.z_track,
                            c.dec_time_hidden);
    dec_note_init_ = nn::Linear(ps_, "dec.note_init", c.dec_time_hidden, c.dec_note_hidden);
    dec_note_ = nn::GRUCell(ps_, "dec.note", note_in, c.dec_note_hidden);
    dec_pitch_head_ = nn::Linear(ps_, "dec.pitch_head", c.dec_note_hidden, kPitchSymbols);
    dec_dur_head_ = nn::Linear(ps_, "dec.dur_head", c.dec_note_hidden + c.note_emb,
                               kMaxDuration);
    dec_summary0_ = &ps_.add("dec.summary0", c.dec_note_hidden, 1, nn::Init::Normal02);

    ps_.init_all(init_seed);
    // posteriors start tight: log-variance heads biased to -4
    for (auto& [name, t] : ps_.items())
        if (name.ends_with("logvar.b")) t->value.setConstant(-4.0);
}

int MultiTrackVae::instrument_id(const std::string& name) const {
    for (size_t i = 0; i < cfg_.instruments.size(); ++i)
        if (cfg_.instruments[i] == name) return static_cast<int>(i);
    throw std::runtime_error("instrument not in model vocabulary: " + name);
}

Var MultiTrackVae::note_input(Graph& g, int pitch_symbol, int duration) const {
    auto& self = const_cast<MultiTrackVae&>(*this);
    std::vector<Var> parts{self.pitch_emb_(g, pitch_symbol), self.dur_emb_(g, duration)};
    return g.concat_rows(parts);
}

MultiTrackVae::GaussVar MultiTrackVae::encode_mixture_g(Graph& g, const Grid& mix) {
    NoteEventSequence events = roll_to_events(mix);
    std::vector<Var> simu;
    simu.reserve(kSteps);
    for (int t = 0; t < kSteps; ++t) {
        const auto& notes = events.steps[static_cast<size_t>(t)];
        if (notes.empty()) {
            simu.push_back(g.param(*enc_empty_step_));
            continue;
        }
        Var hf = enc_note_fwd_.zero_state(g);
        for (const NoteEvent& ev : notes)
            hf = enc_note_fwd_.step(g, note_input(g, ev.pitch, ev.duration), hf);
        Var hb = enc_note_bwd_.zero_state(g);
        for (auto it = notes.rbegin(); it != notes.rend(); ++it)
            hb = enc_note_bwd_.step(g, note_input(g, it->pitch, it->duration), hb);
        std::vector<Var> cat{hf, hb};
        simu.push_back(g.concat_rows(cat));
    }
    Var h = enc_time_.zero_state(g);
    for (int t = 0; t < kSteps; ++t) h = enc_time_.step(g, simu[static_cast<size_t>(t)], h);
    return {enc_mean_(g, h), enc_logvar_(g, h)};
}

std::pair<MultiTrackVae::GaussVar, MultiTrackVae::GaussVar>
MultiTrackVae::encode_function_g(Graph& g, const TrackFunction& f) {
    Var xp = g.input((cfg_.fn_pitch_gain * f.pitch_fn).transpose());  // 1 x 128
    Var cp = g.relu(g.conv1d(xp, g.param(*fnp_conv_w_), g.param(*fnp_conv_b_),
                             cfg_.fn_pitch_kernel));
    Var pp = g.flatten(g.maxpool1d(cp, 4, 4));
    GaussVar zp{fnp_mean_(g, pp), fnp_logvar_(g, pp)};

    Var xt = g.input((cfg_.fn_time_gain * f.time_fn).transpose());  // 1 x 32
    Var ct = g.relu(g.conv1d(xt, g.param(*fnt_conv_w_), g.param(*fnt_conv_b_),
                             cfg_.fn_time_kernel));
    Var pt = g.flatten(g.maxpool1d(ct, 4, 4));
    GaussVar zt{fnt_mean_(g, pt), fnt_logvar_(g, pt)};
    return {zp, zt};
}

std::pair<Var, Var> MultiTrackVae::decode_function_g(Graph& g, Var z_pitch, Var z_time) {
    Var fp = g.sigmoid(fnp_dec2_(g, g.relu(fnp_dec1_(g, z_pitch))));
    Var ft = g.sigmoid(fnt_dec2_(g, g.relu(fnt_dec1_(g, z_time))));
    return {fp, ft};
}

std::vector<MultiTrackVae::GaussVar> MultiTrackVae::separate_g(
    Graph& g, Var z_mix, const std::vector<Var>& queries,
    const std::vector<int>& instruments, bool training, Rng& rng) {
    if (queries.empty()) throw std::invalid_argument("separate: no queries");
    if (instruments.size() != queries.size())
        throw std::invalid_argument("separate: instruments/queries length mismatch");
    for (int id : instruments)
        if (id < 0 || id >= static_cast<int>(cfg_.instruments.size()))
            throw std::runtime_error("separate: unknown instrument id " + std::to_string(id));

    std::vector<Var> tokens;
    tokens.reserve(queries.size() + 1);
    tokens.push_back(g.add(sep_in_mix_(g, z_mix), g.param(*sep_mix_type_)));
    for (size_t i = 0; i < queries.size(); ++i)
        tokens.push_back(
            g.add(sep_in_query_(g, queries[i]), sep_inst_emb_(g, instruments[i])));
    Var X = g.stack_cols(tokens);
    for (const auto& layer : sep_stack_)
        X = layer.apply(g, X, training, cfg_.dropout, rng);

    std::vector<GaussVar> out;
    out.reserve(queries.size());
    for (size_t i = 0; i < queries.size(); ++i) {
        Var tok = g.col(X, static_cast<int>(i) + 1);
        out.push_back({sep_mean_(g, tok), sep_logvar_(g, tok)});
    }
    return out;
}

MultiTrackVae::AuxVar MultiTrackVae::predict_aux_g(Graph& g, Var z_track) {
    AuxVar out;
    Var h = g.tanh(aux_init_(g, z_track));
    std::vector<Var> pcs, vis, rls;
    out.step_feat.reserve(kSteps);
    for (int t = 0; t < kSteps; ++t) {
        h = aux_gru_.step(g, z_track, h);
        Var raw = aux_head_(g, h);
        Var pc = g.sigmoid(g.slice_rows(raw, 0, 1));
        Var vi = g.sigmoid(g.slice_rows(raw, 1, 1));
        Var rl = g.slice_rows(raw, 2, 1);
        pcs.push_back(pc);
        vis.push_back(vi);
        rls.push_back(rl);
        std::vector<Var> feat{pc, vi, g.sigmoid(rl)};
        out.step_feat.push_back(g.concat_rows(feat));
    }
    out.pitch_centre = g.concat_rows(pcs);
    out.voice_intensity = g.concat_rows(vis);
    out.rhythm_logits = g.concat_rows(rls);
    return out;
}

MultiTrackVae::TeacherResult MultiTrackVae::decode_track_teacher_g(
    Graph& g, Var z_track, const AuxVar& aux, const NoteEventSequence& teacher,
    double tf_rate, Rng& rng) {
    TeacherResult res;
    Var h_time = g.tanh(dec_init_(g, z_track));
    Var summary = g.param(*dec_summary0_);
    std::vector<Var> pitch_ces, dur_ces;

    for (int t = 0; t < kSteps; ++t) {
        std::vector<Var> xt{summary, aux.step_feat[static_cast<size_t>(t)], z_track};
        h_time = dec_time_.step(g, g.concat_rows(xt), h_time);
        Var h_note = g.tanh(dec_note_init_(g, h_time));
        const auto& notes = teacher.steps[static_cast<size_t>(t)];
        int n = static_cast<int>(notes.size());
        int prev_tok = kPitchStart;
        int prev_dur = 0;
        for (int k = 0; k <= n; ++k) {
            h_note = dec_note_.step(g, note_input(g, prev_tok, prev_dur), h_note);
            Var plogits = dec_pitch_head_(g, h_note);
            int target = k < n ? notes[static_cast<size_t>(k)].pitch : kPitchEnd;
            pitch_ces.push_back(g.ce_logits(plogits, target));
            ++res.pitch_positions;

            Eigen::Index argp;
            g.val(plogits).col(0).maxCoeff(&argp);
            if (k < n) {
                ++res.note_positions;
                if (static_cast<int>(argp) == target) ++res.pitch_correct;
                bool teach = tf_rate >= 1.0 || rng.bernoulli(tf_rate);
                int in_pitch = teach ? target : static_cast<int>(argp);
                if (in_pitch >= kPitchStart) in_pitch = target;  // symbols carry no duration
                std::vector<Var> dh{h_note, pitch_emb_(g, in_pitch)};
                Var dlogits = dec_dur_head_(g, g.concat_rows(dh));
                int dtarget = notes[static_cast<size_t>(k)].duration - 1;
                dur_ces.push_back(g.ce_logits(dlogits, dtarget));
                Eigen::Index argd;
                g.val(dlogits).col(0).maxCoeff(&argd);
                if (static_cast<int>(argd) == dtarget) ++res.dur_correct;
                prev_tok = in_pitch;
                prev_dur = teach ? notes[static_cast<size_t>(k)].duration
                                 : static_cast<int>(argd) + 1;
            }
        }
        summary = h_note;
    }
    res.pitch_ce = g.affine(g.add_n(pitch_ces), 1.0 / res.pitch_positions, 0.0);
    res.dur_ce = dur_ces.empty() ? g.input(Mat::Zero(1, 1))
                                 : g.affine(g.add_n(dur_ces), 1.0 / dur_ces.size(), 0.0);
    return res;
}

NoteEventSequence MultiTrackVae::decode_track_greedy_g(Graph& g, Var z_track,
                                                       const AuxVar& aux) {
    NoteEventSequence seq;
    Var h_time = g.tanh(dec_init_(g, z_track));
    Var summary = g.param(*dec_summary0_);
    for (int t = 0; t < kSteps; ++t) {
        std::vector<Var> xt{summary, aux.step_feat[static_cast<size_t>(t)], z_track};
        h_time = dec_time_.step(g, g.concat_rows(xt), h_time);
        Var h_note = g.tanh(dec_note_init_(g, h_time));
        int prev_tok = kPitchStart;
        int prev_dur = 0;
        int last_pitch = -1;
        for (int k = 0; k <= cfg_.max_notes_per_step; ++k) {
            h_note = dec_note_.step(g, note_input(g, prev_tok, prev_dur), h_note);
            Var plogits = dec_pitch_head_(g, h_note);
            Eigen::VectorXd lv = g.val(plogits).col(0);
            lv[kPitchStart] = -1e30;
            for (int p = 0; p <= last_pitch; ++p) lv[p] = -1e30;  // ascending grammar
            Eigen::Index argp;
            lv.maxCoeff(&argp);
            int pitch = static_cast<int>(argp);
            if (pitch == kPitchEnd || k == cfg_.max_notes_per_step) break;
            std::vector<Var> dh{h_note, pitch_emb_(g, pitch)};
            Var dlogits = dec_dur_head_(g, g.concat_rows(dh));
            Eigen::Index argd;
            g.val(dlogits).col(0).maxCoeff(&argd);
            int dur = std::min(static_cast<int>(argd) + 1, kSteps - t);
            seq.steps[static_cast<size_t>(t)].push_back({pitch, dur});
            last_pitch = pitch;
            prev_tok = pitch;
            prev_dur = dur;
        }
        summary = h_note;
    }
    return seq;
}

LatentGaussian MultiTrackVae::encode_mixture(const Mixture& mix) {
    Graph g;
    GaussVar zv = encode_mixture_g(g, mix.grid);
    return {g.val(zv.mean).col(0), g.val(zv.log_var).col(0)};
}

std::pair<LatentGaussian, LatentGaussian> MultiTrackVae::encode_function(
    const TrackFunction& f) {
    Graph g;
    auto [zp, zt] = encode_function_g(g, f);
    return {{g.val(zp.mean).col(0), g.val(zp.log_var).col(0)},
            {g.val(zt.mean).col(0), g.val(zt.log_var).col(0)}};
}

TrackFunction MultiTrackVae::decode_function(const Eigen::VectorXd& z_pitch,
                                             const Eigen::VectorXd& z_time) {
    Graph g;
    auto [fp, ft] = decode_function_g(g, g.input(z_pitch), g.input(z_time));
    TrackFunction f;
    f.pitch_fn = g.val(fp).col(0);
    f.time_fn = g.val(ft).col(0);
    return f;
}

std::vector<LatentGaussian> MultiTrackVae::separate(
    const Eigen::VectorXd& z_mix,
    const std::vector<std::pair<Eigen::VectorXd, int>>& queries) {
    Graph g;
    Rng rng(0);
    std::vector<Var> qs;
    std::vector<int> insts;
    for (const auto& [q, inst] : queries) {
        qs.push_back(g.input(q));
        insts.push_back(inst);
    }
    auto outs = separate_g(g, g.input(z_mix), qs, insts, false, rng);
    std::vector<LatentGaussian> res;
    for (const auto& o : outs)
        res.push_back({g.val(o.mean).col(0), g.val(o.log_var).col(0)});
    return res;
}

AuxFeatures MultiTrackVae::predict_aux(const Eigen::VectorXd& z_track) {
    Graph g;
    AuxVar av = predict_aux_g(g, g.input(z_track));
    AuxFeatures out;
    out.pitch_centre = g.val(av.pitch_centre).col(0);
    out.voice_intensity = g.val(av.voice_intensity).col(0);
    out.rhythm = (1.0 / (1.0 + (-g.val(av.rhythm_logits).col(0).array()).exp())).matrix();
    return out;
}

NoteEventSequence MultiTrackVae::decode_track(const Eigen::VectorXd& z_track) {
    Graph g;
    Var z = g.input(z_track);
    AuxVar aux = predict_aux_g(g, z);
    return decode_track_greedy_g(g, z, aux);
}

void MultiTrackVae::enable_voice_inferrer(std::uint64_t init_seed) {
    if (has_inferrer_) return;
    const ModelConfig& c = cfg_;
    int zf = 2 * c.z_fn;
    inf_gru_ = nn::GRUCell(ps_, "infer.gru", zf, c.infer_hidden);
    inf_init_ = nn::Linear(ps_, "infer.init", c.z_mix, c.infer_hidden);
    inf_mean_ = nn::Linear(ps_, "infer.mean", c.infer_hidden, zf);
    inf_logvar_ = nn::Linear(ps_, "infer.logvar", c.infer_hidden, zf);
    inf_hint_ = nn::Linear(ps_, "infer.hint", 2, zf);
    inf_start_ = &ps_.add("infer.start", zf, 1, nn::Init::Normal02);
    ps_.init_matching(init_seed, "infer.");
    ps_.get("infer.logvar.b").value.setConstant(-4.0);
    has_inferrer_ = true;
}

std::vector<MultiTrackVae::GaussVar> MultiTrackVae::infer_voice_functions_g(
    Graph& g, Var z_mix, int n_voices, const std::vector<std::optional<VoiceHint>>* hints,
    bool sample_chain, Rng& rng) {
    if (!has_inferrer_)
        throw std::logic_error("voice-function inferrer not enabled on this model");
    if (hints && static_cast<int>(hints->size()) != n_voices)
        throw std::invalid_argument("hints size must match n_voices");
    std::vector<GaussVar> out;
    Var h = g.tanh(inf_init_(g, z_mix));
    Var prev = g.param(*inf_start_);
    for (int v = 0; v < n_voices; ++v) {
        Var in = prev;
        if (hints && (*hints)[static_cast<size_t>(v)]) {
            const VoiceHint& hint = *(*hints)[static_cast<size_t>(v)];
            Mat hv(2, 1);
            hv(0, 0) = hint.pitch / 127.0;
            hv(1, 0) = hint.onset / static_cast<double>(kSteps - 1);
            in = g.add(in, inf_hint_(g, g.input(std::move(hv))));
        }
        h = inf_gru_.step(g, in, h);
        GaussVar zf{inf_mean_(g, h), inf_logvar_(g, h)};
        out.push_back(zf);
        prev = sample_chain ? nn::sample_gaussian(g, zf.mean, zf.log_var, rng) : zf.mean;
    }
    return out;
}

std::vector<LatentGaussian> MultiTrackVae::infer_voice_functions(
    const Eigen::VectorXd& z_mix, int n_voices,
    const std::vector<std::optional<VoiceHint>>* hints) {
    Graph g;
    Rng rng(0);
    auto outs = infer_voice_functions_g(g, g.input(z_mix), n_voices, hints, false, rng);
    std::vector<LatentGaussian> res;
    for (const auto& o : outs)
        res.push_back({g.val(o.mean).col(0), g.val(o.log_var).col(0)});
    return res;
}

}  // namespace mtr
