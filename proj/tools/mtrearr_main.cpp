#include "mtr/checkpoint.hpp"
#include "mtr/instruments.hpp"
#include "mtr/manifest.hpp"
#include "mtr/metrics.hpp"
#include "mtr/midi.hpp"
#include "mtr/rearrange.hpp"
#include "mtr/synth.hpp"
#include "mtr/training.hpp"
#include "mtr/voicesep.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace mtr;

namespace {

struct Common {
    std::string instruments_path;
    std::uint64_t seed = 0;
};

InstrumentTable load_table(const Common& c) {
    if (!c.instruments_path.empty()) return InstrumentTable::load(c.instruments_path);
    return InstrumentTable::builtin();
}

std::string default_checkpoint(const std::string& given, const char* filename) {
    if (!given.empty()) return given;
    const char* dir = std::getenv("MTREARR_CHECKPOINT_DIR");
    if (dir && *dir) return (fs::path(dir) / filename).string();
    throw std::runtime_error(
        "no checkpoint given (use --checkpoint or set MTREARR_CHECKPOINT_DIR)");
}

std::vector<std::string> collect_midi_paths(const std::vector<std::string>& inputs) {
    std::vector<std::string> paths;
    for (const std::string& in : inputs) {
        if (fs::is_directory(in)) {
            std::vector<std::string> found;
            for (const auto& e : fs::directory_iterator(in)) {
                auto ext = e.path().extension().string();
                if (ext == ".mid" || ext == ".midi") found.push_back(e.path().string());
            }
            std::sort(found.begin(), found.end());
            paths.insert(paths.end(), found.begin(), found.end());
        } else {
            paths.push_back(in);
        }
    }
    return paths;
}

ModelConfig preset_config(const std::string& preset, std::vector<std::string> vocab) {
    if (preset == "paper" || preset == "full") return ModelConfig::defaults(std::move(vocab));
    if (preset == "desk") return ModelConfig::desk(std::move(vocab));
    if (preset == "tiny") return ModelConfig::tiny(std::move(vocab));
    throw std::runtime_error("unknown model preset: " + preset);
}

Piece ingest_file(const std::string& path, const InstrumentTable& table,
                  bool eight_beat_windows) {
    IngestConfig cfg;
    cfg.eight_beat_windows = eight_beat_windows;
    auto bytes = read_file_bytes(path);
    IngestResult res = ingest_midi(bytes, table, cfg);
    for (const auto& w : res.warnings) std::cerr << "warning: " << path << ": " << w << "\n";
    res.piece.id = fs::path(path).stem().string();
    return res.piece;
}

int cmd_prepare(const Common& common, const std::vector<std::string>& inputs,
                const std::string& output, std::string corpus_tag, bool eight_beat,
                const std::string& synth_preset, int synth_pieces, int synth_segments,
                double train_ratio, double val_ratio) {
    InstrumentTable table = load_table(common);
    std::string out_dir = manifest_dir_of(output);
    fs::create_directories(out_dir);

    std::vector<std::string> midi_paths;
    if (!synth_preset.empty()) {
        SynthOptions so;
        if (synth_preset == "pop")
            so.preset = SynthOptions::Preset::Pop;
        else if (synth_preset == "voices")
            so.preset = SynthOptions::Preset::Voices4;
        else
            throw std::runtime_error("unknown synth preset: " + synth_preset);
        so.num_pieces = synth_pieces;
        so.segments_per_piece = synth_segments;
        so.seed = common.seed;
        midi_paths = write_synth_corpus(so, table, (fs::path(out_dir) / "midi").string());
        if (corpus_tag.empty()) corpus_tag = synth_preset;
    } else {
        midi_paths = collect_midi_paths(inputs);
        if (corpus_tag.empty()) corpus_tag = "default";
    }
    if (midi_paths.empty()) throw std::runtime_error("prepare: no MIDI inputs");

    PrepareOptions opts;
    opts.corpus_tag = corpus_tag;
    opts.eight_beat_windows = eight_beat;
    opts.train_ratio = train_ratio;
    opts.val_ratio = val_ratio;
    opts.seed = common.seed;
    std::vector<std::string> warnings;
    CorpusManifest m = prepare_corpus(midi_paths, out_dir, table, opts, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    m.save(output);
    int segs = 0;
    for (const auto& p : m.pieces) segs += static_cast<int>(p.segments.size());
    std::cout << "prepared " << m.pieces.size() << " pieces, " << segs << " segments -> "
              << output << "\n";
    return 0;
}

void write_train_log(const std::string& path, const std::vector<EpochLog>& logs) {
    std::ofstream out(path);
    for (const EpochLog& l : logs) {
        nlohmann::json j;
        j["epoch"] = l.epoch;
        j["total"] = l.train.total;
        j["track_recon"] = l.train.track_recon;
        j["function_recon"] = l.train.function_recon;
        j["aux_recon"] = l.train.aux_recon;
        j["kl_mix"] = l.train.kl_mix;
        j["kl_function"] = l.train.kl_function;
        j["kl_track"] = l.train.kl_track;
        j["val_total"] = l.val_total;
        j["lr"] = l.sched.lr;
        j["beta_f"] = l.sched.beta_f;
        j["beta_o"] = l.sched.beta_o;
        j["tf_rate"] = l.sched.tf_rate;
        j["pitch_acc"] = l.train.pitch_acc;
        out << j.dump() << "\n";
    }
}

int cmd_train(const Common& common, const std::string& manifest_path,
              const std::string& output, const std::string& config_path,
              const std::string& preset, const std::string& init_path, bool voicesep_mode,
              bool hints, int epochs_override, int batch_override,
              const std::string& log_path) {
    InstrumentTable table = load_table(common);
    CorpusManifest manifest = CorpusManifest::load(manifest_path);
    std::string dir = manifest_dir_of(manifest_path);

    TrainConfig tc;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw std::runtime_error("cannot open train config: " + config_path);
        std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        tc = TrainConfig::from_json_text(text);
    }
    if (epochs_override > 0) tc.epochs = epochs_override;
    if (batch_override > 0) tc.batch_size = batch_override;
    tc.seed = common.seed;

    LoadOptions lo;
    lo.splits = {"train"};
    auto train_set = load_segments(manifest, dir, table, lo);
    lo.splits = {"val"};
    auto val_set = load_segments(manifest, dir, table, lo);
    if (train_set.empty()) throw std::invalid_argument("training split is empty");

    std::unique_ptr<MultiTrackVae> model;
    nn::AdamState opt;
    if (!init_path.empty()) {
        auto vocab = table.names();
        LoadedCheckpoint lc = load_checkpoint(init_path, &vocab);
        model = std::move(lc.model);
        if (lc.has_opt && !voicesep_mode) opt = std::move(lc.opt);
    } else {
        model = std::make_unique<MultiTrackVae>(preset_config(preset, table.names()),
                                                Rng::mix(common.seed, "init"));
    }

    if (voicesep_mode) {
        std::vector<int> voice_inst = finetune_voicesep(*model, opt, train_set, tc, hints, 4);
        CheckpointMeta meta;
        meta.kind = "voicesep";
        meta.epoch = tc.epochs;
        meta.voice_instruments = voice_inst;
        meta.hints_trained = hints;
        meta.n_voices = 4;
        save_checkpoint(output, *model, meta, &opt);
        std::cout << "voicesep fine-tune complete -> " << output << "\n";
        return 0;
    }

    TrainResult res = train_model(
        *model, opt, train_set, val_set, tc,
        [&](const EpochLog& l) {
            std::cout << "epoch " << l.epoch << " total " << l.train.total << " val "
                      << l.val_total << " lr " << l.sched.lr << "\n";
        },
        [&](const MultiTrackVae& m, const EpochLog& l) {
            CheckpointMeta meta;
            meta.kind = "base";
            meta.epoch = l.epoch;
            meta.schedule = l.sched;
            save_checkpoint(output, m, meta, &opt);
        });
    if (!log_path.empty()) write_train_log(log_path, res.logs);
    std::cout << "best epoch " << res.best_epoch << " val " << res.best_val << " -> "
              << output << "\n";
    return 0;
}

int cmd_build_refdb(const Common& common, const std::string& manifest_path,
                    const std::string& output, const std::string& split) {
    InstrumentTable table = load_table(common);
    CorpusManifest manifest = CorpusManifest::load(manifest_path);
    LoadOptions lo;
    if (split != "all") lo.splits = {split};
    auto segs = load_segments(manifest, manifest_dir_of(manifest_path), table, lo);
    ReferenceDB db = ReferenceDB::build(segs);
    if (db.empty()) throw std::runtime_error("reference db would be empty");
    db.save(output, table);
    std::cout << "reference db with " << db.size() << " segments -> " << output << "\n";
    return 0;
}

int cmd_rearrange(const Common& common, const std::string& task,
                  const std::string& source_path, const std::string& reference_path,
                  const std::string& refdb_path, const std::string& checkpoint,
                  const std::string& output, double alpha, bool preserve_melody,
                  bool sample_melody) {
    InstrumentTable table = load_table(common);
    auto vocab = table.names();
    LoadedCheckpoint lc =
        load_checkpoint(default_checkpoint(checkpoint, "model.ckpt"), &vocab);

    Piece source = ingest_file(source_path, table, false);
    if (source.segments.empty()) throw std::runtime_error("source has no usable segments");

    Rng rng(common.seed);
    Piece reference;
    if (!reference_path.empty()) {
        reference = ingest_file(reference_path, table, false);
    } else if (!refdb_path.empty()) {
        ReferenceDB db = ReferenceDB::load(refdb_path, table);
        std::string pid = search_reference_piece(source, db, alpha, rng);
        reference = reference_piece_from_db(db, pid);
        std::cout << "reference piece: " << pid << "\n";
    } else {
        throw std::runtime_error(task + ": need --reference or --refdb");
    }

    RearrangeOptions opts;
    opts.alpha = alpha;
    opts.seed = common.seed;
    opts.preserve_melody = preserve_melody;
    opts.sample_melody_posterior = sample_melody;
    bool melody_queries = task == "orchestrate";
    if (melody_queries && !opts.preserve_melody)
        throw std::runtime_error("orchestrate requires --preserve-melody");

    Piece result = rearrange_piece(source, reference, *lc.model, opts, melody_queries);
    result.tempo_bpm = source.tempo_bpm;
    write_file_bytes(output, render_midi(result, table));
    std::cout << task << " wrote " << output << "\n";
    return 0;
}

int cmd_voicesep(const Common& common, const std::string& input,
                 const std::string& checkpoint, const std::string& output, bool hints) {
    InstrumentTable table = load_table(common);
    auto vocab = table.names();
    LoadedCheckpoint lc =
        load_checkpoint(default_checkpoint(checkpoint, "voicesep.ckpt"), &vocab);
    if (lc.meta.kind != "voicesep" || !lc.model->has_voice_inferrer())
        throw std::runtime_error("checkpoint is not a voice-separation checkpoint");
    if (hints && !lc.meta.hints_trained)
        throw std::runtime_error("checkpoint was fine-tuned without entry hints");

    Piece piece = ingest_file(input, table, true);
    if (piece.segments.empty()) throw std::runtime_error("input has no notes");

    Piece out;
    out.id = piece.id;
    out.tempo_bpm = piece.tempo_bpm;
    int n_voices = lc.meta.n_voices;
    for (const Segment& seg : piece.segments) {
        std::vector<std::optional<MultiTrackVae::VoiceHint>> hint_list;
        if (hints) {
            if (seg.num_tracks() != n_voices)
                throw std::runtime_error(
                    "with --hints the input needs exactly one track per voice");
            hint_list = entry_hints(order_voices_high_to_low(seg));
        }
        Mixture mix = condense_mixture(seg);
        VoiceSepResult res = separate_voices(mix, *lc.model, lc.meta.voice_instruments,
                                             hints ? &hint_list : nullptr);
        Segment vseg;
        vseg.tracks = res.voices;
        vseg.source_id = seg.source_id;
        out.segments.push_back(std::move(vseg));
    }
    write_file_bytes(output, render_midi(out, table));
    std::cout << "voicesep wrote " << output << " (" << n_voices << " voices)\n";
    return 0;
}

int cmd_eval_voicesep(const Common& common, const std::string& manifest_path,
                      const std::string& checkpoint, const std::string& output, int folds,
                      int finetune_epochs, int batch_size, const std::string& hints_mode) {
    InstrumentTable table = load_table(common);
    CorpusManifest manifest = CorpusManifest::load(manifest_path);
    auto segs = load_segments(manifest, manifest_dir_of(manifest_path), table, {});
    auto vocab = table.names();
    LoadedCheckpoint lc =
        load_checkpoint(default_checkpoint(checkpoint, "model.ckpt"), &vocab);

    VoiceSepEvalConfig cfg;
    cfg.folds = folds;
    cfg.finetune_epochs = finetune_epochs;
    cfg.batch_size = batch_size;
    cfg.seed = common.seed;
    cfg.run_with_hints = hints_mode == "both" || hints_mode == "on";
    cfg.run_without_hints = hints_mode == "both" || hints_mode == "off";
    VoiceSepEvalReport report = evaluate_voicesep(segs, *lc.model, cfg);

    std::ofstream out(output);
    if (!out) throw std::runtime_error("cannot write report: " + output);
    out << report.to_json_text() << "\n";
    std::cout << "mean accuracy";
    if (cfg.run_without_hints) std::cout << " no-hints " << report.mean_no_hints;
    if (cfg.run_with_hints) std::cout << " hints " << report.mean_hints;
    std::cout << " -> " << output << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-track music rearrangement: corpus prep, training, style "
                 "transfer, and voice separation"};
    app.require_subcommand(1);

    Common common;
    app.add_option("--instruments", common.instruments_path,
                   "instrument taxonomy JSON (default: built-in table)");
    app.add_option("--seed", common.seed, "seed for all randomness in the run");

    auto* prepare = app.add_subcommand("prepare", "scan MIDI files into a corpus manifest");
    std::vector<std::string> prep_inputs;
    std::string prep_output, prep_tag, prep_synth;
    bool prep_eight = false;
    int synth_pieces = 16, synth_segments = 2;
    double train_ratio = 0.8, val_ratio = 0.1;
    prepare->add_option("--input", prep_inputs, "MIDI files or directories");
    prepare->add_option("--output", prep_output, "manifest path")->required();
    prepare->add_option("--corpus", prep_tag, "corpus tag");
    prepare->add_flag("--eight-beat-windows", prep_eight,
                      "segment by raw 8-beat windows (voice-separation corpora)");
    prepare->add_option("--synth", prep_synth, "generate a synthetic corpus: pop|voices");
    prepare->add_option("--synth-pieces", synth_pieces, "synthetic piece count");
    prepare->add_option("--synth-segments", synth_segments, "segments per synthetic piece");
    prepare->add_option("--train-ratio", train_ratio, "train split ratio");
    prepare->add_option("--val-ratio", val_ratio, "validation split ratio");

    auto* train = app.add_subcommand("train", "train a model from a corpus manifest");
    std::string train_manifest, train_output, train_config, train_preset = "desk";
    std::string train_init, train_log;
    bool train_voicesep = false, train_hints = false;
    int train_epochs = 0, train_batch = 0;
    train->add_option("--manifest", train_manifest)->required();
    train->add_option("--output", train_output)->required();
    train->add_option("--config", train_config, "training config JSON");
    train->add_option("--model-preset", train_preset, "paper|desk|tiny");
    train->add_option("--init", train_init, "warm-start checkpoint");
    train->add_option("--epochs", train_epochs, "override epochs");
    train->add_option("--batch-size", train_batch, "override batch size");
    train->add_option("--log", train_log, "write per-epoch JSONL log here");
    train->add_flag("--voicesep", train_voicesep,
                    "fine-tune the voice-function inferrer (requires --init)");
    train->add_flag("--hints", train_hints, "fine-tune with entry hints");

    auto* refdb = app.add_subcommand("build-refdb", "index a corpus for reference search");
    std::string refdb_manifest, refdb_output, refdb_split = "train";
    refdb->add_option("--manifest", refdb_manifest)->required();
    refdb->add_option("--output", refdb_output)->required();
    refdb->add_option("--split", refdb_split, "train|val|test|all");

    struct TaskArgs {
        std::string source, reference, refdb, checkpoint, output;
        double alpha = 0.2;
        bool preserve_melody = false;
        bool sample_melody = false;
    };
    auto add_task = [&](const char* name, const char* desc, bool melody_default) {
        auto* cmd = app.add_subcommand(name, desc);
        auto args = std::make_shared<TaskArgs>();
        args->preserve_melody = melody_default;
        cmd->add_option("--source", args->source)->required();
        cmd->add_option("--reference", args->reference, "reference MIDI file");
        cmd->add_option("--refdb", args->refdb, "reference db directory");
        cmd->add_option("--checkpoint", args->checkpoint);
        cmd->add_option("--output", args->output)->required();
        cmd->add_option("--alpha", args->alpha, "reference-search noise weight");
        cmd->add_flag("--preserve-melody,!--no-preserve-melody", args->preserve_melody,
                      "add the source melody as an extra query");
        cmd->add_flag("--sample-melody", args->sample_melody,
                      "posterior sampling for the melody track");
        return std::make_pair(cmd, args);
    };
    auto reins = add_task("reinstrument",
                          "rearrange a multi-track piece under a new track system", false);
    auto cover = add_task("pianocover",
                          "rearrange a multi-track piece with a piano reference", false);
    auto orch = add_task("orchestrate",
                         "rearrange a piano piece into multi-track form", true);

    auto* vsep = app.add_subcommand("voicesep", "separate a mixture into voice tracks");
    std::string vs_input, vs_checkpoint, vs_output;
    bool vs_hints = false;
    vsep->add_option("--input", vs_input)->required();
    vsep->add_option("--checkpoint", vs_checkpoint);
    vsep->add_option("--output", vs_output)->required();
    vsep->add_flag("--hints", vs_hints, "use entry hints from the input's tracks");

    auto* evs = app.add_subcommand("eval-voicesep", "k-fold voice-separation evaluation");
    std::string ev_manifest, ev_checkpoint, ev_output, ev_hints_mode = "both";
    int ev_folds = 10, ev_ft_epochs = 8, ev_batch = 4;
    evs->add_option("--manifest", ev_manifest)->required();
    evs->add_option("--checkpoint", ev_checkpoint);
    evs->add_option("--output", ev_output)->required();
    evs->add_option("--folds", ev_folds);
    evs->add_option("--finetune-epochs", ev_ft_epochs);
    evs->add_option("--batch-size", ev_batch);
    evs->add_option("--hints", ev_hints_mode, "both|on|off");

    CLI11_PARSE(app, argc, argv);

    try {
        if (prepare->parsed())
            return cmd_prepare(common, prep_inputs, prep_output, prep_tag, prep_eight,
                               prep_synth, synth_pieces, synth_segments, train_ratio,
                               val_ratio);
        if (train->parsed())
            return cmd_train(common, train_manifest, train_output, train_config,
                             train_preset, train_init, train_voicesep, train_hints,
                             train_epochs, train_batch, train_log);
        if (refdb->parsed())
            return cmd_build_refdb(common, refdb_manifest, refdb_output, refdb_split);
        if (reins.first->parsed())
            return cmd_rearrange(common, "reinstrument", reins.second->source,
                                 reins.second->reference, reins.second->refdb,
                                 reins.second->checkpoint, reins.second->output,
                                 reins.second->alpha, reins.second->preserve_melody,
                                 reins.second->sample_melody);
        if (cover.first->parsed())
            return cmd_rearrange(common, "pianocover", cover.second->source,
                                 cover.second->reference, cover.second->refdb,
                                 cover.second->checkpoint, cover.second->output,
                                 cover.second->alpha, cover.second->preserve_melody,
                                 cover.second->sample_melody);
        if (orch.first->parsed())
            return cmd_rearrange(common, "orchestrate", orch.second->source,
                                 orch.second->reference, orch.second->refdb,
                                 orch.second->checkpoint, orch.second->output,
                                 orch.second->alpha, orch.second->preserve_melody,
                                 orch.second->sample_melody);
        if (vsep->parsed())
            return cmd_voicesep(common, vs_input, vs_checkpoint, vs_output, vs_hints);
        if (evs->parsed())
            return cmd_eval_voicesep(common, ev_manifest, ev_checkpoint, ev_output,
                                     ev_folds, ev_ft_epochs, ev_batch, ev_hints_mode);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
