#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mtr/instruments.hpp"
#include "mtr/model.hpp"
#include "mtr/synth.hpp"
#include "mtr/training.hpp"

#include <set>

using namespace mtr;

namespace {

MultiTrackVae make_desk_model(std::uint64_t seed = 1) {
    return MultiTrackVae(ModelConfig::desk(InstrumentTable::builtin().names()), seed);
}

Mixture random_mixture(Rng& rng, int notes = 20) {
    Mixture mix;
    for (int i = 0; i < notes; ++i) {
        int p = rng.uniform_int(30, 100);
        int t = rng.uniform_int(0, kSteps - 1);
        mix.grid(p, t) = rng.uniform_int(1, kSteps - t);
    }
    return mix;
}

TrackFunction random_function(Rng& rng) {
    Grid g = Grid::Zero(kPitches, kSteps);
    for (int i = 0; i < 15; ++i)
        g(rng.uniform_int(30, 100), rng.uniform_int(0, kSteps - 1)) = 1;
    return track_function(g);
}

}  // namespace

TEST_CASE("latent dimensions match the declared sizes") {
    MultiTrackVae model = make_desk_model();
    Rng rng(2);
    Mixture mix = random_mixture(rng);

    LatentGaussian z = model.encode_mixture(mix);
    CHECK(z.dim() == 256);
    CHECK(z.finite());

    auto [zp, zt] = model.encode_function(random_function(rng));
    CHECK(zp.dim() == 128);
    CHECK(zt.dim() == 128);
    CHECK(zp.finite());
    CHECK(zt.finite());

    TrackFunction dec = model.decode_function(zp.mean, zt.mean);
    CHECK(dec.pitch_fn.size() == 128);
    CHECK(dec.time_fn.size() == 32);
    CHECK((dec.pitch_fn.array() >= 0.0).all());
    CHECK((dec.pitch_fn.array() <= 1.0).all());
    CHECK((dec.time_fn.array() >= 0.0).all());
    CHECK((dec.time_fn.array() <= 1.0).all());
}

TEST_CASE("all-zero function encodes to a finite posterior, zero latent decodes in range") {
    MultiTrackVae model = make_desk_model();
    auto [zp, zt] = model.encode_function(TrackFunction{});
    CHECK(zp.finite());
    CHECK(zt.finite());
    TrackFunction dec = model.decode_function(Eigen::VectorXd::Zero(128),
                                              Eigen::VectorXd::Zero(128));
    CHECK((dec.pitch_fn.array() >= 0.0).all());
    CHECK((dec.time_fn.array() <= 1.0).all());
}

TEST_CASE("mixture encoding is deterministic and note-sensitive") {
    MultiTrackVae model = make_desk_model();
    Rng rng(3);
    Mixture mix = random_mixture(rng);
    LatentGaussian a = model.encode_mixture(mix);
    LatentGaussian b = model.encode_mixture(mix);
    CHECK(a.mean == b.mean);
    CHECK(a.log_var == b.log_var);

    Mixture changed = mix;
    int p = 64, t = 7;
    changed.grid(p, t) = changed.grid(p, t) > 0 ? 0 : 4;
    LatentGaussian c = model.encode_mixture(changed);
    CHECK(a.mean != c.mean);

    // empty mixture is legal input
    LatentGaussian e = model.encode_mixture(Mixture{});
    CHECK(e.finite());
}

TEST_CASE("separate returns one posterior per query for n in 1..16") {
    MultiTrackVae model = make_desk_model();
    Rng rng(4);
    Mixture mix = random_mixture(rng);
    LatentGaussian z = model.encode_mixture(mix);
    for (int n : {1, 2, 5, 16}) {
        std::vector<std::pair<Eigen::VectorXd, int>> queries;
        for (int i = 0; i < n; ++i) {
            auto [zp, zt] = model.encode_function(random_function(rng));
            Eigen::VectorXd q(256);
            q << zp.mean, zt.mean;
            queries.emplace_back(q, i % 30);
        }
        auto posts = model.separate(z.mean, queries);
        REQUIRE(static_cast<int>(posts.size()) == n);
        for (const auto& p : posts) {
            REQUIRE(p.dim() == 256);
            REQUIRE(p.finite());
        }
    }
}

TEST_CASE("separate rejects unknown instrument ids") {
    MultiTrackVae model = make_desk_model();
    Rng rng(5);
    LatentGaussian z = model.encode_mixture(random_mixture(rng));
    std::vector<std::pair<Eigen::VectorXd, int>> queries;
    queries.emplace_back(Eigen::VectorXd::Zero(256), 999);
    CHECK_THROWS_AS((void)model.separate(z.mean, queries), std::runtime_error);
    CHECK_THROWS_AS((void)model.instrument_id("theremin"), std::runtime_error);
}

TEST_CASE("query permutation permutes separator outputs exactly") {
    MultiTrackVae model = make_desk_model();
    Rng rng(6);
    Mixture mix = random_mixture(rng);
    LatentGaussian z = model.encode_mixture(mix);
    for (int n : {2, 4, 8}) {
        std::vector<std::pair<Eigen::VectorXd, int>> queries;
        for (int i = 0; i < n; ++i) {
            auto [zp, zt] = model.encode_function(random_function(rng));
            Eigen::VectorXd q(256);
            q << zp.mean, zt.mean;
            queries.emplace_back(q, (i * 7) % 34);
        }
        auto base = model.separate(z.mean, queries);

        std::vector<size_t> perm(static_cast<size_t>(n));
        for (size_t i = 0; i < perm.size(); ++i) perm[i] = (i + 3) % perm.size();
        std::vector<std::pair<Eigen::VectorXd, int>> shuffled;
        for (size_t i = 0; i < perm.size(); ++i) shuffled.push_back(queries[perm[i]]);
        auto permuted = model.separate(z.mean, shuffled);

        for (size_t i = 0; i < perm.size(); ++i) {
            REQUIRE(permuted[i].mean == base[perm[i]].mean);  // bitwise
            REQUIRE(permuted[i].log_var == base[perm[i]].log_var);
        }
    }
}

TEST_CASE("aux prediction has the right shape, range, and determinism") {
    MultiTrackVae model = make_desk_model();
    Rng rng(7);
    Eigen::VectorXd zt(256);
    for (int i = 0; i < 256; ++i) zt[i] = rng.normal();
    AuxFeatures a = model.predict_aux(zt);
    CHECK(a.pitch_centre.size() == 32);
    CHECK(a.voice_intensity.size() == 32);
    CHECK(a.rhythm.size() == 32);
    CHECK((a.pitch_centre.array() >= 0.0).all());
    CHECK((a.pitch_centre.array() <= 1.0).all());
    CHECK((a.rhythm.array() >= 0.0).all());
    CHECK((a.rhythm.array() <= 1.0).all());
    AuxFeatures b = model.predict_aux(zt);
    CHECK(a.pitch_centre == b.pitch_centre);
    CHECK(a.rhythm == b.rhythm);
}

TEST_CASE("greedy decode emits a valid note event sequence") {
    MultiTrackVae model = make_desk_model();
    Rng rng(8);
    for (int it = 0; it < 5; ++it) {
        Eigen::VectorXd z(256);
        for (int i = 0; i < 256; ++i) z[i] = 2.0 * rng.normal();
        NoteEventSequence seq = model.decode_track(z);
        for (int t = 0; t < kSteps; ++t) {
            int last = -1;
            for (const NoteEvent& ev : seq.steps[static_cast<size_t>(t)]) {
                REQUIRE(ev.pitch > last);  // strictly ascending
                REQUIRE(ev.pitch < 128);
                REQUIRE(ev.duration >= 1);
                REQUIRE(ev.duration <= kSteps - t);
                last = ev.pitch;
            }
        }
        // grid conversion must accept it
        CHECK_NOTHROW((void)events_to_roll(seq));
    }
}

TEST_CASE("teacher forcing with rate 1 conditions on ground truth") {
    MultiTrackVae model = make_desk_model();
    Rng rng(9);
    NoteEventSequence teacher;
    teacher.steps[0] = {{60, 4}, {64, 4}};
    teacher.steps[4] = {{62, 2}};
    ad::Graph g;
    Eigen::VectorXd z = Eigen::VectorXd::Zero(256);
    auto aux = model.predict_aux_g(g, g.input(z));
    auto res = model.decode_track_teacher_g(g, g.input(z), aux, teacher, 1.0, rng);
    CHECK(res.note_positions == 3);
    CHECK(res.pitch_positions == 3 + kSteps);  // one end symbol per step
    CHECK(g.scalar(res.pitch_ce) > 0.0);
    CHECK(g.scalar(res.dur_ce) > 0.0);
}

TEST_CASE("gradient reaches every component group") {
    MultiTrackVae model = make_desk_model();
    InstrumentTable table = InstrumentTable::builtin();
    SynthOptions so;
    so.num_pieces = 2;
    so.segments_per_piece = 1;
    so.seed = 5;
    auto pieces = synth_corpus(so, table);
    std::vector<Segment> batch;
    for (auto& p : pieces)
        for (auto& s : p.segments) batch.push_back(s);

    Rng rng(10);
    ScheduleState sched = step_schedule(ScheduleState{}, 10, 30);
    ad::Graph g;
    auto res = build_elbo(g, model, batch, sched, rng, true);
    model.params().zero_grad();
    g.backward(res.total);

    const char* groups[] = {"enc.", "fn.", "sep.", "aux.", "dec.", "emb."};
    for (const char* prefix : groups) {
        double norm = 0;
        for (auto& [name, t] : model.params().items())
            if (name.rfind(prefix, 0) == 0) norm += t->grad.squaredNorm();
        INFO(prefix);
        CHECK(norm > 0.0);
    }
}

TEST_CASE("voice-function inferrer emits the preset count with matching dims") {
    MultiTrackVae model = make_desk_model();
    model.enable_voice_inferrer(77);
    Rng rng(11);
    Eigen::VectorXd zmix(256);
    for (int i = 0; i < 256; ++i) zmix[i] = rng.normal();

    auto zfs = model.infer_voice_functions(zmix, 4);
    REQUIRE(zfs.size() == 4);
    for (const auto& z : zfs) {
        CHECK(z.dim() == 256);
        CHECK(z.finite());
    }
    auto again = model.infer_voice_functions(zmix, 4);
    for (size_t i = 0; i < 4; ++i) CHECK(zfs[i].mean == again[i].mean);

    // hints shift the emitted latents
    std::vector<std::optional<MultiTrackVae::VoiceHint>> hints(4);
    hints[0] = MultiTrackVae::VoiceHint{80, 0};
    auto hinted = model.infer_voice_functions(zmix, 4, &hints);
    CHECK(hinted[0].mean != zfs[0].mean);
}

TEST_CASE("latent gaussian sampling is the reparameterization") {
    LatentGaussian lg;
    lg.mean = Eigen::VectorXd::Constant(4, 2.0);
    lg.log_var = Eigen::VectorXd::Constant(4, -100.0);  // sigma ~ 0
    Rng rng(1);
    Eigen::VectorXd s = lg.sample(rng);
    for (int i = 0; i < 4; ++i) CHECK(s[i] == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("model config round trips through json") {
    ModelConfig c = ModelConfig::desk(InstrumentTable::builtin().names());
    ModelConfig d = ModelConfig::from_json_text(c.to_json_text());
    CHECK(d.instruments == c.instruments);
    CHECK(d.d_model == c.d_model);
    CHECK(d.hash() == c.hash());
    d.instruments.push_back("extra");
    CHECK(d.hash() != c.hash());
}
