#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mtr/checkpoint.hpp"
#include "mtr/instruments.hpp"
#include "mtr/synth.hpp"
#include "mtr/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace mtr;
namespace fs = std::filesystem;

namespace {

std::vector<Segment> pop_segments(int pieces, int per_piece, std::uint64_t seed) {
    InstrumentTable table = InstrumentTable::builtin();
    SynthOptions so;
    so.num_pieces = pieces;
    so.segments_per_piece = per_piece;
    so.seed = seed;
    std::vector<Segment> segs;
    for (auto& p : synth_corpus(so, table))
        for (auto& s : p.segments) segs.push_back(s);
    return segs;
}

std::vector<LoadedSegment> as_loaded(const std::vector<Segment>& segs) {
    std::vector<LoadedSegment> out;
    for (size_t i = 0; i < segs.size(); ++i) {
        LoadedSegment ls;
        ls.segment = segs[i];
        ls.piece_id = "p" + std::to_string(i);
        ls.corpus = "pop";
        ls.split = "train";
        ls.index = static_cast<int>(i);
        out.push_back(std::move(ls));
    }
    return out;
}

}  // namespace

TEST_CASE("schedule endpoints and midpoints") {
    ScheduleState s;
    ScheduleState e0 = step_schedule(s, 0, 30);
    CHECK(e0.beta_f == 0.0);
    CHECK(e0.beta_o == 0.0);
    CHECK(e0.tf_rate == doctest::Approx(0.8));
    CHECK(e0.lr == doctest::Approx(1e-3));

    ScheduleState efin = step_schedule(s, 30, 30);
    CHECK(efin.beta_f == doctest::Approx(0.5));
    CHECK(efin.beta_o == doctest::Approx(0.01));
    CHECK(efin.tf_rate == doctest::Approx(0.0));
    CHECK(efin.lr == doctest::Approx(1e-5));

    ScheduleState emid = step_schedule(s, 15, 30);
    CHECK(emid.lr == doctest::Approx(1e-4));  // geometric midpoint
    CHECK(emid.beta_f == doctest::Approx(0.5));  // warm-up finished at half time
    CHECK(emid.beta_o == doctest::Approx(0.01));

    // monotonicity over the run
    double prev_bf = -1, prev_tf = 2, prev_lr = 2;
    for (int e = 0; e <= 30; ++e) {
        ScheduleState st = step_schedule(s, e, 30);
        CHECK(st.beta_f >= prev_bf);
        CHECK(st.tf_rate <= prev_tf);
        CHECK(st.lr <= prev_lr);
        prev_bf = st.beta_f;
        prev_tf = st.tf_rate;
        prev_lr = st.lr;
    }
}

TEST_CASE("closed-form KL values") {
    ad::Graph g;
    SUBCASE("standard normal gives zero") {
        ad::Mat mu = ad::Mat::Zero(8, 1);
        ad::Mat lv = ad::Mat::Zero(8, 1);
        CHECK(g.scalar(g.kl_std_normal(g.input(mu), g.input(lv))) == doctest::Approx(0.0));
    }
    SUBCASE("unit mean, unit variance, one dimension") {
        ad::Mat mu = ad::Mat::Ones(1, 1);
        ad::Mat lv = ad::Mat::Zero(1, 1);
        CHECK(g.scalar(g.kl_std_normal(g.input(mu), g.input(lv))) == doctest::Approx(0.5));
    }
}

TEST_CASE("analytic KL matches a Monte-Carlo estimate within three standard errors") {
    Rng rng(2024);
    for (int trial = 0; trial < 3; ++trial) {
        int dim = 6;
        Eigen::VectorXd mu(dim), lv(dim);
        for (int i = 0; i < dim; ++i) {
            mu[i] = rng.normal();
            lv[i] = 0.5 * rng.normal();
        }
        ad::Graph g;
        double analytic = g.scalar(g.kl_std_normal(g.input(mu), g.input(lv)));

        // per-dimension mean of log q(z) - log p(z) under z ~ q
        int K = 20000;
        double sum = 0, sum2 = 0;
        for (int k = 0; k < K; ++k) {
            double acc = 0;
            for (int i = 0; i < dim; ++i) {
                double sigma = std::exp(0.5 * lv[i]);
                double z = mu[i] + sigma * rng.normal();
                double logq = -0.5 * std::log(2 * M_PI) - 0.5 * lv[i] -
                              0.5 * (z - mu[i]) * (z - mu[i]) / (sigma * sigma);
                double logp = -0.5 * std::log(2 * M_PI) - 0.5 * z * z;
                acc += logq - logp;
            }
            acc /= dim;
            sum += acc;
            sum2 += acc * acc;
        }
        double mc = sum / K;
        double var = (sum2 / K - mc * mc) / K;
        double se = std::sqrt(var);
        INFO("analytic ", analytic, " mc ", mc, " se ", se);
        CHECK(std::abs(analytic - mc) <= 3.0 * se);
    }
}

TEST_CASE("loss breakdown composes as stated") {
    InstrumentTable table = InstrumentTable::builtin();
    MultiTrackVae model(ModelConfig::tiny(table.names()), 3);
    auto segs = pop_segments(2, 1, 17);
    Rng rng(5);

    SUBCASE("total equals the weighted sum") {
        ScheduleState sched = step_schedule(ScheduleState{}, 20, 30);
        LossBreakdown lb = elbo_loss(segs, model, sched, rng);
        double expect = lb.track_recon + lb.function_recon + lb.aux_recon +
                        lb.beta_f * lb.kl_function + lb.beta_o * (lb.kl_mix + lb.kl_track);
        CHECK(lb.total == doctest::Approx(expect).epsilon(1e-12));
        CHECK(lb.kl_mix >= 0.0);
        CHECK(lb.kl_function >= 0.0);
        CHECK(lb.kl_track >= 0.0);
    }
    SUBCASE("zero betas leave the pure reconstruction sum") {
        ScheduleState sched = step_schedule(ScheduleState{}, 0, 30);
        LossBreakdown lb = elbo_loss(segs, model, sched, rng);
        CHECK(lb.total == doctest::Approx(lb.track_recon + lb.function_recon +
                                          lb.aux_recon));
    }
}

TEST_CASE("finite differences confirm the full loss gradient (reduced model)") {
    InstrumentTable table = InstrumentTable::builtin();
    MultiTrackVae model(ModelConfig::tiny(table.names()), 9);
    auto segs = pop_segments(2, 1, 21);
    ScheduleState sched = step_schedule(ScheduleState{}, 20, 30);
    sched.tf_rate = 1.0;  // keep the loss smooth in the parameters

    auto loss_value = [&]() {
        Rng rng(123);
        ad::Graph g;
        return g.scalar(build_elbo(g, model, segs, sched, rng, true).total);
    };
    model.params().zero_grad();
    {
        Rng rng(123);
        ad::Graph g;
        auto res = build_elbo(g, model, segs, sched, rng, true);
        g.backward(res.total);
    }

    Rng pick(7);
    auto items = model.params().items();
    int checked = 0;
    double h = 1e-5;
    while (checked < 8) {
        auto& [name, t] = items[static_cast<size_t>(pick.uniform_int(0, static_cast<int>(items.size()) - 1))];
        int i = pick.uniform_int(0, static_cast<int>(t->value.rows()) - 1);
        int j = pick.uniform_int(0, static_cast<int>(t->value.cols()) - 1);
        double save = t->value(i, j);
        t->value(i, j) = save + h;
        double fp = loss_value();
        t->value(i, j) = save - h;
        double fm = loss_value();
        t->value(i, j) = save;
        double num = (fp - fm) / (2 * h);
        double ana = t->grad(i, j);
        INFO(name, "(", i, ",", j, ") analytic ", ana, " numeric ", num);
        if (std::abs(num) < 1e-10 && std::abs(ana) < 1e-10) {
            ++checked;
            continue;
        }
        CHECK(std::abs(num - ana) <= 1e-2 * std::max(std::abs(num), std::abs(ana)) + 1e-9);
        ++checked;
    }
}

TEST_CASE("key offsets cover the 12 keys uniformly") {
    Rng rng(31337);
    int counts[12] = {0};
    int n = 12000;
    for (int i = 0; i < n; ++i) {
        int off = draw_key_offset(rng);
        REQUIRE(off >= -5);
        REQUIRE(off <= 6);
        counts[off + 5]++;
    }
    double expect = n / 12.0;
    double chi2 = 0;
    for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
    // 5% critical value for 11 degrees of freedom
    CHECK(chi2 < 19.675);
}

TEST_CASE("training on a tiny corpus reduces the loss and writes checkpoints") {
    InstrumentTable table = InstrumentTable::builtin();
    MultiTrackVae model(ModelConfig::tiny(table.names()), 11);
    auto loaded = as_loaded(pop_segments(4, 1, 5));
    std::vector<LoadedSegment> val(loaded.begin() + 3, loaded.end());
    std::vector<LoadedSegment> train(loaded.begin(), loaded.begin() + 3);

    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 2;
    tc.augment = true;
    tc.seed = 3;
    nn::AdamState opt;
    TrainResult res = train_model(model, opt, train, val, tc);
    REQUIRE(res.logs.size() == 3);
    CHECK(res.best_epoch >= 0);
    CHECK(res.logs.back().train.total < res.logs.front().train.total * 1.2);

    SUBCASE("empty training split is a configuration error") {
        CHECK_THROWS_AS(
            (void)train_model(model, opt, {}, val, tc), std::invalid_argument);
    }
}

TEST_CASE("checkpoint round trip is bitwise and guards its metadata") {
    fs::create_directories("test_tmp");
    InstrumentTable table = InstrumentTable::builtin();
    MultiTrackVae model(ModelConfig::tiny(table.names()), 13);
    model.enable_voice_inferrer(14);
    CheckpointMeta meta;
    meta.kind = "voicesep";
    meta.voice_instruments = {11, 11, 12, 13};
    meta.hints_trained = true;
    nn::AdamState opt;
    opt.step = 42;
    opt.moments["emb.pitch"] = {ad::Mat::Ones(2, 2), ad::Mat::Zero(2, 2)};
    save_checkpoint("test_tmp/model.ckpt", model, meta, &opt);

    LoadedCheckpoint lc = load_checkpoint("test_tmp/model.ckpt");
    CHECK(lc.meta.kind == "voicesep");
    CHECK(lc.meta.voice_instruments == meta.voice_instruments);
    CHECK(lc.meta.hints_trained);
    CHECK(lc.has_opt);
    CHECK(lc.opt.step == 42);
    CHECK(lc.model->has_voice_inferrer());
    for (auto& [name, t] : model.params().items()) {
        REQUIRE(lc.model->params().get(name).value == t->value);  // bitwise
    }

    SUBCASE("vocabulary mismatch is rejected") {
        std::vector<std::string> other = table.names();
        other[0] = "edited";
        CHECK_THROWS_AS((void)load_checkpoint("test_tmp/model.ckpt", &other),
                        CheckpointError);
    }
    SUBCASE("legacy version is rejected explicitly") {
        auto bytes = read_file_bytes("test_tmp/model.ckpt");
        bytes[7] = '0';
        write_file_bytes("test_tmp/legacy.ckpt", bytes);
        CHECK_THROWS_WITH_AS((void)load_checkpoint("test_tmp/legacy.ckpt"),
                             doctest::Contains("version"), CheckpointError);
    }
    SUBCASE("corrupt config hash is rejected") {
        auto bytes = read_file_bytes("test_tmp/model.ckpt");
        bytes[20] ^= 0xFF;  // inside the config json
        write_file_bytes("test_tmp/corrupt.ckpt", bytes);
        CHECK_THROWS_AS((void)load_checkpoint("test_tmp/corrupt.ckpt"), CheckpointError);
    }
    SUBCASE("truncated file is rejected") {
        auto bytes = read_file_bytes("test_tmp/model.ckpt");
        bytes.resize(bytes.size() / 2);
        write_file_bytes("test_tmp/trunc.ckpt", bytes);
        CHECK_THROWS_AS((void)load_checkpoint("test_tmp/trunc.ckpt"), CheckpointError);
    }
}

TEST_CASE("resuming a checkpoint reproduces the next step exactly") {
    fs::create_directories("test_tmp");
    InstrumentTable table = InstrumentTable::builtin();
    MultiTrackVae model(ModelConfig::tiny(table.names()), 15);
    auto loaded = as_loaded(pop_segments(3, 1, 8));

    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 2;
    tc.seed = 9;
    nn::AdamState opt;
    train_model(model, opt, loaded, {}, tc);
    CheckpointMeta meta;
    save_checkpoint("test_tmp/resume.ckpt", model, meta, &opt);

    auto next_loss = [&](LoadedCheckpoint lc) {
        TrainConfig tc2 = tc;
        tc2.epochs = 1;
        TrainResult r = train_model(*lc.model, lc.opt, loaded, {}, tc2);
        return r.logs.front().train.total;
    };
    double a = next_loss(load_checkpoint("test_tmp/resume.ckpt"));
    double b = next_loss(load_checkpoint("test_tmp/resume.ckpt"));
    CHECK(a == b);  // bitwise identical resume
}

TEST_CASE("clone model is an exact copy") {
    InstrumentTable table = InstrumentTable::builtin();
    MultiTrackVae model(ModelConfig::tiny(table.names()), 21);
    auto copy = clone_model(model);
    for (auto& [name, t] : model.params().items())
        REQUIRE(copy->params().get(name).value == t->value);
}
