#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "hvrnn/train.hpp"

using namespace hvrnn;
using model::HierarchySpec;
using model::HierVrnn;
using train::AdamState;
using train::TrainSchedule;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("hvrnn_train_" + std::to_string(rng::Counter(std::random_device{}()).next_u64()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string str(const std::string& name = "") const {
        return name.empty() ? path.string() : (path / name).string();
    }
};

HierarchySpec tiny_spec() {
    HierarchySpec s;
    s.levels = {{1, 128}, {4, 512}};
    s.width_multiplier = 0.03125;
    s.context_len = 1;
    s.horizon = 2;
    s.frame_size = 8;
    s.frame_channels = 1;
    return s;
}

std::vector<Tensor<float>> tiny_sequences(int n, int frames) {
    data::SmmnistConfig cfg;
    cfg.canvas = 8;
    cfg.num_digits = 1;
    cfg.digit_size = 5;
    cfg.speed_min = 1;
    cfg.speed_max = 2;
    cfg.context_len = 1;
    cfg.horizon = frames - 1;
    data::DigitSet digits = data::synthetic_digits().resized(5);
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < n; ++i) seeds.push_back(data::test_seed(1000 + i));
    return data::make_sequences(cfg, digits, seeds);
}

Tensor<float> forward_fingerprint(HierVrnn<float>& m, std::uint64_t seed) {
    Tensor<float> ctx({1, 1, 1, 8, 8});
    rng::Counter r(seed);
    for (std::int64_t i = 0; i < ctx.numel(); ++i) ctx[i] = float(r.uniform(0, 1));
    return m.generate(ctx, 2, 1, 42);
}

}  // namespace

TEST_CASE("lr warmup: endpoint values and the linear midpoint") {
    TrainSchedule s;
    std::int64_t spe = 100;
    CHECK(train::lr_at(0, spe, s) == doctest::Approx(2e-5).epsilon(1e-12));
    CHECK(train::lr_at(5 * spe, spe, s) == doctest::Approx(1.6e-4).epsilon(1e-12));
    CHECK(train::lr_at(10 * spe, spe, s) == doctest::Approx(1.6e-4).epsilon(1e-12));
    CHECK(train::lr_at(5 * spe / 2, spe, s) == doctest::Approx(9e-5).epsilon(1e-12));
    for (std::int64_t t = 1; t < 700; ++t)
        CHECK(train::lr_at(t, spe, s) >= train::lr_at(t - 1, spe, s));
    CHECK_THROWS_AS(train::lr_at(-1, spe, s), ContractViolation);
}

TEST_CASE("beta warmup: zero at epoch 0, one after warmup, naive mode constant") {
    TrainSchedule s;
    CHECK(train::beta_at(0, s) == 0.0);
    CHECK(train::beta_at(s.beta_warmup_epochs, s) == 1.0);
    CHECK(train::beta_at(s.beta_warmup_epochs + 5, s) == 1.0);
    for (int e = 1; e < 20; ++e) CHECK(train::beta_at(e, s) >= train::beta_at(e - 1, s));
    s.beta_warmup = false;
    CHECK(train::beta_at(0, s) == 1.0);
}

TEST_CASE("adam: zero gradient with zero decay is the identity") {
    diff::ParamStore<float> ps;
    auto& p = ps.create("p", {4});
    for (int i = 0; i < 4; ++i) p.value[i] = float(i) - 1.5f;
    Tensor<float> before = p.value;
    AdamState<float> st;
    TrainSchedule s;
    s.weight_decay = 0.0;
    train::adam_step(ps, st, 0.1, s);
    for (int i = 0; i < 4; ++i) CHECK(p.value[i] == before[i]);
}

TEST_CASE("adam: first step with g=1 moves by about -lr (bias-corrected)") {
    diff::ParamStore<double> ps;
    auto& p = ps.create("p", {1});
    p.value[0] = 0.3;
    p.grad[0] = 1.0;
    AdamState<double> st;
    TrainSchedule s;
    s.adam_beta1 = 0.5;
    s.adam_beta2 = 0.9;
    s.adam_eps = 1e-8;
    s.weight_decay = 0.0;
    train::adam_step(ps, st, 0.1, s);
    // m-hat = v-hat = 1 after bias correction, so the update is -lr/(1+eps).
    CHECK(p.value[0] == doctest::Approx(0.3 - 0.1).epsilon(1e-6));
}

TEST_CASE("adam: decoupled decay scales by (1 - lr*wd) under zero gradient") {
    diff::ParamStore<double> ps;
    auto& p = ps.create("p", {1});
    p.value[0] = 2.0;
    AdamState<double> st;
    TrainSchedule s;
    s.weight_decay = 1e-4;
    train::adam_step(ps, st, 0.1, s);
    CHECK(p.value[0] == doctest::Approx(2.0 * (1.0 - 1e-5)).epsilon(1e-12));
}

TEST_CASE("adam: non-finite gradient aborts with state unchanged") {
    diff::ParamStore<float> ps;
    auto& a = ps.create("a", {2});
    auto& b = ps.create("b", {2});
    a.value[0] = 1.0f;
    b.value[0] = -1.0f;
    a.grad[0] = 1.0f;
    b.grad[1] = std::numeric_limits<float>::quiet_NaN();
    AdamState<float> st;
    TrainSchedule s;
    Tensor<float> before_a = a.value;
    CHECK_THROWS_AS(train::adam_step(ps, st, 0.1, s), NumericError);
    CHECK(a.value[0] == before_a[0]);  // even the finite parameter is untouched
    CHECK(st.t == 0);
    for (auto& [k, t] : st.m)
        for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0f);
}

TEST_CASE("gradient clipping rescales to the given global norm") {
    diff::ParamStore<float> ps;
    auto& p = ps.create("p", {4});
    for (int i = 0; i < 4; ++i) p.grad[i] = 100.0f;
    double norm = train::clip_gradients(ps, 100.0);
    CHECK(norm == doctest::Approx(200.0));
    double after = std::sqrt(double(kern::sqsum(p.grad.data(), 4)));
    CHECK(after == doctest::Approx(100.0).epsilon(1e-5));
}

TEST_CASE("checkpoint round-trip: save, load, bit-identical forward") {
    TempDir tmp;
    HierVrnn<float> m(tiny_spec(), 77);
    AdamState<float> adam;
    adam.ensure(m.params());
    adam.t = 3;
    train::CheckpointMeta meta;
    meta.step = 12;
    meta.epoch = 2;
    meta.schedule_json = train::schedule_to_json(TrainSchedule{});
    meta.rng_json = "{\"seed\":77}";
    Tensor<float> before = forward_fingerprint(m, 5);
    train::save_checkpoint(tmp.str("ck"), m.params(), &adam, meta);

    HierVrnn<float> m2(tiny_spec(), 123456);  // different init
    auto ck = train::load_checkpoint(tmp.str("ck"));
    CHECK(ck.meta.step == 12);
    CHECK(ck.meta.epoch == 2);
    ck.apply_params(m2.params());
    Tensor<float> after = forward_fingerprint(m2, 5);
    REQUIRE(before.numel() == after.numel());
    for (std::int64_t i = 0; i < before.numel(); ++i) REQUIRE(before[i] == after[i]);

    AdamState<float> adam2;
    ck.apply_adam(adam2, m2.params());
    CHECK(adam2.m.size() == adam.m.size());
}

TEST_CASE("checkpoint: truncation and corruption are format errors") {
    TempDir tmp;
    HierVrnn<float> m(tiny_spec(), 78);
    train::CheckpointMeta meta;
    train::save_checkpoint(tmp.str("ck"), m.params(), nullptr, meta);

    auto size = std::filesystem::file_size(tmp.str("ck") + "/params.bin");
    std::filesystem::resize_file(tmp.str("ck") + "/params.bin", size / 2);
    CHECK_THROWS_AS(train::load_checkpoint(tmp.str("ck")), FormatError);

    CHECK_THROWS_AS(train::load_checkpoint(tmp.str("nonexistent")), FormatError);
}

TEST_CASE("checkpoint: cross-preset load fails naming the missing parameters") {
    TempDir tmp;
    HierarchySpec one = tiny_spec();
    one.levels = {{1, 128}};
    HierVrnn<float> m1(one, 79);
    train::CheckpointMeta meta;
    train::save_checkpoint(tmp.str("ck"), m1.params(), nullptr, meta);

    HierVrnn<float> m2(tiny_spec(), 80);  // two-level model
    auto ck = train::load_checkpoint(tmp.str("ck"));
    CHECK_THROWS_AS(ck.apply_params(m2.params()), FormatError);
    try {
        ck.apply_params(m2.params());
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("level1") != std::string::npos);
        CHECK(std::string(e.what()).find("missing") != std::string::npos);
    }
}

TEST_CASE("train: zero epochs returns the initialization checkpoint and no steps") {
    TempDir tmp;
    HierVrnn<float> m(tiny_spec(), 81);
    Tensor<float> before = forward_fingerprint(m, 6);
    TrainSchedule s;
    s.epochs = 0;
    s.batch_size = 2;
    auto seqs = tiny_sequences(4, 3);
    auto result = train::train(m, seqs, {}, s, tmp.str(), "{}");
    CHECK(result.steps.empty());
    CHECK(result.global_step == 0);
    auto ck = train::load_checkpoint(result.final_checkpoint);
    HierVrnn<float> m2(tiny_spec(), 999);
    ck.apply_params(m2.params());
    Tensor<float> after = forward_fingerprint(m2, 6);
    for (std::int64_t i = 0; i < before.numel(); ++i) REQUIRE(before[i] == after[i]);
}

TEST_CASE("train: loss decreases on a tiny run and logs stay consistent") {
    TempDir tmp;
    HierVrnn<float> m(tiny_spec(), 82);
    TrainSchedule s;
    s.epochs = 3;
    s.batch_size = 2;
    s.lr_start = 1e-3;
    s.lr_end = 1e-3;
    s.lr_warmup_epochs = 0;
    s.beta_warmup_epochs = 2;
    s.eval_subsample = 4;
    s.seed = 7;
    auto seqs = tiny_sequences(6, 3);
    auto result = train::train(m, seqs, tiny_sequences(2, 3), s, tmp.str(), "{}");
    REQUIRE(!result.steps.empty());
    // Internal consistency: total = recon + beta * sum(kl) within 1e-5 rel.
    for (const auto& r : result.steps) {
        double kl = 0;
        for (double k : r.kl_levels) kl += k;
        double want = r.recon + r.beta * kl;
        CHECK(std::abs(r.total - want) <= 1e-5 * std::max(1.0, std::abs(want)));
    }
    CHECK(std::filesystem::exists(tmp.str("train_log.csv")));
    CHECK(std::filesystem::exists(tmp.str("eval_log.csv")));
    CHECK(result.evals.size() == 3);
}

TEST_CASE("train: resume reproduces the uninterrupted trajectory bit-for-bit") {
    auto seqs = tiny_sequences(6, 3);
    auto test = tiny_sequences(2, 3);
    TrainSchedule s;
    s.batch_size = 2;
    s.lr_start = 1e-3;
    s.lr_end = 1e-3;
    s.lr_warmup_epochs = 0;
    s.checkpoint_every = 2;
    s.eval_subsample = 2;
    s.seed = 11;

    TempDir full_dir;
    HierVrnn<float> full(tiny_spec(), 83);
    s.epochs = 4;
    auto full_run = train::train(full, seqs, test, s, full_dir.str(), "{}");

    TempDir half_dir;
    HierVrnn<float> half(tiny_spec(), 83);
    s.epochs = 2;
    train::train(half, seqs, test, s, half_dir.str(), "{}");

    TempDir resume_dir;
    HierVrnn<float> resumed(tiny_spec(), 84);  // init overwritten by the checkpoint
    s.epochs = 4;
    auto resumed_run = train::train(resumed, seqs, test, s, resume_dir.str(), "{}",
                                    half_dir.str("checkpoint_final"));

    // Steps 2 epochs onward must match the uninterrupted run exactly.
    std::size_t offset = full_run.steps.size() - resumed_run.steps.size();
    REQUIRE(resumed_run.steps.size() > 0);
    for (std::size_t i = 0; i < resumed_run.steps.size(); ++i) {
        CHECK(resumed_run.steps[i].step == full_run.steps[offset + i].step);
        CHECK(resumed_run.steps[i].total == full_run.steps[offset + i].total);
    }
    for (auto* p : full.params().all()) {
        auto* q = resumed.params().find(p->name);
        REQUIRE(q != nullptr);
        for (std::int64_t i = 0; i < p->value.numel(); ++i) REQUIRE(p->value[i] == q->value[i]);
    }
}

TEST_CASE("train: a numeric error checkpoints the last good state and aborts") {
    TempDir tmp;
    HierVrnn<float> m(tiny_spec(), 85);
    // Poison one parameter so the first forward pass goes non-finite.
    auto* p = m.params().all()[0];
    p->value[0] = std::numeric_limits<float>::infinity();
    TrainSchedule s;
    s.epochs = 1;
    s.batch_size = 2;
    auto seqs = tiny_sequences(2, 3);
    CHECK_THROWS_AS(train::train(m, seqs, {}, s, tmp.str(), "{}"), NumericError);
    CHECK(std::filesystem::exists(tmp.str("checkpoint_lastgood/manifest.json")));
}
