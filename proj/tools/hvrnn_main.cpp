// Command-line laboratory for conditional hierarchical variational RNN video
// prediction: train / generate / evaluate / ablate / make-data.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hvrnn/config.hpp"
#include "hvrnn/data.hpp"
#include "hvrnn/evalproto.hpp"
#include "hvrnn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hvrnn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

std::string zero_pad(std::int64_t v, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%0*lld", width, static_cast<long long>(v));
    return buf;
}

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out;
    std::int64_t seed = -1;

    config::RunConfig load() const {
        return config::load_run_config(
            config_path, sets, out,
            seed >= 0 ? std::optional<std::uint64_t>(std::uint64_t(seed)) : std::nullopt);
    }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "run configuration (JSON)")->required();
    cmd->add_option("--set", args.sets, "dotted-path override, e.g. --set model.preset=1-8");
    cmd->add_option("--out", args.out, "output directory (overrides out_dir)");
    cmd->add_option("--seed", args.seed, "run seed (overrides seed)");
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw FormatError(path + ": cannot open for writing");
    f << text;
}

struct LoadedModel {
    config::RunConfig cfg;
    std::unique_ptr<model::HierVrnn<float>> net;
};

LoadedModel model_from_checkpoint(const std::string& ckpt_dir) {
    train::LoadedCheckpoint ck = train::load_checkpoint(ckpt_dir);
    if (ck.meta.model_json.empty() || ck.meta.model_json == "{}" || ck.meta.model_json == "null")
        throw FormatError(ckpt_dir + ": checkpoint carries no model configuration");
    LoadedModel lm;
    lm.cfg = config::parse_run_config(ck.meta.model_json);
    lm.net = std::make_unique<model::HierVrnn<float>>(lm.cfg.hierarchy(), 0);
    ck.apply_params(lm.net->params());
    return lm;
}

Tensor<float> context_block(const Tensor<float>& seq, int context_len) {
    // (S, C, H, W) -> (1, D, C, H, W)
    if (seq.dim(0) < context_len)
        throw ContractViolation("context source has fewer frames than the context length");
    std::int64_t C = seq.dim(1), H = seq.dim(2), W = seq.dim(3);
    Tensor<float> ctx({1, context_len, C, H, W});
    std::copy(seq.data(), seq.data() + std::int64_t(context_len) * C * H * W, ctx.data());
    return ctx;
}

int cmd_train(const CommonArgs& args, const std::string& resume) {
    config::RunConfig cfg = args.load();
    fs::create_directories(cfg.out_dir);
    write_text(cfg.out_dir + "/resolved_config.json", config::to_json(cfg) + "\n");

    data::DigitSet digits = config::load_digits(cfg);
    auto train_seqs = config::train_set(cfg, digits);
    auto test_seqs = config::test_set(cfg, digits);
    model::HierVrnn<float> net(cfg.hierarchy(), rng::derive(cfg.seed, 0x141fu));
    std::printf("model: preset %s, width %g, %lld parameters\n", cfg.preset.c_str(), cfg.width,
                static_cast<long long>(net.params().total_elements()));

    train::TrainHooks hooks;
    hooks.on_epoch = [](const train::EpochEval& ev) {
        std::printf("epoch %lld: train elbo %.4f, test elbo %.4f\n",
                    static_cast<long long>(ev.epoch), ev.train_elbo, ev.test_elbo);
        std::fflush(stdout);
    };
    auto result = train::train(net, train_seqs, test_seqs, cfg.schedule, cfg.out_dir,
                               config::to_json(cfg), resume, hooks);
    std::printf("done: %lld steps, final checkpoint at %s\n",
                static_cast<long long>(result.global_step), result.final_checkpoint.c_str());
    return kExitOk;
}

int cmd_generate(const std::string& ckpt, const std::string& context_dir, int test_index, int n,
                 int horizon, std::uint64_t seed, const std::string& out) {
    LoadedModel lm = model_from_checkpoint(ckpt);
    int D = lm.cfg.smmnist.context_len;
    Tensor<float> ctx_seq;
    if (!context_dir.empty()) {
        ctx_seq = data::load_sequence_dir(context_dir);
    } else {
        data::DigitSet digits = config::load_digits(lm.cfg);
        ctx_seq = data::generate_sequence(lm.cfg.smmnist, digits, data::test_seed(test_index));
    }
    if (ctx_seq.dim(2) != lm.cfg.smmnist.canvas)
        throw FormatError("context frames are " + std::to_string(ctx_seq.dim(2)) +
                          "px, model expects " + std::to_string(lm.cfg.smmnist.canvas));
    Tensor<float> ctx = context_block(ctx_seq, D);
    if (horizon <= 0) horizon = lm.cfg.smmnist.horizon;

    Tensor<float> samples = lm.net->generate(ctx, horizon, n, seed);
    fs::create_directories(out);
    std::int64_t H = samples.dim(4), W = samples.dim(5);
    for (int s = 0; s < n; ++s) {
        std::string dir = out + "/sample_" + zero_pad(s, 2);
        fs::create_directories(dir);
        Tensor<float> strip({H, std::int64_t(horizon) * W});
        for (int t = 0; t < horizon; ++t) {
            Tensor<float> frame({H, W});
            const float* src = samples.data() + ((std::int64_t(s) * horizon + t) * H * W);
            std::copy(src, src + H * W, frame.data());
            data::write_pgm(dir + "/frame_" + zero_pad(t, 3) + ".pgm", frame);
            for (std::int64_t y = 0; y < H; ++y)
                for (std::int64_t x = 0; x < W; ++x) strip[y * horizon * W + t * W + x] = frame[y * W + x];
        }
        data::write_pgm(out + "/strip_" + zero_pad(s, 2) + ".pgm", strip);
    }
    std::printf("wrote %d sample(s) x %d frame(s) to %s\n", n, horizon, out.c_str());
    return kExitOk;
}

int cmd_evaluate(const std::string& ckpt, const std::string& data_dir, int n_override,
                 const std::vector<std::string>& metric_override, std::int64_t seed_override,
                 const std::string& out) {
    LoadedModel lm = model_from_checkpoint(ckpt);
    eval::EvalConfig ecfg = lm.cfg.eval;
    if (n_override > 0) ecfg.n_samples = n_override;
    if (!metric_override.empty()) ecfg.metrics = metric_override;
    if (seed_override >= 0) ecfg.seed = std::uint64_t(seed_override);

    std::vector<Tensor<float>> test_seqs;
    if (!data_dir.empty()) {
        test_seqs = data::load_sequence_dataset(data_dir);
    } else {
        data::DigitSet digits = config::load_digits(lm.cfg);
        test_seqs = config::test_set(lm.cfg, digits);
    }

    fs::create_directories(out);
    auto result = eval::best_of_n(*lm.net, test_seqs, ecfg);
    eval::write_metrics_csv(out + "/metrics.csv", result);
    eval::write_summary_csv(out + "/summary.csv", result);
    write_text(out + "/summary.txt", eval::summary_text(result));
    auto kl = eval::kl_activity(*lm.net, test_seqs, lm.cfg.schedule.batch_size, ecfg.seed);
    eval::write_kl_csv(out + "/kl_report.csv", kl);
    std::printf("%s", eval::summary_text(result).c_str());
    std::printf("active latent channels: %d of %zu\n", kl.total_active(), kl.rows.size());
    return kExitOk;
}

struct SweepCell {
    std::string name;
    std::vector<std::string> sets;
};

std::vector<SweepCell> default_sweep() {
    return {
        {"dec1", {"model.preset=1", "model.decoder_recurrent_stages=1"}},
        {"dec3", {"model.preset=1", "model.decoder_recurrent_stages=3"}},
        {"p1", {"model.preset=1"}},
        {"p18-bw-dense", {"model.preset=1-8", "train.beta_warmup=true", "model.dense=true"}},
        {"p18-bw", {"model.preset=1-8", "train.beta_warmup=true", "model.dense=false"}},
        {"p18-dense", {"model.preset=1-8", "train.beta_warmup=false", "model.dense=true"}},
        {"p18-naive", {"model.preset=1-8", "train.beta_warmup=false", "model.dense=false"}},
    };
}

std::vector<SweepCell> load_sweep(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open sweep file: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path + " is not valid JSON: " + e.what());
    }
    if (!j.is_array()) throw ConfigError("sweep file must be a JSON array of cells");
    std::vector<SweepCell> cells;
    for (const auto& e : j) {
        SweepCell cell;
        cell.name = e.value("name", "");
        if (cell.name.empty()) throw ConfigError("sweep cell without a name");
        if (e.contains("set"))
            for (const auto& [k, v] : e["set"].items()) cell.sets.push_back(k + "=" + v.dump());
        cells.push_back(std::move(cell));
    }
    return cells;
}

int cmd_ablate(const CommonArgs& args, const std::string& sweep_path) {
    config::RunConfig base = args.load();
    std::vector<SweepCell> cells = sweep_path.empty() ? default_sweep() : load_sweep(sweep_path);
    fs::create_directories(base.out_dir);

    std::ofstream cmp(base.out_dir + "/comparison.csv");
    if (!cmp) throw FormatError(base.out_dir + "/comparison.csv: cannot open for writing");
    cmp << "variant,params,train_elbo,test_elbo\n";
    for (const auto& cell : cells) {
        config::RunConfig cfg = config::with_overrides(base, cell.sets);
        cfg.out_dir = base.out_dir + "/" + cell.name;
        fs::create_directories(cfg.out_dir);
        write_text(cfg.out_dir + "/resolved_config.json", config::to_json(cfg) + "\n");
        data::DigitSet digits = config::load_digits(cfg);
        auto train_seqs = config::train_set(cfg, digits);
        auto test_seqs = config::test_set(cfg, digits);
        model::HierVrnn<float> net(cfg.hierarchy(), rng::derive(cfg.seed, 0x141fu));
        std::printf("[%s] %lld parameters\n", cell.name.c_str(),
                    static_cast<long long>(net.params().total_elements()));
        std::fflush(stdout);
        auto result = train::train(net, train_seqs, test_seqs, cfg.schedule, cfg.out_dir,
                                   config::to_json(cfg));
        const train::EpochEval& last = result.evals.back();
        char line[256];
        std::snprintf(line, sizeof line, "%s,%lld,%.9g,%.9g", cell.name.c_str(),
                      static_cast<long long>(net.params().total_elements()), last.train_elbo,
                      last.test_elbo);
        cmp << line << "\n";
        cmp.flush();
        std::printf("[%s] train elbo %.4f, test elbo %.4f\n", cell.name.c_str(), last.train_elbo,
                    last.test_elbo);
        std::fflush(stdout);
    }
    return kExitOk;
}

int cmd_make_data(const CommonArgs& args) {
    config::RunConfig cfg = args.load();
    data::DigitSet digits = config::load_digits(cfg);
    auto seqs = config::test_set(cfg, digits);
    fs::create_directories(cfg.out_dir);
    data::write_sequence_dataset(cfg.out_dir, seqs);
    write_text(cfg.out_dir + "/dataset_config.json", config::to_json(cfg) + "\n");
    std::printf("wrote %zu sequences to %s\n", seqs.size(), cfg.out_dir.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical variational RNN video-prediction laboratory"};
    app.require_subcommand(1);

    CommonArgs train_args;
    std::string resume;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model from a run config");
    add_common(train_cmd, train_args);
    train_cmd->add_option("--resume", resume, "checkpoint directory to resume from");

    std::string gen_ckpt, gen_ctx_dir, gen_out;
    int gen_index = 0, gen_n = 1, gen_t = 0;
    std::uint64_t gen_seed = 0;
    CLI::App* gen_cmd = app.add_subcommand("generate", "sample rollouts from a checkpoint");
    gen_cmd->add_option("--checkpoint", gen_ckpt, "checkpoint directory")->required();
    gen_cmd->add_option("--context-dir", gen_ctx_dir, "PGM sequence directory for the context");
    gen_cmd->add_option("--test-index", gen_index, "held-out sequence index for the context");
    gen_cmd->add_option("--n", gen_n, "number of samples");
    gen_cmd->add_option("--t", gen_t, "rollout length (default: configured horizon)");
    gen_cmd->add_option("--seed", gen_seed, "sampling seed");
    gen_cmd->add_option("--out", gen_out, "output directory")->required();

    std::string eval_ckpt, eval_data_dir, eval_out;
    int eval_n = 0;
    std::int64_t eval_seed = -1;
    std::vector<std::string> eval_metrics;
    CLI::App* eval_cmd = app.add_subcommand("evaluate", "best-of-N metrics and KL activity");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
    eval_cmd->add_option("--data-dir", eval_data_dir, "PGM dataset root (default: seeded test set)");
    eval_cmd->add_option("--n", eval_n, "samples per sequence");
    eval_cmd->add_option("--metric", eval_metrics, "restrict to a metric (repeatable)");
    eval_cmd->add_option("--seed", eval_seed, "evaluation seed");
    eval_cmd->add_option("--out", eval_out, "output directory")->required();

    CommonArgs ablate_args;
    std::string sweep_path;
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "run a sweep and tabulate train/test elbo");
    add_common(ablate_cmd, ablate_args);
    ablate_cmd->add_option("--sweep", sweep_path, "sweep cells (JSON), default: capacity/hierarchy/warmup cells");

    CommonArgs data_args;
    CLI::App* data_cmd = app.add_subcommand("make-data", "materialize the seeded test set as PGM");
    add_common(data_cmd, data_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(train_args, resume);
        if (gen_cmd->parsed())
            return cmd_generate(gen_ckpt, gen_ctx_dir, gen_index, gen_n, gen_t, gen_seed, gen_out);
        if (eval_cmd->parsed())
            return cmd_evaluate(eval_ckpt, eval_data_dir, eval_n, eval_metrics, eval_seed, eval_out);
        if (ablate_cmd->parsed()) return cmd_ablate(ablate_args, sweep_path);
        if (data_cmd->parsed()) return cmd_make_data(data_args);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const ContractViolation& e) {
        std::fprintf(stderr, "invalid request: %s\n", e.what());
        return kExitConfig;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumeric;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kExitIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitIo;
    }
    return kExitConfig;
}
