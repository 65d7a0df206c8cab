#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "hvrnn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace hvrnn::train {

namespace {

constexpr std::uint64_t kShuffleSalt = 0x51abu;
constexpr std::uint64_t kNoiseSalt = 0x401eu;
constexpr std::uint64_t kEvalSalt = 0xe7a1u;

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& header) : f_(path) {
        if (!f_) throw FormatError(path + ": cannot open for writing");
        f_ << header << "\n";
    }
    void line(const std::string& s) {
        f_ << s << "\n";
        f_.flush();
    }

private:
    std::ofstream f_;
};

std::string fmtg(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.9g", v);
    return b;
}

std::string checkpoint_name(std::int64_t epoch) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "checkpoint_epoch_%04lld", static_cast<long long>(epoch));
    return buf;
}

}  // namespace

EvalScore evaluate_elbo(model::HierVrnn<float>& m, const std::vector<Tensor<float>>& seqs,
                        int context_len, int batch_size, std::uint64_t noise_seed) {
    if (seqs.empty()) throw ContractViolation("evaluate_elbo: empty sequence set");
    double loss = 0, recon = 0, kl = 0;
    std::int64_t total = 0;
    for (std::size_t start = 0, chunk = 0; start < seqs.size(); start += std::size_t(batch_size), ++chunk) {
        std::vector<const Tensor<float>*> ptrs;
        for (std::size_t i = start; i < std::min(seqs.size(), start + std::size_t(batch_size)); ++i)
            ptrs.push_back(&seqs[i]);
        SequenceBatch<float> batch = data::assemble_batch(ptrs, context_len);
        diff::Graph<float> g;
        model::SeededNoise<float> noise(rng::derive(noise_seed, chunk));
        auto r = m.elbo(g, batch, {1.0f, false}, noise);
        double b = double(batch.batch());
        loss += double(r.loss.val()[0]) * b;
        recon += double(r.recon_total.val()[0]) * b;
        kl += double(r.kl_total.val()[0]) * b;
        total += batch.batch();
    }
    return {loss / double(total), recon / double(total), kl / double(total)};
}

TrainResult train(model::HierVrnn<float>& m, const std::vector<Tensor<float>>& train_seqs,
                  const std::vector<Tensor<float>>& test_seqs, const TrainSchedule& schedule,
                  const std::string& out_dir, const std::string& model_json,
                  const std::string& resume_from, const TrainHooks& hooks) {
    schedule.validate();
    if (train_seqs.empty()) throw ContractViolation("train: empty training set");
    fs::create_directories(out_dir);

    int context_len = m.spec().context_len;
    int levels = m.num_levels();
    data::BatchStream stream(train_seqs, context_len, schedule.batch_size,
                             rng::derive(schedule.seed, kShuffleSalt));
    std::int64_t steps_per_epoch = stream.batches_per_epoch();

    AdamState<float> adam;
    adam.ensure(m.params());
    std::int64_t global_step = 0;
    std::int64_t start_epoch = 0;
    if (!resume_from.empty()) {
        LoadedCheckpoint ck = load_checkpoint(resume_from);
        ck.apply_params(m.params());
        ck.apply_adam(adam, m.params());
        json rng = json::parse(ck.meta.rng_json.empty() ? "{}" : ck.meta.rng_json);
        global_step = rng.value("global_step", std::int64_t(0));
        start_epoch = rng.value("next_epoch", std::int64_t(0));
        adam.t = rng.value("adam_t", std::int64_t(0));
    }

    std::string kl_cols;
    for (int l = 0; l < levels; ++l) kl_cols += ",kl_level_" + std::to_string(l);
    CsvWriter step_log(out_dir + "/train_log.csv", "step,epoch,lr,beta,recon" + kl_cols + ",total");
    CsvWriter eval_log(out_dir + "/eval_log.csv", "epoch,split,elbo,recon,kl");

    auto meta_now = [&](std::int64_t epoch_next) {
        CheckpointMeta meta;
        meta.step = global_step;
        meta.epoch = epoch_next;
        meta.schedule_json = schedule_to_json(schedule);
        meta.model_json = model_json;
        json rng;
        rng["seed"] = schedule.seed;
        rng["global_step"] = global_step;
        rng["next_epoch"] = epoch_next;
        rng["adam_t"] = adam.t;
        meta.rng_json = rng.dump();
        return meta;
    };
    auto save_lastgood = [&](std::int64_t epoch) {
        save_checkpoint(out_dir + "/checkpoint_lastgood", m.params(), &adam, meta_now(epoch));
    };

    TrainResult result;
    for (std::int64_t epoch = start_epoch; epoch < schedule.epochs; ++epoch) {
        double beta = beta_at(epoch, schedule);
        stream.start_epoch(epoch);
        while (auto batch = stream.next()) {
            double lr = lr_at(global_step, steps_per_epoch, schedule);
            diff::Graph<float> g;
            model::SeededNoise<float> noise(
                rng::derive(schedule.seed, kNoiseSalt, std::uint64_t(global_step)));
            model::ElboResult<float> r;
            try {
                r = m.elbo(g, *batch, {float(beta), false}, noise);
                m.params().zero_grads();
                g.backward(r.loss);
            } catch (const NumericError&) {
                save_lastgood(epoch);
                throw;
            }
            StepRecord rec;
            rec.grad_norm = clip_gradients(m.params(), schedule.grad_clip);
            rec.clipped = rec.grad_norm > schedule.grad_clip;
            try {
                adam_step(m.params(), adam, lr, schedule);
            } catch (const NumericError&) {
                save_lastgood(epoch);
                throw;
            }
            if (rec.clipped)
                std::printf("step %lld: gradient norm %.2f clipped to %.2f\n",
                            static_cast<long long>(global_step), rec.grad_norm, schedule.grad_clip);
            rec.step = global_step;
            rec.epoch = epoch;
            rec.lr = lr;
            rec.beta = beta;
            rec.recon = double(r.recon_total.val()[0]);
            rec.total = double(r.loss.val()[0]);
            rec.kl_levels.assign(std::size_t(levels), 0.0);
            for (const auto& row : r.kl_tl)
                for (int l = 0; l < levels; ++l) rec.kl_levels[std::size_t(l)] += double(row[std::size_t(l)].val()[0]);
            std::string row = std::to_string(rec.step) + "," + std::to_string(rec.epoch) + "," +
                              fmtg(rec.lr) + "," + fmtg(rec.beta) + "," + fmtg(rec.recon);
            for (double k : rec.kl_levels) row += "," + fmtg(k);
            row += "," + fmtg(rec.total);
            step_log.line(row);
            if (hooks.on_step) hooks.on_step(rec);
            result.steps.push_back(std::move(rec));
            ++global_step;
        }

        EpochEval ev;
        ev.epoch = epoch;
        std::vector<Tensor<float>> sub(train_seqs.begin(),
                                       train_seqs.begin() +
                                           std::min<std::size_t>(train_seqs.size(),
                                                                 std::size_t(schedule.eval_subsample)));
        EvalScore tr = evaluate_elbo(m, sub, context_len, schedule.batch_size,
                                     rng::derive(schedule.seed, kEvalSalt, 0));
        ev.train_elbo = tr.elbo;
        ev.train_recon = tr.recon;
        ev.train_kl = tr.kl;
        if (!test_seqs.empty()) {
            EvalScore te = evaluate_elbo(m, test_seqs, context_len, schedule.batch_size,
                                         rng::derive(schedule.seed, kEvalSalt, 1));
            ev.test_elbo = te.elbo;
            ev.test_recon = te.recon;
            ev.test_kl = te.kl;
            eval_log.line(std::to_string(epoch) + ",test," + fmtg(ev.test_elbo) + "," +
                          fmtg(ev.test_recon) + "," + fmtg(ev.test_kl));
        }
        eval_log.line(std::to_string(epoch) + ",train," + fmtg(ev.train_elbo) + "," +
                      fmtg(ev.train_recon) + "," + fmtg(ev.train_kl));
        if (hooks.on_epoch) hooks.on_epoch(ev);
        result.evals.push_back(ev);

        if (schedule.checkpoint_every > 0 && (epoch + 1) % schedule.checkpoint_every == 0 &&
            epoch + 1 < schedule.epochs)
            save_checkpoint(out_dir + "/" + checkpoint_name(epoch + 1), m.params(), &adam,
                            meta_now(epoch + 1));
    }

    result.final_checkpoint = out_dir + "/checkpoint_final";
    save_checkpoint(result.final_checkpoint, m.params(), &adam,
                    meta_now(std::max<std::int64_t>(start_epoch, schedule.epochs)));
    result.global_step = global_step;
    return result;
}

}  // namespace hvrnn::train
