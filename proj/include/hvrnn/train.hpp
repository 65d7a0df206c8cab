#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hvrnn/data.hpp"
#include "hvrnn/model.hpp"

namespace hvrnn::train {

using diff::ParamStore;
using diff::Parameter;

struct TrainSchedule {
    double lr_start = 2e-5;
    double lr_end = 1.6e-4;
    int lr_warmup_epochs = 5;
    double beta_start = 0.0;
    double beta_end = 1.0;
    int beta_warmup_epochs = 10;
    bool beta_warmup = true;  // false = naive mode: beta_end from the start
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.9;
    double adam_eps = 1e-8;
    double weight_decay = 1e-4;
    double grad_clip = 100.0;
    int batch_size = 16;
    int epochs = 1;
    int checkpoint_every = 10;  // epochs
    int eval_subsample = 64;    // training sequences scored per epoch
    std::uint64_t seed = 1;

    void validate() const {
        if (!(lr_start > 0) || !(lr_end > 0) || lr_start > lr_end)
            throw ContractViolation("TrainSchedule: need 0 < lr_start <= lr_end");
        if (lr_warmup_epochs < 0 || beta_warmup_epochs < 0)
            throw ContractViolation("TrainSchedule: warmup lengths must be >= 0");
        if (beta_start > beta_end || beta_start < 0)
            throw ContractViolation("TrainSchedule: need 0 <= beta_start <= beta_end");
        if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
            throw ContractViolation("TrainSchedule: Adam betas must be in [0, 1)");
        if (adam_eps <= 0) throw ContractViolation("TrainSchedule: adam_eps must be > 0");
        if (weight_decay < 0) throw ContractViolation("TrainSchedule: weight_decay must be >= 0");
        if (batch_size < 1) throw ContractViolation("TrainSchedule: batch_size must be >= 1");
        if (epochs < 0) throw ContractViolation("TrainSchedule: epochs must be >= 0");
        if (grad_clip <= 0) throw ContractViolation("TrainSchedule: grad_clip must be > 0");
    }
};

// Linear warmup from lr_start to lr_end over lr_warmup_epochs, per step;
// constant afterwards.
inline double lr_at(std::int64_t step, std::int64_t steps_per_epoch, const TrainSchedule& s) {
    if (step < 0) throw ContractViolation("lr_at: step must be >= 0");
    std::int64_t warmup = std::int64_t(s.lr_warmup_epochs) * steps_per_epoch;
    if (warmup <= 0 || step >= warmup) return s.lr_end;
    return s.lr_start + (s.lr_end - s.lr_start) * double(step) / double(warmup);
}

// Linear warmup of the KL weight over beta_warmup_epochs; in naive mode the
// weight is beta_end from epoch 0.
inline double beta_at(std::int64_t epoch, const TrainSchedule& s) {
    if (epoch < 0) throw ContractViolation("beta_at: epoch must be >= 0");
    if (!s.beta_warmup) return s.beta_end;
    if (s.beta_warmup_epochs <= 0 || epoch >= s.beta_warmup_epochs) return s.beta_end;
    return s.beta_start + (s.beta_end - s.beta_start) * double(epoch) / double(s.beta_warmup_epochs);
}

// Adam first/second moments, keyed like the parameters they belong to.
template <class T>
struct AdamState {
    std::map<std::string, Tensor<T>> m, v;
    std::int64_t t = 0;

    void ensure(ParamStore<T>& params) {
        for (auto* p : params.all()) {
            if (!m.count(p->name)) m.emplace(p->name, Tensor<T>(p->value.shape()));
            if (!v.count(p->name)) v.emplace(p->name, Tensor<T>(p->value.shape()));
        }
    }
};

// One bias-corrected Adam step with decoupled weight decay applied before
// the update. Throws NumericError on any non-finite gradient, leaving the
// parameters and optimizer state untouched.
template <class T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr, const TrainSchedule& s) {
    state.ensure(params);
    for (auto* p : params.all())
        if (!p->grad.all_finite())
            throw NumericError("adam_step: non-finite gradient in " + p->name + "; step aborted");
    state.t += 1;
    T bc1 = T(1) - static_cast<T>(std::pow(s.adam_beta1, double(state.t)));
    T bc2 = T(1) - static_cast<T>(std::pow(s.adam_beta2, double(state.t)));
    for (auto* p : params.all()) {
        kern::adam_update(p->value.data(), state.m.at(p->name).data(), state.v.at(p->name).data(),
                          p->grad.data(), static_cast<std::size_t>(p->value.numel()),
                          static_cast<T>(lr), static_cast<T>(s.adam_beta1),
                          static_cast<T>(s.adam_beta2), static_cast<T>(s.adam_eps), bc1, bc2,
                          static_cast<T>(s.weight_decay));
    }
}

// Global-norm gradient clipping; returns the pre-clip norm.
template <class T>
double clip_gradients(ParamStore<T>& params, double max_norm) {
    double sq = 0;
    for (auto* p : params.all())
        sq += double(kern::sqsum(p->grad.data(), static_cast<std::size_t>(p->grad.numel())));
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        T scale = static_cast<T>(max_norm / norm);
        for (auto* p : params.all())
            kern::affine(p->grad.data(), scale, T(0), p->grad.data(),
                         static_cast<std::size_t>(p->grad.numel()));
    }
    return norm;
}

struct StepRecord {
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    double lr = 0, beta = 0, recon = 0, total = 0;
    std::vector<double> kl_levels;
    double grad_norm = 0;
    bool clipped = false;
};

struct EpochEval {
    std::int64_t epoch = 0;
    double train_elbo = 0, train_recon = 0, train_kl = 0;
    double test_elbo = 0, test_recon = 0, test_kl = 0;
};

// ---- checkpointing ----
// On disk a checkpoint is a directory holding manifest.json plus params.bin,
// a single little-endian float32 blob with the tensors concatenated in
// manifest order (parameters, then Adam moments). The manifest records the
// format version, the tensor table (name/shape/dtype/offset/bytes), schedule
// and model configuration, step/epoch, RNG state, and an fnv1a64 checksum of
// the blob.

struct CheckpointMeta {
    int version = 1;
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    std::string schedule_json;   // serialized TrainSchedule
    std::string model_json;      // serialized model config (resolved)
    std::string rng_json;        // seeds/counters needed for resume
};

void save_checkpoint(const std::string& dir, const ParamStore<float>& params,
                     const AdamState<float>* adam, const CheckpointMeta& meta);

struct LoadedCheckpoint {
    CheckpointMeta meta;
    std::map<std::string, Tensor<float>> tensors;  // parameters + "adam.m."/"adam.v." entries

    // Copies parameter tensors into the store; every model parameter must be
    // present with a matching shape (missing names are listed in the error).
    void apply_params(ParamStore<float>& params) const;
    void apply_adam(AdamState<float>& adam, ParamStore<float>& params) const;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

std::uint64_t fnv1a64(const unsigned char* data, std::size_t n);

// ---- the training loop ----

struct TrainResult {
    std::vector<StepRecord> steps;
    std::vector<EpochEval> evals;
    std::string final_checkpoint;
    std::int64_t global_step = 0;
};

struct TrainHooks {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const EpochEval&)> on_epoch;
};

// Serialization helpers shared with the CLI.
std::string schedule_to_json(const TrainSchedule& s);
TrainSchedule schedule_from_json(const std::string& j);

// Teacher-forced training over a fixed train set with per-epoch held-out
// evaluation (reported at beta = 1 regardless of the anneal). Sequences are
// (D+T, C, H, W); out_dir receives train_log.csv, eval_log.csv and
// checkpoint directories. On a numeric error the last good state is saved
// to <out_dir>/checkpoint_lastgood before the error propagates.
TrainResult train(model::HierVrnn<float>& m, const std::vector<Tensor<float>>& train_seqs,
                  const std::vector<Tensor<float>>& test_seqs, const TrainSchedule& schedule,
                  const std::string& out_dir, const std::string& model_json,
                  const std::string& resume_from = "", const TrainHooks& hooks = {});

// Average ELBO components over a sequence set at beta = 1 (posterior-mode
// teacher forcing with seeded eval noise).
struct EvalScore {
    double elbo = 0, recon = 0, kl = 0;
};
EvalScore evaluate_elbo(model::HierVrnn<float>& m, const std::vector<Tensor<float>>& seqs,
                        int context_len, int batch_size, std::uint64_t noise_seed);

}  // namespace hvrnn::train
