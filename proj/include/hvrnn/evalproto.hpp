#pragma once

#include <string>
#include <vector>

#include "hvrnn/metrics.hpp"
#include "hvrnn/model.hpp"

namespace hvrnn::eval {

struct EvalConfig {
    int n_samples = 20;  // full-scale protocols use 100
    std::vector<std::string> metrics = {"ssim", "psnr", "mse"};
    bool per_timestep = true;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_samples < 1) throw ContractViolation("EvalConfig: n_samples must be >= 1");
        if (metrics.empty()) throw ContractViolation("EvalConfig: need at least one metric");
        for (const auto& m : metrics)
            if (m != "ssim" && m != "psnr" && m != "mse")
                throw ContractViolation("EvalConfig: unknown metric '" + m + "'");
    }
};

inline bool metric_higher_better(const std::string& m) { return m != "mse"; }

// Seam for learned-feature sequence metrics (FVD/LPIPS-style scores that
// need a pretrained feature network). Implementations score a generated
// sequence against ground truth as (T, C, H, W) stacks; none ship with this
// repository.
struct FeatureMetric {
    virtual ~FeatureMetric() = default;
    virtual std::string name() const = 0;
    virtual bool higher_better() const = 0;
    virtual double score(const Tensor<float>& generated, const Tensor<float>& ground_truth) = 0;
};

// Registry consulted by evaluation drivers; empty unless a plug-in registers.
std::vector<FeatureMetric*>& feature_metrics();

struct SequenceScore {
    int sequence_id = 0;
    std::string metric;
    int best_sample = 0;
    double best_score = 0;           // sequence-averaged score of the best sample
    std::vector<double> per_t;       // the best sample's per-timestep curve
};

struct MetricAggregate {
    std::string metric;
    double mean = 0;
    double stddev = 0;  // population standard deviation over sequences
};

struct BestOfNResult {
    std::vector<SequenceScore> rows;           // metric-major, then sequence order
    std::vector<MetricAggregate> aggregates;
    int horizon = 0;
};

// Best-of-N protocol: per test sequence, generate N prior samples from the
// context, score each sample's sequence-averaged metric against the ground
// truth, and keep the best (ties resolved to the lowest sample index). The
// best sample is selected per metric independently. Per-sequence generation
// seeds derive from (seed, sequence index), so results are order-free and
// sample sets are nested across increasing N.
BestOfNResult best_of_n(model::HierVrnn<float>& m, const std::vector<Tensor<float>>& test_seqs,
                        const EvalConfig& cfg);

// Scoring/selection core of the protocol; samples is (1, N, T, C, H, W) as
// produced by generate(), gt holds the T ground-truth frames.
SequenceScore score_sequence(const Tensor<float>& samples, const std::vector<Tensor<float>>& gt,
                             const std::string& metric, int n_samples, int sequence_id);

struct KlActivityReport {
    struct Row {
        int level = 0;
        int channel = 0;
        double mean_kl = 0;  // nats per latent unit: averaged over batch, time, space
        bool active = false;     // mean_kl > 0.01
        bool maximal = false;    // mean_kl > 0.15
    };
    std::vector<Row> rows;  // level-major, then channel
    std::vector<int> active_per_level;
    std::vector<int> maximal_per_level;

    int total_active() const {
        int n = 0;
        for (int a : active_per_level) n += a;
        return n;
    }
};

// Activity thresholds: a channel is active above 0.01 nats and maximally
// activated above 0.15.
inline void classify_kl(KlActivityReport::Row& row) {
    row.active = row.mean_kl > 0.01;
    row.maximal = row.mean_kl > 0.15;
}

// Posterior-mode KL activity per latent channel over a test set, with the
// 0.01 active and 0.15 maximal thresholds. tie_prior forces the prior to
// equal the posterior (diagnostic: everything inactive).
KlActivityReport kl_activity(model::HierVrnn<float>& m, const std::vector<Tensor<float>>& test_seqs,
                             int batch_size, std::uint64_t seed, bool tie_prior = false);

// CSV emission (schemas documented in the README).
void write_metrics_csv(const std::string& path, const BestOfNResult& r);
void write_summary_csv(const std::string& path, const BestOfNResult& r);
std::string summary_text(const BestOfNResult& r);
void write_kl_csv(const std::string& path, const KlActivityReport& r);

}  // namespace hvrnn::eval
