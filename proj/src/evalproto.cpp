#include <cmath>
#include <cstdio>
#include <fstream>

#include "hvrnn/data.hpp"
#include "hvrnn/evalproto.hpp"

namespace hvrnn::eval {

namespace {

Tensor<float> frame3(const Tensor<float>& seq5, std::int64_t n, std::int64_t t,
                     std::int64_t n_samples, std::int64_t horizon) {
    // (B=1, N, T, C, H, W) -> (C, H, W)
    std::int64_t C = seq5.dim(3), H = seq5.dim(4), W = seq5.dim(5);
    Tensor<float> out({C, H, W});
    std::int64_t chw = C * H * W;
    const float* src = seq5.data() + ((n * horizon + t) * chw);
    (void)n_samples;
    std::copy(src, src + chw, out.data());
    return out;
}

double metric_value(const std::string& name, const Tensor<float>& a, const Tensor<float>& b) {
    if (name == "ssim") return ssim(a, b);
    if (name == "psnr") return psnr(a, b);
    return mse(a, b);
}

std::string fmtg(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.9g", v);
    return b;
}

}  // namespace

std::vector<FeatureMetric*>& feature_metrics() {
    static std::vector<FeatureMetric*> registry;
    return registry;
}

SequenceScore score_sequence(const Tensor<float>& samples, const std::vector<Tensor<float>>& gt,
                             const std::string& metric, int n_samples, int sequence_id) {
    std::int64_t T = static_cast<std::int64_t>(gt.size());
    bool higher = metric_higher_better(metric);
    SequenceScore best;
    best.sequence_id = sequence_id;
    best.metric = metric;
    bool first = true;
    for (int n = 0; n < n_samples; ++n) {
        std::vector<double> curve(static_cast<std::size_t>(T));
        double avg = 0;
        for (std::int64_t t = 0; t < T; ++t) {
            curve[std::size_t(t)] =
                metric_value(metric, frame3(samples, n, t, n_samples, T), gt[std::size_t(t)]);
            avg += curve[std::size_t(t)];
        }
        avg /= double(T);
        bool better = first || (higher ? avg > best.best_score : avg < best.best_score);
        if (better) {
            best.best_sample = n;
            best.best_score = avg;
            best.per_t = std::move(curve);
            first = false;
        }
    }
    return best;
}

BestOfNResult best_of_n(model::HierVrnn<float>& m, const std::vector<Tensor<float>>& test_seqs,
                        const EvalConfig& cfg) {
    cfg.validate();
    if (test_seqs.empty()) throw ContractViolation("best_of_n: empty test set");
    int D = m.spec().context_len;
    BestOfNResult result;

    // Grouped metric-major for the CSV layout.
    std::vector<std::vector<SequenceScore>> per_metric{cfg.metrics.size()};
    for (std::size_t si = 0; si < test_seqs.size(); ++si) {
        const Tensor<float>& seq = test_seqs[si];
        if (seq.rank() != 4 || seq.dim(0) <= D)
            throw ContractViolation("best_of_n: sequence too short for the context length");
        std::int64_t T = seq.dim(0) - D;
        result.horizon = int(T);
        std::int64_t C = seq.dim(1), H = seq.dim(2), W = seq.dim(3);
        Tensor<float> ctx({1, D, C, H, W});
        std::copy(seq.data(), seq.data() + std::int64_t(D) * C * H * W, ctx.data());
        Tensor<float> samples =
            m.generate(ctx, int(T), cfg.n_samples, rng::derive(cfg.seed, std::uint64_t(si)));

        std::vector<Tensor<float>> gt;
        for (std::int64_t t = 0; t < T; ++t) {
            Tensor<float> f({C, H, W});
            std::copy(seq.data() + (D + t) * C * H * W, seq.data() + (D + t + 1) * C * H * W,
                      f.data());
            gt.push_back(std::move(f));
        }

        for (std::size_t mi = 0; mi < cfg.metrics.size(); ++mi)
            per_metric[mi].push_back(
                score_sequence(samples, gt, cfg.metrics[mi], cfg.n_samples, int(si)));
    }

    for (std::size_t mi = 0; mi < cfg.metrics.size(); ++mi) {
        double sum = 0, sumsq = 0;
        for (const auto& s : per_metric[mi]) {
            sum += s.best_score;
            sumsq += s.best_score * s.best_score;
        }
        double n = double(per_metric[mi].size());
        double mean = sum / n;
        double var = std::max(0.0, sumsq / n - mean * mean);
        result.aggregates.push_back({cfg.metrics[mi], mean, std::sqrt(var)});
        for (auto& s : per_metric[mi]) result.rows.push_back(std::move(s));
    }
    return result;
}

KlActivityReport kl_activity(model::HierVrnn<float>& m, const std::vector<Tensor<float>>& test_seqs,
                             int batch_size, std::uint64_t seed, bool tie_prior) {
    if (m.num_levels() < 1) throw ContractViolation("kl_activity: model has no latent levels");
    if (test_seqs.empty()) throw ContractViolation("kl_activity: empty test set");
    int D = m.spec().context_len;
    int L = m.num_levels();
    std::vector<std::vector<double>> sums(static_cast<std::size_t>(L));
    std::vector<std::vector<std::int64_t>> counts(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) {
        sums[std::size_t(l)].assign(std::size_t(m.spec().level_channels(std::size_t(l))), 0.0);
        counts[std::size_t(l)].assign(std::size_t(m.spec().level_channels(std::size_t(l))), 0);
    }

    for (std::size_t start = 0, chunk = 0; start < test_seqs.size();
         start += std::size_t(batch_size), ++chunk) {
        std::vector<const Tensor<float>*> ptrs;
        for (std::size_t i = start; i < std::min(test_seqs.size(), start + std::size_t(batch_size)); ++i)
            ptrs.push_back(&test_seqs[i]);
        SequenceBatch<float> batch = data::assemble_batch(ptrs, D);
        diff::Graph<float> g;
        model::SeededNoise<float> noise(rng::derive(seed, chunk));
        auto r = m.elbo(g, batch, {1.0f, tie_prior}, noise);
        for (const auto& row : r.kl_elems)
            for (int l = 0; l < L; ++l) {
                const Tensor<float>& kle = row[std::size_t(l)].val();  // (B, zch, res, res)
                std::int64_t B = kle.dim(0), ch = kle.dim(1), hw = kle.dim(2) * kle.dim(3);
                for (std::int64_t b = 0; b < B; ++b)
                    for (std::int64_t c = 0; c < ch; ++c) {
                        const float* p = kle.data() + (b * ch + c) * hw;
                        double s = 0;
                        for (std::int64_t i = 0; i < hw; ++i) s += p[i];
                        sums[std::size_t(l)][std::size_t(c)] += s;
                        counts[std::size_t(l)][std::size_t(c)] += hw;
                    }
            }
    }

    KlActivityReport report;
    report.active_per_level.assign(std::size_t(L), 0);
    report.maximal_per_level.assign(std::size_t(L), 0);
    for (int l = 0; l < L; ++l)
        for (std::size_t c = 0; c < sums[std::size_t(l)].size(); ++c) {
            KlActivityReport::Row row;
            row.level = l;
            row.channel = int(c);
            row.mean_kl = sums[std::size_t(l)][c] / double(counts[std::size_t(l)][c]);
            classify_kl(row);
            if (row.active) ++report.active_per_level[std::size_t(l)];
            if (row.maximal) ++report.maximal_per_level[std::size_t(l)];
            report.rows.push_back(row);
        }
    return report;
}

void write_metrics_csv(const std::string& path, const BestOfNResult& r) {
    std::ofstream f(path);
    if (!f) throw FormatError(path + ": cannot open for writing");
    f << "sequence_id,metric,best_sample_index";
    for (int t = 1; t <= r.horizon; ++t) f << ",t" << t;
    f << "\n";
    for (const auto& s : r.rows) {
        f << s.sequence_id << "," << s.metric << "," << s.best_sample;
        for (double v : s.per_t) f << "," << fmtg(v);
        f << "\n";
    }
}

void write_summary_csv(const std::string& path, const BestOfNResult& r) {
    std::ofstream f(path);
    if (!f) throw FormatError(path + ": cannot open for writing");
    f << "metric,mean,std\n";
    for (const auto& a : r.aggregates) f << a.metric << "," << fmtg(a.mean) << "," << fmtg(a.stddev) << "\n";
}

std::string summary_text(const BestOfNResult& r) {
    std::string out;
    for (const auto& a : r.aggregates)
        out += a.metric + ": " + fmtg(a.mean) + " +/- " + fmtg(a.stddev) + "\n";
    return out;
}

void write_kl_csv(const std::string& path, const KlActivityReport& r) {
    std::ofstream f(path);
    if (!f) throw FormatError(path + ": cannot open for writing");
    f << "level,channel,mean_kl,active,maximal\n";
    for (const auto& row : r.rows)
        f << row.level << "," << row.channel << "," << fmtg(row.mean_kl) << "," << int(row.active)
          << "," << int(row.maximal) << "\n";
}

}  // namespace hvrnn::eval
