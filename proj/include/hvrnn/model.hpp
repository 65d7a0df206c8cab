#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hvrnn/dists.hpp"
#include "hvrnn/nn.hpp"
#include "hvrnn/rng.hpp"
#include "hvrnn/sequence.hpp"

namespace hvrnn::model {

using diff::Graph;
using diff::ParamStore;
using diff::Var;
using dists::GaussianParams;
using nn::ConvLstmState;

// One stochastic level of the ladder: spatial resolution and full-scale
// latent channel count (scaled by the width multiplier at build time).
struct LevelSpec {
    int resolution = 1;
    int channels = 128;
};

struct HierarchySpec {
    std::vector<LevelSpec> levels;  // coarse -> fine
    double width_multiplier = 1.0;
    int context_len = 5;
    int horizon = 10;
    int frame_size = 64;
    int frame_channels = 1;
    int decoder_recurrent_stages = -1;  // -1 = ConvLSTM at every decoder stage
    bool dense = true;                  // cross-level sample connectivity

    int scaled(int full_channels) const {
        int c = static_cast<int>(std::llround(full_channels * width_multiplier));
        return c < 1 ? 1 : c;
    }

    int num_encoder_stages() const {
        int n = 0;
        for (int r = frame_size; r >= 2; r /= 2) ++n;
        return n;
    }

    // Encoder feature channels at a pyramid resolution (already scaled).
    // Channels double as the resolution halves, saturating at 512; the 1x1
    // entry is the pooled copy of the coarsest map.
    int encoder_channels(int res) const {
        if (res == 1) return encoder_channels(2);
        int k = 0;
        for (int r = frame_size; r > res; r /= 2) ++k;
        int full = 64;
        for (int i = 0; i < k && full < 512; ++i) full *= 2;
        return scaled(full);
    }

    int level_channels(std::size_t l) const { return scaled(levels[l].channels); }

    bool has_level_at(int res) const {
        for (const auto& lv : levels)
            if (lv.resolution == res) return true;
        return false;
    }

    static HierarchySpec preset(const std::string& name) {
        HierarchySpec s;
        if (name == "1")
            s.levels = {{1, 128}};
        else if (name == "1-8")
            s.levels = {{1, 128}, {8, 512}};
        else if (name == "1-8-32")
            s.levels = {{1, 128}, {8, 512}, {32, 512}};
        else if (name == "1-8-16-32")
            s.levels = {{1, 128}, {8, 512}, {16, 512}, {32, 512}};
        else
            throw ContractViolation("unknown hierarchy preset: " + name);
        return s;
    }

    void validate() const {
        if (levels.empty()) throw ContractViolation("HierarchySpec: at least one level required");
        if (!(width_multiplier > 0.0) || width_multiplier > 1.0)
            throw ContractViolation("HierarchySpec: width_multiplier must be in (0, 1]");
        if (context_len < 1 || horizon < 1)
            throw ContractViolation("HierarchySpec: context_len and horizon must be >= 1");
        if (frame_size < 8 || (frame_size & (frame_size - 1)) != 0)
            throw ContractViolation("HierarchySpec: frame_size must be a power of two >= 8");
        if (frame_channels < 1) throw ContractViolation("HierarchySpec: frame_channels must be >= 1");
        int prev = 0;
        for (const auto& lv : levels) {
            if (lv.resolution <= prev)
                throw ContractViolation("HierarchySpec: level resolutions must strictly increase");
            prev = lv.resolution;
            bool in_pyramid = lv.resolution == 1;
            for (int r = frame_size; r >= 2; r /= 2)
                if (r == lv.resolution) in_pyramid = true;
            if (!in_pyramid)
                throw ContractViolation("HierarchySpec: level resolution " +
                                        std::to_string(lv.resolution) +
                                        " not present in the encoder pyramid");
            if (lv.channels < 1) throw ContractViolation("HierarchySpec: level channels must be >= 1");
        }
        int n = num_encoder_stages();
        if (decoder_recurrent_stages < -1 || decoder_recurrent_stages > n)
            throw ContractViolation("HierarchySpec: decoder_recurrent_stages out of range");
    }
};

// Per-frame feature maps, keyed by resolution (frame_size down to 2, plus
// the pooled 1x1 entry).
template <class T>
struct Pyramid {
    std::map<int, Var<T>> feats;

    const Var<T>& at(int res) const {
        auto it = feats.find(res);
        if (it == feats.end())
            throw ContractViolation("pyramid: no feature map at resolution " + std::to_string(res));
        return it->second;
    }
};

enum class LatentMode { prior, posterior };

// Per-timestep latent draw: one sample per level, with the distribution
// parameters of whichever networks produced it.
template <class T>
struct LatentSample {
    std::vector<Var<T>> z;
    std::vector<LatentMode> source;                 // per-level provenance
    std::vector<GaussianParams<T>> prior_params;    // filled in prior mode / during elbo
    std::vector<GaussianParams<T>> posterior_params;

    LatentMode mode() const {
        if (source.empty()) throw ContractViolation("LatentSample: empty");
        for (auto m : source)
            if (m != source[0]) throw ContractViolation("LatentSample: mode-mixed latents");
        return source[0];
    }
};

template <class T>
struct ModelState {
    std::vector<ConvLstmState<T>> prior;
    std::vector<ConvLstmState<T>> posterior;
    std::vector<ConvLstmState<T>> decoder;  // one per recurrent decoder stage
};

// Injected noise for reparameterized sampling; implementations must be pure
// in (t, level) so call order never matters.
template <class T>
struct NoiseProvider {
    virtual ~NoiseProvider() = default;
    virtual Tensor<T> noise(int t, int level, const Shape& shape) = 0;
};

template <class T>
struct SeededNoise final : NoiseProvider<T> {
    std::uint64_t key;
    explicit SeededNoise(std::uint64_t k) : key(k) {}
    Tensor<T> noise(int t, int level, const Shape& shape) override {
        rng::Counter c(rng::derive(key, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(level)));
        Tensor<T> out(shape);
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(c.gaussian());
        return out;
    }
};

template <class T>
struct ZeroNoise final : NoiseProvider<T> {
    Tensor<T> noise(int, int, const Shape& shape) override { return Tensor<T>(shape); }
};

template <class T>
struct ElboOptions {
    T beta = T(1);
    // Test/diagnostic mode: reuse the posterior distributions as the prior,
    // making every KL term exactly zero.
    bool tie_prior_to_posterior = false;
};

template <class T>
struct ElboResult {
    Var<T> loss;
    Var<T> recon_total;
    Var<T> kl_total;                               // unweighted sum of all KL terms
    std::vector<Var<T>> recon_t;                   // per-step reconstruction (batch mean)
    std::vector<std::vector<Var<T>>> kl_tl;        // [t][l] summed KL (batch mean)
    std::vector<std::vector<Var<T>>> kl_elems;     // [t][l] per-element KL
    std::vector<Var<T>> predictions;               // x_hat_t
    std::vector<std::vector<GaussianParams<T>>> q_params;  // [t][l]
    std::vector<std::vector<GaussianParams<T>>> p_params;  // [t][l]
};

// Hierarchical variational RNN: shared frame-encoder trunk, per-level
// prior/posterior ConvLSTM ladders with top-down dense connectivity,
// recurrent coarse-to-fine decoder, and per-state context initializers.
template <class T>
class HierVrnn {
public:
    HierVrnn(HierarchySpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
        spec_.validate();
        rng::Counter rng(rng::derive(init_seed, 0x1817u));
        build(rng);
    }

    const HierarchySpec& spec() const { return spec_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    int num_levels() const { return static_cast<int>(spec_.levels.size()); }
    int num_decoder_stages() const { return static_cast<int>(dec_stages_.size()); }

    // ---- frame encoder ----

    Pyramid<T> encode_frame(Graph<T>& g, Var<T> frame) const {
        const Shape& s = frame.shape();
        if (s.size() != 4 || s[1] != spec_.frame_channels || s[2] != spec_.frame_size ||
            s[3] != spec_.frame_size)
            throw ContractViolation("encode_frame: expected (B," + std::to_string(spec_.frame_channels) +
                                    "," + std::to_string(spec_.frame_size) + "," +
                                    std::to_string(spec_.frame_size) + "), got " + shape_str(s));
        Pyramid<T> pyr;
        Var<T> x = enc_stem_.forward(g, frame);
        int res = spec_.frame_size;
        for (std::size_t k = 0; k < enc_stages_.size(); ++k) {
            if (k > 0) {
                x = g.max_pool2x2(x);
                res /= 2;
            }
            for (const auto& block : enc_stages_[k]) x = block.forward(g, x);
            pyr.feats.emplace(res, x);
        }
        pyr.feats.emplace(1, g.global_avg_pool(x));
        return pyr;
    }

    // ---- state initialization from context ----

    ModelState<T> init_states(Graph<T>& g, const Tensor<T>& context) const {
        if (context.rank() != 5) throw ContractViolation("init_states: context must be (B,D,C,H,W)");
        std::int64_t D = context.dim(1);
        if (D < 1) throw ContractViolation("init_states: need at least one context frame");
        Pyramid<T> avg = average_context_pyramid(g, context);
        return init_states_from(g, avg);
    }

    ModelState<T> init_states_from(Graph<T>& g, const Pyramid<T>& ctx) const {
        ModelState<T> st;
        for (int l = 0; l < num_levels(); ++l) {
            st.prior.push_back(init_prior_[static_cast<std::size_t>(l)].forward(
                g, ctx.at(spec_.levels[static_cast<std::size_t>(l)].resolution)));
            st.posterior.push_back(init_posterior_[static_cast<std::size_t>(l)].forward(
                g, ctx.at(spec_.levels[static_cast<std::size_t>(l)].resolution)));
        }
        for (const auto& stage : dec_stages_)
            if (stage.recurrent)
                st.decoder.push_back(init_decoder_[static_cast<std::size_t>(st.decoder.size())].forward(
                    g, ctx.at(stage.res)));
        return st;
    }

    Pyramid<T> average_context_pyramid(Graph<T>& g, const Tensor<T>& context) const {
        std::int64_t D = context.dim(1);
        std::vector<Pyramid<T>> pyrs;
        for (std::int64_t d = 0; d < D; ++d)
            pyrs.push_back(encode_frame(g, g.leaf(frame_slice(context, d), "context")));
        Pyramid<T> avg;
        for (auto& [res, feat] : pyrs[0].feats) {
            Var<T> acc = feat;
            for (std::int64_t d = 1; d < D; ++d) acc = g.add(acc, pyrs[static_cast<std::size_t>(d)].feats.at(res));
            avg.feats.emplace(res, g.affine(acc, T(1) / T(D), T(0)));
        }
        return avg;
    }

    // ---- ladder steps ----

    // Ancestral pass over the prior ladder: top-down, each level conditioned
    // on its recurrent state, the previous frame's features, and (dense) the
    // already-drawn coarser samples.
    LatentSample<T> prior_step(Graph<T>& g, ModelState<T>& st, const Pyramid<T>& prev_frame,
                               NoiseProvider<T>& noise, int t) const {
        LatentSample<T> out;
        run_ladder(g, prior_, st.prior, prev_frame, nullptr, &noise, t, out.prior_params, out.z);
        out.source.assign(static_cast<std::size_t>(num_levels()), LatentMode::prior);
        return out;
    }

    LatentSample<T> posterior_step(Graph<T>& g, ModelState<T>& st, const Pyramid<T>& current_frame,
                                   NoiseProvider<T>& noise, int t) const {
        LatentSample<T> out;
        run_ladder(g, posterior_, st.posterior, current_frame, nullptr, &noise, t,
                   out.posterior_params, out.z);
        out.source.assign(static_cast<std::size_t>(num_levels()), LatentMode::posterior);
        return out;
    }

    // ---- decoder ----

    Var<T> decode_step(Graph<T>& g, ModelState<T>& st, const LatentSample<T>& latents,
                       const Pyramid<T>& prev_frame) const {
        latents.mode();  // throws on mode-mixed input
        if (latents.z.size() != static_cast<std::size_t>(num_levels()))
            throw ContractViolation("decode_step: latent count mismatch");
        int coarsest = dec_stages_.front().res;
        std::vector<Var<T>> ins = {prev_frame.at(coarsest)};
        for (int l = 0; l < num_levels(); ++l) {
            int r = spec_.levels[static_cast<std::size_t>(l)].resolution;
            if (r <= coarsest)
                ins.push_back(g.upsample_nearest(latents.z[static_cast<std::size_t>(l)], coarsest / r));
        }
        Var<T> x = g.concat_ch(ins);
        std::size_t ridx = 0;
        for (std::size_t i = 0; i < dec_stages_.size(); ++i) {
            const DecoderStage& stage = dec_stages_[i];
            if (i > 0 && spec_.has_level_at(stage.res))
                x = g.concat_ch({x, latents.z[static_cast<std::size_t>(level_index(stage.res))]});
            if (stage.recurrent) {
                st.decoder[ridx] = stage.lstm.step(g, x, st.decoder[ridx]);
                x = st.decoder[ridx].hidden;
                ++ridx;
            } else {
                x = g.relu(stage.gn.forward(g, stage.conv.forward(g, x)));
            }
            if (i + 1 < dec_stages_.size()) x = dec_stages_[i].up.forward(g, x);
        }
        x = g.relu(head_gn_.forward(g, head_conv_.forward(g, x)));
        return g.sigmoid(head_out_.forward(g, x));
    }

    // ---- training objective ----

    // Teacher-forced hierarchical ELBO: latents drawn from the posterior,
    // prior parameters evaluated along the same sample trajectory, loss =
    // sum_t recon + beta * sum_{t,l} KL, averaged over the batch.
    ElboResult<T> elbo(Graph<T>& g, const SequenceBatch<T>& batch, const ElboOptions<T>& opt,
                       NoiseProvider<T>& noise) const {
        batch.validate();
        if (!(opt.beta >= T(0))) throw ContractViolation("elbo: beta must be >= 0");
        std::int64_t Tn = batch.horizon();
        ModelState<T> st = init_states(g, batch.context);
        Pyramid<T> prev = encode_frame(g, g.leaf(frame_slice(batch.context, batch.context_len() - 1),
                                                 "context_last"));
        ElboResult<T> r;
        Var<T> loss;
        Var<T> recon_total;
        Var<T> kl_total;
        for (std::int64_t t = 0; t < Tn; ++t) {
            Var<T> xt = g.leaf(frame_slice(batch.targets, t), "target");
            Pyramid<T> cur = encode_frame(g, xt);

            LatentSample<T> lat;
            run_ladder(g, posterior_, st.posterior, cur, nullptr, &noise, static_cast<int>(t),
                       lat.posterior_params, lat.z);
            lat.source.assign(static_cast<std::size_t>(num_levels()), LatentMode::posterior);
            if (opt.tie_prior_to_posterior) {
                lat.prior_params = lat.posterior_params;
            } else {
                std::vector<Var<T>> unused;
                run_ladder(g, prior_, st.prior, prev, &lat.z, nullptr, static_cast<int>(t),
                           lat.prior_params, unused);
            }

            Var<T> xhat = decode_step(g, st, lat, prev);
            Var<T> recon = dists::recon_nll(xhat, xt);
            if (!std::isfinite(static_cast<double>(recon.val()[0])))
                throw NumericError("elbo: non-finite reconstruction at step " + std::to_string(t));

            r.predictions.push_back(xhat);
            r.recon_t.push_back(recon);
            recon_total = recon_total.valid() ? g.add(recon_total, recon) : recon;

            r.kl_tl.emplace_back();
            r.kl_elems.emplace_back();
            for (int l = 0; l < num_levels(); ++l) {
                Var<T> kle = dists::gaussian_kl(lat.posterior_params[static_cast<std::size_t>(l)],
                                                lat.prior_params[static_cast<std::size_t>(l)]);
                Var<T> kl = g.affine(g.sum_all(kle), T(1) / T(batch.batch()), T(0));
                if (!std::isfinite(static_cast<double>(kl.val()[0])))
                    throw NumericError("elbo: non-finite KL at step " + std::to_string(t) +
                                       " level " + std::to_string(l));
                r.kl_elems.back().push_back(kle);
                r.kl_tl.back().push_back(kl);
                kl_total = kl_total.valid() ? g.add(kl_total, kl) : kl;
            }
            r.q_params.push_back(lat.posterior_params);
            r.p_params.push_back(lat.prior_params);
            prev = cur;  // teacher forcing
        }
        r.recon_total = recon_total;
        r.kl_total = kl_total;
        loss = opt.beta == T(0) ? recon_total : g.add(recon_total, g.affine(kl_total, opt.beta, T(0)));
        if (!std::isfinite(static_cast<double>(loss.val()[0])))
            throw NumericError("elbo: non-finite total loss");
        r.loss = loss;
        return r;
    }

    // ---- ancestral generation ----

    // Autoregressive rollout from the learned prior: init from context, then
    // per step sample the prior ladder, decode, and re-encode the generated
    // frame as the next input. Returns (B, N, T, C, H, W).
    Tensor<T> generate(const Tensor<T>& context, int horizon, int n_samples, std::uint64_t seed,
                       bool zero_noise = false) const {
        if (context.rank() != 5) throw ContractViolation("generate: context must be (B,D,C,H,W)");
        if (horizon < 1 || n_samples < 1)
            throw ContractViolation("generate: horizon and n_samples must be >= 1");
        std::int64_t B = context.dim(0);
        std::int64_t C = spec_.frame_channels, H = spec_.frame_size;
        Tensor<T> out({B, n_samples, horizon, C, H, H});
        std::int64_t chw = C * H * H;
        for (int n = 0; n < n_samples; ++n) {
            Graph<T> g;
            std::unique_ptr<NoiseProvider<T>> noise;
            if (zero_noise)
                noise = std::make_unique<ZeroNoise<T>>();
            else
                noise = std::make_unique<SeededNoise<T>>(rng::derive(seed, static_cast<std::uint64_t>(n)));
            ModelState<T> st = init_states(g, context);
            Pyramid<T> prev = encode_frame(
                g, g.leaf(frame_slice(context, context.dim(1) - 1), "context_last"));
            for (int t = 0; t < horizon; ++t) {
                LatentSample<T> lat = prior_step(g, st, prev, *noise, t);
                Var<T> xhat = decode_step(g, st, lat, prev);
                const Tensor<T>& v = xhat.val();
                for (std::int64_t b = 0; b < B; ++b)
                    std::copy(v.data() + b * chw, v.data() + (b + 1) * chw,
                              out.data() + (((b * n_samples + n) * horizon + t) * chw));
                prev = encode_frame(g, xhat);
            }
        }
        return out;
    }

private:
    struct LatentLevel {
        int res = 1;
        int zch = 1;
        nn::Conv2d<T> in_conv;
        nn::GroupNorm<T> in_gn;
        nn::ConvLstm<T> lstm;
        nn::Conv2d<T> out_conv;
        nn::GroupNorm<T> out_gn;
    };

    struct DecoderStage {
        int res = 2;
        int ch = 1;
        bool recurrent = true;
        nn::ConvLstm<T> lstm;
        nn::Conv2d<T> conv;  // used when not recurrent
        nn::GroupNorm<T> gn;
        nn::ConvTranspose2d<T> up;  // absent on the last stage
    };

    int level_index(int res) const {
        for (std::size_t l = 0; l < spec_.levels.size(); ++l)
            if (spec_.levels[l].resolution == res) return static_cast<int>(l);
        throw ContractViolation("no level at resolution " + std::to_string(res));
    }

    void build(rng::Counter& rng) {
        // Frame encoder: stem conv + residual stages, two blocks per stage
        // after the first, max-pooling between stages.
        int n = spec_.num_encoder_stages();
        int c0 = spec_.encoder_channels(spec_.frame_size);
        enc_stem_ = nn::Conv2d<T>::create(params_, "encoder.stem",
                                          {spec_.frame_channels, c0, 3, 3, 1, 1}, rng);
        int res = spec_.frame_size;
        int prev_ch = c0;
        for (int k = 0; k < n; ++k) {
            res = k == 0 ? spec_.frame_size : res / 2;
            int ch = spec_.encoder_channels(res);
            std::vector<nn::ResidualBlock<T>> blocks;
            std::string base = "encoder.stage" + std::to_string(k);
            blocks.push_back(nn::ResidualBlock<T>::create(params_, base + ".block0", prev_ch, ch, res, rng));
            if (k > 0)
                blocks.push_back(nn::ResidualBlock<T>::create(params_, base + ".block1", ch, ch, res, rng));
            enc_stages_.push_back(std::move(blocks));
            prev_ch = ch;
        }

        // Prior / posterior ladders.
        for (int l = 0; l < num_levels(); ++l) {
            prior_.push_back(make_level("prior", l, rng));
            posterior_.push_back(make_level("posterior", l, rng));
        }

        // Decoder: coarse-to-fine stages mirroring the encoder channels,
        // ConvLSTM in the coarsest decoder_recurrent_stages stages (all by
        // default), transposed-conv upsampling between stages.
        int coarsest = 2;
        int n_dec = n;
        int n_rec = spec_.decoder_recurrent_stages < 0 ? n_dec : spec_.decoder_recurrent_stages;
        for (int i = 0; i < n_dec; ++i) {
            DecoderStage stage;
            stage.res = coarsest << i;
            stage.ch = spec_.encoder_channels(stage.res);
            stage.recurrent = i < n_rec;
            int in_ch;
            if (i == 0) {
                in_ch = spec_.encoder_channels(coarsest);
                for (int l = 0; l < num_levels(); ++l)
                    if (spec_.levels[static_cast<std::size_t>(l)].resolution <= coarsest)
                        in_ch += spec_.level_channels(static_cast<std::size_t>(l));
            } else {
                in_ch = stage.ch;
                if (spec_.has_level_at(stage.res))
                    in_ch += spec_.level_channels(static_cast<std::size_t>(level_index(stage.res)));
            }
            std::string base = "decoder.stage" + std::to_string(i);
            if (stage.recurrent) {
                stage.lstm = nn::ConvLstm<T>::create(params_, base + ".lstm", in_ch, stage.ch, stage.res, rng);
            } else {
                stage.conv = nn::Conv2d<T>::create(params_, base + ".conv", {in_ch, stage.ch, 3, 3, 1, 1}, rng);
                stage.gn = nn::GroupNorm<T>::create(params_, base + ".gn", stage.ch,
                                                    nn::gn_groups(stage.ch, stage.res));
            }
            if (i + 1 < n_dec) {
                int next_ch = spec_.encoder_channels(stage.res * 2);
                stage.up = nn::ConvTranspose2d<T>::create(params_, base + ".up", stage.ch, next_ch, rng);
            }
            dec_stages_.push_back(std::move(stage));
        }
        int cfin = spec_.encoder_channels(spec_.frame_size);
        head_conv_ = nn::Conv2d<T>::create(params_, "decoder.head.conv", {cfin, cfin, 3, 3, 1, 1}, rng);
        head_gn_ = nn::GroupNorm<T>::create(params_, "decoder.head.gn", cfin,
                                            nn::gn_groups(cfin, spec_.frame_size));
        head_out_ = nn::Conv2d<T>::create(params_, "decoder.head.out",
                                          {cfin, spec_.frame_channels, 1, 1, 1, 0}, rng);

        // Context initializers, one per recurrent state.
        for (int l = 0; l < num_levels(); ++l) {
            int r = spec_.levels[static_cast<std::size_t>(l)].resolution;
            int ec = spec_.encoder_channels(r);
            int hc = spec_.level_channels(static_cast<std::size_t>(l));
            init_prior_.push_back(nn::StateInitNet<T>::create(
                params_, "init.prior" + std::to_string(l), ec, hc, r, rng));
            init_posterior_.push_back(nn::StateInitNet<T>::create(
                params_, "init.posterior" + std::to_string(l), ec, hc, r, rng));
        }
        for (std::size_t i = 0; i < dec_stages_.size(); ++i)
            if (dec_stages_[i].recurrent)
                init_decoder_.push_back(nn::StateInitNet<T>::create(
                    params_, "init.decoder" + std::to_string(i),
                    spec_.encoder_channels(dec_stages_[i].res), dec_stages_[i].ch,
                    dec_stages_[i].res, rng));
    }

    LatentLevel make_level(const std::string& which, int l, rng::Counter& rng) {
        LatentLevel lv;
        lv.res = spec_.levels[static_cast<std::size_t>(l)].resolution;
        lv.zch = spec_.level_channels(static_cast<std::size_t>(l));
        int in_ch = spec_.encoder_channels(lv.res);
        if (spec_.dense)
            for (int j = 0; j < l; ++j) in_ch += spec_.level_channels(static_cast<std::size_t>(j));
        std::string base = which + ".level" + std::to_string(l);
        lv.in_conv = nn::Conv2d<T>::create(params_, base + ".in", {in_ch, lv.zch, 1, 1, 1, 0}, rng);
        lv.in_gn = nn::GroupNorm<T>::create(params_, base + ".in_gn", lv.zch, nn::gn_groups(lv.zch, lv.res));
        lv.lstm = nn::ConvLstm<T>::create(params_, base + ".lstm", lv.zch, lv.zch, lv.res, rng);
        lv.out_conv = nn::Conv2d<T>::create(params_, base + ".out", {lv.zch, 2 * lv.zch, 1, 1, 1, 0}, rng);
        lv.out_gn = nn::GroupNorm<T>::create(params_, base + ".out_gn", 2 * lv.zch,
                                             nn::gn_groups(2 * lv.zch, lv.res));
        return lv;
    }

    // Top-down pass over one ladder. If given_z is set its samples are fed
    // to the cross-level inputs and no sampling happens (the ELBO evaluates
    // the prior along the posterior trajectory this way); otherwise each
    // level draws z via the reparameterization trick from `noise`.
    void run_ladder(Graph<T>& g, const std::vector<LatentLevel>& nets,
                    std::vector<ConvLstmState<T>>& states, const Pyramid<T>& frame,
                    const std::vector<Var<T>>* given_z, NoiseProvider<T>* noise, int t,
                    std::vector<GaussianParams<T>>& params_out, std::vector<Var<T>>& z_out) const {
        const std::vector<Var<T>>& zsrc = given_z ? *given_z : z_out;
        for (int l = 0; l < num_levels(); ++l) {
            const LatentLevel& lv = nets[static_cast<std::size_t>(l)];
            std::vector<Var<T>> ins = {frame.at(lv.res)};
            if (spec_.dense)
                for (int j = 0; j < l; ++j) {
                    int rj = spec_.levels[static_cast<std::size_t>(j)].resolution;
                    ins.push_back(g.upsample_nearest(zsrc[static_cast<std::size_t>(j)], lv.res / rj));
                }
            Var<T> a = lv.in_gn.forward(g, lv.in_conv.forward(g, g.concat_ch(ins)));
            states[static_cast<std::size_t>(l)] =
                lv.lstm.step(g, a, states[static_cast<std::size_t>(l)]);
            Var<T> o = lv.out_gn.forward(g, lv.out_conv.forward(g, states[static_cast<std::size_t>(l)].hidden));
            GaussianParams<T> p(g.slice_ch(o, 0, lv.zch), g.slice_ch(o, lv.zch, 2 * lv.zch));
            params_out.push_back(p);
            if (!given_z) {
                if (!noise) throw ContractViolation("run_ladder: missing noise for level " + std::to_string(l));
                z_out.push_back(dists::reparam_sample(p, noise->noise(t, l, p.shape())));
            }
        }
    }

    HierarchySpec spec_;
    ParamStore<T> params_;
    nn::Conv2d<T> enc_stem_;
    std::vector<std::vector<nn::ResidualBlock<T>>> enc_stages_;
    std::vector<LatentLevel> prior_, posterior_;
    std::vector<DecoderStage> dec_stages_;
    nn::Conv2d<T> head_conv_;
    nn::GroupNorm<T> head_gn_;
    nn::Conv2d<T> head_out_;
    std::vector<nn::StateInitNet<T>> init_prior_, init_posterior_, init_decoder_;
};

}  // namespace hvrnn::model
