#pragma once

#include "hvrnn/graph.hpp"

namespace hvrnn::dists {

using diff::Graph;
using diff::Var;

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

// Diagonal Normal, parameterized by mean and log-variance. The log-variance
// is clamped to [-10, 10] at construction, so sigma stays in [e^-5, e^5].
template <class T>
struct GaussianParams {
    Var<T> mean;
    Var<T> logvar;

    GaussianParams() = default;

    GaussianParams(Var<T> mean_, Var<T> raw_logvar) : mean(mean_) {
        if (!mean.val().same_shape(raw_logvar.val()))
            throw ContractViolation("GaussianParams: mean " + shape_str(mean.shape()) +
                                    " vs logvar " + shape_str(raw_logvar.shape()));
        logvar = mean.g->clamp(raw_logvar, T(kLogvarMin), T(kLogvarMax));
    }

    const Shape& shape() const { return mean.shape(); }
};

// mean + exp(0.5*logvar) * noise; differentiable w.r.t. the parameters.
template <class T>
Var<T> reparam_sample(const GaussianParams<T>& p, const Tensor<T>& noise) {
    if (noise.shape() != p.shape())
        throw ContractViolation("reparam_sample: noise " + shape_str(noise.shape()) +
                                " vs params " + shape_str(p.shape()));
    Graph<T>& g = *p.mean.g;
    Var<T> sigma = g.exp(g.affine(p.logvar, T(0.5), T(0)));
    return g.add(p.mean, g.mul(sigma, g.leaf(noise, "noise")));
}

// Per-element KL( N(mq, e^lq) || N(mp, e^lp) ):
//   0.5*(lp - lq) + (e^lq + (mq-mp)^2) / (2 e^lp) - 0.5
// computed as 0.5*(lp-lq) + 0.5*e^(lq-lp) + 0.5*(mq-mp)^2*e^-lp - 0.5 so the
// q == p case cancels exactly; clamped at zero from below to absorb float
// round-off elsewhere.
template <class T>
Var<T> gaussian_kl(const GaussianParams<T>& q, const GaussianParams<T>& p) {
    if (q.shape() != p.shape())
        throw ContractViolation("gaussian_kl: q " + shape_str(q.shape()) + " vs p " +
                                shape_str(p.shape()));
    Graph<T>& g = *q.mean.g;
    Var<T> dmean = g.sub(q.mean, p.mean);
    Var<T> quad = g.mul(g.mul(dmean, dmean), g.exp(g.affine(p.logvar, T(-1), T(0))));
    Var<T> kl = g.add(g.affine(g.sub(p.logvar, q.logvar), T(0.5), T(-0.5)),
                      g.add(g.affine(g.exp(g.sub(q.logvar, p.logvar)), T(0.5), T(0)),
                            g.affine(quad, T(0.5), T(0))));
    return g.relu(kl);
}

// Reconstruction negative log-likelihood under a fixed unit-variance
// factorized Gaussian (additive constants dropped): 0.5*sum((pred-target)^2)
// over pixels and channels, averaged over the batch dimension.
template <class T>
Var<T> recon_nll(Var<T> prediction, Var<T> target) {
    if (!prediction.val().same_shape(target.val()))
        throw ContractViolation("recon_nll: prediction " + shape_str(prediction.shape()) +
                                " vs target " + shape_str(target.shape()));
    Graph<T>& g = *prediction.g;
    Var<T> d = g.sub(prediction, target);
    std::int64_t batch = prediction.shape()[0];
    return g.affine(g.sum_all(g.mul(d, d)), T(0.5) / T(batch), T(0));
}

}  // namespace hvrnn::dists
