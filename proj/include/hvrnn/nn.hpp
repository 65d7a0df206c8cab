#pragma once

#include <numeric>
#include <string>

#include "hvrnn/graph.hpp"
#include "hvrnn/rng.hpp"

namespace hvrnn::nn {

using diff::Graph;
using diff::Parameter;
using diff::ParamStore;
using diff::Var;

// GroupNorm group count: 16 where it divides the channel count, fewer for
// narrow scaled-down layers, and always 1 on 1x1 maps.
inline int gn_groups(int channels, int spatial) {
    if (spatial == 1) return 1;
    return std::gcd(16, channels);
}

template <class T>
void init_uniform(Parameter<T>& p, double bound, rng::Counter& rng) {
    for (std::int64_t i = 0; i < p.value.numel(); ++i)
        p.value[i] = static_cast<T>(rng.uniform(-bound, bound));
}

struct Conv2dSpec {
    int in_ch = 1, out_ch = 1;
    int kh = 3, kw = 3;
    int stride = 1, pad = 1;
};

template <class T>
struct Conv2d {
    Conv2dSpec spec;
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;

    static Conv2d create(ParamStore<T>& ps, const std::string& name, Conv2dSpec spec,
                         rng::Counter& rng) {
        Conv2d c;
        c.spec = spec;
        c.w = &ps.create(name + ".w", {spec.out_ch, spec.in_ch, spec.kh, spec.kw});
        c.b = &ps.create(name + ".b", {spec.out_ch});
        double bound = 1.0 / std::sqrt(double(spec.in_ch) * spec.kh * spec.kw);
        init_uniform(*c.w, bound, rng);
        init_uniform(*c.b, bound, rng);
        return c;
    }

    Var<T> forward(Graph<T>& g, Var<T> x) const {
        return g.conv2d(x, g.param(*w), g.param(*b), spec.stride, spec.pad);
    }
};

// Fixed 4x4 / stride 2 / pad 1 geometry: doubles the spatial size.
template <class T>
struct ConvTranspose2d {
    int in_ch = 1, out_ch = 1;
    int k = 4, stride = 2, pad = 1;
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;

    static ConvTranspose2d create(ParamStore<T>& ps, const std::string& name, int in_ch, int out_ch,
                                  rng::Counter& rng) {
        ConvTranspose2d c;
        c.in_ch = in_ch;
        c.out_ch = out_ch;
        c.w = &ps.create(name + ".w", {in_ch, out_ch, c.k, c.k});
        c.b = &ps.create(name + ".b", {out_ch});
        double bound = 1.0 / std::sqrt(double(in_ch) * c.k * c.k);
        init_uniform(*c.w, bound, rng);
        init_uniform(*c.b, bound, rng);
        return c;
    }

    Var<T> forward(Graph<T>& g, Var<T> x) const {
        return g.conv_transpose2d(x, g.param(*w), g.param(*b), stride, pad);
    }
};

template <class T>
struct GroupNorm {
    int channels = 1;
    int groups = 1;
    T eps = T(1e-5);
    Parameter<T>* gamma = nullptr;
    Parameter<T>* beta = nullptr;

    static GroupNorm create(ParamStore<T>& ps, const std::string& name, int channels, int groups) {
        GroupNorm n;
        n.channels = channels;
        n.groups = groups;
        n.gamma = &ps.create(name + ".gamma", {channels});
        n.beta = &ps.create(name + ".beta", {channels});
        for (std::int64_t i = 0; i < channels; ++i) n.gamma->value[i] = T(1);
        return n;
    }

    Var<T> forward(Graph<T>& g, Var<T> x) const {
        return g.group_norm(x, g.param(*gamma), g.param(*beta), groups, eps);
    }
};

// Pre-activation residual block: out = proj(x) + GN(conv(relu(GN(conv(relu(x)))))),
// i.e. two groups of ReLU + Conv3x3 + GroupNorm, with an identity (or 1x1
// projection) shortcut.
template <class T>
struct ResidualBlock {
    int in_ch = 1, out_ch = 1;
    Conv2d<T> conv1, conv2;
    GroupNorm<T> gn1, gn2;
    bool has_proj = false;
    Conv2d<T> proj;

    static ResidualBlock create(ParamStore<T>& ps, const std::string& name, int in_ch, int out_ch,
                                int spatial, rng::Counter& rng) {
        ResidualBlock b;
        b.in_ch = in_ch;
        b.out_ch = out_ch;
        b.conv1 = Conv2d<T>::create(ps, name + ".conv1", {in_ch, out_ch, 3, 3, 1, 1}, rng);
        b.gn1 = GroupNorm<T>::create(ps, name + ".gn1", out_ch, gn_groups(out_ch, spatial));
        b.conv2 = Conv2d<T>::create(ps, name + ".conv2", {out_ch, out_ch, 3, 3, 1, 1}, rng);
        b.gn2 = GroupNorm<T>::create(ps, name + ".gn2", out_ch, gn_groups(out_ch, spatial));
        if (in_ch != out_ch) {
            b.has_proj = true;
            b.proj = Conv2d<T>::create(ps, name + ".proj", {in_ch, out_ch, 1, 1, 1, 0}, rng);
        }
        return b;
    }

    Var<T> forward(Graph<T>& g, Var<T> x) const {
        Var<T> h = gn1.forward(g, conv1.forward(g, g.relu(x)));
        h = gn2.forward(g, conv2.forward(g, g.relu(h)));
        Var<T> s = has_proj ? proj.forward(g, x) : x;
        return g.add(s, h);
    }
};

template <class T>
struct ConvLstmState {
    Var<T> hidden, cell;
};

// ConvLSTM cell: one 3x3 convolution over concat(input, hidden) produces the
// stacked (i, f, g, o) pre-activations, normalized jointly by GroupNorm
// before the gate split. Forget-gate bias starts at +1.
template <class T>
struct ConvLstm {
    int in_ch = 1, hidden_ch = 1;
    Conv2d<T> gates;
    GroupNorm<T> gn;

    static ConvLstm create(ParamStore<T>& ps, const std::string& name, int in_ch, int hidden_ch,
                           int spatial, rng::Counter& rng) {
        ConvLstm c;
        c.in_ch = in_ch;
        c.hidden_ch = hidden_ch;
        c.gates = Conv2d<T>::create(ps, name + ".gates", {in_ch + hidden_ch, 4 * hidden_ch, 3, 3, 1, 1}, rng);
        for (std::int64_t i = hidden_ch; i < 2 * hidden_ch; ++i) c.gates.b->value[i] = T(1);
        c.gn = GroupNorm<T>::create(ps, name + ".gn", 4 * hidden_ch, gn_groups(4 * hidden_ch, spatial));
        return c;
    }

    ConvLstmState<T> step(Graph<T>& g, Var<T> x, const ConvLstmState<T>& s) const {
        const Shape& xs = x.shape();
        const Shape& hs = s.hidden.shape();
        if (xs[0] != hs[0] || xs[2] != hs[2] || xs[3] != hs[3])
            throw ContractViolation("convlstm_step: input " + shape_str(xs) +
                                    " not aligned with state " + shape_str(hs));
        Var<T> pre = gn.forward(g, gates.forward(g, g.concat_ch({x, s.hidden})));
        std::int64_t hc = hidden_ch;
        Var<T> gi = g.sigmoid(g.slice_ch(pre, 0, hc));
        Var<T> gf = g.sigmoid(g.slice_ch(pre, hc, 2 * hc));
        Var<T> gg = g.tanh(g.slice_ch(pre, 2 * hc, 3 * hc));
        Var<T> go = g.sigmoid(g.slice_ch(pre, 3 * hc, 4 * hc));
        Var<T> cell = g.add(g.mul(gf, s.cell), g.mul(gi, gg));
        Var<T> hidden = g.mul(go, g.tanh(cell));
        return {hidden, cell};
    }
};

// Maps matching-resolution context features to a ConvLSTM (hidden, cell)
// initialization: Conv1x1 + GN + ReLU, then Conv1x1 + GN into 2x the state
// channels.
template <class T>
struct StateInitNet {
    int in_ch = 1, state_ch = 1;
    Conv2d<T> conv1, conv2;
    GroupNorm<T> gn1, gn2;

    static StateInitNet create(ParamStore<T>& ps, const std::string& name, int in_ch, int state_ch,
                               int spatial, rng::Counter& rng) {
        StateInitNet n;
        n.in_ch = in_ch;
        n.state_ch = state_ch;
        n.conv1 = Conv2d<T>::create(ps, name + ".conv1", {in_ch, in_ch, 1, 1, 1, 0}, rng);
        n.gn1 = GroupNorm<T>::create(ps, name + ".gn1", in_ch, gn_groups(in_ch, spatial));
        n.conv2 = Conv2d<T>::create(ps, name + ".conv2", {in_ch, 2 * state_ch, 1, 1, 1, 0}, rng);
        n.gn2 = GroupNorm<T>::create(ps, name + ".gn2", 2 * state_ch, gn_groups(2 * state_ch, spatial));
        return n;
    }

    ConvLstmState<T> forward(Graph<T>& g, Var<T> ctx) const {
        Var<T> h = g.relu(gn1.forward(g, conv1.forward(g, ctx)));
        Var<T> out = gn2.forward(g, conv2.forward(g, h));
        return {g.slice_ch(out, 0, state_ch), g.slice_ch(out, state_ch, 2 * state_ch)};
    }
};

}  // namespace hvrnn::nn
