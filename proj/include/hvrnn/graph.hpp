#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hvrnn/errors.hpp"
#include "hvrnn/kernels.hpp"
#include "hvrnn/tensor.hpp"

namespace hvrnn::diff {

// Trainable tensor plus its accumulated gradient. Names are unique dotted
// paths within a model, e.g. "prior.level0.lstm.w".
template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() {
        for (std::int64_t i = 0; i < grad.numel(); ++i) grad[i] = T(0);
    }
};

// Ordered, name-addressed parameter registry with stable addresses.
template <class T>
class ParamStore {
public:
    Parameter<T>& create(const std::string& name, Shape shape) {
        if (map_.count(name)) throw ContractViolation("duplicate parameter name: " + name);
        auto p = std::make_unique<Parameter<T>>(name, Tensor<T>(std::move(shape)));
        Parameter<T>& ref = *p;
        map_.emplace(name, std::move(p));
        return ref;
    }

    Parameter<T>* find(const std::string& name) {
        auto it = map_.find(name);
        return it == map_.end() ? nullptr : it->second.get();
    }
    const Parameter<T>* find(const std::string& name) const {
        auto it = map_.find(name);
        return it == map_.end() ? nullptr : it->second.get();
    }

    std::vector<Parameter<T>*> all() {
        std::vector<Parameter<T>*> v;
        v.reserve(map_.size());
        for (auto& [k, p] : map_) v.push_back(p.get());
        return v;
    }
    std::vector<const Parameter<T>*> all() const {
        std::vector<const Parameter<T>*> v;
        v.reserve(map_.size());
        for (auto& [k, p] : map_) v.push_back(p.get());
        return v;
    }

    std::size_t size() const { return map_.size(); }

    std::int64_t total_elements() const {
        std::int64_t n = 0;
        for (auto& [k, p] : map_) n += p->value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& [k, p] : map_) p->zero_grad();
    }

private:
    std::map<std::string, std::unique_ptr<Parameter<T>>> map_;
};

template <class T>
class Graph;

// Lightweight handle to a node of a recorded computation.
template <class T>
struct Var {
    Graph<T>* g = nullptr;
    int id = -1;

    const Tensor<T>& val() const;
    const Shape& shape() const { return val().shape(); }
    bool valid() const { return g != nullptr && id >= 0; }
};

// Reverse-mode tape. A graph records one forward computation; backward()
// walks it once in reverse creation order, which makes gradient evaluation
// deterministic for identical inputs. A graph and its backward pass belong
// to a single execution context; independent graphs may run concurrently.
template <class T>
class Graph {
public:
    struct Node {
        Tensor<T> val;
        Tensor<T> grad;  // allocated lazily during backward, released after use
        std::vector<int> parents;
        std::function<void(Graph&, int)> back;  // pushes this node's grad into parents
        const char* op = "";
        Parameter<T>* bound = nullptr;
    };

    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return nodes_.size(); }

    // ---- leaves ----

    Var<T> leaf(Tensor<T> value, const char* name = "leaf") {
        return push(std::move(value), {}, nullptr, name);
    }

    Var<T> param(Parameter<T>& p) {
        int id = push_id(Tensor<T>(p.value), {}, nullptr, "param");
        node(id).bound = &p;
        node(id).back = [](Graph& g, int self) {
            auto& n = g.node(self);
            kern::add(n.bound->grad.data(), n.grad.data(), n.bound->grad.data(),
                      static_cast<std::size_t>(n.grad.numel()));
        };
        return {this, id};
    }

    // ---- elementwise ----

    Var<T> add(Var<T> a, Var<T> b) {
        check_same(a, b, "add");
        Tensor<T> out(a.shape());
        kern::add(val(a).data(), val(b).data(), out.data(), count(a));
        return push(std::move(out), {a.id, b.id}, [](Graph& g, int self) {
            auto& n = g.node(self);
            g.accumulate(n.parents[0], n.grad);
            g.accumulate(n.parents[1], n.grad);
        }, "add");
    }

    Var<T> sub(Var<T> a, Var<T> b) {
        check_same(a, b, "sub");
        Tensor<T> out(a.shape());
        kern::sub(val(a).data(), val(b).data(), out.data(), count(a));
        return push(std::move(out), {a.id, b.id}, [](Graph& g, int self) {
            auto& n = g.node(self);
            g.accumulate(n.parents[0], n.grad);
            auto& gb = g.ensure_grad(n.parents[1]);
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) gb[i] -= n.grad[i];
        }, "sub");
    }

    Var<T> mul(Var<T> a, Var<T> b) {
        check_same(a, b, "mul");
        Tensor<T> out(a.shape());
        kern::mul(val(a).data(), val(b).data(), out.data(), count(a));
        return push(std::move(out), {a.id, b.id}, [](Graph& g, int self) {
            auto& n = g.node(self);
            std::size_t sz = static_cast<std::size_t>(n.grad.numel());
            kern::mul_acc(n.grad.data(), g.node(n.parents[1]).val.data(),
                          g.ensure_grad(n.parents[0]).data(), sz);
            kern::mul_acc(n.grad.data(), g.node(n.parents[0]).val.data(),
                          g.ensure_grad(n.parents[1]).data(), sz);
        }, "mul");
    }

    // out = scale*a + shift
    Var<T> affine(Var<T> a, T scale, T shift) {
        Tensor<T> out(a.shape());
        kern::affine(val(a).data(), scale, shift, out.data(), count(a));
        return push(std::move(out), {a.id}, [scale](Graph& g, int self) {
            auto& n = g.node(self);
            kern::axpy(scale, n.grad.data(), g.ensure_grad(n.parents[0]).data(),
                       static_cast<std::size_t>(n.grad.numel()));
        }, "affine");
    }

    Var<T> exp(Var<T> a) {
        Tensor<T> out(a.shape());
        kern::exp_map(val(a).data(), out.data(), count(a));
        return push(std::move(out), {a.id}, [](Graph& g, int self) {
            auto& n = g.node(self);
            kern::mul_acc(n.grad.data(), n.val.data(), g.ensure_grad(n.parents[0]).data(),
                          static_cast<std::size_t>(n.grad.numel()));
        }, "exp");
    }

    Var<T> sigmoid(Var<T> a) {
        Tensor<T> out(a.shape());
        kern::sigmoid_map(val(a).data(), out.data(), count(a));
        return push(std::move(out), {a.id}, [](Graph& g, int self) {
            auto& n = g.node(self);
            auto& gx = g.ensure_grad(n.parents[0]);
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
                T y = n.val[i];
                gx[i] += n.grad[i] * y * (T(1) - y);
            }
        }, "sigmoid");
    }

    Var<T> tanh(Var<T> a) {
        Tensor<T> out(a.shape());
        kern::tanh_map(val(a).data(), out.data(), count(a));
        return push(std::move(out), {a.id}, [](Graph& g, int self) {
            auto& n = g.node(self);
            auto& gx = g.ensure_grad(n.parents[0]);
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
                T y = n.val[i];
                gx[i] += n.grad[i] * (T(1) - y * y);
            }
        }, "tanh");
    }

    Var<T> relu(Var<T> a) {
        Tensor<T> out(a.shape());
        kern::relu(val(a).data(), out.data(), count(a));
        return push(std::move(out), {a.id}, [](Graph& g, int self) {
            auto& n = g.node(self);
            kern::relu_bwd(g.node(n.parents[0]).val.data(), n.grad.data(),
                           g.ensure_grad(n.parents[0]).data(),
                           static_cast<std::size_t>(n.grad.numel()));
        }, "relu");
    }

    // Gradient passes through strictly inside (lo, hi) and is zero outside.
    Var<T> clamp(Var<T> a, T lo, T hi) {
        Tensor<T> out(a.shape());
        const Tensor<T>& x = val(a);
        for (std::int64_t i = 0; i < x.numel(); ++i)
            out[i] = x[i] < lo ? lo : (x[i] > hi ? hi : x[i]);
        return push(std::move(out), {a.id}, [lo, hi](Graph& g, int self) {
            auto& n = g.node(self);
            const Tensor<T>& x = g.node(n.parents[0]).val;
            auto& gx = g.ensure_grad(n.parents[0]);
            for (std::int64_t i = 0; i < n.grad.numel(); ++i)
                if (x[i] > lo && x[i] < hi) gx[i] += n.grad[i];
        }, "clamp");
    }

    // ---- reductions / shape ----

    Var<T> sum_all(Var<T> a) {
        Tensor<T> out = Tensor<T>::scalar(kern::sum(val(a).data(), count(a)));
        return push(std::move(out), {a.id}, [](Graph& g, int self) {
            auto& n = g.node(self);
            T gy = n.grad[0];
            auto& gx = g.ensure_grad(n.parents[0]);
            for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += gy;
        }, "sum");
    }

    // Concatenate BCHW tensors along channels.
    Var<T> concat_ch(const std::vector<Var<T>>& parts) {
        if (parts.empty()) throw ContractViolation("concat_ch: no inputs");
        const Shape& s0 = val(parts[0]).shape();
        if (s0.size() != 4) throw ContractViolation("concat_ch: expects BCHW tensors");
        std::int64_t ctot = 0;
        for (const auto& p : parts) {
            const Shape& s = val(p).shape();
            if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
                throw ContractViolation("concat_ch: incompatible shapes " + shape_str(s0) + " vs " + shape_str(s));
            ctot += s[1];
        }
        std::int64_t B = s0[0], H = s0[2], W = s0[3], hw = H * W;
        Tensor<T> out({B, ctot, H, W});
        std::vector<int> pids;
        std::int64_t coff = 0;
        for (const auto& p : parts) {
            const Tensor<T>& x = val(p);
            std::int64_t c = x.shape()[1];
            for (std::int64_t b = 0; b < B; ++b)
                std::copy(x.data() + b * c * hw, x.data() + (b + 1) * c * hw,
                          out.data() + (b * ctot + coff) * hw);
            coff += c;
            pids.push_back(p.id);
        }
        return push(std::move(out), std::move(pids), [B, hw, ctot](Graph& g, int self) {
            auto& n = g.node(self);
            std::int64_t coff = 0;
            for (int pid : n.parents) {
                auto& gx = g.ensure_grad(pid);
                std::int64_t c = gx.shape()[1];
                for (std::int64_t b = 0; b < B; ++b)
                    kern::add(gx.data() + b * c * hw,
                              n.grad.data() + (b * ctot + coff) * hw,
                              gx.data() + b * c * hw,
                              static_cast<std::size_t>(c * hw));
                coff += c;
            }
        }, "concat_ch");
    }

    // Channel range [c0, c1) of a BCHW tensor.
    Var<T> slice_ch(Var<T> a, std::int64_t c0, std::int64_t c1) {
        const Shape& s = val(a).shape();
        if (s.size() != 4 || c0 < 0 || c1 <= c0 || c1 > s[1])
            throw ContractViolation("slice_ch: bad channel range");
        std::int64_t B = s[0], C = s[1], hw = s[2] * s[3], c = c1 - c0;
        Tensor<T> out({B, c, s[2], s[3]});
        const Tensor<T>& x = val(a);
        for (std::int64_t b = 0; b < B; ++b)
            std::copy(x.data() + (b * C + c0) * hw, x.data() + (b * C + c1) * hw,
                      out.data() + b * c * hw);
        return push(std::move(out), {a.id}, [B, C, c0, c, hw](Graph& g, int self) {
            auto& n = g.node(self);
            auto& gx = g.ensure_grad(n.parents[0]);
            for (std::int64_t b = 0; b < B; ++b)
                kern::add(gx.data() + (b * C + c0) * hw,
                          n.grad.data() + b * c * hw,
                          gx.data() + (b * C + c0) * hw,
                          static_cast<std::size_t>(c * hw));
        }, "slice_ch");
    }

    // Nearest-neighbour upsample by integer factor k (k=H_out/H_in).
    Var<T> upsample_nearest(Var<T> a, int k) {
        if (k < 1) throw ContractViolation("upsample_nearest: factor must be >= 1");
        if (k == 1) return a;
        const Shape& s = val(a).shape();
        if (s.size() != 4) throw ContractViolation("upsample_nearest: expects BCHW");
        std::int64_t B = s[0], C = s[1], H = s[2], W = s[3];
        Tensor<T> out({B, C, H * k, W * k});
        const Tensor<T>& x = val(a);
        for (std::int64_t bc = 0; bc < B * C; ++bc)
            for (std::int64_t h = 0; h < H * k; ++h)
                for (std::int64_t w = 0; w < W * k; ++w)
                    out[bc * H * k * W * k + h * W * k + w] = x[bc * H * W + (h / k) * W + (w / k)];
        return push(std::move(out), {a.id}, [B, C, H, W, k](Graph& g, int self) {
            auto& n = g.node(self);
            auto& gx = g.ensure_grad(n.parents[0]);
            for (std::int64_t bc = 0; bc < B * C; ++bc)
                for (std::int64_t h = 0; h < H * k; ++h)
                    for (std::int64_t w = 0; w < W * k; ++w)
                        gx[bc * H * W + (h / k) * W + (w / k)] +=
                            n.grad[bc * H * k * W * k + h * W * k + w];
        }, "upsample_nearest");
    }

    // Global average pool over the spatial extent, (B,C,H,W) -> (B,C,1,1).
    Var<T> global_avg_pool(Var<T> a) {
        const Shape& s = val(a).shape();
        if (s.size() != 4) throw ContractViolation("global_avg_pool: expects BCHW");
        std::int64_t B = s[0], C = s[1], hw = s[2] * s[3];
        Tensor<T> out({B, C, 1, 1});
        const Tensor<T>& x = val(a);
        for (std::int64_t bc = 0; bc < B * C; ++bc)
            out[bc] = kern::sum(x.data() + bc * hw, static_cast<std::size_t>(hw)) / T(hw);
        return push(std::move(out), {a.id}, [B, C, hw](Graph& g, int self) {
            auto& n = g.node(self);
            auto& gx = g.ensure_grad(n.parents[0]);
            for (std::int64_t bc = 0; bc < B * C; ++bc) {
                T gv = n.grad[bc] / T(hw);
                for (std::int64_t i = 0; i < hw; ++i) gx[bc * hw + i] += gv;
            }
        }, "global_avg_pool");
    }

    // 2x2 max pooling with stride 2. Gradient routes to the argmax; ties go
    // to the first element in row-major window order.
    Var<T> max_pool2x2(Var<T> a) {
        const Shape& s = val(a).shape();
        if (s.size() != 4) throw ContractViolation("max_pool2x2: expects BCHW");
        if (s[2] % 2 != 0 || s[3] % 2 != 0)
            throw ContractViolation("max_pool2x2: spatial size must be even, got " + shape_str(s));
        std::int64_t B = s[0], C = s[1], H = s[2], W = s[3], Ho = H / 2, Wo = W / 2;
        Tensor<T> out({B, C, Ho, Wo});
        auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
        const Tensor<T>& x = val(a);
        for (std::int64_t bc = 0; bc < B * C; ++bc)
            for (std::int64_t oh = 0; oh < Ho; ++oh)
                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                    std::int64_t base = bc * H * W + 2 * oh * W + 2 * ow;
                    std::int64_t best = base;
                    T bv = x[base];
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            std::int64_t idx = base + dy * W + dx;
                            if (x[idx] > bv) {
                                bv = x[idx];
                                best = idx;
                            }
                        }
                    std::int64_t o = bc * Ho * Wo + oh * Wo + ow;
                    out[o] = bv;
                    (*argmax)[static_cast<std::size_t>(o)] = best;
                }
        return push(std::move(out), {a.id}, [argmax](Graph& g, int self) {
            auto& n = g.node(self);
            auto& gx = g.ensure_grad(n.parents[0]);
            for (std::int64_t o = 0; o < n.grad.numel(); ++o)
                gx[(*argmax)[static_cast<std::size_t>(o)]] += n.grad[o];
        }, "max_pool2x2");
    }

    // ---- convolutions ----

    // Cross-correlation with zero padding; x (B,Ci,H,W), w (Co,Ci,kh,kw), b (Co).
    Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
        const Shape& xs = val(x).shape();
        const Shape& ws = val(w).shape();
        if (xs.size() != 4 || ws.size() != 4) throw ContractViolation("conv2d: expects BCHW input and OIHW weight");
        if (xs[1] != ws[1])
            throw ContractViolation("conv2d: input channels " + std::to_string(xs[1]) +
                                    " != weight channels " + std::to_string(ws[1]));
        if (val(b).numel() != ws[0]) throw ContractViolation("conv2d: bias size mismatch");
        kern::ConvDims d;
        d.batch = xs[0]; d.cin = xs[1]; d.cout = ws[0];
        d.hin = xs[2]; d.win = xs[3];
        d.kh = static_cast<int>(ws[2]); d.kw = static_cast<int>(ws[3]);
        d.stride = stride; d.pad = pad;
        d.hout = (d.hin + 2 * pad - d.kh) / stride + 1;
        d.wout = (d.win + 2 * pad - d.kw) / stride + 1;
        if (d.hout < 1 || d.wout < 1)
            throw ContractViolation("conv2d: degenerate output size for input " + shape_str(xs));
        Tensor<T> out({d.batch, d.cout, d.hout, d.wout});
        kern::conv2d_fwd(val(x).data(), val(w).data(), val(b).data(), out.data(), d);
        return push(std::move(out), {x.id, w.id, b.id}, [d](Graph& g, int self) {
            auto& n = g.node(self);
            const Tensor<T>& xv = g.node(n.parents[0]).val;
            const Tensor<T>& wv = g.node(n.parents[1]).val;
            kern::conv2d_bwd_input(n.grad.data(), wv.data(), g.ensure_grad(n.parents[0]).data(), d);
            kern::conv2d_bwd_weight(xv.data(), n.grad.data(),
                                    g.ensure_grad(n.parents[1]).data(),
                                    g.ensure_grad(n.parents[2]).data(), d);
        }, "conv2d");
    }

    // Transposed convolution; x (B,Ci,H,W), w (Ci,Co,kh,kw), b (Co).
    // Forward is the adjoint of conv2d with the same weight memory, so
    // <conv(x;w), y> == <x, conv_transpose(y;w)> holds by construction.
    Var<T> conv_transpose2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
        const Shape& xs = val(x).shape();
        const Shape& ws = val(w).shape();
        if (xs.size() != 4 || ws.size() != 4) throw ContractViolation("conv_transpose2d: expects BCHW input");
        if (xs[1] != ws[0])
            throw ContractViolation("conv_transpose2d: input channels " + std::to_string(xs[1]) +
                                    " != weight in-channels " + std::to_string(ws[0]));
        if (val(b).numel() != ws[1]) throw ContractViolation("conv_transpose2d: bias size mismatch");
        // Underlying correlation maps the transposed-conv output back to its input.
        kern::ConvDims d;
        d.batch = xs[0];
        d.cout = xs[1];          // conv output channels = our input channels
        d.cin = ws[1];           // conv input channels  = our output channels
        d.kh = static_cast<int>(ws[2]); d.kw = static_cast<int>(ws[3]);
        d.stride = stride; d.pad = pad;
        d.hout = xs[2]; d.wout = xs[3];
        d.hin = (xs[2] - 1) * stride - 2 * pad + d.kh;
        d.win = (xs[3] - 1) * stride - 2 * pad + d.kw;
        if (d.hin < 1 || d.win < 1)
            throw ContractViolation("conv_transpose2d: degenerate output size for input " + shape_str(xs));
        Tensor<T> out({d.batch, d.cin, d.hin, d.win});
        kern::conv2d_bwd_input(val(x).data(), val(w).data(), out.data(), d);
        std::int64_t hw = d.hin * d.win;
        const Tensor<T>& bv = val(b);
        for (std::int64_t bi = 0; bi < d.batch; ++bi)
            for (std::int64_t c = 0; c < d.cin; ++c)
                kern::affine(out.data() + (bi * d.cin + c) * hw, T(1), bv[c],
                             out.data() + (bi * d.cin + c) * hw, static_cast<std::size_t>(hw));
        return push(std::move(out), {x.id, w.id, b.id}, [d](Graph& g, int self) {
            auto& n = g.node(self);
            const Tensor<T>& xv = g.node(n.parents[0]).val;
            const Tensor<T>& wv = g.node(n.parents[1]).val;
            // d/dx: forward correlation of the output gradient.
            Tensor<T> tmp({d.batch, d.cout, d.hout, d.wout});
            kern::conv2d_fwd(n.grad.data(), wv.data(), static_cast<const T*>(nullptr), tmp.data(), d);
            auto& gx = g.ensure_grad(n.parents[0]);
            kern::add(gx.data(), tmp.data(), gx.data(), static_cast<std::size_t>(gx.numel()));
            // d/dw: correlate output-gradient (conv input side) with x (conv output side).
            kern::conv2d_bwd_weight(n.grad.data(), xv.data(),
                                    g.ensure_grad(n.parents[1]).data(), static_cast<T*>(nullptr), d);
            // d/db: per-channel sums of the output gradient.
            auto& gb = g.ensure_grad(n.parents[2]);
            std::int64_t hw = d.hin * d.win;
            for (std::int64_t bi = 0; bi < d.batch; ++bi)
                for (std::int64_t c = 0; c < d.cin; ++c)
                    gb[c] += kern::sum(n.grad.data() + (bi * d.cin + c) * hw,
                                       static_cast<std::size_t>(hw));
        }, "conv_transpose2d");
    }

    // Group normalization with per-channel affine; gamma/beta shaped (C).
    Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, int groups, T eps) {
        const Shape& s = val(x).shape();
        if (s.size() != 4) throw ContractViolation("group_norm: expects BCHW");
        std::int64_t B = s[0], C = s[1], H = s[2], W = s[3];
        if (groups < 1 || C % groups != 0)
            throw ContractViolation("group_norm: groups " + std::to_string(groups) +
                                    " must divide channels " + std::to_string(C));
        if (val(gamma).numel() != C || val(beta).numel() != C)
            throw ContractViolation("group_norm: affine parameter size mismatch");
        std::int64_t cg = C / groups, m = cg * H * W, hw = H * W;
        auto stats = std::make_shared<std::vector<T>>(static_cast<std::size_t>(2 * B * groups));
        Tensor<T> out(s);
        const Tensor<T>& xv = val(x);
        const Tensor<T>& gv = val(gamma);
        const Tensor<T>& bv = val(beta);
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t g0 = 0; g0 < groups; ++g0) {
                const T* base = xv.data() + (b * C + g0 * cg) * hw;
                T mean = kern::sum(base, static_cast<std::size_t>(m)) / T(m);
                T var = kern::sqsum(base, static_cast<std::size_t>(m)) / T(m) - mean * mean;
                if (var < T(0)) var = T(0);
                T invstd = T(1) / std::sqrt(var + eps);
                (*stats)[static_cast<std::size_t>(2 * (b * groups + g0))] = mean;
                (*stats)[static_cast<std::size_t>(2 * (b * groups + g0) + 1)] = invstd;
                for (std::int64_t c = 0; c < cg; ++c) {
                    std::int64_t ch = g0 * cg + c;
                    const T* xr = xv.data() + (b * C + ch) * hw;
                    T* yr = out.data() + (b * C + ch) * hw;
                    T a = gv[ch] * invstd;
                    T sh = bv[ch] - a * mean;
                    kern::affine(xr, a, sh, yr, static_cast<std::size_t>(hw));
                }
            }
        return push(std::move(out), {x.id, gamma.id, beta.id},
                    [B, C, groups, cg, m, hw, eps, stats](Graph& g, int self) {
            auto& n = g.node(self);
            const Tensor<T>& xv = g.node(n.parents[0]).val;
            const Tensor<T>& gv = g.node(n.parents[1]).val;
            auto& gx = g.ensure_grad(n.parents[0]);
            auto& gg = g.ensure_grad(n.parents[1]);
            auto& gb = g.ensure_grad(n.parents[2]);
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t g0 = 0; g0 < groups; ++g0) {
                    T mean = (*stats)[static_cast<std::size_t>(2 * (b * groups + g0))];
                    T invstd = (*stats)[static_cast<std::size_t>(2 * (b * groups + g0) + 1)];
                    // s1 = sum(gy*gamma), s2 = sum(gy*gamma*xhat) over the group
                    T s1 = 0, s2 = 0;
                    for (std::int64_t c = 0; c < cg; ++c) {
                        std::int64_t ch = g0 * cg + c;
                        const T* xr = xv.data() + (b * C + ch) * hw;
                        const T* dy = n.grad.data() + (b * C + ch) * hw;
                        T gch = gv[ch];
                        for (std::int64_t i = 0; i < hw; ++i) {
                            T xhat = (xr[i] - mean) * invstd;
                            T h = dy[i] * gch;
                            s1 += h;
                            s2 += h * xhat;
                            gg[ch] += dy[i] * xhat;
                            gb[ch] += dy[i];
                        }
                    }
                    T c1 = s1 / T(m), c2 = s2 / T(m);
                    for (std::int64_t c = 0; c < cg; ++c) {
                        std::int64_t ch = g0 * cg + c;
                        const T* xr = xv.data() + (b * C + ch) * hw;
                        const T* dy = n.grad.data() + (b * C + ch) * hw;
                        T* dx = gx.data() + (b * C + ch) * hw;
                        T gch = gv[ch];
                        for (std::int64_t i = 0; i < hw; ++i) {
                            T xhat = (xr[i] - mean) * invstd;
                            dx[i] += invstd * (dy[i] * gch - c1 - xhat * c2);
                        }
                    }
                }
        }, "group_norm");
    }

    // ---- backward ----

    // Accumulate dloss/dvalue into every bound Parameter. Requires a scalar
    // loss; repeated calls (without zeroing) sum gradients.
    void backward(Var<T> loss) {
        if (loss.g != this) throw ContractViolation("backward: loss from a different graph");
        if (val(loss).numel() != 1)
            throw ContractViolation("backward: loss must be scalar, got " + shape_str(val(loss).shape()));
        if (!std::isfinite(static_cast<double>(val(loss)[0])))
            throw NumericError("backward: loss value is not finite");
        ensure_grad(loss.id)[0] += T(1);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = node(i);
            if (n.grad.empty()) continue;
            if (!n.grad.all_finite())
                throw NumericError(std::string("backward: non-finite gradient at op '") + n.op +
                                   "' (node " + std::to_string(i) + ")");
            if (n.back) n.back(*this, i);
            n.grad = Tensor<T>();  // consumers already ran; release
        }
    }

    Tensor<T>& ensure_grad(int id) {
        Node& n = node(id);
        if (n.grad.empty()) n.grad = Tensor<T>(n.val.shape());
        return n.grad;
    }

    void accumulate(int id, const Tensor<T>& g) {
        Tensor<T>& dst = ensure_grad(id);
        kern::add(dst.data(), g.data(), dst.data(), static_cast<std::size_t>(g.numel()));
    }

private:
    const Tensor<T>& val(Var<T> v) const { return node(v.id).val; }
    std::size_t count(Var<T> v) const { return static_cast<std::size_t>(val(v).numel()); }

    void check_same(Var<T> a, Var<T> b, const char* op) const {
        if (!val(a).same_shape(val(b)))
            throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(val(a).shape()) +
                                    " vs " + shape_str(val(b).shape()));
    }

    int push_id(Tensor<T> v, std::vector<int> parents, std::function<void(Graph&, int)> back,
                const char* op) {
        Node n;
        n.val = std::move(v);
        n.parents = std::move(parents);
        n.back = std::move(back);
        n.op = op;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    Var<T> push(Tensor<T> v, std::vector<int> parents, std::function<void(Graph&, int)> back,
                const char* op) {
        return {this, push_id(std::move(v), std::move(parents), std::move(back), op)};
    }

    std::vector<Node> nodes_;
};

template <class T>
const Tensor<T>& Var<T>::val() const {
    return g->node(id).val;
}

}  // namespace hvrnn::diff
