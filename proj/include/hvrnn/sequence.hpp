#pragma once

#include "hvrnn/tensor.hpp"

namespace hvrnn {

// Context frames (B, D, C, H, W) plus target frames (B, T, C, H, W),
// pixel values in [0, 1].
template <class T>
struct SequenceBatch {
    Tensor<T> context;
    Tensor<T> targets;

    std::int64_t batch() const { return context.dim(0); }
    std::int64_t context_len() const { return context.dim(1); }
    std::int64_t horizon() const { return targets.dim(1); }

    void validate() const {
        if (context.rank() != 5 || targets.rank() != 5)
            throw ContractViolation("SequenceBatch: context/targets must be (B,T,C,H,W)");
        if (context.dim(0) != targets.dim(0))
            throw ContractViolation("SequenceBatch: batch size mismatch");
        for (std::size_t i = 2; i < 5; ++i)
            if (context.dim(i) != targets.dim(i))
                throw ContractViolation("SequenceBatch: frame shape mismatch");
        if (context.dim(1) < 1 || targets.dim(1) < 1)
            throw ContractViolation("SequenceBatch: need at least one context and one target frame");
    }
};

// Copies frame t out of a (B, T, C, H, W) tensor as (B, C, H, W).
template <class T>
Tensor<T> frame_slice(const Tensor<T>& seq, std::int64_t t) {
    if (seq.rank() != 5) throw ContractViolation("frame_slice: expects (B,T,C,H,W)");
    std::int64_t B = seq.dim(0), S = seq.dim(1), C = seq.dim(2), H = seq.dim(3), W = seq.dim(4);
    if (t < 0 || t >= S) throw ContractViolation("frame_slice: step out of range");
    Tensor<T> out({B, C, H, W});
    std::int64_t chw = C * H * W;
    for (std::int64_t b = 0; b < B; ++b)
        std::copy(seq.data() + (b * S + t) * chw, seq.data() + (b * S + t + 1) * chw,
                  out.data() + b * chw);
    return out;
}

}  // namespace hvrnn
