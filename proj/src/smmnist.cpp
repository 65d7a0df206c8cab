#include <cmath>

#include "hvrnn/data.hpp"

namespace hvrnn::data {

void advance_digit(DigitState& d, const SmmnistConfig& cfg, rng::Counter& rng) {
    double maxpos = double(cfg.canvas - cfg.digit_size);
    double nx = d.x + d.vx;
    double ny = d.y + d.vy;
    bool low_x = nx < 0.0, high_x = nx > maxpos;
    bool low_y = ny < 0.0, high_y = ny > maxpos;
    if (low_x) nx = 0.0;
    if (high_x) nx = maxpos;
    if (low_y) ny = 0.0;
    if (high_y) ny = maxpos;
    d.x = nx;
    d.y = ny;
    if (low_x || high_x || low_y || high_y) {
        // A random new trajectory; only the component normal to the border
        // that was hit is forced back inward.
        double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
        auto [ux, uy] = rng.unit_vec2();
        d.vx = speed * ux;
        d.vy = speed * uy;
        if (low_x) d.vx = std::abs(d.vx);
        if (high_x) d.vx = -std::abs(d.vx);
        if (low_y) d.vy = std::abs(d.vy);
        if (high_y) d.vy = -std::abs(d.vy);
    }
}

namespace {

void render(Tensor<float>& frame, const DigitState& d, const DigitSet& digits, bool binarize) {
    std::int64_t H = frame.dim(2);
    std::int64_t ox = std::llround(d.x);
    std::int64_t oy = std::llround(d.y);
    const Tensor<float>& glyph = digits.image(d.digit);
    std::int64_t ds = digits.dim();
    for (std::int64_t r = 0; r < ds; ++r)
        for (std::int64_t c = 0; c < ds; ++c) {
            float v = glyph[r * ds + c];
            if (binarize) v = v > 0.5f ? 1.0f : 0.0f;
            float& px = frame[(oy + r) * H + (ox + c)];
            if (v > px) px = v;
        }
}

}  // namespace

Tensor<float> generate_sequence(const SmmnistConfig& cfg, const DigitSet& digits,
                                std::uint64_t seed, std::vector<std::vector<DigitState>>* trace) {
    cfg.validate();
    if (digits.size() == 0) throw ContractViolation("generate_sequence: empty digit set");
    const DigitSet& glyphs = digits;
    if (glyphs.dim() != cfg.digit_size)
        throw ContractViolation("generate_sequence: digit set size " + std::to_string(glyphs.dim()) +
                                " does not match configured digit_size " +
                                std::to_string(cfg.digit_size));
    rng::Counter rng(rng::derive(seed, 0x5e9u));
    double maxpos = double(cfg.canvas - cfg.digit_size);

    std::vector<DigitState> state(static_cast<std::size_t>(cfg.num_digits));
    for (auto& d : state) {
        d.digit = static_cast<int>(rng.below(static_cast<std::uint64_t>(glyphs.size())));
        d.x = rng.uniform(0.0, maxpos);
        d.y = rng.uniform(0.0, maxpos);
        double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
        auto [ux, uy] = rng.unit_vec2();
        d.vx = speed * ux;
        d.vy = speed * uy;
    }

    int steps = cfg.context_len + cfg.horizon;
    Tensor<float> seq({steps, 1, cfg.canvas, cfg.canvas});
    for (int t = 0; t < steps; ++t) {
        if (t > 0)
            for (auto& d : state) advance_digit(d, cfg, rng);
        Tensor<float> frame({1, 1, cfg.canvas, cfg.canvas});
        for (const auto& d : state) render(frame, d, glyphs, cfg.binarize);
        std::copy(frame.data(), frame.data() + frame.numel(),
                  seq.data() + std::int64_t(t) * cfg.canvas * cfg.canvas);
        if (trace) trace->push_back(state);
    }
    return seq;
}

std::vector<Tensor<float>> make_sequences(const SmmnistConfig& cfg, const DigitSet& digits,
                                          const std::vector<std::uint64_t>& seeds) {
    std::vector<Tensor<float>> out;
    out.reserve(seeds.size());
    for (std::uint64_t s : seeds) out.push_back(generate_sequence(cfg, digits, s));
    return out;
}

SequenceBatch<float> assemble_batch(const std::vector<const Tensor<float>*>& seqs, int context_len) {
    if (seqs.empty()) throw ContractViolation("assemble_batch: empty batch");
    const Tensor<float>& first = *seqs[0];
    if (first.rank() != 4) throw ContractViolation("assemble_batch: sequences must be (S,C,H,W)");
    std::int64_t S = first.dim(0), C = first.dim(1), H = first.dim(2), W = first.dim(3);
    if (context_len < 1 || context_len >= S)
        throw ContractViolation("assemble_batch: context length must split the sequence");
    std::int64_t B = static_cast<std::int64_t>(seqs.size());
    std::int64_t D = context_len, T = S - context_len, chw = C * H * W;
    SequenceBatch<float> batch{Tensor<float>({B, D, C, H, W}), Tensor<float>({B, T, C, H, W})};
    for (std::int64_t b = 0; b < B; ++b) {
        const Tensor<float>& s = *seqs[static_cast<std::size_t>(b)];
        if (s.shape() != first.shape())
            throw ContractViolation("assemble_batch: inconsistent sequence shapes");
        std::copy(s.data(), s.data() + D * chw, batch.context.data() + b * D * chw);
        std::copy(s.data() + D * chw, s.data() + S * chw, batch.targets.data() + b * T * chw);
    }
    return batch;
}

BatchStream::BatchStream(std::vector<Tensor<float>> sequences, int context_len, int batch_size,
                         std::uint64_t shuffle_seed)
    : sequences_(std::move(sequences)),
      context_len_(context_len),
      batch_size_(batch_size),
      shuffle_seed_(shuffle_seed) {
    if (sequences_.empty()) throw ContractViolation("BatchStream: empty dataset");
    if (batch_size_ < 1) throw ContractViolation("BatchStream: batch size must be >= 1");
    order_.resize(sequences_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
}

void BatchStream::start_epoch(std::int64_t epoch) {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    rng::Counter rng(rng::derive(shuffle_seed_, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order_.size(); i > 1; --i)
        std::swap(order_[i - 1], order_[static_cast<std::size_t>(rng.below(i))]);
    cursor_ = 0;
}

std::optional<SequenceBatch<float>> BatchStream::next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    std::size_t n = std::min(static_cast<std::size_t>(batch_size_), order_.size() - cursor_);
    std::vector<const Tensor<float>*> seqs;
    seqs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) seqs.push_back(&sequences_[order_[cursor_ + i]]);
    cursor_ += n;
    return assemble_batch(seqs, context_len_);
}

std::int64_t BatchStream::batches_per_epoch() const {
    return (static_cast<std::int64_t>(sequences_.size()) + batch_size_ - 1) / batch_size_;
}

StreamingBatches::StreamingBatches(SmmnistConfig cfg, DigitSet digits, int batch_size,
                                   std::uint64_t seed)
    : cfg_(std::move(cfg)), digits_(std::move(digits)), batch_size_(batch_size), seed_(seed) {
    if (batch_size_ < 1) throw ContractViolation("StreamingBatches: batch size must be >= 1");
}

SequenceBatch<float> StreamingBatches::batch_at(std::int64_t index) const {
    std::vector<Tensor<float>> seqs;
    std::vector<const Tensor<float>*> ptrs;
    seqs.reserve(static_cast<std::size_t>(batch_size_));
    for (int j = 0; j < batch_size_; ++j) {
        std::uint64_t s = train_seed(seed_, static_cast<int>(index) * batch_size_ + j);
        seqs.push_back(generate_sequence(cfg_, digits_, s));
    }
    for (const auto& s : seqs) ptrs.push_back(&s);
    return assemble_batch(ptrs, cfg_.context_len);
}

}  // namespace hvrnn::data
