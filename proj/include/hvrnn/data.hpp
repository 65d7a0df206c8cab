#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hvrnn/rng.hpp"
#include "hvrnn/sequence.hpp"
#include "hvrnn/tensor.hpp"

namespace hvrnn::data {

struct SmmnistConfig {
    int canvas = 64;
    int num_digits = 2;
    int digit_size = 28;
    double speed_min = 2.0;
    double speed_max = 5.0;
    int context_len = 5;
    int horizon = 10;
    bool binarize = false;

    void validate() const {
        if (canvas < 1 || digit_size < 1 || digit_size > canvas)
            throw ContractViolation("SmmnistConfig: digit must fit the canvas");
        if (num_digits < 1) throw ContractViolation("SmmnistConfig: num_digits must be >= 1");
        if (speed_min < 0 || speed_max < speed_min)
            throw ContractViolation("SmmnistConfig: need 0 <= speed_min <= speed_max");
        if (context_len < 1 || horizon < 1)
            throw ContractViolation("SmmnistConfig: context_len and horizon must be >= 1");
    }
};

struct DigitState {
    double x = 0, y = 0;    // top-left corner, sub-pixel
    double vx = 0, vy = 0;  // pixels per frame
    int digit = 0;
};

class DigitSet {
public:
    DigitSet() = default;
    DigitSet(std::vector<Tensor<float>> images, std::vector<int> labels);

    int size() const { return static_cast<int>(images_.size()); }
    int dim() const { return dim_; }
    const Tensor<float>& image(int i) const { return images_[static_cast<std::size_t>(i)]; }
    int label(int i) const { return labels_[static_cast<std::size_t>(i)]; }

    // Nearest-neighbour rescale of every glyph to new_dim x new_dim.
    DigitSet resized(int new_dim) const;

private:
    std::vector<Tensor<float>> images_;
    std::vector<int> labels_;
    int dim_ = 0;
};

// Big-endian IDX ingestion (image magic 0x00000803, label magic 0x00000801);
// pixels scaled to [0, 1]. Throws FormatError naming the byte offset on
// malformed input, and on an image/label count mismatch.
DigitSet load_mnist_idx(const std::string& images_path, const std::string& labels_path);

// Ten deterministic 28x28 seven-segment glyphs, used when no IDX files are
// supplied.
DigitSet synthetic_digits();

// One linear-motion step with border bouncing: on contact the speed and
// direction are resampled uniformly and the border-normal component is
// forced inward. Positions stay inside [0, canvas - digit_size].
void advance_digit(DigitState& d, const SmmnistConfig& cfg, rng::Counter& rng);

// Seeded sequence synthesis: (D+T, 1, canvas, canvas), values in [0, 1],
// digits composited by per-pixel max. Identical across machines for a given
// seed (integer counter RNG; trajectory math uses only IEEE-exact ops).
Tensor<float> generate_sequence(const SmmnistConfig& cfg, const DigitSet& digits,
                                std::uint64_t seed,
                                std::vector<std::vector<DigitState>>* trace = nullptr);

// Seed conventions: the held-out test list is fixed and disjoint from any
// run's training seeds by construction (distinct high bits).
inline std::uint64_t test_seed(int i) { return (1ULL << 62) + static_cast<std::uint64_t>(i); }
inline std::uint64_t train_seed(std::uint64_t run_seed, int i) {
    return rng::derive(run_seed, 0x7121u, static_cast<std::uint64_t>(i)) & ~(3ULL << 62);
}

std::vector<Tensor<float>> make_sequences(const SmmnistConfig& cfg, const DigitSet& digits,
                                          const std::vector<std::uint64_t>& seeds);

// Deterministically shuffled mini-batches over a fixed sequence set; the
// last batch of an epoch may be smaller. Sequences are (D+T, C, H, W) and
// are split at context_len.
class BatchStream {
public:
    BatchStream(std::vector<Tensor<float>> sequences, int context_len, int batch_size,
                std::uint64_t shuffle_seed);

    void start_epoch(std::int64_t epoch);
    std::optional<SequenceBatch<float>> next();
    std::int64_t batches_per_epoch() const;
    std::int64_t num_sequences() const { return static_cast<std::int64_t>(sequences_.size()); }

private:
    std::vector<Tensor<float>> sequences_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    int context_len_;
    int batch_size_;
    std::uint64_t shuffle_seed_;
};

// Unlimited on-the-fly batches from a seed-derived stream: batch i is a pure
// function of (seed, i).
class StreamingBatches {
public:
    StreamingBatches(SmmnistConfig cfg, DigitSet digits, int batch_size, std::uint64_t seed);
    SequenceBatch<float> batch_at(std::int64_t index) const;

private:
    SmmnistConfig cfg_;
    DigitSet digits_;
    int batch_size_;
    std::uint64_t seed_;
};

// Assembles (context, targets) from whole sequences (split at context_len).
SequenceBatch<float> assemble_batch(const std::vector<const Tensor<float>*>& seqs, int context_len);

// ---- PGM (P5, maxval 255) ----

void write_pgm(const std::string& path, const Tensor<float>& frame);  // (H,W) or (1,H,W)
Tensor<float> read_pgm(const std::string& path);                      // (1,H,W)

// Directory layout: <dir>/seq_00000/frame_000.pgm, zero-padded.
void write_sequence_dir(const std::string& dir, const Tensor<float>& seq);  // (S,C=1,H,W)
Tensor<float> load_sequence_dir(const std::string& dir);
void write_sequence_dataset(const std::string& root, const std::vector<Tensor<float>>& seqs);
std::vector<Tensor<float>> load_sequence_dataset(const std::string& root);

}  // namespace hvrnn::data
