#include "hvrnn/data.hpp"

namespace hvrnn::data {

DigitSet::DigitSet(std::vector<Tensor<float>> images, std::vector<int> labels)
    : images_(std::move(images)), labels_(std::move(labels)) {
    if (images_.empty()) throw ContractViolation("DigitSet: empty image set");
    if (labels_.size() != images_.size())
        throw ContractViolation("DigitSet: image/label count mismatch");
    dim_ = static_cast<int>(images_[0].dim(0));
    for (const auto& im : images_)
        if (im.rank() != 2 || im.dim(0) != dim_ || im.dim(1) != dim_)
            throw ContractViolation("DigitSet: all glyphs must be square and equally sized");
}

DigitSet DigitSet::resized(int new_dim) const {
    if (new_dim < 1) throw ContractViolation("DigitSet: bad target size");
    if (new_dim == dim_) return *this;
    std::vector<Tensor<float>> out;
    out.reserve(images_.size());
    for (const auto& im : images_) {
        Tensor<float> r({new_dim, new_dim});
        for (int y = 0; y < new_dim; ++y)
            for (int x = 0; x < new_dim; ++x) {
                std::int64_t sy = static_cast<std::int64_t>(y) * dim_ / new_dim;
                std::int64_t sx = static_cast<std::int64_t>(x) * dim_ / new_dim;
                r[y * new_dim + x] = im[sy * dim_ + sx];
            }
        out.push_back(std::move(r));
    }
    return DigitSet(std::move(out), labels_);
}

namespace {

// Seven-segment layout on a 28x28 canvas, 3px strokes.
//   A: top, G: middle, D: bottom; F/B upper-left/right, E/C lower-left/right.
enum Seg { A = 1, B = 2, C = 4, D = 8, E = 16, F = 32, G = 64 };

constexpr int kSegments[10] = {
    A | B | C | D | E | F,      // 0
    B | C,                      // 1
    A | B | G | E | D,          // 2
    A | B | G | C | D,          // 3
    F | G | B | C,              // 4
    A | F | G | C | D,          // 5
    A | F | G | E | D | C,      // 6
    A | B | C,                  // 7
    A | B | C | D | E | F | G,  // 8
    A | B | C | D | F | G,      // 9
};

void fill(Tensor<float>& im, int y0, int y1, int x0, int x1) {
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) im[y * 28 + x] = 1.0f;
}

}  // namespace

DigitSet synthetic_digits() {
    std::vector<Tensor<float>> images;
    std::vector<int> labels;
    for (int d = 0; d < 10; ++d) {
        Tensor<float> im({28, 28});
        int s = kSegments[d];
        if (s & A) fill(im, 3, 6, 7, 21);
        if (s & G) fill(im, 12, 15, 7, 21);
        if (s & D) fill(im, 22, 25, 7, 21);
        if (s & F) fill(im, 4, 14, 6, 9);
        if (s & B) fill(im, 4, 14, 19, 22);
        if (s & E) fill(im, 14, 24, 6, 9);
        if (s & C) fill(im, 14, 24, 19, 22);
        images.push_back(std::move(im));
        labels.push_back(d);
    }
    return DigitSet(std::move(images), std::move(labels));
}

}  // namespace hvrnn::data
