#include <cstdint>
#include <fstream>

#include "hvrnn/data.hpp"
#include "hvrnn/errors.hpp"

namespace hvrnn::data {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_u32_be(std::ifstream& f, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f)
        throw FormatError(path + ": truncated while reading 4 bytes at offset " +
                          std::to_string(offset));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

std::vector<unsigned char> read_bytes(std::ifstream& f, const std::string& path, std::size_t offset,
                                      std::size_t n) {
    std::vector<unsigned char> buf(n);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (!f)
        throw FormatError(path + ": truncated while reading " + std::to_string(n) +
                          " bytes at offset " + std::to_string(offset));
    return buf;
}

}  // namespace

DigitSet load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw FormatError(images_path + ": cannot open");
    std::uint32_t magic = read_u32_be(fi, images_path, 0);
    if (magic != kImageMagic)
        throw FormatError(images_path + ": bad image magic at offset 0, expected 0x00000803");
    std::uint32_t count = read_u32_be(fi, images_path, 4);
    std::uint32_t rows = read_u32_be(fi, images_path, 8);
    std::uint32_t cols = read_u32_be(fi, images_path, 12);
    if (rows != cols || rows == 0)
        throw FormatError(images_path + ": expected square images, got " + std::to_string(rows) +
                          "x" + std::to_string(cols));
    std::size_t npix = std::size_t(rows) * cols;
    std::vector<unsigned char> pixels = read_bytes(fi, images_path, 16, std::size_t(count) * npix);

    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw FormatError(labels_path + ": cannot open");
    std::uint32_t lmagic = read_u32_be(fl, labels_path, 0);
    if (lmagic != kLabelMagic)
        throw FormatError(labels_path + ": bad label magic at offset 0, expected 0x00000801");
    std::uint32_t lcount = read_u32_be(fl, labels_path, 4);
    if (lcount != count)
        throw FormatError(labels_path + ": label count " + std::to_string(lcount) +
                          " does not match image count " + std::to_string(count));
    std::vector<unsigned char> labels = read_bytes(fl, labels_path, 8, lcount);

    std::vector<Tensor<float>> images;
    images.reserve(count);
    std::vector<int> lab;
    lab.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Tensor<float> im({std::int64_t(rows), std::int64_t(cols)});
        for (std::size_t p = 0; p < npix; ++p)
            im[std::int64_t(p)] = float(pixels[i * npix + p]) / 255.0f;
        images.push_back(std::move(im));
        lab.push_back(int(labels[i]));
    }
    return DigitSet(std::move(images), std::move(lab));
}

}  // namespace hvrnn::data
