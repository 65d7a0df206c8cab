#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hvrnn/data.hpp"
#include "hvrnn/errors.hpp"

namespace fs = std::filesystem;

namespace hvrnn::data {

namespace {

std::string zero_pad(std::int64_t v, int width) {
    std::ostringstream os;
    os << std::setw(width) << std::setfill('0') << v;
    return os.str();
}

int read_pgm_token(std::ifstream& f, const std::string& path) {
    // Skips whitespace and '#' comment lines, then reads one integer.
    int c = f.peek();
    while (f && (std::isspace(c) || c == '#')) {
        if (c == '#') {
            std::string line;
            std::getline(f, line);
        } else {
            f.get();
        }
        c = f.peek();
    }
    int v = -1;
    f >> v;
    if (!f || v < 0) throw FormatError(path + ": malformed PGM header");
    return v;
}

}  // namespace

void write_pgm(const std::string& path, const Tensor<float>& frame) {
    std::int64_t H, W;
    if (frame.rank() == 2) {
        H = frame.dim(0);
        W = frame.dim(1);
    } else if (frame.rank() == 3 && frame.dim(0) == 1) {
        H = frame.dim(1);
        W = frame.dim(2);
    } else {
        throw ContractViolation("write_pgm: expected (H,W) or (1,H,W), got " +
                                shape_str(frame.shape()));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError(path + ": cannot open for writing");
    f << "P5\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(W));
    for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
            float v = frame[y * W + x];
            v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            row[static_cast<std::size_t>(x)] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(W));
    }
    if (!f) throw FormatError(path + ": write failed");
}

Tensor<float> read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError(path + ": cannot open");
    char m0 = 0, m1 = 0;
    f.get(m0);
    f.get(m1);
    if (m0 != 'P' || m1 != '5') throw FormatError(path + ": not a P5 PGM");
    int W = read_pgm_token(f, path);
    int H = read_pgm_token(f, path);
    int maxval = read_pgm_token(f, path);
    if (maxval != 255) throw FormatError(path + ": expected maxval 255");
    f.get();  // single whitespace after maxval
    std::vector<unsigned char> buf(static_cast<std::size_t>(W) * H);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw FormatError(path + ": truncated pixel data");
    Tensor<float> out({1, H, W});
    for (std::size_t i = 0; i < buf.size(); ++i)
        out[static_cast<std::int64_t>(i)] = float(buf[i]) / 255.0f;
    return out;
}

void write_sequence_dir(const std::string& dir, const Tensor<float>& seq) {
    if (seq.rank() != 4 || seq.dim(1) != 1)
        throw ContractViolation("write_sequence_dir: expected (S,1,H,W)");
    fs::create_directories(dir);
    std::int64_t S = seq.dim(0), H = seq.dim(2), W = seq.dim(3);
    for (std::int64_t t = 0; t < S; ++t) {
        Tensor<float> frame({H, W});
        std::copy(seq.data() + t * H * W, seq.data() + (t + 1) * H * W, frame.data());
        write_pgm(dir + "/frame_" + zero_pad(t, 3) + ".pgm", frame);
    }
}

Tensor<float> load_sequence_dir(const std::string& dir) {
    std::vector<fs::path> frames;
    if (!fs::is_directory(dir)) throw FormatError(dir + ": not a directory");
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".pgm") frames.push_back(e.path());
    if (frames.empty()) throw FormatError(dir + ": no PGM frames");
    std::sort(frames.begin(), frames.end());
    Tensor<float> first = read_pgm(frames[0].string());
    std::int64_t H = first.dim(1), W = first.dim(2);
    Tensor<float> out({static_cast<std::int64_t>(frames.size()), 1, H, W});
    for (std::size_t t = 0; t < frames.size(); ++t) {
        Tensor<float> fr = read_pgm(frames[t].string());
        if (fr.dim(1) != H || fr.dim(2) != W)
            throw FormatError(frames[t].string() + ": frame size differs within sequence");
        std::copy(fr.data(), fr.data() + H * W, out.data() + std::int64_t(t) * H * W);
    }
    return out;
}

void write_sequence_dataset(const std::string& root, const std::vector<Tensor<float>>& seqs) {
    fs::create_directories(root);
    for (std::size_t i = 0; i < seqs.size(); ++i)
        write_sequence_dir(root + "/seq_" + zero_pad(std::int64_t(i), 5), seqs[i]);
}

std::vector<Tensor<float>> load_sequence_dataset(const std::string& root) {
    if (!fs::is_directory(root)) throw FormatError(root + ": not a directory");
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) dirs.push_back(e.path());
    if (dirs.empty()) throw FormatError(root + ": no sequence subdirectories");
    std::sort(dirs.begin(), dirs.end());
    std::vector<Tensor<float>> out;
    out.reserve(dirs.size());
    for (const auto& d : dirs) out.push_back(load_sequence_dir(d.string()));
    return out;
}

}  // namespace hvrnn::data
