#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "hvrnn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace hvrnn::train {

std::uint64_t fnv1a64(const unsigned char* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

void append_le_f32(std::vector<unsigned char>& blob, const Tensor<float>& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        std::uint32_t bits;
        float v = t[i];
        std::memcpy(&bits, &v, 4);
        blob.push_back(static_cast<unsigned char>(bits));
        blob.push_back(static_cast<unsigned char>(bits >> 8));
        blob.push_back(static_cast<unsigned char>(bits >> 16));
        blob.push_back(static_cast<unsigned char>(bits >> 24));
    }
}

Tensor<float> tensor_from_le(const std::vector<unsigned char>& blob, std::size_t offset,
                             const Shape& shape) {
    Tensor<float> t(shape);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        std::size_t o = offset + std::size_t(i) * 4;
        std::uint32_t bits = std::uint32_t(blob[o]) | (std::uint32_t(blob[o + 1]) << 8) |
                             (std::uint32_t(blob[o + 2]) << 16) | (std::uint32_t(blob[o + 3]) << 24);
        float v;
        std::memcpy(&v, &bits, 4);
        t[i] = v;
    }
    return t;
}

std::string checksum_string(const std::vector<unsigned char>& blob) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx",
                  static_cast<unsigned long long>(fnv1a64(blob.data(), blob.size())));
    return buf;
}

json parse_or_object(const std::string& s) {
    if (s.empty()) return json::object();
    return json::parse(s);
}

}  // namespace

void save_checkpoint(const std::string& dir, const ParamStore<float>& params,
                     const AdamState<float>* adam, const CheckpointMeta& meta) {
    fs::create_directories(dir);
    std::vector<unsigned char> blob;
    json table = json::array();
    auto add_tensor = [&](const std::string& name, const Tensor<float>& t) {
        json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["dtype"] = "f32";
        e["offset"] = blob.size();
        e["bytes"] = std::size_t(t.numel()) * 4;
        table.push_back(e);
        append_le_f32(blob, t);
    };
    for (const auto* p : params.all()) add_tensor(p->name, p->value);
    if (adam) {
        for (const auto& [name, t] : adam->m) add_tensor("adam.m." + name, t);
        for (const auto& [name, t] : adam->v) add_tensor("adam.v." + name, t);
    }

    json manifest;
    manifest["format_version"] = 1;
    manifest["step"] = meta.step;
    manifest["epoch"] = meta.epoch;
    manifest["schedule"] = parse_or_object(meta.schedule_json);
    manifest["model"] = parse_or_object(meta.model_json);
    manifest["rng"] = parse_or_object(meta.rng_json);
    manifest["tensors"] = table;
    manifest["checksum"] = checksum_string(blob);

    std::ofstream fb(dir + "/params.bin", std::ios::binary);
    if (!fb) throw FormatError(dir + "/params.bin: cannot open for writing");
    fb.write(reinterpret_cast<const char*>(blob.data()), std::streamsize(blob.size()));
    if (!fb) throw FormatError(dir + "/params.bin: write failed");
    std::ofstream fm(dir + "/manifest.json");
    if (!fm) throw FormatError(dir + "/manifest.json: cannot open for writing");
    fm << manifest.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    std::ifstream fm(dir + "/manifest.json");
    if (!fm) throw FormatError(dir + ": missing manifest.json");
    json manifest;
    try {
        fm >> manifest;
    } catch (const json::exception& e) {
        throw FormatError(dir + "/manifest.json: " + e.what());
    }
    if (!manifest.contains("format_version") || manifest["format_version"].get<int>() != 1)
        throw FormatError(dir + ": unknown checkpoint format version");

    std::ifstream fb(dir + "/params.bin", std::ios::binary);
    if (!fb) throw FormatError(dir + ": missing params.bin");
    std::vector<unsigned char> blob((std::istreambuf_iterator<char>(fb)),
                                    std::istreambuf_iterator<char>());
    std::string want = manifest.value("checksum", "");
    if (checksum_string(blob) != want)
        throw FormatError(dir + ": checksum mismatch (file truncated or corrupted)");

    LoadedCheckpoint out;
    out.meta.version = 1;
    out.meta.step = manifest.value("step", std::int64_t(0));
    out.meta.epoch = manifest.value("epoch", std::int64_t(0));
    out.meta.schedule_json = manifest.contains("schedule") ? manifest["schedule"].dump() : "";
    out.meta.model_json = manifest.contains("model") ? manifest["model"].dump() : "";
    out.meta.rng_json = manifest.contains("rng") ? manifest["rng"].dump() : "";
    for (const auto& e : manifest["tensors"]) {
        std::string name = e.at("name").get<std::string>();
        Shape shape = e.at("shape").get<Shape>();
        std::size_t offset = e.at("offset").get<std::size_t>();
        std::size_t bytes = e.at("bytes").get<std::size_t>();
        if (offset + bytes > blob.size())
            throw FormatError(dir + ": tensor " + name + " extends past end of blob");
        if (bytes != std::size_t(shape_numel(shape)) * 4)
            throw FormatError(dir + ": tensor " + name + " byte count disagrees with shape");
        out.tensors.emplace(name, tensor_from_le(blob, offset, shape));
    }
    return out;
}

void LoadedCheckpoint::apply_params(ParamStore<float>& params) const {
    std::string missing, mismatched;
    auto join = [](std::string& acc, const std::string& s) {
        acc += acc.empty() ? s : ", " + s;
    };
    for (auto* p : params.all()) {
        auto it = tensors.find(p->name);
        if (it == tensors.end())
            join(missing, p->name);
        else if (it->second.shape() != p->value.shape())
            join(mismatched, p->name + " " + shape_str(it->second.shape()) + " vs model " +
                                 shape_str(p->value.shape()));
    }
    if (!missing.empty() || !mismatched.empty()) {
        std::string msg = "checkpoint does not fit the model.";
        if (!missing.empty()) msg += " missing parameters: " + missing + ".";
        if (!mismatched.empty()) msg += " shape mismatches: " + mismatched + ".";
        throw FormatError(msg);
    }
    std::string unknown;
    for (const auto& [name, t] : tensors) {
        if (name.rfind("adam.", 0) == 0) continue;
        if (!params.find(name)) join(unknown, name);
    }
    if (!unknown.empty())
        throw FormatError("checkpoint contains parameters unknown to the model: " + unknown);
    for (auto* p : params.all()) p->value = tensors.at(p->name);
}

void LoadedCheckpoint::apply_adam(AdamState<float>& adam, ParamStore<float>& params) const {
    adam.ensure(params);
    for (auto* p : params.all()) {
        auto im = tensors.find("adam.m." + p->name);
        auto iv = tensors.find("adam.v." + p->name);
        if (im == tensors.end() || iv == tensors.end())
            throw FormatError("checkpoint is missing optimizer state for " + p->name);
        adam.m.at(p->name) = im->second;
        adam.v.at(p->name) = iv->second;
    }
}

std::string schedule_to_json(const TrainSchedule& s) {
    json j;
    j["lr_start"] = s.lr_start;
    j["lr_end"] = s.lr_end;
    j["lr_warmup_epochs"] = s.lr_warmup_epochs;
    j["beta_start"] = s.beta_start;
    j["beta_end"] = s.beta_end;
    j["beta_warmup_epochs"] = s.beta_warmup_epochs;
    j["beta_warmup"] = s.beta_warmup;
    j["adam_beta1"] = s.adam_beta1;
    j["adam_beta2"] = s.adam_beta2;
    j["adam_eps"] = s.adam_eps;
    j["weight_decay"] = s.weight_decay;
    j["grad_clip"] = s.grad_clip;
    j["batch_size"] = s.batch_size;
    j["epochs"] = s.epochs;
    j["checkpoint_every"] = s.checkpoint_every;
    j["eval_subsample"] = s.eval_subsample;
    j["seed"] = s.seed;
    return j.dump();
}

TrainSchedule schedule_from_json(const std::string& jstr) {
    TrainSchedule s;
    json j;
    try {
        j = json::parse(jstr);
    } catch (const json::exception& e) {
        throw FormatError(std::string("schedule json: ") + e.what());
    }
    s.lr_start = j.value("lr_start", s.lr_start);
    s.lr_end = j.value("lr_end", s.lr_end);
    s.lr_warmup_epochs = j.value("lr_warmup_epochs", s.lr_warmup_epochs);
    s.beta_start = j.value("beta_start", s.beta_start);
    s.beta_end = j.value("beta_end", s.beta_end);
    s.beta_warmup_epochs = j.value("beta_warmup_epochs", s.beta_warmup_epochs);
    s.beta_warmup = j.value("beta_warmup", s.beta_warmup);
    s.adam_beta1 = j.value("adam_beta1", s.adam_beta1);
    s.adam_beta2 = j.value("adam_beta2", s.adam_beta2);
    s.adam_eps = j.value("adam_eps", s.adam_eps);
    s.weight_decay = j.value("weight_decay", s.weight_decay);
    s.grad_clip = j.value("grad_clip", s.grad_clip);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.epochs = j.value("epochs", s.epochs);
    s.checkpoint_every = j.value("checkpoint_every", s.checkpoint_every);
    s.eval_subsample = j.value("eval_subsample", s.eval_subsample);
    s.seed = j.value("seed", s.seed);
    return s;
}

}  // namespace hvrnn::train
