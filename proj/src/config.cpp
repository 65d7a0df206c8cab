#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "hvrnn/config.hpp"

using nlohmann::json;

namespace hvrnn::config {

namespace {

// Schema skeleton used for unknown-key rejection.
const json& schema() {
    static const json s = {
        {"seed", true},
        {"out_dir", true},
        {"model",
         {{"preset", true}, {"width", true}, {"decoder_recurrent_stages", true}, {"dense", true}}},
        {"data",
         {{"source", true},
          {"dir", true},
          {"canvas", true},
          {"num_digits", true},
          {"digit_size", true},
          {"speed_min", true},
          {"speed_max", true},
          {"context_len", true},
          {"horizon", true},
          {"binarize", true},
          {"digits", true},
          {"idx_images", true},
          {"idx_labels", true},
          {"train_sequences", true},
          {"test_sequences", true}}},
        {"train",
         {{"lr_start", true},     {"lr_end", true},       {"lr_warmup_epochs", true},
          {"beta_start", true},   {"beta_end", true},     {"beta_warmup_epochs", true},
          {"beta_warmup", true},  {"adam_beta1", true},   {"adam_beta2", true},
          {"adam_eps", true},     {"weight_decay", true}, {"grad_clip", true},
          {"batch_size", true},   {"epochs", true},       {"checkpoint_every", true},
          {"eval_subsample", true}}},
        {"eval",
         {{"n_samples", true}, {"metrics", true}, {"per_timestep", true}, {"seed", true}}},
    };
    return s;
}

void reject_unknown(const json& doc, const json& known, const std::string& prefix) {
    if (!doc.is_object()) return;
    for (const auto& [key, value] : doc.items()) {
        if (!known.contains(key))
            throw ConfigError("unknown config key: " + (prefix.empty() ? key : prefix + "." + key));
        if (known[key].is_object()) {
            if (!value.is_object())
                throw ConfigError("config key " + (prefix.empty() ? key : prefix + "." + key) +
                                  " must be an object");
            reject_unknown(value, known[key], prefix.empty() ? key : prefix + "." + key);
        }
    }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

}  // namespace

model::HierarchySpec RunConfig::hierarchy() const {
    model::HierarchySpec s = model::HierarchySpec::preset(preset);
    s.width_multiplier = width;
    s.context_len = smmnist.context_len;
    s.horizon = smmnist.horizon;
    s.frame_size = smmnist.canvas;
    s.frame_channels = 1;
    s.decoder_recurrent_stages = decoder_recurrent_stages;
    s.dense = dense;
    return s;
}

void RunConfig::validate() const {
    if (source != "smmnist" && source != "pgm-dir")
        throw ConfigError("data.source must be 'smmnist' or 'pgm-dir'");
    if (source == "pgm-dir" && data_dir.empty())
        throw ConfigError("data.dir is required when data.source is 'pgm-dir'");
    if (digits != "synthetic" && digits != "idx")
        throw ConfigError("data.digits must be 'synthetic' or 'idx'");
    if (digits == "idx" && (idx_images.empty() || idx_labels.empty()))
        throw ConfigError("data.idx_images and data.idx_labels are required when data.digits is 'idx'");
    if (train_sequences < 1 || test_sequences < 1)
        throw ConfigError("data.train_sequences and data.test_sequences must be >= 1");
    try {
        smmnist.validate();
        schedule.validate();
        eval.validate();
        hierarchy().validate();
    } catch (const ContractViolation& e) {
        throw ConfigError(e.what());
    }
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    reject_unknown(j, schema(), "");

    RunConfig c;
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    c.out_dir = get_or<std::string>(j, "out_dir", c.out_dir);
    json m = j.value("model", json::object());
    if (m.contains("preset"))  // "--set model.preset=1" arrives as a number
        c.preset = m["preset"].is_string() ? m["preset"].get<std::string>() : m["preset"].dump();
    c.width = get_or<double>(m, "width", c.width);
    c.decoder_recurrent_stages = get_or<int>(m, "decoder_recurrent_stages", c.decoder_recurrent_stages);
    c.dense = get_or<bool>(m, "dense", c.dense);

    json d = j.value("data", json::object());
    c.source = get_or<std::string>(d, "source", c.source);
    c.data_dir = get_or<std::string>(d, "dir", c.data_dir);
    c.smmnist.canvas = get_or<int>(d, "canvas", c.smmnist.canvas);
    c.smmnist.num_digits = get_or<int>(d, "num_digits", c.smmnist.num_digits);
    c.smmnist.digit_size = get_or<int>(d, "digit_size", c.smmnist.digit_size);
    c.smmnist.speed_min = get_or<double>(d, "speed_min", c.smmnist.speed_min);
    c.smmnist.speed_max = get_or<double>(d, "speed_max", c.smmnist.speed_max);
    c.smmnist.context_len = get_or<int>(d, "context_len", c.smmnist.context_len);
    c.smmnist.horizon = get_or<int>(d, "horizon", c.smmnist.horizon);
    c.smmnist.binarize = get_or<bool>(d, "binarize", c.smmnist.binarize);
    c.digits = get_or<std::string>(d, "digits", c.digits);
    c.idx_images = get_or<std::string>(d, "idx_images", c.idx_images);
    c.idx_labels = get_or<std::string>(d, "idx_labels", c.idx_labels);
    c.train_sequences = get_or<int>(d, "train_sequences", c.train_sequences);
    c.test_sequences = get_or<int>(d, "test_sequences", c.test_sequences);

    if (j.contains("train")) c.schedule = train::schedule_from_json(j["train"].dump());
    c.schedule.seed = c.seed;

    json e = j.value("eval", json::object());
    c.eval.n_samples = get_or<int>(e, "n_samples", c.eval.n_samples);
    if (e.contains("metrics")) {
        try {
            c.eval.metrics = e["metrics"].get<std::vector<std::string>>();
        } catch (const json::exception&) {
            throw ConfigError("eval.metrics must be an array of metric names");
        }
    }
    c.eval.per_timestep = get_or<bool>(e, "per_timestep", c.eval.per_timestep);
    c.eval.seed = get_or<std::uint64_t>(e, "seed", c.eval.seed);

    c.validate();
    return c;
}

namespace {

void apply_override(json& j, const std::string& ov) {
    auto eq = ov.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + ov + "'");
    std::string keypath = ov.substr(0, eq);
    std::string value = ov.substr(eq + 1);
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::exception&) {
        parsed = value;  // plain string
    }
    json* cursor = &j;
    std::size_t pos = 0;
    while (true) {
        auto dot = keypath.find('.', pos);
        std::string key = keypath.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (key.empty()) throw ConfigError("--set key path has an empty segment: " + keypath);
        if (dot == std::string::npos) {
            (*cursor)[key] = parsed;
            break;
        }
        if (!cursor->contains(key) || !(*cursor)[key].is_object()) (*cursor)[key] = json::object();
        cursor = &(*cursor)[key];
        pos = dot + 1;
    }
}

}  // namespace

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides,
                          const std::string& out_override,
                          std::optional<std::uint64_t> seed_override) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path + " is not valid JSON: " + e.what());
    }
    for (const std::string& ov : overrides) apply_override(j, ov);
    if (!out_override.empty()) j["out_dir"] = out_override;
    if (seed_override) j["seed"] = *seed_override;
    return parse_run_config(j.dump());
}

RunConfig with_overrides(const RunConfig& base, const std::vector<std::string>& overrides) {
    json j = json::parse(to_json(base));
    for (const std::string& ov : overrides) apply_override(j, ov);
    return parse_run_config(j.dump());
}

std::string to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["model"] = {{"preset", c.preset},
                  {"width", c.width},
                  {"decoder_recurrent_stages", c.decoder_recurrent_stages},
                  {"dense", c.dense}};
    j["data"] = {{"source", c.source},
                 {"dir", c.data_dir},
                 {"canvas", c.smmnist.canvas},
                 {"num_digits", c.smmnist.num_digits},
                 {"digit_size", c.smmnist.digit_size},
                 {"speed_min", c.smmnist.speed_min},
                 {"speed_max", c.smmnist.speed_max},
                 {"context_len", c.smmnist.context_len},
                 {"horizon", c.smmnist.horizon},
                 {"binarize", c.smmnist.binarize},
                 {"digits", c.digits},
                 {"idx_images", c.idx_images},
                 {"idx_labels", c.idx_labels},
                 {"train_sequences", c.train_sequences},
                 {"test_sequences", c.test_sequences}};
    j["train"] = json::parse(train::schedule_to_json(c.schedule));
    j["train"].erase("seed");  // the run seed is authoritative
    j["eval"] = {{"n_samples", c.eval.n_samples},
                 {"metrics", c.eval.metrics},
                 {"per_timestep", c.eval.per_timestep},
                 {"seed", c.eval.seed}};
    return j.dump(2);
}

data::DigitSet load_digits(const RunConfig& c) {
    if (c.digits == "synthetic") return data::synthetic_digits().resized(c.smmnist.digit_size);
    auto resolve = [](std::string p) {
        if (!p.empty() && p[0] != '/') {
            if (const char* base = std::getenv("HVRNN_DATA_DIR"))
                return std::string(base) + "/" + p;
        }
        return p;
    };
    return data::load_mnist_idx(resolve(c.idx_images), resolve(c.idx_labels))
        .resized(c.smmnist.digit_size);
}

std::vector<Tensor<float>> train_set(const RunConfig& c, const data::DigitSet& digits) {
    if (c.source == "pgm-dir") return data::load_sequence_dataset(c.data_dir + "/train");
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < c.train_sequences; ++i) seeds.push_back(data::train_seed(c.seed, i));
    return data::make_sequences(c.smmnist, digits, seeds);
}

std::vector<Tensor<float>> test_set(const RunConfig& c, const data::DigitSet& digits) {
    if (c.source == "pgm-dir") return data::load_sequence_dataset(c.data_dir + "/test");
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < c.test_sequences; ++i) seeds.push_back(data::test_seed(i));
    return data::make_sequences(c.smmnist, digits, seeds);
}

}  // namespace hvrnn::config
