#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hvrnn/data.hpp"
#include "hvrnn/evalproto.hpp"
#include "hvrnn/model.hpp"
#include "hvrnn/train.hpp"

namespace hvrnn::config {

// Complete declarative description of a run. Parsed from a single JSON
// document; unknown keys are rejected and dotted-path --set overrides are
// applied before validation.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "runs/out";

    // model
    std::string preset = "1-8";
    double width = 0.25;
    int decoder_recurrent_stages = -1;
    bool dense = true;

    // data
    std::string source = "smmnist";  // or "pgm-dir"
    std::string data_dir;            // dataset root for source == "pgm-dir"
    data::SmmnistConfig smmnist;     // canvas doubles as the model frame size
    std::string digits = "synthetic";  // or "idx"
    std::string idx_images, idx_labels;
    int train_sequences = 2000;
    int test_sequences = 256;

    train::TrainSchedule schedule;
    eval::EvalConfig eval;

    model::HierarchySpec hierarchy() const;
    void validate() const;
};

// Parses and validates; throws ConfigError with a field-level message.
RunConfig parse_run_config(const std::string& json_text);

// Reads the file, applies "a.b.c=value" overrides (values parsed as JSON
// where possible, else taken as strings), then out/seed overrides.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides,
                          const std::string& out_override,
                          std::optional<std::uint64_t> seed_override);

// Fully resolved snapshot (every default materialized); reparsing it yields
// the same configuration.
std::string to_json(const RunConfig& cfg);

// Re-derives a config with dotted-path overrides applied (used by sweeps).
RunConfig with_overrides(const RunConfig& base, const std::vector<std::string>& overrides);

// Digit glyphs per config ("synthetic" or "idx"; relative IDX paths resolve
// under $HVRNN_DATA_DIR), rescaled to digit_size.
data::DigitSet load_digits(const RunConfig& cfg);

std::vector<Tensor<float>> train_set(const RunConfig& cfg, const data::DigitSet& digits);
std::vector<Tensor<float>> test_set(const RunConfig& cfg, const data::DigitSet& digits);

}  // namespace hvrnn::config
