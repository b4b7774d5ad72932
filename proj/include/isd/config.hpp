#pragma once

// Experiment configuration: an INI file with [run], [synth], [mapping],
// [decoder] and [eval] sections. Unknown sections or keys are rejected.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "isd/contrastive_decoder.hpp"
#include "isd/mapping_models.hpp"
#include "isd/synthgen.hpp"

namespace isd {

struct RunOptions {
    std::uint64_t seed = 0;
    std::string out = "out";
    std::string dataset;  // empty: <out>/dataset
    std::size_t jobs = 1;
    std::vector<MappingKind> models = {MappingKind::LinearLag};
    std::vector<EncoderName> encoders = {EncoderName::Semantic};
    std::vector<std::string> subjects;  // held-out subjects; empty means all
};

struct EvalOptions {
    std::size_t held_out_trials = 2;
    bool include_null = true;
    std::size_t scaling_subsets = 10;
    std::vector<std::size_t> scaling_ks;  // empty: 1 .. N-1
    std::size_t top_k = 20;
    std::size_t null_draws = 100000;
    double onset_jitter_sd_s = 0.0;
    std::size_t auc_k = 0;  // 0: full vocabulary
};

struct ExperimentConfig {
    RunOptions run;
    SynthConfig synth;
    MappingSpec mapping;  // kind is set per model; channels follow synth
    MappingTrainOptions train;
    DecoderSpec decoder;  // channels and window length follow synth
    std::size_t word_dim = 64;  // synthetic embedding dimension
    std::string embeddings;     // directory of <encoder>.tsv files; empty: synthetic tables
    EvalOptions eval;

    /// Mapping spec for one model family, with channels taken from the synth section.
    MappingSpec mapping_spec(MappingKind kind) const;
    DecoderSpec decoder_spec() const;
    void validate() const;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// "section.key" -> value text for every setting.
std::map<std::string, std::string> config_entries(const ExperimentConfig& cfg);
/// Sets one "section.key"; throws ConfigError for unknown keys or bad values.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

ExperimentConfig parse_config(const std::string& text);
std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace isd
