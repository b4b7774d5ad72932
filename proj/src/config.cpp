#include "isd/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "isd/io.hpp"

namespace isd {

namespace {

struct Field {
    std::string key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
    return out;
}

std::uint64_t parse_u64(const std::string& v) {
    std::uint64_t x = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("'" + v + "' is not a non-negative integer");
    return x;
}

double parse_double(const std::string& v) {
    double x = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("'" + v + "' is not a number");
    return x;
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("'" + v + "' is not a boolean");
}

template <typename M>
Field size_field(std::string key, M member) {
    return {std::move(key), [member](const ExperimentConfig& c) { return std::to_string(member(const_cast<ExperimentConfig&>(c))); },
            [member](ExperimentConfig& c, const std::string& v) { member(c) = static_cast<std::size_t>(parse_u64(v)); }};
}

template <typename M>
Field double_field(std::string key, M member) {
    return {std::move(key), [member](const ExperimentConfig& c) { return io::format_double(member(const_cast<ExperimentConfig&>(c))); },
            [member](ExperimentConfig& c, const std::string& v) { member(c) = parse_double(v); }};
}

template <typename M>
Field bool_field(std::string key, M member) {
    return {std::move(key), [member](const ExperimentConfig& c) { return member(const_cast<ExperimentConfig&>(c)) ? "true" : "false"; },
            [member](ExperimentConfig& c, const std::string& v) { member(c) = parse_bool(v); }};
}

template <typename M>
Field string_field(std::string key, M member) {
    return {std::move(key), [member](const ExperimentConfig& c) { return member(const_cast<ExperimentConfig&>(c)); },
            [member](ExperimentConfig& c, const std::string& v) { member(c) = v; }};
}

#define ISD_MEMBER(expr) [](ExperimentConfig& c) -> auto& { return expr; }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"run.seed", [](const ExperimentConfig& c) { return std::to_string(c.run.seed); },
                     [](ExperimentConfig& c, const std::string& v) { c.run.seed = parse_u64(v); }});
        f.push_back(string_field("run.out", ISD_MEMBER(c.run.out)));
        f.push_back(string_field("run.dataset", ISD_MEMBER(c.run.dataset)));
        f.push_back(size_field("run.jobs", ISD_MEMBER(c.run.jobs)));
        f.push_back({"run.models",
                     [](const ExperimentConfig& c) {
                         return join<MappingKind>(c.run.models, [](const MappingKind& k) { return std::string(to_string(k)); });
                     },
                     [](ExperimentConfig& c, const std::string& v) {
                         c.run.models.clear();
                         for (const auto& s : split_list(v)) c.run.models.push_back(mapping_kind_from_string(s));
                     }});
        f.push_back({"run.encoders",
                     [](const ExperimentConfig& c) {
                         return join<EncoderName>(c.run.encoders, [](const EncoderName& e) { return std::string(to_string(e)); });
                     },
                     [](ExperimentConfig& c, const std::string& v) {
                         c.run.encoders.clear();
                         for (const auto& s : split_list(v)) c.run.encoders.push_back(encoder_from_string(s));
                     }});
        f.push_back({"run.subjects",
                     [](const ExperimentConfig& c) { return join<std::string>(c.run.subjects, [](const std::string& s) { return s; }); },
                     [](ExperimentConfig& c, const std::string& v) { c.run.subjects = split_list(v); }});

        f.push_back(size_field("synth.n_subjects", ISD_MEMBER(c.synth.n_subjects)));
        f.push_back(size_field("synth.trials_per_condition", ISD_MEMBER(c.synth.trials_per_condition)));
        f.push_back(double_field("synth.duration_s", ISD_MEMBER(c.synth.duration_s)));
        f.push_back(size_field("synth.channels", ISD_MEMBER(c.synth.channels)));
        f.push_back(double_field("synth.sample_rate_hz", ISD_MEMBER(c.synth.sample_rate_hz)));
        f.push_back(size_field("synth.latent_dim", ISD_MEMBER(c.synth.latent_dim)));
        f.push_back(double_field("synth.noise_sd_listened", ISD_MEMBER(c.synth.noise_sd_listened)));
        f.push_back(double_field("synth.noise_sd_imagined", ISD_MEMBER(c.synth.noise_sd_imagined)));
        f.push_back(double_field("synth.imagined_attenuation", ISD_MEMBER(c.synth.imagined_attenuation)));
        f.push_back({"synth.mapping_kind", [](const ExperimentConfig& c) { return std::string(to_string(c.synth.mapping_kind)); },
                     [](ExperimentConfig& c, const std::string& v) { c.synth.mapping_kind = ground_truth_kind_from_string(v); }});
        f.push_back(double_field("synth.subject_perturbation", ISD_MEMBER(c.synth.subject_perturbation)));
        f.push_back(double_field("synth.class_share", ISD_MEMBER(c.synth.class_share)));
        f.push_back(bool_field("synth.shift_class_template", ISD_MEMBER(c.synth.shift_class_template)));
        f.push_back(double_field("synth.word_amplitude", ISD_MEMBER(c.synth.word_amplitude)));
        f.push_back(double_field("synth.word_spacing_s", ISD_MEMBER(c.synth.word_spacing_s)));
        f.push_back(double_field("synth.lag_delta_s", ISD_MEMBER(c.synth.lag_delta_s)));
        f.push_back(double_field("synth.window_pre_s", ISD_MEMBER(c.synth.window.pre_s)));
        f.push_back(double_field("synth.window_post_s", ISD_MEMBER(c.synth.window.post_s)));

        f.push_back(double_field("mapping.lambda", ISD_MEMBER(c.mapping.lambda)));
        f.push_back(double_field("mapping.dropout", ISD_MEMBER(c.mapping.dropout)));
        f.push_back(double_field("mapping.lag_delta_s", ISD_MEMBER(c.mapping.lag.delta_s)));
        f.push_back(size_field("mapping.mlp_hidden", ISD_MEMBER(c.mapping.mlp_hidden)));
        f.push_back(size_field("mapping.cnn_width", ISD_MEMBER(c.mapping.cnn_width)));
        f.push_back(size_field("mapping.cnn_kernel", ISD_MEMBER(c.mapping.cnn_kernel)));
        f.push_back(size_field("mapping.unet_width1", ISD_MEMBER(c.mapping.unet_width1)));
        f.push_back(size_field("mapping.unet_width2", ISD_MEMBER(c.mapping.unet_width2)));
        f.push_back(size_field("mapping.rnn_hidden", ISD_MEMBER(c.mapping.rnn_hidden)));
        f.push_back(size_field("mapping.tcn_width", ISD_MEMBER(c.mapping.tcn_width)));
        f.push_back(size_field("mapping.tcn_kernel", ISD_MEMBER(c.mapping.tcn_kernel)));
        f.push_back(size_field("mapping.tf_model", ISD_MEMBER(c.mapping.tf_model)));
        f.push_back(size_field("mapping.tf_layers", ISD_MEMBER(c.mapping.tf_layers)));
        f.push_back(size_field("mapping.tf_heads", ISD_MEMBER(c.mapping.tf_heads)));
        f.push_back(size_field("mapping.tf_ffn", ISD_MEMBER(c.mapping.tf_ffn)));
        f.push_back({"mapping.alpha_grid",
                     [](const ExperimentConfig& c) {
                         return join<double>(c.mapping.alpha_grid, [](const double& a) { return io::format_double(a); });
                     },
                     [](ExperimentConfig& c, const std::string& v) {
                         c.mapping.alpha_grid.clear();
                         for (const auto& s : split_list(v)) c.mapping.alpha_grid.push_back(parse_double(s));
                     }});
        f.push_back(size_field("mapping.cv_folds", ISD_MEMBER(c.mapping.cv_folds)));
        f.push_back(double_field("mapping.lr", ISD_MEMBER(c.train.lr)));
        f.push_back(double_field("mapping.weight_decay", ISD_MEMBER(c.train.weight_decay)));
        f.push_back(size_field("mapping.batch_trials", ISD_MEMBER(c.train.batch_trials)));
        f.push_back(size_field("mapping.max_epochs", ISD_MEMBER(c.train.max_epochs)));
        f.push_back(size_field("mapping.patience", ISD_MEMBER(c.train.patience)));
        f.push_back(size_field("mapping.crop_samples", ISD_MEMBER(c.train.crop_samples)));

        f.push_back(size_field("decoder.embed_dim", ISD_MEMBER(c.decoder.embed_dim)));
        f.push_back(double_field("decoder.temperature", ISD_MEMBER(c.decoder.temperature)));
        f.push_back(size_field("decoder.spatial_filters", ISD_MEMBER(c.decoder.spatial_filters)));
        f.push_back(size_field("decoder.temporal_blocks", ISD_MEMBER(c.decoder.temporal_blocks)));
        f.push_back(size_field("decoder.kernel", ISD_MEMBER(c.decoder.kernel)));
        f.push_back(double_field("decoder.dropout", ISD_MEMBER(c.decoder.dropout)));
        f.push_back(double_field("decoder.noise_aug_sd", ISD_MEMBER(c.decoder.noise_aug_sd)));
        f.push_back(double_field("decoder.lr", ISD_MEMBER(c.decoder.lr)));
        f.push_back(double_field("decoder.weight_decay", ISD_MEMBER(c.decoder.weight_decay)));
        f.push_back(size_field("decoder.batch_size", ISD_MEMBER(c.decoder.batch_size)));
        f.push_back(size_field("decoder.max_epochs", ISD_MEMBER(c.decoder.max_epochs)));
        f.push_back(size_field("decoder.patience", ISD_MEMBER(c.decoder.patience)));
        f.push_back(double_field("decoder.val_fraction", ISD_MEMBER(c.decoder.val_fraction)));
        f.push_back(size_field("decoder.word_dim", ISD_MEMBER(c.word_dim)));
        f.push_back(string_field("decoder.embeddings", ISD_MEMBER(c.embeddings)));

        f.push_back(size_field("eval.held_out_trials", ISD_MEMBER(c.eval.held_out_trials)));
        f.push_back(bool_field("eval.include_null", ISD_MEMBER(c.eval.include_null)));
        f.push_back(size_field("eval.scaling_subsets", ISD_MEMBER(c.eval.scaling_subsets)));
        f.push_back({"eval.scaling_ks",
                     [](const ExperimentConfig& c) {
                         return join<std::size_t>(c.eval.scaling_ks, [](const std::size_t& k) { return std::to_string(k); });
                     },
                     [](ExperimentConfig& c, const std::string& v) {
                         c.eval.scaling_ks.clear();
                         for (const auto& s : split_list(v)) c.eval.scaling_ks.push_back(static_cast<std::size_t>(parse_u64(s)));
                     }});
        f.push_back(size_field("eval.top_k", ISD_MEMBER(c.eval.top_k)));
        f.push_back(size_field("eval.null_draws", ISD_MEMBER(c.eval.null_draws)));
        f.push_back(double_field("eval.onset_jitter_sd_s", ISD_MEMBER(c.eval.onset_jitter_sd_s)));
        f.push_back(size_field("eval.auc_k", ISD_MEMBER(c.eval.auc_k)));
        return f;
    }();
    return table;
}

#undef ISD_MEMBER

const Field* find_field(const std::string& key) {
    for (const auto& f : fields())
        if (f.key == key) return &f;
    return nullptr;
}

}  // namespace

MappingSpec ExperimentConfig::mapping_spec(MappingKind kind) const {
    MappingSpec s = mapping;
    s.kind = kind;
    s.channels = synth.channels;
    s.lag.sample_rate_hz = synth.sample_rate_hz;
    return s;
}

DecoderSpec ExperimentConfig::decoder_spec() const {
    DecoderSpec s = decoder;
    s.channels = synth.channels;
    s.window_samples = synth.window.length(synth.sample_rate_hz);
    return s;
}

void ExperimentConfig::validate() const {
    try {
        synth.validate();
        for (MappingKind k : run.models) mapping_spec(k).validate();
        decoder_spec().validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (run.jobs == 0) throw ConfigError("run.jobs must be at least 1");
    if (run.models.empty()) throw ConfigError("run.models must name at least one model");
    if (run.encoders.empty()) throw ConfigError("run.encoders must name at least one encoder");
    if (word_dim == 0 && embeddings.empty()) throw ConfigError("decoder.word_dim must be positive");
    if (eval.top_k == 0 || eval.top_k > kDefaultVocabularySize) throw ConfigError("eval.top_k must be in 1..76");
    if (eval.held_out_trials >= synth.trials_per_condition) {
        throw ConfigError("eval.held_out_trials must leave at least one training trial");
    }
}

std::map<std::string, std::string> config_entries(const ExperimentConfig& cfg) {
    std::map<std::string, std::string> out;
    for (const auto& f : fields()) out[f.key] = f.get(cfg);
    return out;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown config key '" + key + "'");
    try {
        f->set(cfg, trim(value));
    } catch (const ConfigError& e) {
        throw ConfigError(key + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(key + ": " + e.what());
    }
}

ExperimentConfig parse_config(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax: ") + e.what());
    }
    ExperimentConfig cfg;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) throw ConfigError("key '" + section + "' outside a section");
        for (const auto& [key, node] : body) set_config_value(cfg, section + "." + key, node.data());
    }
    cfg.validate();
    return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out, section;
    for (const auto& f : fields()) {
        const auto dot = f.key.find('.');
        const auto s = f.key.substr(0, dot);
        if (s != section) {
            out += (section.empty() ? "[" : "\n[") + s + "]\n";
            section = s;
        }
        out += f.key.substr(dot + 1) + " = " + f.get(cfg) + "\n";
    }
    return out;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = io::read_text(path);
    } catch (const std::exception& e) {
        throw ConfigError("cannot read config " + path.string() + ": " + e.what());
    }
    try {
        return parse_config(text);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

}  // namespace isd
