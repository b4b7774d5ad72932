#include "isd/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace isd::io {

static_assert(std::endian::native == std::endian::little, "array files are little-endian");

using nlohmann::json;

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double as_double(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json numbers(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(number(x));
    return a;
}

std::vector<double> as_doubles(const json& j) {
    std::vector<double> v;
    for (const auto& x : j) v.push_back(as_double(x));
    return v;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void check_version(const json& j, const fs::path& path) {
    if (!j.contains("format_version") || j["format_version"].get<int>() != kFormatVersion) {
        throw FormatError(path.string() + ": unsupported format_version");
    }
}

json to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& j) {
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
    return m;
}

json to_json(const SynthConfig& c) {
    return json{{"n_subjects", c.n_subjects},
                {"trials_per_condition", c.trials_per_condition},
                {"duration_s", c.duration_s},
                {"channels", c.channels},
                {"sample_rate_hz", c.sample_rate_hz},
                {"latent_dim", c.latent_dim},
                {"noise_sd_listened", c.noise_sd_listened},
                {"noise_sd_imagined", c.noise_sd_imagined},
                {"imagined_attenuation", c.imagined_attenuation},
                {"mapping_kind", std::string(to_string(c.mapping_kind))},
                {"seed", c.seed},
                {"subject_perturbation", c.subject_perturbation},
                {"class_share", c.class_share},
                {"shift_class_template", c.shift_class_template},
                {"word_amplitude", c.word_amplitude},
                {"word_spacing_s", c.word_spacing_s},
                {"lag_delta_s", c.lag_delta_s},
                {"window_pre_s", c.window.pre_s},
                {"window_post_s", c.window.post_s}};
}

SynthConfig synth_from_json(const json& j) {
    SynthConfig c;
    c.n_subjects = j.at("n_subjects").get<std::size_t>();
    c.trials_per_condition = j.at("trials_per_condition").get<std::size_t>();
    c.duration_s = j.at("duration_s").get<double>();
    c.channels = j.at("channels").get<std::size_t>();
    c.sample_rate_hz = j.at("sample_rate_hz").get<double>();
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.noise_sd_listened = j.at("noise_sd_listened").get<double>();
    c.noise_sd_imagined = j.at("noise_sd_imagined").get<double>();
    c.imagined_attenuation = j.at("imagined_attenuation").get<double>();
    c.mapping_kind = ground_truth_kind_from_string(j.at("mapping_kind").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.subject_perturbation = j.at("subject_perturbation").get<double>();
    c.class_share = j.at("class_share").get<double>();
    c.shift_class_template = j.at("shift_class_template").get<bool>();
    c.word_amplitude = j.at("word_amplitude").get<double>();
    c.word_spacing_s = j.at("word_spacing_s").get<double>();
    c.lag_delta_s = j.at("lag_delta_s").get<double>();
    c.window.pre_s = j.at("window_pre_s").get<double>();
    c.window.post_s = j.at("window_post_s").get<double>();
    return c;
}

json to_json(const MappingSpec& s) {
    return json{{"kind", std::string(to_string(s.kind))},
                {"channels", s.channels},
                {"lambda", s.lambda},
                {"dropout", s.dropout},
                {"lag_delta_s", s.lag.delta_s},
                {"sample_rate_hz", s.lag.sample_rate_hz},
                {"mlp_hidden", s.mlp_hidden},
                {"cnn_width", s.cnn_width},
                {"cnn_kernel", s.cnn_kernel},
                {"unet_width1", s.unet_width1},
                {"unet_width2", s.unet_width2},
                {"rnn_hidden", s.rnn_hidden},
                {"tcn_width", s.tcn_width},
                {"tcn_kernel", s.tcn_kernel},
                {"tf_model", s.tf_model},
                {"tf_layers", s.tf_layers},
                {"tf_heads", s.tf_heads},
                {"tf_ffn", s.tf_ffn},
                {"alpha_grid", s.alpha_grid},
                {"cv_folds", s.cv_folds}};
}

MappingSpec mapping_spec_from_json(const json& j) {
    MappingSpec s;
    s.kind = mapping_kind_from_string(j.at("kind").get<std::string>());
    s.channels = j.at("channels").get<std::size_t>();
    s.lambda = j.at("lambda").get<double>();
    s.dropout = j.at("dropout").get<double>();
    s.lag.delta_s = j.at("lag_delta_s").get<double>();
    s.lag.sample_rate_hz = j.at("sample_rate_hz").get<double>();
    s.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
    s.cnn_width = j.at("cnn_width").get<std::size_t>();
    s.cnn_kernel = j.at("cnn_kernel").get<std::size_t>();
    s.unet_width1 = j.at("unet_width1").get<std::size_t>();
    s.unet_width2 = j.at("unet_width2").get<std::size_t>();
    s.rnn_hidden = j.at("rnn_hidden").get<std::size_t>();
    s.tcn_width = j.at("tcn_width").get<std::size_t>();
    s.tcn_kernel = j.at("tcn_kernel").get<std::size_t>();
    s.tf_model = j.at("tf_model").get<std::size_t>();
    s.tf_layers = j.at("tf_layers").get<std::size_t>();
    s.tf_heads = j.at("tf_heads").get<std::size_t>();
    s.tf_ffn = j.at("tf_ffn").get<std::size_t>();
    s.alpha_grid = j.at("alpha_grid").get<std::vector<double>>();
    s.cv_folds = j.at("cv_folds").get<std::size_t>();
    return s;
}

json to_json(const MappingMetadata& m) {
    return json{{"epochs_run", m.epochs_run},
                {"best_epoch", m.best_epoch},
                {"final_train_loss", number(m.final_train_loss)},
                {"final_val_loss", number(m.final_val_loss)},
                {"best_val_loss", number(m.best_val_loss)},
                {"seed", m.seed},
                {"train_curve", numbers(m.train_curve)},
                {"val_curve", numbers(m.val_curve)},
                {"best_checkpoint_losses", numbers(m.best_checkpoint_losses)},
                {"alpha", m.alpha},
                {"pseudo_inverse", m.pseudo_inverse},
                {"cv_scores", numbers(m.cv_scores)},
                {"training_subjects", m.training_subjects}};
}

MappingMetadata mapping_meta_from_json(const json& j) {
    MappingMetadata m;
    m.epochs_run = j.at("epochs_run").get<std::size_t>();
    m.best_epoch = j.at("best_epoch").get<std::size_t>();
    m.final_train_loss = as_double(j.at("final_train_loss"));
    m.final_val_loss = as_double(j.at("final_val_loss"));
    m.best_val_loss = as_double(j.at("best_val_loss"));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.train_curve = as_doubles(j.at("train_curve"));
    m.val_curve = as_doubles(j.at("val_curve"));
    m.best_checkpoint_losses = as_doubles(j.at("best_checkpoint_losses"));
    m.alpha = j.at("alpha").get<double>();
    m.pseudo_inverse = j.at("pseudo_inverse").get<bool>();
    m.cv_scores = as_doubles(j.at("cv_scores"));
    m.training_subjects = j.at("training_subjects").get<std::vector<std::string>>();
    return m;
}

json to_json(const DecoderSpec& s) {
    return json{{"channels", s.channels},         {"window_samples", s.window_samples},
                {"embed_dim", s.embed_dim},       {"temperature", s.temperature},
                {"spatial_filters", s.spatial_filters}, {"temporal_blocks", s.temporal_blocks},
                {"kernel", s.kernel},             {"dropout", s.dropout},
                {"noise_aug_sd", s.noise_aug_sd}, {"lr", s.lr},
                {"weight_decay", s.weight_decay}, {"batch_size", s.batch_size},
                {"max_epochs", s.max_epochs},     {"patience", s.patience},
                {"val_fraction", s.val_fraction}};
}

DecoderSpec decoder_spec_from_json(const json& j) {
    DecoderSpec s;
    s.channels = j.at("channels").get<std::size_t>();
    s.window_samples = j.at("window_samples").get<std::size_t>();
    s.embed_dim = j.at("embed_dim").get<std::size_t>();
    s.temperature = j.at("temperature").get<double>();
    s.spatial_filters = j.at("spatial_filters").get<std::size_t>();
    s.temporal_blocks = j.at("temporal_blocks").get<std::size_t>();
    s.kernel = j.at("kernel").get<std::size_t>();
    s.dropout = j.at("dropout").get<double>();
    s.noise_aug_sd = j.at("noise_aug_sd").get<double>();
    s.lr = j.at("lr").get<double>();
    s.weight_decay = j.at("weight_decay").get<double>();
    s.batch_size = j.at("batch_size").get<std::size_t>();
    s.max_epochs = j.at("max_epochs").get<std::size_t>();
    s.patience = j.at("patience").get<std::size_t>();
    s.val_fraction = j.at("val_fraction").get<double>();
    return s;
}

struct BlobWriter {
    std::vector<double> values;
    json index = json::array();

    void add(const std::string& group, const std::string& name, const double* data, std::vector<std::size_t> shape) {
        const std::size_t n = element_count(shape);
        index.push_back(json{{"group", group}, {"name", name}, {"shape", shape}, {"offset", values.size()}, {"count", n}});
        values.insert(values.end(), data, data + n);
    }
    void add(const std::string& group, const ParameterStore& store) {
        for (const auto& [name, t] : store.entries()) add(group, name, t.data(), t.shape());
    }
};

struct BlobReader {
    std::vector<double> values;
    json index;

    BlobReader(const fs::path& stem, const json& j) : index(j.at("tensors")) {
        values = read_f32(fs::path(stem).concat(".bin"), j.at("blob_count").get<std::size_t>());
    }
    ParameterStore store(const std::string& group) const {
        ParameterStore s;
        for (const auto& e : index) {
            if (e.at("group").get<std::string>() != group) continue;
            s.insert(e.at("name").get<std::string>(), tensor(e));
        }
        return s;
    }
    Tensor tensor(const json& e) const {
        const auto offset = e.at("offset").get<std::size_t>(), count = e.at("count").get<std::size_t>();
        auto shape = e.at("shape").get<std::vector<std::size_t>>();
        if (offset + count > values.size() || element_count(shape) != count) throw FormatError("corrupt checkpoint index");
        return Tensor(std::move(shape), std::vector<double>(values.begin() + static_cast<long>(offset),
                                                            values.begin() + static_cast<long>(offset + count)));
    }
    const json& entry(const std::string& group, const std::string& name) const {
        for (const auto& e : index)
            if (e.at("group") == group && e.at("name") == name) return e;
        throw FormatError("checkpoint is missing " + group + "/" + name);
    }
};

void save_blob(const fs::path& stem, json header, const BlobWriter& blob) {
    header["format_version"] = kFormatVersion;
    header["tensors"] = blob.index;
    header["blob_count"] = blob.values.size();
    header["blob_file"] = fs::path(stem).filename().string() + ".bin";
    write_f32(fs::path(stem).concat(".bin"), blob.values.data(), blob.values.size());
    write_json(fs::path(stem).concat(".json"), header);
}

std::string trial_file(std::string_view source, StimulusClass cls, std::size_t i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%s_%02zu.bin", std::string(source).c_str(), std::string(to_string(cls)).c_str(), i);
    return buf;
}

}  // namespace

void write_f32(const fs::path& path, const double* values, std::size_t count) {
    std::vector<float> buf(count);
    for (std::size_t i = 0; i < count; ++i) buf[i] = static_cast<float>(values[i]);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!out) throw FormatError("short write to " + path.string());
}

std::vector<double> read_f32(const fs::path& path, std::size_t expected_count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    const auto bytes = fs::file_size(path);
    if (bytes != expected_count * sizeof(float)) {
        throw FormatError(path.string() + ": expected " + std::to_string(expected_count) + " floats, found " +
                          std::to_string(bytes) + " bytes");
    }
    std::vector<float> buf(expected_count);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    return std::vector<double>(buf.begin(), buf.end());
}

Matrix to_f32(const Matrix& m) { return m.cast<float>().cast<double>(); }

void round_to_f32(Tensor& t) {
    for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

void round_to_f32(ParameterStore& store) {
    std::vector<std::string> names;
    for (const auto& [n, t] : store.entries()) names.push_back(n);
    for (const auto& n : names) round_to_f32(store.at(n));
}

void round_to_f32(TrainedMapping& model) {
    round_to_f32(model.params);
    round_to_f32(model.buffers);
}

void round_to_f32(TrainedDecoder& decoder) {
    round_to_f32(decoder.meg_params);
    round_to_f32(decoder.meg_buffers);
    round_to_f32(decoder.word_params);
    decoder.word_cache = to_f32(decoder.word_cache);
}

// ---- datasets ----

void write_dataset(const fs::path& dir, const SyntheticDataset& ds) {
    fs::create_directories(dir / "subjects");
    const auto& cfg = ds.config;
    json subjects = json::array();
    for (const auto& s : ds.sessions) {
        json trials = json::array();
        for (std::string_view source : {"imagined", "listened"}) {
            const auto& lists = source == "imagined" ? s.imagined : s.listened;
            for (StimulusClass cls : kAllStimulusClasses) {
                for (std::size_t i = 0; i < lists[index_of(cls)].size(); ++i) {
                    const auto& t = lists[index_of(cls)][i];
                    const std::string file = "subjects/" + s.subject_id + "/" + trial_file(source, cls, i);
                    write_f32(dir / file, t.data.data(), static_cast<std::size_t>(t.data.size()));
                    trials.push_back(json{{"source", source},
                                          {"stimulus_class", std::string(to_string(cls))},
                                          {"index", i},
                                          {"trial_id", t.trial_id},
                                          {"file", file},
                                          {"shape", {t.channels(), t.samples()}}});
                }
            }
        }
        subjects.push_back(json{{"subject_id", s.subject_id}, {"trials", std::move(trials)}});
    }
    json manifest{{"format_version", kFormatVersion},
                  {"dtype", "float32-le"},
                  {"layout", "row-major [channels x samples]"},
                  {"seed", cfg.seed},
                  {"sample_rate_hz", cfg.sample_rate_hz},
                  {"channels", cfg.channels},
                  {"samples", cfg.samples()},
                  {"trials_per_condition", cfg.trials_per_condition},
                  {"conditions", {"imagined", "listened"}},
                  {"stimulus_classes", {"melody1", "melody2", "poem1", "poem2"}},
                  {"generator", to_json(cfg)},
                  {"vocabulary", ds.vocabulary.words()},
                  {"subjects", std::move(subjects)}};
    write_json(dir / "manifest.json", manifest);

    json events = json::array();
    for (const auto& s : ds.sessions) {
        for (const auto& e : s.word_events) {
            events.push_back(json{{"subject_id", s.subject_id},
                                  {"stimulus_class", std::string(to_string(e.stimulus_class))},
                                  {"trial_index", e.trial_index},
                                  {"word", e.word},
                                  {"onset_s", e.onset_s}});
        }
    }
    write_json(dir / "annotations.json", json{{"format_version", kFormatVersion}, {"events", std::move(events)}});

    const auto& gt = ds.ground_truth;
    json gsub = json::array();
    for (const auto& s : gt.subjects) gsub.push_back(json{{"subject_id", s.subject_id}, {"mixing", to_json(s.mixing)}});
    write_json(dir / "ground_truth.json", json{{"format_version", kFormatVersion},
                                               {"kind", std::string(to_string(gt.kind))},
                                               {"kernel", gt.kernel},
                                               {"attenuation", gt.attenuation},
                                               {"noise_sd_listened", gt.noise_sd_listened},
                                               {"noise_sd_imagined", gt.noise_sd_imagined},
                                               {"subjects", std::move(gsub)}});
}

Dataset read_dataset(const fs::path& dir) {
    const json manifest = read_json(dir / "manifest.json");
    check_version(manifest, dir / "manifest.json");
    Dataset ds;
    ds.config = synth_from_json(manifest.at("generator"));
    ds.vocabulary = Vocabulary(manifest.at("vocabulary").get<std::vector<std::string>>());
    const double fs_hz = manifest.at("sample_rate_hz").get<double>();
    const std::size_t n = manifest.at("trials_per_condition").get<std::size_t>();
    for (const auto& sj : manifest.at("subjects")) {
        PairedSession s;
        s.subject_id = sj.at("subject_id").get<std::string>();
        for (auto& l : s.imagined) l.resize(n);
        for (auto& l : s.listened) l.resize(n);
        for (const auto& tj : sj.at("trials")) {
            const auto shape = tj.at("shape").get<std::vector<std::size_t>>();
            const auto cls = stimulus_class_from_string(tj.at("stimulus_class").get<std::string>());
            const auto idx = tj.at("index").get<std::size_t>();
            if (idx >= n || shape.size() != 2) throw FormatError("manifest: bad trial entry for " + s.subject_id);
            const auto source = tj.at("source").get<std::string>();
            if (source != "imagined" && source != "listened") throw FormatError("manifest: unknown source " + source);
            TrialTensor t;
            t.sample_rate_hz = fs_hz;
            t.trial_id = tj.at("trial_id").get<std::string>();
            const auto values = read_f32(dir / tj.at("file").get<std::string>(), shape[0] * shape[1]);
            t.data = Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(shape[0]),
                                              static_cast<Eigen::Index>(shape[1]));
            (source == "imagined" ? s.imagined : s.listened)[index_of(cls)][idx] = std::move(t);
        }
        ds.sessions.push_back(std::move(s));
    }
    const json ann = read_json(dir / "annotations.json");
    check_version(ann, dir / "annotations.json");
    for (const auto& e : ann.at("events")) {
        const auto sid = e.at("subject_id").get<std::string>();
        auto it = std::find_if(ds.sessions.begin(), ds.sessions.end(), [&](const auto& s) { return s.subject_id == sid; });
        if (it == ds.sessions.end()) throw FormatError("annotations: unknown subject " + sid);
        it->word_events.push_back(WordEvent{e.at("word").get<std::string>(), e.at("onset_s").get<double>(),
                                            stimulus_class_from_string(e.at("stimulus_class").get<std::string>()),
                                            e.at("trial_index").get<std::size_t>()});
    }
    for (const auto& s : ds.sessions) {
        const auto problems = validate_session(s, &ds.vocabulary, ds.config.window.post_s);
        if (!problems.empty()) throw FormatError(s.subject_id + ": " + problems.front());
    }
    if (fs::exists(dir / "ground_truth.json")) {
        const json g = read_json(dir / "ground_truth.json");
        ds.ground_truth.kind = ground_truth_kind_from_string(g.at("kind").get<std::string>());
        ds.ground_truth.kernel = g.at("kernel").get<std::vector<double>>();
        ds.ground_truth.attenuation = g.at("attenuation").get<double>();
        ds.ground_truth.noise_sd_listened = g.at("noise_sd_listened").get<double>();
        ds.ground_truth.noise_sd_imagined = g.at("noise_sd_imagined").get<double>();
        for (const auto& s : g.at("subjects")) {
            SubjectGroundTruth sg;
            sg.subject_id = s.at("subject_id").get<std::string>();
            sg.mixing = matrix_from_json(s.at("mixing"));
            ds.ground_truth.subjects.push_back(std::move(sg));
        }
    }
    return ds;
}

// ---- embedding tables ----

void write_embedding_table(const fs::path& path, const EmbeddingTable& table) {
    std::ostringstream out;
    out << "#encoder=" << to_string(table.encoder()) << " dim=" << table.dim() << " version=1\n";
    for (const auto& w : table.words()) {
        out << w;
        for (double v : table.at(w)) out << '\t' << format_double(v);
        out << '\n';
    }
    write_text(path, out.str());
}

EmbeddingTable read_embedding_table(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("#", 0) != 0) throw FormatError(path.string() + ": missing header line");
    std::string encoder;
    long dim = -1, version = -1;
    std::istringstream header(line.substr(1));
    for (std::string field; header >> field;) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw FormatError(path.string() + ": malformed header field '" + field + "'");
        const auto key = field.substr(0, eq), value = field.substr(eq + 1);
        if (key == "encoder") encoder = value;
        else if (key == "dim") dim = std::stol(value);
        else if (key == "version") version = std::stol(value);
    }
    if (encoder.empty() || dim <= 0) throw FormatError(path.string() + ": header needs encoder and dim");
    if (version != 1) throw FormatError(path.string() + ": unsupported version");
    EmbeddingTable table(encoder_from_string(encoder), static_cast<std::size_t>(dim));
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
            fields.push_back(line.substr(start, tab - start));
        fields.push_back(line.substr(start));
        if (fields.size() != static_cast<std::size_t>(dim) + 1) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                              " values, found " + std::to_string(fields.size() - 1));
        }
        std::vector<double> v;
        for (std::size_t i = 1; i < fields.size(); ++i) {
            double x = 0.0;
            const auto& f = fields[i];
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), x);
            if (ec != std::errc() || ptr != f.data() + f.size()) {
                throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + f + "'");
            }
            v.push_back(x);
        }
        try {
            table.add(fields[0], std::move(v));
        } catch (const std::invalid_argument& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return table;
}

// ---- checkpoints ----

void save_mapping(const fs::path& stem, const TrainedMapping& model) {
    BlobWriter blob;
    blob.add("params", model.params);
    blob.add("buffers", model.buffers);
    save_blob(stem, json{{"kind", "mapping"}, {"spec", to_json(model.spec)}, {"meta", to_json(model.meta)}}, blob);
}

TrainedMapping load_mapping(const fs::path& stem) {
    const auto path = fs::path(stem).concat(".json");
    const json j = read_json(path);
    check_version(j, path);
    if (j.at("kind") != "mapping") throw FormatError(path.string() + ": not a mapping checkpoint");
    BlobReader blob(stem, j);
    TrainedMapping m;
    m.spec = mapping_spec_from_json(j.at("spec"));
    m.meta = mapping_meta_from_json(j.at("meta"));
    m.params = blob.store("params");
    m.buffers = blob.store("buffers");
    return m;
}

void save_decoder(const fs::path& stem, const TrainedDecoder& d) {
    BlobWriter blob;
    blob.add("meg", d.meg_params);
    blob.add("meg_buffers", d.meg_buffers);
    blob.add("word", d.word_params);
    blob.add("cache", "word_cache", d.word_cache.data(),
             {static_cast<std::size_t>(d.word_cache.rows()), static_cast<std::size_t>(d.word_cache.cols())});
    json meta{{"seed", d.meta.seed},
              {"epochs_run", d.meta.epochs_run},
              {"best_epoch", d.meta.best_epoch},
              {"best_val_loss", number(d.meta.best_val_loss)},
              {"train_curve", numbers(d.meta.train_curve)},
              {"val_curve", numbers(d.meta.val_curve)},
              {"training_subjects", d.meta.training_subjects}};
    save_blob(stem,
              json{{"kind", "decoder"},
                   {"spec", to_json(d.spec)},
                   {"encoder", std::string(to_string(d.encoder))},
                   {"word_dim", d.word_dim},
                   {"vocabulary", d.vocabulary.words()},
                   {"meta", std::move(meta)}},
              blob);
}

TrainedDecoder load_decoder(const fs::path& stem) {
    const auto path = fs::path(stem).concat(".json");
    const json j = read_json(path);
    check_version(j, path);
    if (j.at("kind") != "decoder") throw FormatError(path.string() + ": not a decoder checkpoint");
    BlobReader blob(stem, j);
    TrainedDecoder d;
    d.spec = decoder_spec_from_json(j.at("spec"));
    d.encoder = encoder_from_string(j.at("encoder").get<std::string>());
    d.word_dim = j.at("word_dim").get<std::size_t>();
    d.vocabulary = Vocabulary(j.at("vocabulary").get<std::vector<std::string>>());
    d.meg_params = blob.store("meg");
    d.meg_buffers = blob.store("meg_buffers");
    d.word_params = blob.store("word");
    const Tensor cache = blob.tensor(blob.entry("cache", "word_cache"));
    d.word_cache = Eigen::Map<const Matrix>(cache.data(), static_cast<Eigen::Index>(cache.dim(0)),
                                            static_cast<Eigen::Index>(cache.dim(1)));
    const auto& m = j.at("meta");
    d.meta.seed = m.at("seed").get<std::uint64_t>();
    d.meta.epochs_run = m.at("epochs_run").get<std::size_t>();
    d.meta.best_epoch = m.at("best_epoch").get<std::size_t>();
    d.meta.best_val_loss = as_double(m.at("best_val_loss"));
    d.meta.train_curve = as_doubles(m.at("train_curve"));
    d.meta.val_curve = as_doubles(m.at("val_curve"));
    d.meta.training_subjects = m.at("training_subjects").get<std::vector<std::string>>();
    return d;
}

// ---- report tables ----

namespace {

std::string_view type_name(ColumnType t) {
    switch (t) {
        case ColumnType::Str: return "str";
        case ColumnType::Int: return "int";
        case ColumnType::F64: return "f64";
    }
    return "str";
}

ColumnType type_from_name(std::string_view s) {
    if (s == "str") return ColumnType::Str;
    if (s == "int") return ColumnType::Int;
    if (s == "f64") return ColumnType::F64;
    throw FormatError("unknown column type '" + std::string(s) + "'");
}

bool parses_as(const std::string& v, ColumnType t) {
    if (t == ColumnType::Str) return true;
    if (t == ColumnType::Int) {
        long x = 0;
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        return ec == std::errc() && p == v.data() + v.size();
    }
    if (v == "nan" || v == "inf" || v == "-inf") return true;
    double x = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    return ec == std::errc() && p == v.data() + v.size();
}

std::string quote(const std::string& v) {
    if (v.find_first_of(",\"\n") == std::string::npos) return v;
    std::string out = "\"";
    for (char c : v) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_quotes) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                in_quotes = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (in_quotes) throw FormatError("unterminated quoted CSV field");
    out.push_back(std::move(cur));
    return out;
}

}  // namespace

CsvTable::CsvTable(std::vector<Column> columns) : columns_(std::move(columns)) {
    for (const auto& c : columns_) {
        if (c.name.empty() || c.name.find_first_of(",:\"\n") != std::string::npos) {
            throw std::invalid_argument("invalid column name '" + c.name + "'");
        }
    }
}

std::size_t CsvTable::column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns_.size(); ++i)
        if (columns_[i].name == name) return i;
    throw std::out_of_range("no column '" + name + "'");
}

void CsvTable::add_row(std::vector<std::string> cells) {
    if (cells.size() != columns_.size()) {
        throw std::invalid_argument("row has " + std::to_string(cells.size()) + " cells, table has " +
                                    std::to_string(columns_.size()) + " columns");
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!parses_as(cells[i], columns_[i].type)) {
            throw std::invalid_argument("column '" + columns_[i].name + "': '" + cells[i] + "' is not " +
                                        std::string(type_name(columns_[i].type)));
        }
        if (cells[i].find('\n') != std::string::npos) throw std::invalid_argument("cells cannot contain newlines");
    }
    rows_.push_back(std::move(cells));
}

std::string CsvTable::str(std::size_t row, const std::string& column) const { return rows_.at(row).at(column_index(column)); }

double CsvTable::f64(std::size_t row, const std::string& column) const {
    const auto& v = str(row, column);
    if (v == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (v == "inf") return std::numeric_limits<double>::infinity();
    if (v == "-inf") return -std::numeric_limits<double>::infinity();
    double x = 0.0;
    std::from_chars(v.data(), v.data() + v.size(), x);
    return x;
}

long CsvTable::i64(std::size_t row, const std::string& column) const {
    const auto& v = str(row, column);
    long x = 0;
    std::from_chars(v.data(), v.data() + v.size(), x);
    return x;
}

bool operator==(const CsvTable& a, const CsvTable& b) {
    if (a.columns_.size() != b.columns_.size() || a.rows_ != b.rows_) return false;
    for (std::size_t i = 0; i < a.columns_.size(); ++i) {
        if (a.columns_[i].name != b.columns_[i].name || a.columns_[i].type != b.columns_[i].type) return false;
    }
    return true;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

void write_csv(const fs::path& path, const CsvTable& table) {
    std::ostringstream out;
    for (std::size_t i = 0; i < table.columns().size(); ++i) {
        out << (i ? "," : "") << table.columns()[i].name << ':' << type_name(table.columns()[i].type);
    }
    out << '\n';
    for (const auto& row : table.rows()) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << quote(row[i]);
        out << '\n';
    }
    write_text(path, out.str());
}

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
    std::vector<Column> columns;
    for (const auto& field : split_csv_line(line)) {
        const auto colon = field.rfind(':');
        if (colon == std::string::npos) throw FormatError(path.string() + ": schema row needs name:type fields");
        columns.push_back(Column{field.substr(0, colon), type_from_name(field.substr(colon + 1))});
    }
    CsvTable table(std::move(columns));
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        try {
            table.add_row(split_csv_line(line));
        } catch (const std::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return table;
}

void write_report_table(const fs::path& path, const CsvTable& table, const std::string& description,
                        std::uint64_t seed) {
    write_csv(path, table);
    json cols = json::array();
    for (const auto& c : table.columns()) cols.push_back(json{{"name", c.name}, {"type", type_name(c.type)}});
    write_json(fs::path(path).concat(".meta.json"), json{{"format_version", kFormatVersion},
                                                        {"table", path.filename().string()},
                                                        {"description", description},
                                                        {"seed", seed},
                                                        {"rows", table.rows().size()},
                                                        {"columns", std::move(cols)}});
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out << text;
    if (!out) throw FormatError("short write to " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace isd::io
