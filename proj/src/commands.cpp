#include "isd/commands.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "isd/full_pipeline.hpp"
#include "isd/mapping_eval.hpp"
#include "isd/signal_prep.hpp"
#include "isd/stats.hpp"

namespace isd {

namespace fs = std::filesystem;
using io::cell;
using io::Column;
using io::ColumnType;
using io::CsvTable;
using nlohmann::json;

RunLog::RunLog(const fs::path& path, bool echo) : path_(path), echo_(echo) {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
}

void RunLog::info(const std::string& message) {
    static std::mutex mu;
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::lock_guard lock(mu);
    std::ofstream out(path_, std::ios::app);
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << message << '\n';
    if (echo_) std::cerr << message << '\n';
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::mutex mu;
    std::size_t next = 0;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i;
                {
                    std::lock_guard lock(mu);
                    if (next >= n) return;
                    i = next++;
                }
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

fs::path dataset_dir(const ExperimentConfig& cfg) {
    return cfg.run.dataset.empty() ? fs::path(cfg.run.out) / "dataset" : fs::path(cfg.run.dataset);
}

EmbeddingTable load_embedding_table(const ExperimentConfig& cfg, const Vocabulary& vocab, EncoderName encoder) {
    EmbeddingTable table;
    if (!cfg.embeddings.empty()) {
        table = io::read_embedding_table(fs::path(cfg.embeddings) / (std::string(to_string(encoder)) + ".tsv"));
        if (table.encoder() != encoder) {
            throw io::FormatError("embedding file for " + std::string(to_string(encoder)) + " declares encoder " +
                                  std::string(to_string(table.encoder())));
        }
        const fs::path dir(cfg.embeddings);
        if (encoder == EncoderName::Combined && fs::exists(dir / "semantic.tsv") && fs::exists(dir / "phonetic.tsv")) {
            const auto d1 = io::read_embedding_table(dir / "semantic.tsv").dim();
            const auto d2 = io::read_embedding_table(dir / "phonetic.tsv").dim();
            if (table.dim() != d1 + d2) {
                throw io::FormatError("combined embeddings have dimension " + std::to_string(table.dim()) +
                                      ", expected semantic + phonetic = " + std::to_string(d1 + d2));
            }
        }
    } else if (encoder == EncoderName::Combined) {
        table = EmbeddingTable::concatenate(load_embedding_table(cfg, vocab, EncoderName::Semantic),
                                            load_embedding_table(cfg, vocab, EncoderName::Phonetic));
    } else {
        table = make_synthetic_embedding_table(vocab, encoder, cfg.word_dim, derive_seed(cfg.run.seed, "embeddings"));
    }
    if (const auto problems = table.validate(vocab); !problems.empty()) {
        throw io::FormatError(std::string(to_string(encoder)) + " embeddings: " + problems.front());
    }
    return table;
}

namespace {

// ---- shared helpers ----

std::uint64_t mapping_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.run.seed, "loso"); }

std::uint64_t decoder_seed(const ExperimentConfig& cfg, EncoderName e, std::size_t subject) {
    return derive_seed(derive_seed(derive_seed(cfg.run.seed, "decoder"), static_cast<std::uint64_t>(e)), subject);
}

fs::path out_dir(const ExperimentConfig& cfg) { return cfg.run.out; }

fs::path mapping_stem(const ExperimentConfig& cfg, MappingKind k, const std::string& subject) {
    return out_dir(cfg) / "mapping" / std::string(to_string(k)) / subject;
}

fs::path decoder_stem(const ExperimentConfig& cfg, EncoderName e, const std::string& subject) {
    return out_dir(cfg) / "decoder" / std::string(to_string(e)) / subject;
}

bool checkpoint_exists(const fs::path& stem) {
    return fs::exists(fs::path(stem).concat(".json")) && fs::exists(fs::path(stem).concat(".bin"));
}

LosoOptions loso_options(const ExperimentConfig& cfg) {
    LosoOptions o;
    o.held_out_trials = cfg.eval.held_out_trials;
    o.include_null = cfg.eval.include_null;
    o.train = cfg.train;
    o.subjects = cfg.run.subjects;
    return o;
}

io::Dataset ensure_dataset(const ExperimentConfig& cfg, RunLog& log) {
    const auto dir = dataset_dir(cfg);
    if (!fs::exists(dir / "manifest.json")) {
        log.info("dataset missing at " + dir.string() + "; generating");
        io::write_dataset(dir, generate_dataset(cfg.synth));
    }
    auto ds = io::read_dataset(dir);
    if (ds.sessions.size() < 2) throw std::runtime_error("dataset needs at least two subjects");
    if (ds.config.channels != cfg.synth.channels || ds.config.sample_rate_hz != cfg.synth.sample_rate_hz) {
        throw std::runtime_error("dataset at " + dir.string() + " does not match the configured channels or rate");
    }
    return ds;
}

std::vector<std::size_t> held_out_indices(const ExperimentConfig& cfg, const io::Dataset& ds) {
    std::vector<std::size_t> out;
    for (const auto& id : cfg.run.subjects) {
        if (std::none_of(ds.sessions.begin(), ds.sessions.end(), [&](const auto& s) { return s.subject_id == id; })) {
            throw ConfigError("run.subjects: unknown subject '" + id + "'");
        }
    }
    for (std::size_t i = 0; i < ds.sessions.size(); ++i) {
        const auto& id = ds.sessions[i].subject_id;
        if (cfg.run.subjects.empty() || std::find(cfg.run.subjects.begin(), cfg.run.subjects.end(), id) != cfg.run.subjects.end())
            out.push_back(i);
    }
    return out;
}

std::vector<const PairedSession*> others_of(const io::Dataset& ds, std::size_t held) {
    std::vector<const PairedSession*> out;
    for (std::size_t s = 0; s < ds.sessions.size(); ++s)
        if (s != held) out.push_back(&ds.sessions[s]);
    return out;
}

TrainedMapping ensure_mapping(const ExperimentConfig& cfg, const io::Dataset& ds, MappingKind kind, std::size_t held,
                              RunLog& log) {
    const auto spec = cfg.mapping_spec(kind);
    const auto stem = mapping_stem(cfg, kind, ds.sessions[held].subject_id);
    const auto seed = fold_seed(mapping_seed(cfg), held, false);
    if (checkpoint_exists(stem)) {
        auto m = io::load_mapping(stem);
        if (m.spec == spec && m.meta.seed == seed) return m;
        log.info("stale checkpoint " + stem.string() + "; refitting");
    }
    log.info("fitting " + std::string(to_string(kind)) + " without " + ds.sessions[held].subject_id);
    auto m = fit_mapping(spec, others_of(ds, held), loso_options(cfg), seed);
    io::round_to_f32(m);
    io::save_mapping(stem, m);
    return m;
}

std::vector<LabelledWindow> listened_windows_without(const io::Dataset& ds, std::size_t held, const WordWindowSpec& w) {
    std::vector<LabelledWindow> out;
    for (std::size_t s = 0; s < ds.sessions.size(); ++s) {
        if (s == held) continue;
        auto part = session_word_windows(ds.sessions[s], TrialSource::Listened, ds.vocabulary, w);
        std::move(part.begin(), part.end(), std::back_inserter(out));
    }
    return out;
}

TrainedDecoder train_fold_decoder(const ExperimentConfig& cfg, const io::Dataset& ds, const EmbeddingTable& table,
                                  EncoderName enc, std::size_t held, RunLog& log) {
    log.info("training " + std::string(to_string(enc)) + " decoder without " + ds.sessions[held].subject_id);
    auto d = train_decoder(listened_windows_without(ds, held, cfg.synth.window), table, ds.vocabulary,
                           cfg.decoder_spec(), decoder_seed(cfg, enc, held));
    io::round_to_f32(d);
    io::save_decoder(decoder_stem(cfg, enc, ds.sessions[held].subject_id), d);
    return d;
}

TrainedDecoder ensure_decoder(const ExperimentConfig& cfg, const io::Dataset& ds, const EmbeddingTable& table,
                              EncoderName enc, std::size_t held, RunLog& log) {
    const auto stem = decoder_stem(cfg, enc, ds.sessions[held].subject_id);
    if (checkpoint_exists(stem)) {
        auto d = io::load_decoder(stem);
        if (d.spec == cfg.decoder_spec() && d.meta.seed == decoder_seed(cfg, enc, held) && d.word_dim == table.dim())
            return d;
        log.info("stale checkpoint " + stem.string() + "; retraining");
    }
    return train_fold_decoder(cfg, ds, table, enc, held, log);
}

void emit(CommandResult& r, const fs::path& path, const CsvTable& t, const std::string& description,
          const ExperimentConfig& cfg) {
    io::write_report_table(path, t, description, cfg.run.seed);
    r.outputs.push_back(path);
}

void emit_json(CommandResult& r, const fs::path& path, const json& j) {
    io::write_text(path, j.dump(2) + "\n");
    r.outputs.push_back(path);
}

std::string kind_name(MappingKind k) { return std::string(to_string(k)); }
std::string enc_name(EncoderName e) { return std::string(to_string(e)); }

json confusion_json(const ConfusionMatrix& m) {
    return json{{"counts", m.counts}, {"probabilities", m.probabilities()}, {"accuracy", m.accuracy()}};
}

void add_cdf_rows(CsvTable& t, const std::vector<std::string>& keys, const std::vector<RankOutcome>& outcomes,
                  std::size_t V) {
    const auto cdf = rank_cdf(outcomes, V);
    for (std::size_t k = 1; k <= V; ++k) {
        std::vector<std::string> row = keys;
        row.push_back(cell(k));
        row.push_back(cell(cdf.cdf[k - 1]));
        row.push_back(cell(static_cast<double>(k) / static_cast<double>(V)));
        t.add_row(std::move(row));
    }
}

double mean_rank(const std::vector<RankOutcome>& outcomes) {
    double total = 0.0;
    for (const auto& o : outcomes) total += static_cast<double>(o.rank);
    return outcomes.empty() ? 0.0 : total / static_cast<double>(outcomes.size());
}

struct ListenedEval {
    std::string subject;
    EncoderName encoder;
    std::vector<RankOutcome> outcomes;
};

CommandResult write_decoder_tables(const ExperimentConfig& cfg, const io::Dataset& ds,
                                   const std::vector<ListenedEval>& evals, const std::string& prefix) {
    CommandResult r;
    const std::size_t V = ds.vocabulary.size();
    const fs::path dir = out_dir(cfg) / "decoder";
    CsvTable outcomes({{"encoder", ColumnType::Str}, {"subject", ColumnType::Str}, {"word", ColumnType::Str},
                       {"rank", ColumnType::Int}});
    CsvTable recall({{"encoder", ColumnType::Str}, {"subject", ColumnType::Str}, {"n", ColumnType::Int},
                     {"recall_at_1", ColumnType::F64}, {"recall_at_5", ColumnType::F64},
                     {"recall_at_10", ColumnType::F64}, {"mean_rank", ColumnType::F64},
                     {"auc_above_chance_pct", ColumnType::F64}});
    CsvTable cdf({{"encoder", ColumnType::Str}, {"k", ColumnType::Int}, {"cdf", ColumnType::F64}, {"chance", ColumnType::F64}});
    auto recall_row = [&](const std::string& enc, const std::string& subject, const std::vector<RankOutcome>& o) {
        const auto c = rank_cdf(o, V);
        recall.add_row({enc, subject, cell(o.size()), cell(c.recall_at_1), cell(c.recall_at_5), cell(c.recall_at_10),
                        cell(mean_rank(o)), cell(auc_above_chance(o, V, cfg.eval.auc_k))});
    };
    for (EncoderName enc : cfg.run.encoders) {
        std::vector<RankOutcome> pooled;
        for (const auto& e : evals) {
            if (e.encoder != enc) continue;
            for (const auto& o : e.outcomes) outcomes.add_row({enc_name(enc), e.subject, o.true_word, cell(o.rank)});
            recall_row(enc_name(enc), e.subject, e.outcomes);
            pooled.insert(pooled.end(), e.outcomes.begin(), e.outcomes.end());
        }
        if (pooled.empty()) continue;
        recall_row(enc_name(enc), "all", pooled);
        add_cdf_rows(cdf, {enc_name(enc)}, pooled, V);
    }
    emit(r, dir / (prefix + "rank_outcomes.csv"), outcomes, "Listened decoder rank of every held-out window", cfg);
    emit(r, dir / (prefix + "recall.csv"), recall, "Recall@k, mean rank and AUC above chance per held-out subject", cfg);
    emit(r, dir / (prefix + "rank_cdf.csv"), cdf, "Listened decoder rank CDF pooled over held-out subjects", cfg);
    return r;
}

void merge(CommandResult& into, CommandResult&& from) {
    into.outputs.insert(into.outputs.end(), from.outputs.begin(), from.outputs.end());
    into.failures.insert(into.failures.end(), from.failures.begin(), from.failures.end());
}

}  // namespace

// ---- commands ----

CommandResult cmd_generate(const ExperimentConfig& cfg, RunLog& log) {
    CommandResult r;
    const auto dir = dataset_dir(cfg);
    log.info("generating " + std::to_string(cfg.synth.n_subjects) + " subjects into " + dir.string());
    io::write_dataset(dir, generate_dataset(cfg.synth));
    r.outputs.push_back(dir / "manifest.json");
    r.outputs.push_back(dir / "annotations.json");
    r.outputs.push_back(dir / "ground_truth.json");
    return r;
}

CommandResult cmd_train_mapping(const ExperimentConfig& cfg, RunLog& log) {
    CommandResult r;
    const auto ds = ensure_dataset(cfg, log);
    held_out_indices(cfg, ds);
    const auto& kinds = cfg.run.models;
    std::vector<LosoResult> results(kinds.size());
    parallel_for(kinds.size(), cfg.run.jobs, [&](std::size_t i) {
        log.info("LOSO " + kind_name(kinds[i]));
        results[i] = run_loso(ds.sessions, cfg.mapping_spec(kinds[i]), loso_options(cfg), mapping_seed(cfg));
    });

    const fs::path dir = out_dir(cfg) / "mapping";
    CsvTable records({{"subject", ColumnType::Str}, {"condition", ColumnType::Str}, {"model", ColumnType::Str},
                      {"null_model", ColumnType::Int}, {"mean_r", ColumnType::F64}});
    CsvTable channels({{"subject", ColumnType::Str}, {"condition", ColumnType::Str}, {"model", ColumnType::Str},
                       {"null_model", ColumnType::Int}, {"channel", ColumnType::Int}, {"r", ColumnType::F64}});
    CsvTable tests({{"model", ColumnType::Str}, {"condition", ColumnType::Str}, {"n", ColumnType::Int},
                    {"mean_real", ColumnType::F64}, {"mean_null", ColumnType::F64}, {"t", ColumnType::F64},
                    {"df", ColumnType::F64}, {"p", ColumnType::F64}, {"p_text", ColumnType::Str}});
    CsvTable curves({{"model", ColumnType::Str}, {"subject", ColumnType::Str}, {"epoch", ColumnType::Int},
                     {"train_loss", ColumnType::F64}, {"val_loss", ColumnType::F64}});
    json manifest{{"format_version", io::kFormatVersion}, {"models", json::array()}, {"checkpoints", json::array()}};

    for (std::size_t i = 0; i < kinds.size(); ++i) {
        const auto name = kind_name(kinds[i]);
        auto& res = results[i];
        manifest["models"].push_back(json{{"model", name}, {"parameters", count_parameters(cfg.mapping_spec(kinds[i]))}});
        for (const auto& rec : res.records) {
            records.add_row({rec.subject_id, std::string(to_string(rec.condition)), name, cell(rec.null_model), cell(rec.mean_r)});
            for (std::size_t c = 0; c < rec.per_channel_r.size(); ++c)
                channels.add_row({rec.subject_id, std::string(to_string(rec.condition)), name, cell(rec.null_model), cell(c),
                                  cell(rec.per_channel_r[c])});
        }
        for (auto& m : res.models) {
            const auto held = std::find_if(ds.sessions.begin(), ds.sessions.end(), [&](const auto& s) {
                return std::find(m.meta.training_subjects.begin(), m.meta.training_subjects.end(), s.subject_id) ==
                       m.meta.training_subjects.end();
            });
            io::round_to_f32(m);
            const auto stem = mapping_stem(cfg, kinds[i], held->subject_id);
            io::save_mapping(stem, m);
            manifest["checkpoints"].push_back(
                json{{"model", name}, {"held_out", held->subject_id}, {"stem", fs::relative(stem, dir).string()}});
            for (std::size_t e = 0; e < m.meta.train_curve.size(); ++e) {
                curves.add_row({name, held->subject_id, cell(e), cell(m.meta.train_curve[e]),
                                cell(e < m.meta.val_curve.size() ? m.meta.val_curve[e] : 0.0)});
            }
        }
        for (EvalCondition cond : {EvalCondition::Train, EvalCondition::UnseenTrials, EvalCondition::LOSO}) {
            std::map<std::string, double> real, null;
            for (const auto& rec : res.records)
                if (rec.condition == cond) (rec.null_model ? null : real)[rec.subject_id] = rec.mean_r;
            std::vector<double> a, b;
            for (const auto& [s, v] : real)
                if (null.count(s)) {
                    a.push_back(v);
                    b.push_back(null[s]);
                }
            if (a.size() < 2) continue;
            const auto t = stats::paired_t(a, b);
            tests.add_row({name, std::string(to_string(cond)), cell(a.size()), cell(stats::mean(a)), cell(stats::mean(b)),
                           cell(t.statistic), cell(t.df), cell(t.p), stats::format_p(t.p)});
        }
        for (const auto& f : res.failures) {
            r.failures.push_back(name + " fold " + f.subject_id + (f.null_model ? " (null)" : "") + ": " + f.message);
        }
    }
    emit(r, dir / "eval_records.csv", records, "Mean per-channel r per subject, condition, model and real/null", cfg);
    emit(r, dir / "channel_r.csv", channels, "Per-channel Pearson r behind eval_records.csv", cfg);
    emit(r, dir / "paired_tests.csv", tests, "Paired t-test of real vs null mean r across held-out subjects", cfg);
    emit(r, dir / "loss_curves.csv", curves, "Training and validation loss per epoch for neural mappings", cfg);
    emit_json(r, dir / "manifest.json", manifest);
    return r;
}

CommandResult cmd_eval_mapping(const ExperimentConfig& cfg, RunLog& log) {
    CommandResult r;
    const auto ds = ensure_dataset(cfg, log);
    const auto held = held_out_indices(cfg, ds);
    CsvTable t({{"model", ColumnType::Str}, {"subject", ColumnType::Str}, {"mean_r", ColumnType::F64}});
    for (MappingKind k : cfg.run.models) {
        for (std::size_t h : held) {
            const auto stem = mapping_stem(cfg, k, ds.sessions[h].subject_id);
            if (!checkpoint_exists(stem)) {
                r.failures.push_back("missing checkpoint " + stem.string() + " (run train-mapping first)");
                continue;
            }
            const auto m = io::load_mapping(stem);
            const auto cc = evaluate_mapping(m, session_pairs(ds.sessions[h], TrialSplit::All, cfg.eval.held_out_trials));
            t.add_row({kind_name(k), ds.sessions[h].subject_id, cell(cc.mean_r)});
        }
    }
    emit(r, out_dir(cfg) / "mapping" / "eval_checkpoints.csv", t, "Held-out subject mean r from saved checkpoints", cfg);
    return r;
}

CommandResult cmd_scaling(const ExperimentConfig& cfg, RunLog& log) {
    CommandResult r;
    const auto ds = ensure_dataset(cfg, log);
    held_out_indices(cfg, ds);
    ScalingOptions opt;
    opt.subsets = cfg.eval.scaling_subsets;
    opt.ks = cfg.eval.scaling_ks;
    opt.loso = loso_options(cfg);
    const auto& kinds = cfg.run.models;
    std::vector<ScalingResult> results(kinds.size());
    parallel_for(kinds.size(), cfg.run.jobs, [&](std::size_t i) {
        log.info("scaling " + kind_name(kinds[i]));
        results[i] = scaling_curve(ds.sessions, cfg.mapping_spec(kinds[i]), opt, mapping_seed(cfg));
    });
    CsvTable rows({{"model", ColumnType::Str}, {"k", ColumnType::Int}, {"subject", ColumnType::Str},
                   {"mean_r", ColumnType::F64}, {"subsets_used", ColumnType::Int}});
    CsvTable summary({{"model", ColumnType::Str}, {"k", ColumnType::Int}, {"mean", ColumnType::F64}, {"sd", ColumnType::F64}});
    CsvTable trend({{"model", ColumnType::Str}, {"spearman_k_vs_mean", ColumnType::F64}});
    for (std::size_t i = 0; i < kinds.size(); ++i) {
        std::vector<double> ks, means;
        for (const auto& row : results[i].rows)
            rows.add_row({kind_name(kinds[i]), cell(row.k), row.subject_id, cell(row.mean_r), cell(row.subsets_used)});
        for (const auto& s : results[i].summary) {
            summary.add_row({kind_name(kinds[i]), cell(s.k), cell(s.mean), cell(s.sd)});
            ks.push_back(static_cast<double>(s.k));
            means.push_back(s.mean);
        }
        if (ks.size() >= 2) trend.add_row({kind_name(kinds[i]), cell(stats::spearman(ks, means))});
        for (const auto& f : results[i].failures)
            r.failures.push_back(kind_name(kinds[i]) + " scaling fold " + f.subject_id + ": " + f.message);
    }
    const fs::path dir = out_dir(cfg) / "scaling";
    emit(r, dir / "scaling.csv", rows, "Held-out mean r averaged over random k-subject training subsets", cfg);
    emit(r, dir / "summary.csv", summary, "Mean and sd across held-out subjects per k", cfg);
    emit(r, dir / "trend.csv", trend, "Spearman correlation between k and the mean curve", cfg);
    return r;
}

CommandResult cmd_classify(const ExperimentConfig& cfg, RunLog& log) {
    CommandResult r;
    const auto ds = ensure_dataset(cfg, log);
    const auto held = held_out_indices(cfg, ds);
    const auto& kinds = cfg.run.models;

    std::map<std::string, ConfusionMatrix> four, two;
    std::map<std::string, std::vector<double>> diag, offdiag;
    CsvTable acc({{"source", ColumnType::Str}, {"subject", ColumnType::Str}, {"accuracy_4", ColumnType::F64},
                  {"accuracy_2", ColumnType::F64}});
    auto record = [&](const std::string& source, const std::string& subject, const ConfusionMatrix& f,
                      const ConfusionMatrix& t) {
        auto& a4 = four.try_emplace(source, 4).first->second;
        auto& a2 = two.try_emplace(source, 2).first->second;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) a4.counts[i][j] += f.counts[i][j];
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) a2.counts[i][j] += t.counts[i][j];
        acc.add_row({source, subject, cell(f.accuracy()), cell(t.accuracy())});
        const auto p = f.probabilities();
        double d = 0.0, o = 0.0;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) (i == j ? d : o) += p[i][j];
        diag[source].push_back(d / 4.0);
        offdiag[source].push_back(o / 12.0);
    };

    for (std::size_t h : held) {
        const auto& session = ds.sessions[h];
        const auto templates = class_templates(session);
        std::vector<StimulusClass> labels;
        std::vector<Matrix> listened;
        for (StimulusClass cls : kAllStimulusClasses)
            for (const auto& t : session.listened[index_of(cls)]) {
                labels.push_back(cls);
                listened.push_back(zscore_rows(t.data));
            }
        const auto self = correlation_classify(listened, labels, templates);
        record("listened", session.subject_id, self.four, self.two);

        std::vector<std::vector<std::size_t>> votes;
        std::vector<std::vector<double>> scores;
        for (MappingKind k : kinds) {
            TrainedMapping m;
            try {
                m = ensure_mapping(cfg, ds, k, h, log);
            } catch (const std::exception& e) {
                r.failures.push_back(kind_name(k) + " fold " + session.subject_id + ": " + e.what());
                continue;
            }
            const MappingPredictor predictor(m);
            std::vector<Matrix> preds;
            for (StimulusClass cls : kAllStimulusClasses)
                for (const auto& t : session.imagined[index_of(cls)]) preds.push_back(predictor.predict(zscore_rows(t.data)));
            const auto res = correlation_classify(preds, labels, templates);
            record(kind_name(k), session.subject_id, res.four, res.two);
            votes.push_back(res.predicted);
            std::vector<double> s;
            for (std::size_t i = 0; i < res.predicted.size(); ++i) s.push_back(res.scores[i][res.predicted[i]]);
            scores.push_back(std::move(s));
        }
        if (votes.size() > 1) {
            const auto voted = ensemble_vote(votes, scores);
            ConfusionMatrix f(4), t(2);
            for (std::size_t i = 0; i < voted.size(); ++i) {
                f.add(index_of(labels[i]), voted[i]);
                t.add(is_poem(labels[i]) ? 1 : 0, is_poem(static_cast<StimulusClass>(voted[i])) ? 1 : 0);
            }
            record("ensemble", session.subject_id, f, t);
        }
    }

    json confusion = json::object();
    CsvTable tests({{"source", ColumnType::Str}, {"n", ColumnType::Int}, {"mean_diagonal", ColumnType::F64},
                    {"mean_off_diagonal", ColumnType::F64}, {"W", ColumnType::F64}, {"p", ColumnType::F64},
                    {"exact", ColumnType::Int}, {"p_text", ColumnType::Str}});
    for (const auto& [source, m] : four) {
        confusion[source] = json{{"four_class", confusion_json(m)}, {"melody_vs_poem", confusion_json(two.at(source))}};
        const auto w = stats::wilcoxon_signed_rank(diag[source], offdiag[source], stats::Alternative::Greater);
        tests.add_row({source, cell(diag[source].size()), cell(stats::mean(diag[source])),
                       cell(stats::mean(offdiag[source])), cell(w.statistic), cell(w.p), cell(w.exact),
                       stats::format_p(w.p)});
    }
    const fs::path dir = out_dir(cfg) / "classify";
    emit_json(r, dir / "confusion.json", json{{"format_version", io::kFormatVersion},
                                              {"classes", {"melody1", "melody2", "poem1", "poem2"}},
                                              {"sources", std::move(confusion)}});
    emit(r, dir / "accuracy.csv", acc, "Correlation-template classification accuracy per held-out subject", cfg);
    emit(r, dir / "wilcoxon.csv", tests, "One-sided signed-rank test of diagonal vs off-diagonal probability", cfg);
    return r;
}

CommandResult cmd_train_decoder(const ExperimentConfig& cfg, RunLog& log) {
    CommandResult r;
    const auto ds = ensure_dataset(cfg, log);
    const auto held = held_out_indices(cfg, ds);
    const auto& encs = cfg.run.encoders;
    std::vector<EmbeddingTable> tables;
    for (EncoderName e : encs) tables.push_back(load_embedding_table(cfg, ds.vocabulary, e));

    const std::size_t units = encs.size() * held.size();
    std::vector<ListenedEval> evals(units);
    std::vector<DecoderMetadata> metas(units);
    std::vector<std::string> errors(units);
    parallel_for(units, cfg.run.jobs, [&](std::size_t u) {
        const std::size_t e = u / held.size(), h = held[u % held.size()];
        try {
            const auto d = train_fold_decoder(cfg, ds, tables[e], encs[e], h, log);
            metas[u] = d.meta;
            evals[u] = ListenedEval{ds.sessions[h].subject_id, encs[e],
                                    rank_windows(d, session_word_windows(ds.sessions[h], TrialSource::Listened,
                                                                         ds.vocabulary, cfg.synth.window))};
        } catch (const std::exception& ex) {
            errors[u] = enc_name(encs[e]) + " decoder without " + ds.sessions[h].subject_id + ": " + ex.what();
        }
    });
    std::vector<ListenedEval> ok;
    CsvTable curves({{"encoder", ColumnType::Str}, {"subject", ColumnType::Str}, {"epoch", ColumnType::Int},
                     {"train_loss", ColumnType::F64}, {"val_loss", ColumnType::F64}});
    for (std::size_t u = 0; u < units; ++u) {
        if (!errors[u].empty()) {
            r.failures.push_back(errors[u]);
            continue;
        }
        for (std::size_t ep = 0; ep < metas[u].val_curve.size(); ++ep)
            curves.add_row({enc_name(evals[u].encoder), evals[u].subject, cell(ep), cell(metas[u].train_curve[ep]),
                            cell(metas[u].val_curve[ep])});
        ok.push_back(std::move(evals[u]));
    }
    emit(r, out_dir(cfg) / "decoder" / "loss_curves.csv", curves,
         "Decoder NT-Xent loss per epoch (epoch 0 is before training)", cfg);
    merge(r, write_decoder_tables(cfg, ds, ok, ""));
    return r;
}

CommandResult cmd_eval_decoder(const ExperimentConfig& cfg, RunLog& log) {
    CommandResult r;
    const auto ds = ensure_dataset(cfg, log);
    const auto held = held_out_indices(cfg, ds);
    std::vector<ListenedEval> evals;
    for (EncoderName e : cfg.run.encoders) {
        for (std::size_t h : held) {
            const auto stem = decoder_stem(cfg, e, ds.sessions[h].subject_id);
            if (!checkpoint_exists(stem)) {
                r.failures.push_back("missing checkpoint " + stem.string() + " (run train-decoder first)");
                continue;
            }
            const auto d = io::load_decoder(stem);
            evals.push_back(ListenedEval{
                ds.sessions[h].subject_id, e,
                rank_windows(d, session_word_windows(ds.sessions[h], TrialSource::Listened, ds.vocabulary, cfg.synth.window))});
        }
    }
    merge(r, write_decoder_tables(cfg, ds, evals, "eval_"));
    return r;
}

CommandResult cmd_pipeline(const ExperimentConfig& cfg, RunLog& log) {
    CommandResult r;
    const auto ds = ensure_dataset(cfg, log);
    const auto held = held_out_indices(cfg, ds);
    const auto& kinds = cfg.run.models;
    const auto& encs = cfg.run.encoders;
    const std::size_t V = ds.vocabulary.size();
    std::vector<EmbeddingTable> tables;
    for (EncoderName e : encs) tables.push_back(load_embedding_table(cfg, ds.vocabulary, e));

    // Frozen components per held-out subject.
    std::map<std::pair<MappingKind, std::size_t>, TrainedMapping> mappings;
    std::map<std::pair<std::size_t, std::size_t>, TrainedDecoder> decoders;  // (encoder index, subject)
    std::mutex mu;
    std::vector<std::pair<MappingKind, std::size_t>> mapping_units;
    for (MappingKind k : kinds)
        for (std::size_t h : held) mapping_units.emplace_back(k, h);
    parallel_for(mapping_units.size(), cfg.run.jobs, [&](std::size_t u) {
        const auto [k, h] = mapping_units[u];
        try {
            auto m = ensure_mapping(cfg, ds, k, h, log);
            std::lock_guard lock(mu);
            mappings.emplace(mapping_units[u], std::move(m));
        } catch (const std::exception& e) {
            std::lock_guard lock(mu);
            r.failures.push_back(kind_name(k) + " fold " + ds.sessions[h].subject_id + ": " + e.what());
        }
    });
    parallel_for(encs.size() * held.size(), cfg.run.jobs, [&](std::size_t u) {
        const std::size_t e = u / held.size(), h = held[u % held.size()];
        try {
            auto d = ensure_decoder(cfg, ds, tables[e], encs[e], h, log);
            std::lock_guard lock(mu);
            decoders.emplace(std::make_pair(e, h), std::move(d));
        } catch (const std::exception& ex) {
            std::lock_guard lock(mu);
            r.failures.push_back(enc_name(encs[e]) + " decoder without " + ds.sessions[h].subject_id + ": " + ex.what());
        }
    });
    std::sort(r.failures.begin(), r.failures.end());

    DecodeOptions dopt;
    dopt.window = cfg.synth.window;
    dopt.onset_jitter_sd_s = cfg.eval.onset_jitter_sd_s;
    dopt.jitter_seed = derive_seed(cfg.run.seed, "jitter");

    CsvTable runs({{"subject", ColumnType::Str}, {"model", ColumnType::Str}, {"encoder", ColumnType::Str},
                   {"n", ColumnType::Int}, {"skipped", ColumnType::Int}, {"mean_rank", ColumnType::F64},
                   {"auc_above_chance_pct", ColumnType::F64}, {"U", ColumnType::F64}, {"p", ColumnType::F64},
                   {"p_text", ColumnType::Str}});
    CsvTable outcomes({{"subject", ColumnType::Str}, {"model", ColumnType::Str}, {"encoder", ColumnType::Str},
                       {"word", ColumnType::Str}, {"rank", ColumnType::Int}});
    CsvTable cdf({{"model", ColumnType::Str}, {"encoder", ColumnType::Str}, {"k", ColumnType::Int},
                  {"cdf", ColumnType::F64}, {"chance", ColumnType::F64}});
    CsvTable auc({{"model", ColumnType::Str}, {"encoder", ColumnType::Str}, {"subjects", ColumnType::Int},
                  {"mean_auc_pct", ColumnType::F64}, {"sd_auc_pct", ColumnType::F64}});

    // (model label, encoder index) -> pooled outcomes; (subject, model label) -> per-encoder outcomes.
    std::map<std::pair<std::string, std::size_t>, std::vector<RankOutcome>> pooled;
    std::map<std::pair<std::string, std::size_t>, std::vector<double>> aucs;
    std::map<std::pair<std::string, std::string>, std::vector<std::vector<RankOutcome>>> per_combo;

    auto add_run = [&](const std::string& model, std::size_t e, const std::string& subject,
                       const std::vector<RankOutcome>& o, std::size_t skipped, const stats::TestResult& test,
                       double auc_pct) {
        runs.add_row({subject, model, enc_name(encs[e]), cell(o.size()), cell(skipped), cell(mean_rank(o)),
                      cell(auc_pct), cell(test.statistic), cell(test.p), stats::format_p(test.p)});
        for (const auto& x : o) outcomes.add_row({subject, model, enc_name(encs[e]), x.true_word, cell(x.rank)});
        auto& p = pooled[{model, e}];
        p.insert(p.end(), o.begin(), o.end());
        aucs[{model, e}].push_back(auc_pct);
    };

    for (std::size_t h : held) {
        const auto& session = ds.sessions[h];
        for (std::size_t e = 0; e < encs.size(); ++e) {
            const auto dit = decoders.find({e, h});
            if (dit == decoders.end()) continue;
            const auto& decoder = dit->second;
            try {
                // Listened ceiling on the same held-out subject.
                const auto lw = session_word_windows(session, TrialSource::Listened, ds.vocabulary, cfg.synth.window);
                const auto lo = rank_windows(decoder, lw);
                add_run("listened", e, session.subject_id, lo, 0, ranks_vs_uniform(lo, V),
                        auc_above_chance(lo, V, cfg.eval.auc_k));
                per_combo[{session.subject_id, "listened"}].push_back(lo);

                for (MappingKind k : kinds) {
                    const auto mit = mappings.find({k, h});
                    if (mit == mappings.end()) continue;
                    const auto run = run_pipeline(session, mit->second, decoder, dopt);
                    add_run(kind_name(k), e, session.subject_id, run.outcomes, run.skipped, run.vs_uniform,
                            auc_above_chance(run.outcomes, V, cfg.eval.auc_k));
                    per_combo[{session.subject_id, kind_name(k)}].push_back(run.outcomes);
                }
                const auto control_spec = cfg.mapping_spec(kinds.front());
                auto control = random_mapping(control_spec, derive_seed(derive_seed(cfg.run.seed, "random-mapping"), h));
                control.meta.training_subjects.clear();
                const auto crun = run_pipeline(session, control, decoder, dopt);
                add_run("random_" + kind_name(kinds.front()), e, session.subject_id, crun.outcomes, crun.skipped,
                        crun.vs_uniform, auc_above_chance(crun.outcomes, V, cfg.eval.auc_k));
            } catch (const std::exception& ex) {
                r.failures.push_back("pipeline " + session.subject_id + " / " + enc_name(encs[e]) + ": " + ex.what());
            }
        }
    }
    for (const auto& [key, o] : pooled) {
        add_cdf_rows(cdf, {key.first, enc_name(encs[key.second])}, o, V);
        const auto& a = aucs[key];
        auc.add_row({key.first, enc_name(encs[key.second]), cell(a.size()), cell(stats::mean(a)), cell(stats::sample_sd(a))});
    }

    // Top words and consistency.
    CsvTable top({{"subject", ColumnType::Str}, {"model", ColumnType::Str}, {"position", ColumnType::Int},
                  {"word", ColumnType::Str}, {"median_rank", ColumnType::F64}});
    CsvTable medians({{"subject", ColumnType::Str}, {"model", ColumnType::Str}, {"word", ColumnType::Str},
                      {"median_rank", ColumnType::F64}});
    std::vector<std::vector<std::string>> sets;
    std::map<std::size_t, std::vector<RankOutcome>> listened_by_encoder;
    for (const auto& [key, per_encoder] : per_combo) {
        const auto tw = top_k_words(per_encoder, ds.vocabulary, cfg.eval.top_k);
        for (std::size_t i = 0; i < tw.words.size(); ++i)
            top.add_row({key.first, key.second, cell(i + 1), tw.words[i], cell(tw.median.at(tw.words[i]))});
        for (const auto& [w, m] : tw.median) medians.add_row({key.first, key.second, w, cell(m)});
        if (key.second == "listened") {
            for (std::size_t e = 0; e < per_encoder.size(); ++e)
                listened_by_encoder[e].insert(listened_by_encoder[e].end(), per_encoder[e].begin(), per_encoder[e].end());
        } else if (tw.words.size() == cfg.eval.top_k) {
            sets.push_back(tw.words);
        }
    }
    std::vector<std::vector<RankOutcome>> listened_lists;
    for (auto& [e, o] : listened_by_encoder) listened_lists.push_back(std::move(o));
    std::vector<std::string> listened_top;
    if (!listened_lists.empty()) {
        const auto tw = top_k_words(listened_lists, ds.vocabulary, cfg.eval.top_k);
        for (std::size_t i = 0; i < tw.words.size(); ++i)
            top.add_row({"all", "listened_pooled", cell(i + 1), tw.words[i], cell(tw.median.at(tw.words[i]))});
        if (tw.words.size() == cfg.eval.top_k) listened_top = tw.words;
    }
    CsvTable summary({{"distribution", ColumnType::Str}, {"n", ColumnType::Int}, {"mean", ColumnType::F64},
                      {"sd", ColumnType::F64}, {"U_vs_null", ColumnType::F64}, {"p_vs_null", ColumnType::F64},
                      {"p_text", ColumnType::Str}});
    CsvTable hist({{"distribution", ColumnType::Str}, {"bin_low", ColumnType::F64}, {"bin_high", ColumnType::F64},
                   {"count", ColumnType::Int}});
    const auto consistency =
        consistency_analysis(sets, listened_top, ds.vocabulary, cfg.eval.null_draws,
                             derive_seed(cfg.run.seed, "consistency"), cfg.eval.top_k);
    auto describe = [&](const std::string& name, const std::vector<double>& v, const stats::TestResult* t) {
        summary.add_row({name, cell(v.size()), cell(stats::mean(v)), cell(stats::sample_sd(v)),
                         cell(t ? t->statistic : 0.0), cell(t ? t->p : 1.0), t ? stats::format_p(t->p) : "n/a"});
        constexpr std::size_t kBins = 20;
        std::vector<std::size_t> counts(kBins, 0);
        for (double x : v) ++counts[std::min(kBins - 1, static_cast<std::size_t>(x * kBins))];
        for (std::size_t b = 0; b < kBins; ++b)
            hist.add_row({name, cell(static_cast<double>(b) / kBins), cell(static_cast<double>(b + 1) / kBins), cell(counts[b])});
    };
    describe("pairwise", consistency.pairwise, consistency.pairwise.empty() ? nullptr : &consistency.pairwise_vs_null);
    describe("vs_listened", consistency.vs_listened,
             consistency.vs_listened.empty() ? nullptr : &consistency.listened_vs_null);
    describe("null", consistency.null, nullptr);

    const fs::path dir = out_dir(cfg) / "pipeline";
    emit(r, dir / "runs.csv", runs, "Zero-shot decoding per held-out subject, mapping and encoder", cfg);
    emit(r, dir / "outcomes.csv", outcomes, "Rank of every decoded word window", cfg);
    emit(r, dir / "rank_cdf.csv", cdf, "Rank CDF pooled over held-out subjects", cfg);
    emit(r, dir / "auc.csv", auc, "AUC above chance, mean and sd across held-out subjects", cfg);
    emit(r, dir / "top_words.csv", top, "Top words by median rank across encoders", cfg);
    emit(r, dir / "word_medians.csv", medians, "Median rank of every word per subject and model", cfg);
    emit(r, dir / "consistency_summary.csv", summary, "Jaccard consistency of top-word sets vs random sets", cfg);
    emit(r, dir / "consistency_hist.csv", hist, "Histogram of Jaccard values", cfg);
    return r;
}

CommandResult cmd_report(const ExperimentConfig& cfg, RunLog& log) {
    CommandResult r;
    const fs::path root = out_dir(cfg);
    std::vector<fs::path> tables;
    if (fs::exists(root)) {
        for (const auto& entry : fs::recursive_directory_iterator(root)) {
            if (entry.is_regular_file() && entry.path().extension() == ".csv" &&
                entry.path().parent_path() != root / "dataset")
                tables.push_back(entry.path());
        }
    }
    std::sort(tables.begin(), tables.end());
    if (tables.empty()) {
        r.failures.push_back("no report tables under " + root.string());
        return r;
    }
    std::ostringstream md;
    md << "# Run report\n\nSeed " << cfg.run.seed << ".\n\n| table | rows | description |\n|---|---|---|\n";
    json index = json::array();
    for (const auto& p : tables) {
        const auto t = io::read_csv(p);
        std::string description;
        const auto meta = fs::path(p).concat(".meta.json");
        if (fs::exists(meta)) description = json::parse(io::read_text(meta)).value("description", "");
        const auto rel = fs::relative(p, root).generic_string();
        md << "| " << rel << " | " << t.rows().size() << " | " << description << " |\n";
        index.push_back(json{{"table", rel}, {"rows", t.rows().size()}, {"description", description}});
    }
    auto section = [&](const fs::path& rel, const std::string& title, const std::vector<std::string>& cols) {
        if (!fs::exists(root / rel)) return;
        const auto t = io::read_csv(root / rel);
        md << "\n## " << title << "\n\n|";
        for (const auto& c : cols) md << ' ' << c << " |";
        md << "\n|";
        for (std::size_t i = 0; i < cols.size(); ++i) md << "---|";
        md << '\n';
        for (std::size_t i = 0; i < t.rows().size(); ++i) {
            md << '|';
            for (const auto& c : cols) md << ' ' << t.str(i, c) << " |";
            md << '\n';
        }
    };
    section("mapping/paired_tests.csv", "Mapping: real vs null", {"model", "condition", "n", "mean_real", "mean_null", "p_text"});
    section("classify/wilcoxon.csv", "Classification", {"source", "n", "mean_diagonal", "mean_off_diagonal", "p_text"});
    section("scaling/trend.csv", "Scaling trend", {"model", "spearman_k_vs_mean"});
    section("pipeline/auc.csv", "Pipeline AUC above chance", {"model", "encoder", "subjects", "mean_auc_pct", "sd_auc_pct"});
    section("pipeline/consistency_summary.csv", "Word consistency", {"distribution", "n", "mean", "p_text"});
    io::write_text(root / "report.md", md.str());
    io::write_text(root / "report.json", json{{"format_version", io::kFormatVersion}, {"tables", index}}.dump(2) + "\n");
    r.outputs.push_back(root / "report.md");
    r.outputs.push_back(root / "report.json");
    log.info("report over " + std::to_string(tables.size()) + " tables");
    return r;
}

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names = {"generate",      "train-mapping", "eval-mapping",
                                                   "scaling",       "classify",      "train-decoder",
                                                   "eval-decoder",  "pipeline",      "report"};
    return names;
}

CommandResult run_command(const std::string& verb, const ExperimentConfig& cfg, RunLog& log) {
    if (verb == "generate") return cmd_generate(cfg, log);
    if (verb == "train-mapping") return cmd_train_mapping(cfg, log);
    if (verb == "eval-mapping") return cmd_eval_mapping(cfg, log);
    if (verb == "scaling") return cmd_scaling(cfg, log);
    if (verb == "classify") return cmd_classify(cfg, log);
    if (verb == "train-decoder") return cmd_train_decoder(cfg, log);
    if (verb == "eval-decoder") return cmd_eval_decoder(cfg, log);
    if (verb == "pipeline") return cmd_pipeline(cfg, log);
    if (verb == "report") return cmd_report(cfg, log);
    throw std::invalid_argument("unknown command '" + verb + "'");
}

}  // namespace isd
