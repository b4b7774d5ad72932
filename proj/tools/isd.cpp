// isd: command-line front end for the imagined-speech decoding experiments.

#include <cstdlib>
#include <exception>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "isd/commands.hpp"
#include "isd/config.hpp"
#include "isd/io.hpp"

namespace {

namespace fs = std::filesystem;

void write_errors(const fs::path& out, const std::string& verb, const std::vector<std::string>& failures) {
    nlohmann::json j{{"format_version", isd::io::kFormatVersion}, {"command", verb}, {"failures", failures}};
    try {
        isd::io::write_text(out / "errors.json", j.dump(2) + "\n");
    } catch (const std::exception&) {
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Imagined speech decoding experiments on synthetic paired recordings"};
    app.require_subcommand(1, 1);

    std::string config_path, out, models, encoders, subjects;
    std::uint64_t seed = 0;
    std::size_t jobs = 0;
    std::vector<std::string> overrides;
    bool quiet = false;

    app.add_option("--config", config_path, "INI configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Master seed (overrides run.seed)");
    app.add_option("--out", out, "Output directory (default: $ISD_OUT_ROOT or run.out)");
    app.add_option("--models", models, "Comma-separated mapping models");
    app.add_option("--encoders", encoders, "Comma-separated word encoders");
    app.add_option("--subjects", subjects, "Comma-separated held-out subjects");
    app.add_option("--jobs", jobs, "Worker threads");
    app.add_option("--set", overrides, "section.key=value override (repeatable)");
    app.add_flag("-q,--quiet", quiet, "Do not echo log lines to stderr");
    app.fallthrough();

    const std::map<std::string, std::string> about = {
        {"generate", "Write a synthetic paired dataset"},
        {"train-mapping", "Fit mapping models with leave-one-subject-out folds"},
        {"eval-mapping", "Score saved mapping checkpoints"},
        {"scaling", "Held-out correlation versus number of training subjects"},
        {"classify", "Correlation-template classification of mapped trials"},
        {"train-decoder", "Train word decoders on listened windows"},
        {"eval-decoder", "Score saved decoders on held-out listened windows"},
        {"pipeline", "Zero-shot imagined word decoding and word consistency"},
        {"report", "Summarise all outputs into report.md and report.json"}};
    for (const auto& verb : isd::command_names()) app.add_subcommand(verb, about.at(verb));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    const std::string verb = app.get_subcommands().front()->get_name();

    isd::ExperimentConfig cfg;
    try {
        if (!config_path.empty()) cfg = isd::load_config(config_path);
        if (const char* root = std::getenv("ISD_OUT_ROOT"); root && *root) cfg.run.out = root;
        if (app.count("--seed")) cfg.run.seed = seed;
        if (!out.empty()) cfg.run.out = out;
        if (!models.empty()) isd::set_config_value(cfg, "run.models", models);
        if (!encoders.empty()) isd::set_config_value(cfg, "run.encoders", encoders);
        if (!subjects.empty()) isd::set_config_value(cfg, "run.subjects", subjects);
        if (jobs) cfg.run.jobs = jobs;
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw isd::ConfigError("--set expects key=value, got '" + kv + "'");
            isd::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
        cfg.validate();
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    }

    const fs::path out_dir = cfg.run.out;
    std::vector<std::string> failures;
    try {
        fs::create_directories(out_dir);
        isd::io::write_text(out_dir / "config.resolved.ini", isd::serialize_config(cfg));
        fs::remove(out_dir / "errors.json");
        isd::RunLog log(out_dir / "run.log", !quiet);
        log.info(verb + " started (seed " + std::to_string(cfg.run.seed) + ")");
        const auto result = isd::run_command(verb, cfg, log);
        for (const auto& p : result.outputs) std::cout << p.string() << '\n';
        failures = result.failures;
        log.info(verb + (failures.empty() ? " finished" : " finished with failures"));
    } catch (const std::exception& e) {
        failures.push_back(e.what());
    }
    if (!failures.empty()) {
        for (const auto& f : failures) std::cerr << "error: " << f << '\n';
        write_errors(out_dir, verb, failures);
        return 1;
    }
    return 0;
}
