#pragma once

// Command implementations behind the CLI verbs. Each command writes its
// tables under the configured output directory; timestamps go only to the
// sidecar log (<out>/run.log).

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "isd/config.hpp"
#include "isd/io.hpp"

namespace isd {

struct CommandResult {
    std::vector<std::filesystem::path> outputs;
    std::vector<std::string> failures;  // failed units of work

    bool ok() const noexcept { return failures.empty(); }
};

/// Timestamped append-only log.
class RunLog {
public:
    explicit RunLog(const std::filesystem::path& path, bool echo = false);
    void info(const std::string& message);

private:
    std::filesystem::path path_;
    bool echo_;
};

std::filesystem::path dataset_dir(const ExperimentConfig& cfg);

/// Embedding table for `encoder`: read from <embeddings>/<name>.tsv, or
/// synthetic (combined = semantic ++ phonetic).
EmbeddingTable load_embedding_table(const ExperimentConfig& cfg, const Vocabulary& vocab, EncoderName encoder);

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads. Exceptions are rethrown after all units finish.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

CommandResult cmd_generate(const ExperimentConfig& cfg, RunLog& log);
CommandResult cmd_train_mapping(const ExperimentConfig& cfg, RunLog& log);
CommandResult cmd_eval_mapping(const ExperimentConfig& cfg, RunLog& log);
CommandResult cmd_scaling(const ExperimentConfig& cfg, RunLog& log);
CommandResult cmd_classify(const ExperimentConfig& cfg, RunLog& log);
CommandResult cmd_train_decoder(const ExperimentConfig& cfg, RunLog& log);
CommandResult cmd_eval_decoder(const ExperimentConfig& cfg, RunLog& log);
CommandResult cmd_pipeline(const ExperimentConfig& cfg, RunLog& log);
CommandResult cmd_report(const ExperimentConfig& cfg, RunLog& log);

/// Dispatches a CLI verb; throws std::invalid_argument for unknown verbs.
CommandResult run_command(const std::string& verb, const ExperimentConfig& cfg, RunLog& log);
const std::vector<std::string>& command_names();

}  // namespace isd
