#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "masp/config.hpp"
#include "masp/io.hpp"
#include "masp/trainer.hpp"

namespace masp {

struct HarnessOptions {
    std::string out_dir = "out";
    std::optional<std::vector<std::uint64_t>> seeds;  // overrides config seeds
    unsigned jobs = 1;                                 // concurrent runs in train/sweep/transfer
    std::ostream* log = nullptr;                       // progress messages; null is silent
};

// Corpus for macro mining as described by the macro source.
std::vector<EpisodeRecord> build_corpus(const MacroSource& src, const EnvSpec& env);
std::vector<EpisodeRecord> scripted_keydoor_corpus(const EnvSpec& env, std::size_t episodes, std::uint64_t seed);
std::vector<EpisodeRecord> random_corpus(const EnvSpec& env, std::size_t episodes, std::uint64_t seed);
std::vector<EpisodeRecord> agent_corpus(const Checkpoint& ckpt, const EnvSpec& env, std::size_t episodes,
                                        std::uint64_t seed, double epsilon);

// Macro set for a config before noise injection (manifest or freshly mined).
std::vector<MacroAction> resolve_macros(const ExperimentConfig& cfg);

// Mined/loaded macros, corrupted with the run's noise stream, under the
// config's mode. Loads the frozen sigma if one is configured.
RunSpec make_run_spec(const ExperimentConfig& cfg, std::uint64_t seed);

struct MineResult {
    std::string manifest_path;
    MacroManifest manifest;
};

struct TrainRunOutput {
    std::uint64_t seed = 0;
    std::string metrics_path;
    std::string checkpoint_path;
    std::string sigma_csv_path;
    EvalSummary eval;
    double final_episode_return = 0.0;
};

struct SweepRow {
    double axis_value = 0.0;
    std::uint64_t seed = 0;
    double success = 0.0;
    double episode_return = 0.0;
};

struct SweepSummary {
    double axis_value = 0.0;
    std::size_t n = 0;
    double success_mean = 0.0;
    double success_stderr = 0.0;
    double return_mean = 0.0;
    double return_stderr = 0.0;
};

struct SweepResult {
    std::string csv_path;
    std::vector<SweepRow> rows;
    std::vector<SweepSummary> summary;
};

struct TransferResult {
    std::string summary_path;
    std::vector<TrainRunOutput> runs;
    double mean_success = 0.0;
};

MineResult cmd_mine(const ExperimentConfig& cfg, const HarnessOptions& opts);
std::vector<TrainRunOutput> cmd_train(const ExperimentConfig& cfg, const HarnessOptions& opts);
EvalSummary cmd_eval(const ExperimentConfig& cfg, const HarnessOptions& opts);
SweepResult cmd_sweep(const ExperimentConfig& cfg, const HarnessOptions& opts);
TransferResult cmd_transfer(const ExperimentConfig& cfg, const HarnessOptions& opts);

std::vector<SweepSummary> summarize(const std::vector<SweepRow>& rows);
std::string sweep_to_csv(const std::vector<SweepRow>& rows, const std::vector<SweepSummary>& summary);

// Entry point shared by the CLI binary and tests. Returns the process exit
// code: 0 success, 2 config/schema error, 3 runtime error.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace masp
