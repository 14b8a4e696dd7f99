#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "masp/agent.hpp"
#include "masp/envs.hpp"
#include "masp/meta.hpp"
#include "masp/mining.hpp"

namespace masp {

enum class Mode { baseline, macro, masp };

Mode parse_mode(const std::string& s);
std::string to_string(Mode m);

struct AgentConfig {
    double gamma = 0.99;
    double lr = 0.1;
    EpsilonSchedule epsilon{};
    std::size_t buffer_capacity = 50'000;
    std::size_t batch_size = 64;
    std::uint64_t update_period = 4;
    std::uint64_t target_period = 1'000;
    std::uint64_t learning_starts = 20'000;  // env steps of uniform-random acting before updates begin
    std::vector<std::size_t> hidden{64, 64};
    Activation activation = Activation::relu;
};

enum class CorpusSource { file, scripted, random, agent };

// Where macros come from: a manifest on disk, or mined from a corpus.
struct MacroSource {
    std::optional<std::string> manifest;
    MiningParams mining{};
    CorpusSource corpus_source = CorpusSource::scripted;
    std::string corpus_path;        // CorpusSource::file
    std::string corpus_checkpoint;  // CorpusSource::agent
    std::size_t corpus_episodes = 200;
    std::uint64_t corpus_seed = 0;
    double corpus_epsilon = 0.1;    // CorpusSource::agent
};

struct EvalConfig {
    std::size_t episodes = 20;
    std::uint64_t seed = 1'000'003;
};

enum class SweepAxis { k, p_replace, eta };

struct SweepConfig {
    SweepAxis axis = SweepAxis::k;
    std::vector<double> values;
};

std::string to_string(SweepAxis a);

struct ExperimentConfig {
    std::string name = "run";
    EnvSpec env{};
    std::vector<std::uint64_t> seeds{0};
    std::uint64_t total_steps = 100'000;
    Mode mode = Mode::masp;
    std::optional<MacroSource> macros;
    double p_replace = 0.0;
    MaspConfig masp{};
    AgentConfig agent{};
    EvalConfig eval{};
    std::optional<std::string> frozen_sigma;
    std::optional<std::string> checkpoint;         // eval
    std::optional<std::string> source_checkpoint;  // transfer
    std::optional<SweepConfig> sweep;

    // Warnings produced while enforcing mode invariants.
    std::vector<std::string> warnings;
};

// Parses and validates a config document. Unknown keys and invalid values
// throw ConfigError naming the field path.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

// Applies mode invariants: baseline has no macros, macro mode has eta = beta =
// 0, a frozen sigma forces beta = 0. Records a warning for every forced value.
void enforce_invariants(ExperimentConfig& cfg);

}  // namespace masp
