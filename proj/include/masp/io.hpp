#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "masp/envs.hpp"
#include "masp/mining.hpp"
#include "masp/numcore.hpp"

namespace masp {

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);
nlohmann::json mlp_to_json(const MlpParams& p);
MlpParams mlp_from_json(const nlohmann::json& j);

// Trajectory corpus: JSON-lines, one episode per line:
// {"seed": int, "actions": [int,...], "rewards": [float,...], "success": bool}
std::string episode_to_jsonl(const EpisodeRecord& e);
void write_trajectories(const std::string& path, const std::vector<EpisodeRecord>& episodes);
std::vector<EpisodeRecord> read_trajectories(const std::string& path);

// {"primitives": int, "macros": [[int,...],...], "k": int, "l_min": int, "l_max": int}
struct MacroManifest {
    std::size_t primitives = 0;
    std::vector<MacroAction> macros;
    std::size_t k = 0;
    std::size_t l_min = 0;
    std::size_t l_max = 0;

    bool operator==(const MacroManifest&) const = default;
};

std::string manifest_to_string(const MacroManifest& m);
void write_manifest(const std::string& path, const MacroManifest& m);
MacroManifest read_manifest(const std::string& path);

// Sigma as CSV with 17 significant digits, plus a JSON sidecar
// {"action_labels": [...], "step": int}.
std::string sigma_to_csv(const Matrix& sigma);
Matrix sigma_from_csv(const std::string& text);
void export_sigma(const std::string& csv_path, const std::string& sidecar_path, const Matrix& sigma,
                  const std::vector<std::string>& labels, std::uint64_t step);

struct TrainCounters {
    std::uint64_t env_steps = 0;
    std::uint64_t decisions = 0;
    std::uint64_t updates = 0;
    std::uint64_t episodes = 0;

    bool operator==(const TrainCounters&) const = default;
};

// Full learner state at the end of a run.
struct Checkpoint {
    EnvSpec env;
    std::vector<std::string> primitive_names;
    std::vector<MacroAction> macros;
    std::size_t observation_dim = 0;
    MlpParams online;
    MlpParams target;
    Matrix sigma;
    Matrix w_emb;
    std::map<std::string, std::string> rng_states;
    TrainCounters counters;
    std::uint64_t seed = 0;
};

nlohmann::json checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace masp
