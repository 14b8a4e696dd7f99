#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "masp/agent.hpp"
#include "masp/config.hpp"
#include "masp/io.hpp"
#include "masp/meta.hpp"

namespace masp {

// Everything one seeded training run needs, after macro resolution.
struct RunSpec {
    EnvSpec env;
    AugmentedActionSpace space;
    AgentConfig agent;
    MaspConfig masp;
    std::uint64_t total_steps = 0;
    std::uint64_t seed = 0;
    std::optional<Matrix> frozen_sigma;
};

struct UpdateStats {
    double td_loss = 0.0;
    double masp_loss = 0.0;
    bool meta_step = false;
};

// Online and target Q-networks, the similarity matrix and its embedding.
// One update is the inner SGD step on L_TD + L_MASP followed, when the meta
// learning rate is positive, by the meta step on sigma.
class Learner {
public:
    Learner(const RunSpec& spec, std::size_t observation_dim);
    explicit Learner(const Checkpoint& checkpoint, const AgentConfig& agent = {}, const MaspConfig& masp = {});

    Vector q(std::span<const double> state) const { return q_values(online_, state, e_sigma_); }

    // `outer` is the held-out batch for the meta step; pass nullptr to skip it.
    UpdateStats update(const Batch& inner, const Batch* outer);
    void sync_target() { target_ = online_; }

    bool meta_enabled() const { return masp_.beta > 0.0; }

    const MlpParams& online() const { return online_; }
    const MlpParams& target() const { return target_; }
    const SimilarityMatrix& sigma() const { return sigma_; }
    const Matrix& w_emb() const { return w_emb_; }
    const Vector& e_sigma() const { return e_sigma_; }
    const AugmentedActionSpace& space() const { return space_; }
    std::size_t observation_dim() const { return observation_dim_; }

    void set_sigma(const SimilarityMatrix& s);

private:
    void refresh_embedding() { e_sigma_ = masp_.embedding_dim ? embed_sigma(w_emb_, sigma_.matrix()) : Vector{}; }

    AugmentedActionSpace space_;
    AgentConfig agent_;
    MaspConfig masp_;
    std::size_t observation_dim_ = 0;
    MlpParams online_;
    MlpParams target_;
    Matrix w_emb_;
    SimilarityMatrix sigma_;
    Vector e_sigma_;
};

struct MetricsRecord {
    std::uint64_t step = 0;
    std::uint64_t episode = 0;
    double episode_return = 0.0;
    bool success = false;
    double epsilon = 0.0;
    double masp_loss = 0.0;
    double td_loss = 0.0;
    SigmaStats sigma{};

    std::string to_jsonl() const;
};

struct TrainHooks {
    std::function<void(const MetricsRecord&)> on_episode;
    std::function<void(const Learner&, const UpdateStats&)> on_update;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<MetricsRecord> metrics;
};

// The full training loop: epsilon-greedy acting over the augmented action
// space, replay, the regularized update with its meta step, and periodic
// target synchronisation. total_steps counts primitive environment steps.
TrainResult train_loop(const RunSpec& spec, const TrainHooks& hooks = {});

struct EvalSummary {
    std::size_t episodes = 0;
    double mean_return = 0.0;
    double success_rate = 0.0;
    double mean_length = 0.0;

    nlohmann::json to_json() const;
};

// Greedy (epsilon = 0) rollouts on episodes seeded from `seed`.
EvalSummary evaluate(const Learner& learner, const EnvSpec& env, std::size_t episodes, std::uint64_t seed);

// Episode seeds used by evaluation.
std::vector<std::uint64_t> eval_episode_seeds(std::uint64_t seed, std::size_t episodes);

Checkpoint make_checkpoint(const Learner& learner, const EnvSpec& env, std::uint64_t seed,
                           const TrainCounters& counters, std::map<std::string, std::string> rng_states);

}  // namespace masp
