#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "masp/numcore.hpp"

namespace masp {

using ActionId = int;

struct EnvState {
    Vector observation;
    bool done = false;
    int step_count = 0;
};

struct StepResult {
    Vector next_observation;
    double reward = 0.0;
    bool done = false;
};

// A deterministic episodic MDP over a small primitive action set. An Env
// instance owns its current episode; copies are independent.
class Env {
public:
    virtual ~Env() = default;

    virtual std::string id() const = 0;
    virtual std::size_t num_primitives() const = 0;
    virtual std::vector<std::string> primitive_names() const = 0;
    virtual std::size_t observation_dim() const = 0;
    virtual int episode_cap() const = 0;

    virtual EnvState reset(std::uint64_t seed) = 0;
    // Throws ContractViolation when the episode is already over or the
    // action is not a primitive of this env.
    virtual StepResult step(ActionId action) = 0;
    virtual EnvState state() const = 0;
    // Whether the finished episode counts as solved.
    virtual bool success() const = 0;
    // Largest reward a single step can produce.
    virtual double max_step_reward() const = 0;

    virtual std::unique_ptr<Env> clone() const = 0;
};

struct Cell {
    int x = 0;
    int y = 0;
    bool operator==(const Cell&) const = default;
};

// Key-and-door gridworld. The grid has a solid border and a vertical wall
// splitting it into two rooms joined by a locked door. The agent must pick up
// the key, open the door and reach the goal. Sparse reward: +1 at the goal.
class KeyDoorGrid final : public Env {
public:
    enum Action : ActionId { up = 0, down, left, right, pickup, toggle };
    static constexpr int kNumActions = 6;

    struct Layout {
        int size = 6;
        int wall_x = 2;
        Cell agent, key, door, goal;
    };

    explicit KeyDoorGrid(int size = 6, int episode_cap = 200);

    std::string id() const override { return "keydoor"; }
    std::size_t num_primitives() const override { return kNumActions; }
    std::vector<std::string> primitive_names() const override;
    std::size_t observation_dim() const override;
    int episode_cap() const override { return cap_; }

    EnvState reset(std::uint64_t seed) override;
    StepResult step(ActionId action) override;
    EnvState state() const override;
    bool success() const override { return reached_goal_; }
    double max_step_reward() const override { return 1.0; }
    std::unique_ptr<Env> clone() const override { return std::make_unique<KeyDoorGrid>(*this); }

    // Starts an episode from an explicit layout (tests, scripted solvers).
    EnvState reset_to(const Layout& layout);

    const Layout& layout() const { return layout_; }
    Cell agent() const { return agent_; }
    bool has_key() const { return has_key_; }
    bool door_open() const { return door_open_; }
    bool is_wall(Cell c) const;

    static Layout generate_layout(int size, std::uint64_t seed);
    // Shortest primitive action sequence solving the layout, if one exists.
    static std::optional<std::vector<ActionId>> solve(const Layout& layout);

private:
    bool blocked(Cell c) const;

    int size_;
    int cap_;
    Layout layout_;
    Cell agent_;
    bool has_key_ = false;
    bool door_open_ = false;
    bool reached_goal_ = false;
    bool done_ = true;
    int steps_ = 0;
};

// One-dimensional fighting lane against a scripted opponent. Plain hits deal
// one damage unless the opponent is guarding; finishing a combo from the
// table deals its bonus instead and ignores guard.
class ComboArena final : public Env {
public:
    enum Action : ActionId { advance = 0, retreat, punch, kick, guard, special };
    static constexpr int kNumActions = 6;
    static constexpr int kStartHealth = 20;
    static constexpr int kLaneLength = 10;
    static constexpr int kOpponentMemory = 3;

    struct Combo {
        std::vector<ActionId> sequence;
        int bonus = 0;
    };

    static std::vector<Combo> default_combos();

    // An empty opponent pattern means a seeded pattern is drawn on reset.
    explicit ComboArena(std::vector<Combo> combos = default_combos(),
                        std::vector<ActionId> opponent_pattern = {}, int episode_cap = 300);

    std::string id() const override { return "combo"; }
    std::size_t num_primitives() const override { return kNumActions; }
    std::vector<std::string> primitive_names() const override;
    std::size_t observation_dim() const override;
    int episode_cap() const override { return cap_; }

    EnvState reset(std::uint64_t seed) override;
    StepResult step(ActionId action) override;
    EnvState state() const override;
    bool success() const override { return health_ == 0; }
    double max_step_reward() const override;
    std::unique_ptr<Env> clone() const override { return std::make_unique<ComboArena>(*this); }

    int opponent_health() const { return health_; }
    int agent_position() const { return agent_pos_; }
    int opponent_position() const { return opponent_pos_; }
    bool in_range() const { return opponent_pos_ - agent_pos_ <= 1; }

private:
    std::vector<Combo> combos_;
    std::vector<ActionId> fixed_pattern_;
    std::vector<ActionId> pattern_;
    int cap_;
    int health_ = kStartHealth;
    int agent_pos_ = 0;
    int opponent_pos_ = kLaneLength - 1;
    std::size_t pattern_cursor_ = 0;
    std::vector<ActionId> agent_history_;
    std::vector<ActionId> opponent_history_;
    bool done_ = true;
    int steps_ = 0;
};

// Deterministic chain of `length` states with actions {left, right}. Moving
// right out of the second-to-last state reaches the terminal state with
// reward 1. Episodes start in a seeded non-terminal state.
class ChainMdp final : public Env {
public:
    enum Action : ActionId { left = 0, right = 1 };

    explicit ChainMdp(int length = 5, int episode_cap = 50);

    std::string id() const override { return "chain"; }
    std::size_t num_primitives() const override { return 2; }
    std::vector<std::string> primitive_names() const override { return {"left", "right"}; }
    std::size_t observation_dim() const override { return static_cast<std::size_t>(length_); }
    int episode_cap() const override { return cap_; }

    EnvState reset(std::uint64_t seed) override;
    StepResult step(ActionId action) override;
    EnvState state() const override;
    bool success() const override { return position_ == length_ - 1; }
    double max_step_reward() const override { return 1.0; }
    std::unique_ptr<Env> clone() const override { return std::make_unique<ChainMdp>(*this); }

    EnvState reset_to(int position);
    int position() const { return position_; }
    int length() const { return length_; }

private:
    Vector observe() const;

    int length_;
    int cap_;
    int position_ = 0;
    bool done_ = true;
    int steps_ = 0;
};

struct EnvSpec {
    std::string id = "keydoor";
    int size = 0;         // keydoor grid side or chain length; 0 keeps the env default
    int episode_cap = 0;  // 0 keeps the env default
};

std::unique_ptr<Env> make_env(const EnvSpec& spec);

// One recorded episode of primitive actions.
struct EpisodeRecord {
    std::uint64_t seed = 0;
    std::vector<ActionId> actions;
    std::vector<double> rewards;
    bool success = false;

    bool operator==(const EpisodeRecord&) const = default;
};

}  // namespace masp
