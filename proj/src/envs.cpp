#include "masp/envs.hpp"

#include <algorithm>
#include <array>
#include <queue>

#include "masp/errors.hpp"
#include "masp/rng.hpp"

namespace masp {

namespace {

struct GridSim {
    Cell agent;
    bool has_key = false;
    bool door_open = false;
};

bool grid_wall(const KeyDoorGrid::Layout& l, Cell c) {
    if (c.x <= 0 || c.y <= 0 || c.x >= l.size - 1 || c.y >= l.size - 1) return true;
    return c.x == l.wall_x && !(c == l.door);
}

// Applies one primitive; returns true when the agent steps onto the goal.
bool grid_transition(const KeyDoorGrid::Layout& l, GridSim& s, ActionId a) {
    static constexpr std::array<Cell, 4> kMoves{{{0, -1}, {0, 1}, {-1, 0}, {1, 0}}};
    switch (a) {
        case KeyDoorGrid::up:
        case KeyDoorGrid::down:
        case KeyDoorGrid::left:
        case KeyDoorGrid::right: {
            const Cell next{s.agent.x + kMoves[a].x, s.agent.y + kMoves[a].y};
            const bool closed_door = next == l.door && !s.door_open;
            if (grid_wall(l, next) || closed_door) return false;
            s.agent = next;
            return s.agent == l.goal;
        }
        case KeyDoorGrid::pickup:
            if (!s.has_key && s.agent == l.key) s.has_key = true;
            return false;
        case KeyDoorGrid::toggle: {
            const int dist = std::abs(s.agent.x - l.door.x) + std::abs(s.agent.y - l.door.y);
            if (s.has_key && !s.door_open && dist == 1) s.door_open = true;
            return false;
        }
        default: throw ContractViolation("keydoor: action " + std::to_string(a) + " out of range");
    }
}

void require_primitive(ActionId a, std::size_t n, const char* env) {
    if (a < 0 || static_cast<std::size_t>(a) >= n)
        throw ContractViolation(std::string(env) + ": action " + std::to_string(a) + " is not a primitive");
}

}  // namespace

// ---------------------------------------------------------------- KeyDoorGrid

KeyDoorGrid::KeyDoorGrid(int size, int episode_cap) : size_(size), cap_(episode_cap) {
    if (size < 5) throw ValidationError("keydoor grid size must be at least 5");
    if (episode_cap < 1) throw ValidationError("episode cap must be positive");
    layout_ = generate_layout(size_, 0);
}

std::vector<std::string> KeyDoorGrid::primitive_names() const {
    return {"up", "down", "left", "right", "pickup", "toggle"};
}

std::size_t KeyDoorGrid::observation_dim() const {
    const std::size_t inner = static_cast<std::size_t>(size_ - 2);
    return 5 * inner * inner + 2;
}

bool KeyDoorGrid::is_wall(Cell c) const { return grid_wall(layout_, c); }

bool KeyDoorGrid::blocked(Cell c) const { return is_wall(c) || (c == layout_.door && !door_open_); }

KeyDoorGrid::Layout KeyDoorGrid::generate_layout(int size, std::uint64_t seed) {
    Rng rng = Rng::substream(seed, Stream::env_layout);
    const int inner = size - 2;
    for (;;) {
        Layout l;
        l.size = size;
        l.wall_x = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(inner - 2)));
        l.door = {l.wall_x, 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(inner)))};
        auto any_open_cell = [&] {
            for (;;) {
                const Cell c{1 + static_cast<int>(rng.below(inner)), 1 + static_cast<int>(rng.below(inner))};
                if (!grid_wall(l, c) && !(c == l.door)) return c;
            }
        };
        l.agent = any_open_cell();
        l.key = any_open_cell();
        l.goal = any_open_cell();
        // DoorKey structure: start and key on the near side, goal behind the door.
        if (l.key == l.agent || l.goal == l.agent || l.goal == l.key) continue;
        if (l.agent.x > l.wall_x || l.goal.x < l.wall_x) continue;
        if (!solve(l)) continue;
        return l;
    }
}

std::optional<std::vector<ActionId>> KeyDoorGrid::solve(const Layout& l) {
    const int n = l.size;
    auto encode = [n](const GridSim& s) {
        return ((s.agent.y * n + s.agent.x) * 2 + (s.has_key ? 1 : 0)) * 2 + (s.door_open ? 1 : 0);
    };
    const int states = n * n * 4;
    std::vector<int> parent(states, -1);
    std::vector<ActionId> via(states, -1);
    std::vector<GridSim> sims(states);
    GridSim start{l.agent, false, false};
    const int s0 = encode(start);
    parent[s0] = s0;
    sims[s0] = start;
    std::queue<int> frontier;
    frontier.push(s0);
    while (!frontier.empty()) {
        const int cur = frontier.front();
        frontier.pop();
        for (ActionId a = 0; a < kNumActions; ++a) {
            GridSim next = sims[cur];
            const bool goal = grid_transition(l, next, a);
            const int code = encode(next);
            if (goal) {
                std::vector<ActionId> path{a};
                for (int s = cur; s != s0; s = parent[s]) path.push_back(via[s]);
                std::reverse(path.begin(), path.end());
                return path;
            }
            if (parent[code] != -1) continue;
            parent[code] = cur;
            via[code] = a;
            sims[code] = next;
            frontier.push(code);
        }
    }
    return std::nullopt;
}

EnvState KeyDoorGrid::reset(std::uint64_t seed) { return reset_to(generate_layout(size_, seed)); }

EnvState KeyDoorGrid::reset_to(const Layout& layout) {
    if (layout.size != size_) throw ValidationError("layout size does not match grid");
    layout_ = layout;
    agent_ = layout.agent;
    has_key_ = false;
    door_open_ = false;
    reached_goal_ = false;
    done_ = false;
    steps_ = 0;
    return state();
}

StepResult KeyDoorGrid::step(ActionId action) {
    if (done_) throw ContractViolation("keydoor: step called on a finished episode");
    require_primitive(action, kNumActions, "keydoor");
    GridSim s{agent_, has_key_, door_open_};
    const bool goal = grid_transition(layout_, s, action);
    agent_ = s.agent;
    has_key_ = s.has_key;
    door_open_ = s.door_open;
    ++steps_;
    reached_goal_ = goal;
    done_ = goal || steps_ >= cap_;
    return {state().observation, goal ? 1.0 : 0.0, done_};
}

EnvState KeyDoorGrid::state() const {
    const int inner = size_ - 2;
    const std::size_t plane = static_cast<std::size_t>(inner * inner);
    Vector obs(observation_dim(), 0.0);
    auto mark = [&](std::size_t channel, Cell c) {
        obs[channel * plane + static_cast<std::size_t>((c.y - 1) * inner + (c.x - 1))] = 1.0;
    };
    mark(0, agent_);
    if (!has_key_) mark(1, layout_.key);
    mark(2, layout_.door);
    mark(3, layout_.goal);
    for (int y = 1; y <= inner; ++y)
        for (int x = 1; x <= inner; ++x)
            if (is_wall({x, y})) mark(4, {x, y});
    obs[5 * plane] = has_key_ ? 1.0 : 0.0;
    obs[5 * plane + 1] = door_open_ ? 1.0 : 0.0;
    return {std::move(obs), done_, steps_};
}

// ----------------------------------------------------------------- ComboArena

std::vector<ComboArena::Combo> ComboArena::default_combos() {
    return {
        {{punch, punch, special}, 5},
        {{kick, punch, kick}, 4},
        {{guard, special}, 3},
    };
}

ComboArena::ComboArena(std::vector<Combo> combos, std::vector<ActionId> opponent_pattern, int episode_cap)
    : combos_(std::move(combos)), fixed_pattern_(std::move(opponent_pattern)), cap_(episode_cap) {
    if (episode_cap < 1) throw ValidationError("episode cap must be positive");
    for (const auto& c : combos_) {
        if (c.sequence.empty() || c.bonus < 0) throw ValidationError("combo needs a sequence and a non-negative bonus");
        for (ActionId a : c.sequence) require_primitive(a, kNumActions, "combo table");
    }
    for (ActionId a : fixed_pattern_) require_primitive(a, kNumActions, "opponent pattern");
}

std::vector<std::string> ComboArena::primitive_names() const {
    return {"advance", "retreat", "punch", "kick", "guard", "special"};
}

std::size_t ComboArena::observation_dim() const { return 3 + kOpponentMemory * kNumActions; }

double ComboArena::max_step_reward() const {
    int best = 1;
    for (const auto& c : combos_) best = std::max(best, c.bonus);
    return best;
}

EnvState ComboArena::reset(std::uint64_t seed) {
    Rng rng = Rng::substream(seed, Stream::env_layout);
    agent_pos_ = static_cast<int>(rng.below(4));
    opponent_pos_ = kLaneLength - 1;
    if (fixed_pattern_.empty()) {
        static constexpr std::array<ActionId, 4> kScript{advance, retreat, guard, punch};
        pattern_.assign(6, punch);
        for (auto& a : pattern_) a = kScript[rng.below(kScript.size())];
    } else {
        pattern_ = fixed_pattern_;
    }
    pattern_cursor_ = 0;
    health_ = kStartHealth;
    agent_history_.clear();
    opponent_history_.clear();
    done_ = false;
    steps_ = 0;
    return state();
}

StepResult ComboArena::step(ActionId action) {
    if (done_) throw ContractViolation("combo: step called on a finished episode");
    require_primitive(action, kNumActions, "combo");

    const bool guarded = !opponent_history_.empty() && opponent_history_.back() == guard;
    agent_history_.push_back(action);

    int damage = 0;
    switch (action) {
        case advance:
            if (opponent_pos_ - agent_pos_ > 1) ++agent_pos_;
            break;
        case retreat:
            if (agent_pos_ > 0) --agent_pos_;
            break;
        case punch:
        case kick:
            if (in_range() && !guarded) damage = 1;
            break;
        default: break;
    }
    if (in_range()) {
        int bonus = -1;
        for (const auto& c : combos_) {
            const auto& seq = c.sequence;
            if (seq.size() <= agent_history_.size() &&
                std::equal(seq.rbegin(), seq.rend(), agent_history_.rbegin()))
                bonus = std::max(bonus, c.bonus);
        }
        if (bonus >= 0) damage = bonus;
    }
    damage = std::min(damage, health_);
    health_ -= damage;

    const ActionId opp = pattern_[pattern_cursor_];
    pattern_cursor_ = (pattern_cursor_ + 1) % pattern_.size();
    if (opp == advance && opponent_pos_ - agent_pos_ > 1) --opponent_pos_;
    if (opp == retreat && opponent_pos_ < kLaneLength - 1) ++opponent_pos_;
    opponent_history_.push_back(opp);
    if (opponent_history_.size() > kOpponentMemory) opponent_history_.erase(opponent_history_.begin());
    if (agent_history_.size() > 8) agent_history_.erase(agent_history_.begin());

    ++steps_;
    done_ = health_ == 0 || steps_ >= cap_;
    return {state().observation, static_cast<double>(damage), done_};
}

EnvState ComboArena::state() const {
    Vector obs(observation_dim(), 0.0);
    obs[0] = static_cast<double>(agent_pos_) / (kLaneLength - 1);
    obs[1] = static_cast<double>(opponent_pos_) / (kLaneLength - 1);
    obs[2] = static_cast<double>(health_) / kStartHealth;
    // Most recent opponent move first.
    for (std::size_t i = 0; i < opponent_history_.size(); ++i) {
        const ActionId a = opponent_history_[opponent_history_.size() - 1 - i];
        obs[3 + i * kNumActions + static_cast<std::size_t>(a)] = 1.0;
    }
    return {std::move(obs), done_, steps_};
}

// ------------------------------------------------------------------- ChainMdp

ChainMdp::ChainMdp(int length, int episode_cap) : length_(length), cap_(episode_cap) {
    if (length < 2) throw ValidationError("chain needs at least two states");
    if (episode_cap < 1) throw ValidationError("episode cap must be positive");
}

EnvState ChainMdp::reset(std::uint64_t seed) {
    Rng rng = Rng::substream(seed, Stream::env_layout);
    return reset_to(static_cast<int>(rng.below(static_cast<std::uint64_t>(length_ - 1))));
}

EnvState ChainMdp::reset_to(int position) {
    if (position < 0 || position >= length_ - 1) throw ContractViolation("chain: start must be non-terminal");
    position_ = position;
    done_ = false;
    steps_ = 0;
    return state();
}

StepResult ChainMdp::step(ActionId action) {
    if (done_) throw ContractViolation("chain: step called on a finished episode");
    require_primitive(action, 2, "chain");
    position_ = action == right ? position_ + 1 : std::max(0, position_ - 1);
    ++steps_;
    const bool goal = position_ == length_ - 1;
    done_ = goal || steps_ >= cap_;
    return {observe(), goal ? 1.0 : 0.0, done_};
}

Vector ChainMdp::observe() const {
    Vector obs(static_cast<std::size_t>(length_), 0.0);
    obs[static_cast<std::size_t>(position_)] = 1.0;
    return obs;
}

EnvState ChainMdp::state() const { return {observe(), done_, steps_}; }

std::unique_ptr<Env> make_env(const EnvSpec& spec) {
    if (spec.id == "keydoor")
        return std::make_unique<KeyDoorGrid>(spec.size > 0 ? spec.size : 6, spec.episode_cap > 0 ? spec.episode_cap : 200);
    if (spec.id == "combo")
        return std::make_unique<ComboArena>(ComboArena::default_combos(), std::vector<ActionId>{},
                                            spec.episode_cap > 0 ? spec.episode_cap : 300);
    if (spec.id == "chain")
        return std::make_unique<ChainMdp>(spec.size > 0 ? spec.size : 5, spec.episode_cap > 0 ? spec.episode_cap : 50);
    throw ValidationError("unknown environment '" + spec.id + "'");
}

}  // namespace masp
