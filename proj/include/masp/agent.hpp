#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "masp/envs.hpp"
#include "masp/mining.hpp"
#include "masp/numcore.hpp"
#include "masp/rng.hpp"

namespace masp {

// One atomic decision. For a macro, reward is the discounted sum over the
// primitives actually executed and discount_exponent is their count.
struct Transition {
    Vector state;
    std::size_t action = 0;
    double reward = 0.0;
    Vector next_state;
    bool done = false;
    int discount_exponent = 1;

    bool operator==(const Transition&) const = default;
};

using Batch = std::vector<Transition>;

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity = 50'000);

    void push(Transition t);
    // n indices drawn uniformly with replacement. Throws NotReady when the
    // buffer holds fewer than n transitions.
    Batch sample(std::size_t n, Rng& rng) const;

    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    // Stored transitions from oldest to newest.
    std::vector<Transition> contents() const;

private:
    std::size_t capacity_;
    std::size_t cursor_ = 0;
    std::vector<Transition> items_;
};

struct EpsilonSchedule {
    double start = 0.2;
    double end = 0.01;
    std::uint64_t decay_steps = 50'000;

    // Linear decay from start to end, constant afterwards.
    double at(std::uint64_t step) const;
};

// Concatenation of state features and the similarity embedding.
Vector network_input(std::span<const double> state, std::span<const double> e_sigma);

Vector q_values(const MlpParams& params, std::span<const double> state, std::span<const double> e_sigma);

// Epsilon-greedy over all augmented actions; greedy ties go to the lowest
// index. Always consumes exactly one uniform draw, plus one index draw when
// exploring.
std::size_t select_action(std::span<const double> q, double epsilon, Rng& rng);
std::size_t argmax(std::span<const double> q);

struct ActionOutcome {
    Transition transition;
    EnvState next;
    double undiscounted_reward = 0.0;
};

// Runs the primitive sequence behind `action_index`, stopping early when the
// episode ends.
ActionOutcome execute_action(Env& env, std::size_t action_index, const AugmentedActionSpace& space,
                             double gamma);

// Per-sample quantities of the TD objective. output_grads holds the gradient
// of the loss w.r.t. each online Q vector; extra objectives add into it
// before backpropagation.
struct LossTerms {
    double td_loss = 0.0;
    std::vector<ForwardTrace> traces;
    std::vector<Vector> q;
    std::vector<double> targets;
    std::vector<Vector> output_grads;
};

// y = R + (1 - done) * gamma^L * max_a' Q_target(s', a'); loss = mean (Q(s,a) - y)^2.
LossTerms td_terms(const MlpParams& online, const MlpParams& target, std::span<const Transition> batch,
                   std::span<const double> e_sigma, double gamma);

struct LossGradients {
    GradientBundle params;
    Vector embedding;  // gradient w.r.t. the e_sigma input slice, summed over the batch
};

LossGradients backpropagate(const MlpParams& online, const LossTerms& terms, std::size_t embedding_dim);

struct TdLoss {
    double loss = 0.0;
    GradientBundle grads;
};

// Gradients flow only through the online network.
TdLoss td_loss(const MlpParams& online, const MlpParams& target, std::span<const Transition> batch,
               std::span<const double> e_sigma, double gamma);

}  // namespace masp
