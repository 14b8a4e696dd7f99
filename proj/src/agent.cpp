#include "masp/agent.hpp"

#include <cmath>

#include "masp/errors.hpp"

namespace masp {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ValidationError("replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
    if (items_.size() < capacity_) {
        items_.push_back(std::move(t));
    } else {
        items_[cursor_] = std::move(t);
    }
    cursor_ = (cursor_ + 1) % capacity_;
}

Batch ReplayBuffer::sample(std::size_t n, Rng& rng) const {
    if (items_.size() < n || n == 0)
        throw NotReady("replay buffer holds " + std::to_string(items_.size()) + " transitions, need " +
                       std::to_string(n));
    Batch out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(items_[rng.below(items_.size())]);
    return out;
}

std::vector<Transition> ReplayBuffer::contents() const {
    if (items_.size() < capacity_) return items_;
    std::vector<Transition> out;
    out.reserve(items_.size());
    for (std::size_t i = 0; i < items_.size(); ++i) out.push_back(items_[(cursor_ + i) % capacity_]);
    return out;
}

double EpsilonSchedule::at(std::uint64_t step) const {
    if (decay_steps == 0 || step >= decay_steps) return end;
    const double frac = static_cast<double>(step) / static_cast<double>(decay_steps);
    return start + (end - start) * frac;
}

Vector network_input(std::span<const double> state, std::span<const double> e_sigma) {
    Vector x;
    x.reserve(state.size() + e_sigma.size());
    x.insert(x.end(), state.begin(), state.end());
    x.insert(x.end(), e_sigma.begin(), e_sigma.end());
    return x;
}

Vector q_values(const MlpParams& params, std::span<const double> state, std::span<const double> e_sigma) {
    return mlp_forward(params, network_input(state, e_sigma));
}

std::size_t argmax(std::span<const double> q) {
    if (q.empty()) throw ContractViolation("argmax of an empty Q vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < q.size(); ++i)
        if (q[i] > q[best]) best = i;
    return best;
}

std::size_t select_action(std::span<const double> q, double epsilon, Rng& rng) {
    if (q.empty()) throw ContractViolation("select_action on an empty Q vector");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ContractViolation("epsilon must lie in [0, 1]");
    if (rng.uniform() < epsilon) return rng.below(q.size());
    return argmax(q);
}

ActionOutcome execute_action(Env& env, std::size_t action_index, const AugmentedActionSpace& space,
                             double gamma) {
    EnvState start = env.state();
    if (start.done) throw ContractViolation("execute_action on a finished episode");
    const std::vector<ActionId> primitives = space.decode(action_index);

    ActionOutcome out;
    out.transition.state = std::move(start.observation);
    out.transition.action = action_index;
    double discount = 1.0;
    int executed = 0;
    StepResult last;
    for (ActionId a : primitives) {
        last = env.step(a);
        out.transition.reward += discount * last.reward;
        out.undiscounted_reward += last.reward;
        discount *= gamma;
        ++executed;
        if (last.done) break;
    }
    out.transition.next_state = last.next_observation;
    out.transition.done = last.done;
    out.transition.discount_exponent = executed;
    out.next = env.state();
    return out;
}

LossTerms td_terms(const MlpParams& online, const MlpParams& target, std::span<const Transition> batch,
                   std::span<const double> e_sigma, double gamma) {
    if (batch.empty()) throw ContractViolation("td_loss on an empty batch");
    const double n = static_cast<double>(batch.size());
    LossTerms t;
    t.traces.reserve(batch.size());
    t.q.reserve(batch.size());
    t.targets.reserve(batch.size());
    t.output_grads.reserve(batch.size());
    for (const auto& tr : batch) {
        double y = tr.reward;
        if (!tr.done) {
            const Vector next_q = q_values(target, tr.next_state, e_sigma);
            y += std::pow(gamma, tr.discount_exponent) * next_q[argmax(next_q)];
        }
        ForwardTrace trace = mlp_forward_trace(online, network_input(tr.state, e_sigma));
        Vector q = trace.output();
        if (tr.action >= q.size()) throw ShapeError("transition action outside the network's action set");
        const double err = q[tr.action] - y;
        t.td_loss += err * err / n;
        Vector g(q.size(), 0.0);
        g[tr.action] = 2.0 * err / n;
        t.traces.push_back(std::move(trace));
        t.q.push_back(std::move(q));
        t.targets.push_back(y);
        t.output_grads.push_back(std::move(g));
    }
    return t;
}

LossGradients backpropagate(const MlpParams& online, const LossTerms& terms, std::size_t embedding_dim) {
    LossGradients out{GradientBundle::zeros_like(online), Vector(embedding_dim, 0.0)};
    const std::size_t state_dim = online.input_dim() - embedding_dim;
    Vector input_grad;
    for (std::size_t i = 0; i < terms.traces.size(); ++i) {
        mlp_backward_accumulate(online, terms.traces[i], terms.output_grads[i], out.params,
                                embedding_dim > 0 ? &input_grad : nullptr);
        for (std::size_t j = 0; j < embedding_dim; ++j) out.embedding[j] += input_grad[state_dim + j];
    }
    return out;
}

TdLoss td_loss(const MlpParams& online, const MlpParams& target, std::span<const Transition> batch,
               std::span<const double> e_sigma, double gamma) {
    LossTerms terms = td_terms(online, target, batch, e_sigma, gamma);
    return {terms.td_loss, backpropagate(online, terms, 0).params};
}

}  // namespace masp
