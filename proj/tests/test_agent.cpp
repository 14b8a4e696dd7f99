#include "doctest.h"

#include <cmath>

#include "masp/agent.hpp"
#include "masp/errors.hpp"
#include "masp/mining.hpp"
#include "masp/trainer.hpp"
#include "oracles.hpp"

using namespace masp;

namespace {

Transition tagged(double r) {
    Transition t;
    t.state = {r};
    t.next_state = {r};
    t.reward = r;
    return t;
}

// |count - n p| within three binomial standard deviations.
bool within_3sigma(std::size_t count, std::size_t n, double p) {
    const double mean = static_cast<double>(n) * p;
    const double sd = std::sqrt(static_cast<double>(n) * p * (1.0 - p));
    return std::abs(static_cast<double>(count) - mean) <= 3.0 * sd;
}

std::vector<Transition> random_batch(std::size_t n, std::size_t state_dim, std::size_t actions, Rng& rng) {
    std::vector<Transition> b(n);
    for (auto& t : b) {
        t.state = oracle::random_vector(state_dim, rng);
        t.next_state = oracle::random_vector(state_dim, rng);
        t.action = rng.below(actions);
        t.reward = rng.uniform(-1.0, 1.0);
        t.done = rng.bernoulli(0.3);
        t.discount_exponent = 1 + static_cast<int>(rng.below(3));
    }
    return b;
}

AugmentedActionSpace chain_space(std::vector<MacroAction> macros = {}) {
    return AugmentedActionSpace({"left", "right"}, std::move(macros));
}

}  // namespace

TEST_CASE("replay ring keeps the newest items") {
    ReplayBuffer buf(2);
    buf.push(tagged(1));
    buf.push(tagged(2));
    buf.push(tagged(3));
    CHECK(buf.size() == 2);
    const auto c = buf.contents();
    CHECK(c[0].reward == 2.0);
    CHECK(c[1].reward == 3.0);
    CHECK_THROWS_AS(ReplayBuffer(0), ValidationError);
}

TEST_CASE("replay sample: not ready, deterministic, uniform") {
    ReplayBuffer buf(100);
    Rng rng(1);
    CHECK_THROWS_AS(buf.sample(1, rng), NotReady);
    for (int i = 0; i < 10; ++i) buf.push(tagged(i));
    CHECK_THROWS_AS(buf.sample(11, rng), NotReady);

    Rng a(5), b(5);
    CHECK(buf.sample(8, a) == buf.sample(8, b));

    Rng s(17);
    std::vector<std::size_t> counts(10, 0);
    for (int draw = 0; draw < 1'000; ++draw)
        for (const auto& t : buf.sample(10, s)) ++counts[static_cast<std::size_t>(t.reward)];
    for (std::size_t c : counts) CHECK(within_3sigma(c, 10'000, 0.1));
}

TEST_CASE("epsilon schedule decays linearly then holds") {
    EpsilonSchedule e;
    CHECK(e.at(0) == 0.2);
    CHECK(std::abs(e.at(25'000) - 0.105) < 1e-12);
    CHECK(e.at(50'000) == 0.01);
    CHECK(e.at(1'000'000) == 0.01);
    for (std::uint64_t t = 0; t < 60'000; t += 777) {
        CHECK(e.at(t) <= e.start);
        CHECK(e.at(t) >= e.end);
    }
}

TEST_CASE("select_action: greedy tie-break and unique max") {
    Rng rng(0);
    CHECK(select_action(Vector{1, 3, 3}, 0.0, rng) == 1);
    Vector q(10, 0.0);
    q[7] = 2.0;
    CHECK(select_action(q, 0.0, rng) == 7);
    CHECK_THROWS_AS(select_action(Vector{}, 0.0, rng), ContractViolation);
    CHECK_THROWS_AS(select_action(q, 1.5, rng), ContractViolation);
}

TEST_CASE("select_action: epsilon 1 is uniform") {
    Rng rng(123);
    const Vector q{5, 0, 0, 0, 0, 0, 0, 0};
    std::vector<std::size_t> counts(q.size(), 0);
    for (int i = 0; i < 10'000; ++i) ++counts[select_action(q, 1.0, rng)];
    for (std::size_t c : counts) CHECK(within_3sigma(c, 10'000, 1.0 / 8.0));
}

TEST_CASE("q_values: single linear layer matches W (s + e) + b") {
    Rng rng(4);
    const MlpParams p = oracle::random_mlp({5, 3}, Activation::relu, rng);
    const Vector s{0.5, -1.0, 2.0};
    const Vector e{0.25, -0.75};
    const Vector q = q_values(p, s, e);
    const Vector x{0.5, -1.0, 2.0, 0.25, -0.75};
    for (std::size_t i = 0; i < 3; ++i) {
        double want = p.layers[0].bias[i];
        for (std::size_t j = 0; j < 5; ++j) want += p.layers[0].weight(i, j) * x[j];
        CHECK(std::abs(q[i] - want) <= 1e-12);
    }
}

TEST_CASE("q_values: zero net, embedding sensitivity, shape errors") {
    const std::size_t sizes[] = {4, 6, 3};
    const MlpParams zero = zero_mlp(sizes, Activation::relu);
    CHECK(q_values(zero, Vector{1, 2}, Vector{3, 4}) == Vector(3, 0.0));

    Rng rng(6);
    const MlpParams p = oracle::random_mlp({4, 6, 3}, Activation::tanh, rng);
    CHECK(q_values(p, Vector{1, 2}, Vector{3, 4}) != q_values(p, Vector{1, 2}, Vector{-3, 0}));
    CHECK_THROWS_AS(q_values(p, Vector{1, 2}, Vector{3}), ShapeError);
}

TEST_CASE("execute_action: primitive step") {
    ChainMdp env(5);
    env.reset_to(3);
    const ActionOutcome out = execute_action(env, ChainMdp::right, chain_space(), 0.9);
    CHECK(out.transition.reward == 1.0);
    CHECK(out.transition.discount_exponent == 1);
    CHECK(out.transition.done);
}

TEST_CASE("execute_action: macro rewards are discounted inside the macro") {
    ChainMdp env(5);
    env.reset_to(2);
    const auto space = chain_space({{{ChainMdp::right, ChainMdp::right}}});
    const ActionOutcome out = execute_action(env, 2, space, 0.9);
    CHECK(std::abs(out.transition.reward - 0.9) < 1e-15);
    CHECK(out.transition.discount_exponent == 2);
    CHECK(out.transition.done);
    CHECK(out.undiscounted_reward == 1.0);
}

TEST_CASE("execute_action: macro stops when the episode ends") {
    ChainMdp env(5);
    env.reset_to(3);
    const auto space = chain_space({{{ChainMdp::right, ChainMdp::left, ChainMdp::left}}});
    const ActionOutcome out = execute_action(env, 2, space, 0.9);
    CHECK(out.transition.reward == 1.0);
    CHECK(out.transition.discount_exponent == 1);
    CHECK(out.transition.done);
    CHECK(out.next.done);
    CHECK_THROWS_AS(execute_action(env, 0, space, 0.9), ContractViolation);
}

TEST_CASE("execute_action: replaying a macro one primitive at a time composes the same return") {
    Rng rng(10);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<MacroAction> macros(3);
        for (auto& m : macros) {
            m.sequence.resize(2 + rng.below(4));
            for (auto& a : m.sequence) a = static_cast<ActionId>(rng.below(6));
        }
        const AugmentedActionSpace space(KeyDoorGrid().primitive_names(), macros);
        const std::uint64_t seed = rng.next_u64();
        const std::size_t action = 6 + rng.below(3);
        const double gamma = 0.95;

        ComboArena a, b;
        a.reset(seed);
        b.reset(seed);
        const ActionOutcome whole = execute_action(a, action, space, gamma);

        double r = 0.0, disc = 1.0;
        int steps = 0;
        for (ActionId p : space.decode(action)) {
            const ActionOutcome one = execute_action(b, static_cast<std::size_t>(p), space, gamma);
            CHECK(one.transition.discount_exponent == 1);
            r += disc * one.transition.reward;
            disc *= gamma;
            ++steps;
            if (one.transition.done) break;
        }
        CHECK(whole.transition.reward == r);
        CHECK(whole.transition.discount_exponent == steps);
        CHECK(whole.next.observation == b.state().observation);
    }
}

TEST_CASE("td_loss: terminal transitions ignore the target network") {
    Rng rng(21);
    const MlpParams online = oracle::random_mlp({3, 4, 2}, Activation::relu, rng);
    const MlpParams t1 = oracle::random_mlp({3, 4, 2}, Activation::relu, rng);
    const MlpParams t2 = oracle::random_mlp({3, 4, 2}, Activation::relu, rng);
    Transition t;
    t.state = {0.1, 0.2, 0.3};
    t.next_state = {1, 1, 1};
    t.reward = 0.7;
    t.done = true;
    const std::vector<Transition> batch{t};
    const LossTerms a = td_terms(online, t1, batch, {}, 0.99);
    const LossTerms b = td_terms(online, t2, batch, {}, 0.99);
    CHECK(a.targets[0] == 0.7);
    CHECK(b.targets[0] == 0.7);
    CHECK(a.td_loss == b.td_loss);
}

TEST_CASE("td_loss: exact targets give zero loss and zero gradient") {
    const std::size_t sizes[] = {2, 2};
    MlpParams p = zero_mlp(sizes, Activation::identity);
    p.layers[0].bias = {0.5, -0.25};
    Transition t;
    t.state = {1, 0};
    t.next_state = {0, 1};
    t.action = 0;
    t.reward = 0.5;
    t.done = true;
    Transition u = t;
    u.action = 1;
    u.reward = -0.25;
    const TdLoss l = td_loss(p, p, std::vector<Transition>{t, u}, {}, 0.9);
    CHECK(l.loss == 0.0);
    CHECK(l.grads.is_zero());
}

TEST_CASE("td_loss: value and gradients match the definition and finite differences") {
    Rng rng(33);
    for (int trial = 0; trial < 10; ++trial) {
        const MlpParams online = oracle::random_mlp({5, 6, 4}, Activation::tanh, rng);
        const MlpParams target = oracle::random_mlp({5, 6, 4}, Activation::tanh, rng);
        const auto batch = random_batch(6, 3, 4, rng);
        const Vector e = oracle::random_vector(2, rng);
        const TdLoss l = td_loss(online, target, batch, e, 0.97);
        CHECK(oracle::rel_err(l.loss, oracle::td_loss_value(online, target, batch, e, 0.97)) <= 1e-12);
        const auto fd = oracle::fd_param_grad(
            [&](const MlpParams& p) { return oracle::td_loss_value(p, target, batch, e, 0.97); }, online, 1e-6);
        const auto an = oracle::flatten(l.grads);
        REQUIRE(fd.size() == an.size());
        for (std::size_t i = 0; i < fd.size(); ++i) CHECK(oracle::rel_err(an[i], fd[i]) <= 1e-5);
    }
}

TEST_CASE("backpropagate: embedding gradient matches finite differences on the e slice") {
    Rng rng(34);
    const MlpParams online = oracle::random_mlp({5, 6, 4}, Activation::tanh, rng);
    const MlpParams target = oracle::random_mlp({5, 6, 4}, Activation::tanh, rng);
    const auto batch = random_batch(5, 3, 4, rng);
    const Vector e = oracle::random_vector(2, rng);
    const LossGradients g = backpropagate(online, td_terms(online, target, batch, e, 0.9), 2);
    // The target also sees e, but only the online path is differentiated.
    for (std::size_t j = 0; j < 2; ++j) {
        auto f = [&](double h) {
            double loss = 0.0;
            for (const auto& t : batch) {
                Vector x = t.state, xt = t.next_state;
                for (std::size_t k = 0; k < 2; ++k) x.push_back(e[k] + (k == j ? h : 0.0));
                xt.insert(xt.end(), e.begin(), e.end());
                const Vector qn = oracle::straight_forward(target, xt);
                const double y = t.reward + (t.done ? 0.0 : std::pow(0.9, t.discount_exponent) *
                                                                *std::max_element(qn.begin(), qn.end()));
                const double d = oracle::straight_forward(online, x)[t.action] - y;
                loss += d * d;
            }
            return loss / static_cast<double>(batch.size());
        };
        const double fd = (f(1e-6) - f(-1e-6)) / 2e-6;
        CHECK(oracle::rel_err(g.embedding[j], fd) <= 1e-5);
    }
}

TEST_CASE("linear Q-learning on the 5-state chain converges to Q*") {
    RunSpec spec;
    spec.env = {"chain", 5, 0};
    spec.space = chain_space();
    spec.agent.gamma = 0.9;
    spec.agent.lr = 0.5;
    spec.agent.hidden = {};
    spec.agent.batch_size = 16;
    spec.agent.update_period = 1;
    spec.agent.target_period = 100;
    spec.agent.learning_starts = 100;
    spec.masp.eta = 0.0;
    spec.masp.beta = 0.0;
    spec.masp.embedding_dim = 0;
    spec.masp.sigma_init = SigmaInit::identity;
    spec.total_steps = 20'000;
    spec.seed = 3;
    const TrainResult r = train_loop(spec);
    const Learner learner(r.checkpoint, spec.agent, spec.masp);
    CHECK(learner.sigma().matrix().data == Matrix::identity(2).data);
    const auto qstar = oracle::chain_q_star(5, 0.9);
    double worst = 0.0;
    for (int s = 0; s < 4; ++s) {
        Vector x(5, 0.0);
        x[static_cast<std::size_t>(s)] = 1.0;
        const Vector q = learner.q(x);
        for (std::size_t a = 0; a < 2; ++a) worst = std::max(worst, std::abs(q[a] - qstar[s][a]));
    }
    CHECK(worst <= 0.05);
}

TEST_CASE("target network equals the online network right after sync") {
    RunSpec spec;
    spec.env = {"chain", 5, 0};
    spec.space = chain_space();
    spec.agent.hidden = {8};
    spec.agent.batch_size = 4;
    spec.masp.beta = 0.0;
    spec.seed = 1;
    Learner learner(spec, 5);
    ReplayBuffer buf(64);
    Rng rng(2);
    for (int i = 0; i < 16; ++i) {
        Transition t;
        t.state = oracle::random_vector(5, rng);
        t.next_state = oracle::random_vector(5, rng);
        t.action = rng.below(2);
        t.reward = rng.uniform();
        buf.push(t);
    }
    learner.update(buf.sample(4, rng), nullptr);
    CHECK_FALSE(learner.online() == learner.target());
    learner.sync_target();
    CHECK(learner.online() == learner.target());
}
