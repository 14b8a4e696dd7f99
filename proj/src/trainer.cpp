#include "masp/trainer.hpp"

#include <algorithm>

#include "masp/errors.hpp"

namespace masp {

namespace {

std::vector<std::size_t> layer_sizes(std::size_t input, const AgentConfig& agent, std::size_t outputs) {
    std::vector<std::size_t> sizes{input};
    sizes.insert(sizes.end(), agent.hidden.begin(), agent.hidden.end());
    sizes.push_back(outputs);
    return sizes;
}

}  // namespace

Learner::Learner(const RunSpec& spec, std::size_t observation_dim)
    : space_(spec.space), agent_(spec.agent), masp_(spec.masp), observation_dim_(observation_dim) {
    const std::size_t n = space_.size();
    Rng init_rng = Rng::substream(spec.seed, Stream::init);
    online_ = init_mlp(layer_sizes(observation_dim + masp_.embedding_dim, agent_, n), agent_.activation, init_rng);
    target_ = online_;
    Rng emb_rng = Rng::substream(spec.seed, Stream::embedding_init);
    w_emb_ = init_embedding(masp_.embedding_dim, n, emb_rng);
    if (spec.frozen_sigma) {
        if (spec.frozen_sigma->rows != n || spec.frozen_sigma->cols != n)
            throw ValidationError("frozen sigma is " + std::to_string(spec.frozen_sigma->rows) + "x" +
                                  std::to_string(spec.frozen_sigma->cols) + " but the action space has " +
                                  std::to_string(n) + " actions");
        sigma_ = project_sigma(*spec.frozen_sigma);
    } else {
        Rng sigma_rng = Rng::substream(spec.seed, Stream::sigma_init);
        sigma_ = init_sigma(n, masp_.sigma_init, sigma_rng);
    }
    refresh_embedding();
}

Learner::Learner(const Checkpoint& c, const AgentConfig& agent, const MaspConfig& masp)
    : space_(c.primitive_names, c.macros),
      agent_(agent),
      masp_(masp),
      observation_dim_(c.observation_dim),
      online_(c.online),
      target_(c.target),
      w_emb_(c.w_emb),
      sigma_(project_sigma(c.sigma)) {
    masp_.embedding_dim = w_emb_.rows;
    if (online_.input_dim() != observation_dim_ + masp_.embedding_dim)
        throw ValidationError("checkpoint network input does not match observation and embedding sizes");
    refresh_embedding();
}

void Learner::set_sigma(const SimilarityMatrix& s) {
    if (s.size() != space_.size()) throw ShapeError("sigma size does not match the action space");
    sigma_ = s;
    refresh_embedding();
}

UpdateStats Learner::update(const Batch& inner, const Batch* outer) {
    UpdateStats stats;
    const Vector e = e_sigma_;
    LossTerms terms = td_terms(online_, target_, inner, e, agent_.gamma);
    stats.td_loss = terms.td_loss;
    if (masp_.eta > 0.0) {
        const MaspLoss reg = masp_loss(terms.q, sigma_.matrix(), masp_.eta);
        stats.masp_loss = reg.loss;
        for (std::size_t i = 0; i < terms.output_grads.size(); ++i)
            for (std::size_t a = 0; a < reg.grads[i].size(); ++a) terms.output_grads[i][a] += reg.grads[i][a];
    }
    const LossGradients grads = backpropagate(online_, terms, masp_.embedding_dim);

    const bool meta = meta_enabled() && outer != nullptr;
    std::optional<MlpParams> before;
    if (meta) before = online_;

    sgd_step(online_, grads.params, agent_.lr);
    // W_emb learns from the main loss only.
    if (masp_.embedding_dim > 0) {
        const Matrix gw = embedding_weight_grad(grads.embedding, sigma_.matrix());
        for (std::size_t i = 0; i < w_emb_.data.size(); ++i) w_emb_.data[i] -= agent_.lr * gw.data[i];
    }

    if (meta) {
        MetaGradientInputs in;
        in.before = &*before;
        in.after = &online_;
        in.target = &target_;
        in.inner = inner;
        in.outer = *outer;
        in.sigma = &sigma_.matrix();
        in.e_sigma = e;
        in.eta = masp_.eta;
        in.lr = agent_.lr;
        in.gamma = agent_.gamma;
        in.jvp = masp_.jvp;
        const Matrix g = meta_gradient(in);
        const EntropyReg h = entropy_reg(sigma_.matrix(), masp_.entropy_coef, masp_.norm_offset);
        sigma_ = meta_update(sigma_, g, h.grad, masp_.beta);
        stats.meta_step = true;
    }
    refresh_embedding();
    return stats;
}

std::string MetricsRecord::to_jsonl() const {
    const nlohmann::json j{{"step", step},
                           {"episode", episode},
                           {"return", episode_return},
                           {"success", success},
                           {"epsilon", epsilon},
                           {"masp_loss", masp_loss},
                           {"td_loss", td_loss},
                           {"sigma_mean_offdiag", sigma.mean_offdiag},
                           {"sigma_max", sigma.max},
                           {"sigma_row_entropy", sigma.row_entropy}};
    return j.dump();
}

Checkpoint make_checkpoint(const Learner& learner, const EnvSpec& env, std::uint64_t seed,
                           const TrainCounters& counters, std::map<std::string, std::string> rng_states) {
    Checkpoint c;
    c.env = env;
    c.primitive_names = learner.space().primitive_names();
    c.macros = learner.space().macros();
    c.observation_dim = learner.observation_dim();
    c.online = learner.online();
    c.target = learner.target();
    c.sigma = learner.sigma().matrix();
    c.w_emb = learner.w_emb();
    c.rng_states = std::move(rng_states);
    c.counters = counters;
    c.seed = seed;
    return c;
}

TrainResult train_loop(const RunSpec& spec, const TrainHooks& hooks) {
    auto env = make_env(spec.env);
    if (env->num_primitives() != spec.space.num_primitives())
        throw ValidationError("action space primitives do not match environment '" + spec.env.id + "'");
    if (spec.space.size() == 0) throw ValidationError("empty action space");

    Learner learner(spec, env->observation_dim());
    ReplayBuffer buffer(spec.agent.buffer_capacity);
    Rng episode_rng = Rng::substream(spec.seed, Stream::env_layout);
    Rng explore_rng = Rng::substream(spec.seed, Stream::exploration);
    Rng replay_rng = Rng::substream(spec.seed, Stream::replay);
    Rng meta_rng = Rng::substream(spec.seed, Stream::meta_replay);

    TrainResult result;
    TrainCounters counters;

    EnvState state = env->reset(episode_rng.next_u64());
    double ep_return = 0.0;
    double ep_td = 0.0, ep_masp = 0.0;
    std::size_t ep_updates = 0;

    while (counters.env_steps < spec.total_steps) {
        // Uniform-random acting while the replay warms up, then the linear schedule.
        const double eps = counters.env_steps < spec.agent.learning_starts
                               ? 1.0
                               : spec.agent.epsilon.at(counters.env_steps - spec.agent.learning_starts);
        const Vector q = learner.q(state.observation);
        const std::size_t action = select_action(q, eps, explore_rng);
        ActionOutcome out = execute_action(*env, action, learner.space(), spec.agent.gamma);
        counters.env_steps += static_cast<std::uint64_t>(out.transition.discount_exponent);
        ++counters.decisions;
        ep_return += out.undiscounted_reward;
        buffer.push(out.transition);

        if (counters.decisions % spec.agent.update_period == 0 && counters.env_steps >= spec.agent.learning_starts &&
            buffer.size() >= spec.agent.batch_size) {
            const Batch inner = buffer.sample(spec.agent.batch_size, replay_rng);
            std::optional<Batch> outer;
            if (learner.meta_enabled()) outer = buffer.sample(spec.agent.batch_size, meta_rng);
            const UpdateStats stats = learner.update(inner, outer ? &*outer : nullptr);
            ++counters.updates;
            ep_td += stats.td_loss;
            ep_masp += stats.masp_loss;
            ++ep_updates;
            if (hooks.on_update) hooks.on_update(learner, stats);
        }
        if (counters.decisions % spec.agent.target_period == 0) learner.sync_target();

        if (out.next.done) {
            MetricsRecord rec;
            rec.step = counters.env_steps;
            rec.episode = counters.episodes;
            rec.episode_return = ep_return;
            rec.success = env->success();
            rec.epsilon = eps;
            rec.td_loss = ep_updates ? ep_td / static_cast<double>(ep_updates) : 0.0;
            rec.masp_loss = ep_updates ? ep_masp / static_cast<double>(ep_updates) : 0.0;
            rec.sigma = sigma_stats(learner.sigma().matrix(), spec.masp.norm_offset);
            if (hooks.on_episode) hooks.on_episode(rec);
            result.metrics.push_back(rec);
            ++counters.episodes;
            ep_return = ep_td = ep_masp = 0.0;
            ep_updates = 0;
            state = env->reset(episode_rng.next_u64());
        } else {
            state = std::move(out.next);
        }
    }

    result.checkpoint = make_checkpoint(learner, spec.env, spec.seed, counters,
                                        {{"env", episode_rng.serialize()},
                                         {"exploration", explore_rng.serialize()},
                                         {"replay", replay_rng.serialize()},
                                         {"meta_replay", meta_rng.serialize()}});
    return result;
}

nlohmann::json EvalSummary::to_json() const {
    return {{"episodes", episodes},
            {"mean_return", mean_return},
            {"success_rate", success_rate},
            {"mean_length", mean_length}};
}

std::vector<std::uint64_t> eval_episode_seeds(std::uint64_t seed, std::size_t episodes) {
    Rng rng = Rng::substream(seed, Stream::eval);
    std::vector<std::uint64_t> out(episodes);
    for (auto& s : out) s = rng.next_u64();
    return out;
}

EvalSummary evaluate(const Learner& learner, const EnvSpec& env_spec, std::size_t episodes, std::uint64_t seed) {
    if (episodes == 0) throw ContractViolation("evaluation needs at least one episode");
    auto env = make_env(env_spec);
    if (env->num_primitives() != learner.space().num_primitives() ||
        env->observation_dim() != learner.observation_dim())
        throw ValidationError("environment '" + env_spec.id + "' does not match the checkpoint's action space (" +
                              std::to_string(learner.space().num_primitives()) + " primitives, observation dim " +
                              std::to_string(learner.observation_dim()) + ")");
    EvalSummary s;
    s.episodes = episodes;
    for (std::uint64_t ep_seed : eval_episode_seeds(seed, episodes)) {
        EnvState state = env->reset(ep_seed);
        double ret = 0.0;
        while (!state.done) {
            const Vector q = learner.q(state.observation);
            ActionOutcome out = execute_action(*env, argmax(q), learner.space(), 1.0);
            ret += out.undiscounted_reward;
            state = std::move(out.next);
        }
        s.mean_return += ret;
        s.mean_length += state.step_count;
        s.success_rate += env->success() ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(episodes);
    s.mean_return /= n;
    s.mean_length /= n;
    s.success_rate /= n;
    return s;
}

}  // namespace masp
