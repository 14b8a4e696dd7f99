#include "masp/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "masp/errors.hpp"

namespace masp {

namespace fs = std::filesystem;

namespace {

std::mutex log_mutex;

void log(const HarnessOptions& opts, const std::string& msg) {
    if (!opts.log) return;
    std::lock_guard lock(log_mutex);
    *opts.log << "[masp-lab] " << msg << '\n';
}

std::string out_path(const HarnessOptions& opts, const std::string& file) {
    fs::create_directories(opts.out_dir);
    return (fs::path(opts.out_dir) / file).string();
}

std::vector<std::uint64_t> seeds_of(const ExperimentConfig& cfg, const HarnessOptions& opts) {
    return opts.seeds ? *opts.seeds : cfg.seeds;
}

// Runs fn(0..n-1) on up to `jobs` threads; rethrows the first failure.
template <typename F>
void parallel_for(std::size_t n, unsigned jobs, F&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    for (unsigned w = 0; w < std::min<std::size_t>(jobs, n); ++w) {
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : workers) t.join();
    if (failure) std::rethrow_exception(failure);
}

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string fmt_axis(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", x);
    return buf;
}

Matrix load_sigma_file(const std::string& path) {
    if (fs::path(path).extension() == ".csv") return sigma_from_csv(read_file(path));
    return load_checkpoint(path).sigma;
}

EpisodeRecord replay_actions(Env& env, std::uint64_t seed, const std::vector<ActionId>& actions) {
    EpisodeRecord rec;
    rec.seed = seed;
    env.reset(seed);
    for (ActionId a : actions) {
        const StepResult r = env.step(a);
        rec.actions.push_back(a);
        rec.rewards.push_back(r.reward);
        if (r.done) break;
    }
    rec.success = env.success();
    return rec;
}

struct SingleRun {
    TrainRunOutput output;
    TrainResult result;
};

SingleRun train_one(const ExperimentConfig& cfg, const RunSpec& spec, const HarnessOptions& opts,
                    const std::string& stem) {
    SingleRun run;
    run.output.seed = spec.seed;
    run.output.metrics_path = out_path(opts, stem + ".metrics.jsonl");
    run.output.checkpoint_path = out_path(opts, stem + ".checkpoint.json");
    run.output.sigma_csv_path = out_path(opts, stem + ".sigma.csv");

    std::ofstream metrics(run.output.metrics_path, std::ios::binary | std::ios::trunc);
    if (!metrics) throw FileError("cannot write '" + run.output.metrics_path + "'");
    TrainHooks hooks;
    hooks.on_episode = [&](const MetricsRecord& r) {
        metrics << r.to_jsonl() << '\n';
        metrics.flush();
    };
    log(opts, stem + ": training " + std::to_string(spec.total_steps) + " steps, |A|=" +
                  std::to_string(spec.space.size()));
    run.result = train_loop(spec, hooks);
    save_checkpoint(run.output.checkpoint_path, run.result.checkpoint);
    export_sigma(run.output.sigma_csv_path, out_path(opts, stem + ".sigma.json"), run.result.checkpoint.sigma,
                 spec.space.labels(), run.result.checkpoint.counters.env_steps);

    const Learner learner(run.result.checkpoint, spec.agent, spec.masp);
    run.output.eval = evaluate(learner, spec.env, cfg.eval.episodes, cfg.eval.seed);
    run.output.final_episode_return = run.result.metrics.empty() ? 0.0 : run.result.metrics.back().episode_return;
    log(opts, stem + ": success " + fmt_axis(run.output.eval.success_rate) + ", mean return " +
                  fmt_axis(run.output.eval.mean_return));
    return run;
}

}  // namespace

// ------------------------------------------------------------------ corpora

std::vector<EpisodeRecord> scripted_keydoor_corpus(const EnvSpec& env_spec, std::size_t episodes, std::uint64_t seed) {
    if (env_spec.id != "keydoor") throw ValidationError("scripted corpora exist only for keydoor");
    auto env = make_env(env_spec);
    auto& grid = static_cast<KeyDoorGrid&>(*env);
    const int size = env_spec.size > 0 ? env_spec.size : 6;
    Rng rng = Rng::substream(seed, Stream::corpus);
    std::vector<EpisodeRecord> out;
    out.reserve(episodes);
    for (std::size_t i = 0; i < episodes; ++i) {
        const std::uint64_t ep_seed = rng.next_u64();
        const auto plan = KeyDoorGrid::solve(KeyDoorGrid::generate_layout(size, ep_seed));
        out.push_back(replay_actions(grid, ep_seed, plan.value()));
    }
    return out;
}

std::vector<EpisodeRecord> random_corpus(const EnvSpec& env_spec, std::size_t episodes, std::uint64_t seed) {
    auto env = make_env(env_spec);
    Rng rng = Rng::substream(seed, Stream::corpus);
    std::vector<EpisodeRecord> out;
    out.reserve(episodes);
    for (std::size_t i = 0; i < episodes; ++i) {
        EpisodeRecord rec;
        rec.seed = rng.next_u64();
        EnvState s = env->reset(rec.seed);
        while (!s.done) {
            const auto a = static_cast<ActionId>(rng.below(env->num_primitives()));
            const StepResult r = env->step(a);
            rec.actions.push_back(a);
            rec.rewards.push_back(r.reward);
            s.done = r.done;
        }
        rec.success = env->success();
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<EpisodeRecord> agent_corpus(const Checkpoint& ckpt, const EnvSpec& env_spec, std::size_t episodes,
                                        std::uint64_t seed, double epsilon) {
    const Learner learner(ckpt);
    auto env = make_env(env_spec);
    if (env->num_primitives() != learner.space().num_primitives() || env->observation_dim() != ckpt.observation_dim)
        throw ValidationError("corpus checkpoint does not match environment '" + env_spec.id + "'");
    Rng rng = Rng::substream(seed, Stream::corpus);
    std::vector<EpisodeRecord> out;
    out.reserve(episodes);
    for (std::size_t i = 0; i < episodes; ++i) {
        EpisodeRecord rec;
        rec.seed = rng.next_u64();
        EnvState s = env->reset(rec.seed);
        while (!s.done) {
            const std::size_t a = select_action(learner.q(s.observation), epsilon, rng);
            for (ActionId p : learner.space().decode(a)) {
                const StepResult r = env->step(p);
                rec.actions.push_back(p);
                rec.rewards.push_back(r.reward);
                s.done = r.done;
                if (r.done) break;
            }
            if (!s.done) s = env->state();
        }
        rec.success = env->success();
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<EpisodeRecord> build_corpus(const MacroSource& src, const EnvSpec& env) {
    switch (src.corpus_source) {
        case CorpusSource::file:
            if (!fs::exists(src.corpus_path))
                throw FileError("trajectory corpus '" + src.corpus_path +
                                "' not found; record one or set macros.corpus_source to scripted/random");
            return read_trajectories(src.corpus_path);
        case CorpusSource::scripted: return scripted_keydoor_corpus(env, src.corpus_episodes, src.corpus_seed);
        case CorpusSource::random: return random_corpus(env, src.corpus_episodes, src.corpus_seed);
        case CorpusSource::agent:
            return agent_corpus(load_checkpoint(src.corpus_checkpoint), env, src.corpus_episodes, src.corpus_seed,
                                src.corpus_epsilon);
    }
    return {};
}

std::vector<MacroAction> resolve_macros(const ExperimentConfig& cfg) {
    if (!cfg.macros) return {};
    const MacroSource& src = *cfg.macros;
    auto env = make_env(cfg.env);
    if (src.manifest) {
        const MacroManifest m = read_manifest(*src.manifest);
        if (m.primitives != env->num_primitives())
            throw ValidationError("manifest was mined for " + std::to_string(m.primitives) +
                                  " primitives but environment '" + cfg.env.id + "' has " +
                                  std::to_string(env->num_primitives()));
        return m.macros;
    }
    const auto corpus = build_corpus(src, cfg.env);
    const auto sequences = action_sequences(corpus);
    return mine_macros(sequences, src.mining);
}

RunSpec make_run_spec(const ExperimentConfig& cfg, std::uint64_t seed) {
    auto env = make_env(cfg.env);
    RunSpec spec;
    spec.env = cfg.env;
    spec.agent = cfg.agent;
    spec.masp = cfg.masp;
    spec.total_steps = cfg.total_steps;
    spec.seed = seed;
    const ActionSpaceBuild built = build_action_space(env->primitive_names(), resolve_macros(cfg));
    if (cfg.p_replace > 0.0) {
        spec.space = AugmentedActionSpace(env->primitive_names(),
                                          inject_noise(built.space.macros(), cfg.p_replace, seed, env->num_primitives()));
    } else {
        spec.space = built.space;
    }
    if (cfg.frozen_sigma) spec.frozen_sigma = load_sigma_file(*cfg.frozen_sigma);
    return spec;
}

// ----------------------------------------------------------------- commands

MineResult cmd_mine(const ExperimentConfig& cfg, const HarnessOptions& opts) {
    if (!cfg.macros) throw ConfigError("macros", "mine needs a macros section with mining parameters");
    const MacroSource& src = *cfg.macros;
    auto env = make_env(cfg.env);
    const auto corpus = build_corpus(src, cfg.env);
    if (src.corpus_source != CorpusSource::file) write_trajectories(out_path(opts, cfg.name + ".corpus.jsonl"), corpus);
    const auto sequences = action_sequences(corpus);
    const ActionSpaceBuild built = build_action_space(env->primitive_names(), mine_macros(sequences, src.mining));

    MineResult r;
    r.manifest = {env->num_primitives(), built.space.macros(), src.mining.k, src.mining.l_min, src.mining.l_max};
    r.manifest_path = out_path(opts, cfg.name + ".manifest.json");
    write_manifest(r.manifest_path, r.manifest);

    std::map<std::size_t, std::size_t> hist;
    for (const auto& m : r.manifest.macros) ++hist[m.length()];
    std::ostringstream msg;
    msg << "mined " << r.manifest.macros.size() << " macros (k=" << src.mining.k << ") from " << corpus.size()
        << " episodes; lengths:";
    for (const auto& [len, n] : hist) msg << ' ' << len << 'x' << n;
    log(opts, msg.str());
    return r;
}

std::vector<TrainRunOutput> cmd_train(const ExperimentConfig& cfg, const HarnessOptions& opts) {
    for (const auto& w : cfg.warnings) log(opts, "warning: " + w);
    const auto seeds = seeds_of(cfg, opts);
    std::vector<RunSpec> specs;
    for (auto s : seeds) specs.push_back(make_run_spec(cfg, s));
    std::vector<TrainRunOutput> outputs(seeds.size());
    parallel_for(seeds.size(), opts.jobs, [&](std::size_t i) {
        outputs[i] = train_one(cfg, specs[i], opts, cfg.name + "_seed" + std::to_string(seeds[i])).output;
    });
    return outputs;
}

EvalSummary cmd_eval(const ExperimentConfig& cfg, const HarnessOptions& opts) {
    if (!cfg.checkpoint) throw ConfigError("checkpoint", "eval needs a checkpoint path");
    const Checkpoint ckpt = load_checkpoint(*cfg.checkpoint);
    const Learner learner(ckpt, cfg.agent, cfg.masp);
    const EvalSummary s = evaluate(learner, cfg.env, cfg.eval.episodes, cfg.eval.seed);
    write_file(out_path(opts, cfg.name + ".eval.json"), s.to_json().dump(2) + "\n");
    log(opts, "eval: " + s.to_json().dump());
    return s;
}

std::vector<SweepSummary> summarize(const std::vector<SweepRow>& rows) {
    std::vector<SweepSummary> out;
    std::vector<double> order;
    for (const auto& r : rows)
        if (std::find(order.begin(), order.end(), r.axis_value) == order.end()) order.push_back(r.axis_value);
    for (double v : order) {
        std::vector<const SweepRow*> group;
        for (const auto& r : rows)
            if (r.axis_value == v) group.push_back(&r);
        SweepSummary s;
        s.axis_value = v;
        s.n = group.size();
        const double n = static_cast<double>(s.n);
        for (const auto* r : group) {
            s.success_mean += r->success;
            s.return_mean += r->episode_return;
        }
        s.success_mean /= n;
        s.return_mean /= n;
        if (s.n > 1) {
            double vs = 0.0, vr = 0.0;
            for (const auto* r : group) {
                vs += (r->success - s.success_mean) * (r->success - s.success_mean);
                vr += (r->episode_return - s.return_mean) * (r->episode_return - s.return_mean);
            }
            s.success_stderr = std::sqrt(vs / (n - 1.0) / n);
            s.return_stderr = std::sqrt(vr / (n - 1.0) / n);
        }
        out.push_back(s);
    }
    return out;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows, const std::vector<SweepSummary>& summary) {
    std::string csv = "axis_value,seed,success,return,success_stderr,return_stderr\n";
    for (const auto& r : rows)
        csv += fmt_axis(r.axis_value) + "," + std::to_string(r.seed) + "," + fmt_double(r.success) + "," +
               fmt_double(r.episode_return) + ",,\n";
    for (const auto& s : summary)
        csv += fmt_axis(s.axis_value) + ",mean," + fmt_double(s.success_mean) + "," + fmt_double(s.return_mean) +
               "," + fmt_double(s.success_stderr) + "," + fmt_double(s.return_stderr) + "\n";
    return csv;
}

SweepResult cmd_sweep(const ExperimentConfig& cfg, const HarnessOptions& opts) {
    if (!cfg.sweep) throw ConfigError("sweep", "sweep needs a sweep section with axis and values");
    const SweepConfig& sw = *cfg.sweep;
    if (sw.axis == SweepAxis::k && (!cfg.macros || cfg.macros->manifest))
        throw ConfigError("sweep.axis", "a k sweep needs macros mined from a corpus, not a manifest");
    if (sw.axis != SweepAxis::eta && cfg.mode == Mode::baseline)
        throw ConfigError("sweep.axis", "mode=baseline has no macros to sweep over");
    for (const auto& w : cfg.warnings) log(opts, "warning: " + w);

    const auto seeds = seeds_of(cfg, opts);
    struct Job {
        ExperimentConfig cfg;
        double value;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (double v : sw.values) {
        ExperimentConfig c = cfg;
        switch (sw.axis) {
            case SweepAxis::k: c.macros->mining.k = static_cast<std::size_t>(v); break;
            case SweepAxis::p_replace: c.p_replace = v; break;
            case SweepAxis::eta:
                if (cfg.mode != Mode::masp) throw ConfigError("sweep.axis", "an eta sweep needs mode=masp");
                c.masp.eta = v;
                break;
        }
        for (auto s : seeds) jobs.push_back({c, v, s});
    }
    std::vector<RunSpec> specs;
    for (const auto& j : jobs) specs.push_back(make_run_spec(j.cfg, j.seed));

    SweepResult result;
    result.rows.resize(jobs.size());
    parallel_for(jobs.size(), opts.jobs, [&](std::size_t i) {
        const Job& j = jobs[i];
        const std::string stem =
            cfg.name + "_" + to_string(sw.axis) + fmt_axis(j.value) + "_seed" + std::to_string(j.seed);
        const SingleRun run = train_one(j.cfg, specs[i], opts, stem);
        result.rows[i] = {j.value, j.seed, run.output.eval.success_rate, run.output.eval.mean_return};
    });
    result.summary = summarize(result.rows);
    result.csv_path = out_path(opts, cfg.name + ".sweep.csv");
    write_file(result.csv_path, sweep_to_csv(result.rows, result.summary));
    log(opts, "sweep results written to " + result.csv_path);
    return result;
}

TransferResult cmd_transfer(const ExperimentConfig& cfg_in, const HarnessOptions& opts) {
    if (!cfg_in.source_checkpoint) throw ConfigError("source_checkpoint", "transfer needs a source checkpoint");
    ExperimentConfig cfg = cfg_in;
    if (cfg.masp.beta != 0.0) {
        cfg.warnings.push_back("transfer keeps sigma frozen; masp.beta forced to 0");
        cfg.masp.beta = 0.0;
    }
    for (const auto& w : cfg.warnings) log(opts, "warning: " + w);
    const Checkpoint source = load_checkpoint(*cfg.source_checkpoint);

    auto env = make_env(cfg.env);
    if (env->num_primitives() != source.primitive_names.size())
        throw ValidationError("source sigma was learned over " + std::to_string(source.primitive_names.size()) +
                              " primitives but target environment '" + cfg.env.id + "' has " +
                              std::to_string(env->num_primitives()));
    const auto seeds = seeds_of(cfg, opts);
    std::vector<RunSpec> specs;
    for (auto s : seeds) {
        RunSpec spec;
        if (cfg.macros) {
            spec = make_run_spec(cfg, s);
        } else {
            spec.env = cfg.env;
            spec.agent = cfg.agent;
            spec.masp = cfg.masp;
            spec.total_steps = cfg.total_steps;
            spec.seed = s;
            spec.space = AugmentedActionSpace(env->primitive_names(), source.macros);
        }
        spec.masp.beta = 0.0;
        if (spec.space.size() != source.sigma.rows)
            throw ValidationError("source sigma is " + std::to_string(source.sigma.rows) + "x" +
                                  std::to_string(source.sigma.cols) + " but the target action space has " +
                                  std::to_string(spec.space.size()) + " actions");
        spec.frozen_sigma = source.sigma;
        specs.push_back(std::move(spec));
    }

    TransferResult result;
    result.runs.resize(seeds.size());
    parallel_for(seeds.size(), opts.jobs, [&](std::size_t i) {
        result.runs[i] = train_one(cfg, specs[i], opts, cfg.name + "_seed" + std::to_string(seeds[i])).output;
    });
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& r : result.runs) {
        result.mean_success += r.eval.success_rate;
        per_seed.push_back({{"seed", r.seed}, {"eval", r.eval.to_json()}});
    }
    result.mean_success /= static_cast<double>(result.runs.size());
    result.summary_path = out_path(opts, cfg.name + ".transfer.json");
    write_file(result.summary_path, nlohmann::json{{"source_checkpoint", *cfg.source_checkpoint},
                                                   {"runs", per_seed},
                                                   {"mean_success", result.mean_success}}
                                            .dump(2) +
                                        "\n");
    return result;
}

// ---------------------------------------------------------------------- CLI

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"masp-lab: macro-action similarity penalty experiments"};
    app.require_subcommand(1);
    std::string config_path, out_dir = "out", seeds_arg;
    unsigned jobs = 1;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"mine", "mine macro-actions from a trajectory corpus"},
        {"train", "train one agent per seed"},
        {"eval", "greedy evaluation of a checkpoint"},
        {"sweep", "train and evaluate across an ablation axis"},
        {"transfer", "retrain a policy with a frozen, transferred sigma"}};
    for (const auto& [name, desc] : commands) {
        auto* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--out", out_dir, "output directory (MASP_LAB_OUT overrides)");
        sub->add_option("--seeds", seeds_arg, "comma-separated seeds overriding the config");
        sub->add_option("--jobs", jobs, "concurrent runs")->check(CLI::PositiveNumber);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : 2;
    }

    HarnessOptions opts;
    opts.out_dir = out_dir;
    if (const char* env_out = std::getenv("MASP_LAB_OUT"); env_out && *env_out) opts.out_dir = env_out;
    opts.jobs = jobs;
    opts.log = &err;
    try {
        if (!seeds_arg.empty()) {
            std::vector<std::uint64_t> seeds;
            std::istringstream ss(seeds_arg);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                std::size_t used = 0;
                unsigned long long v = 0;
                try {
                    v = std::stoull(tok, &used);
                } catch (const std::exception&) {
                    used = 0;
                }
                if (used != tok.size() || tok.empty()) throw ConfigError("--seeds", "bad seed '" + tok + "'");
                seeds.push_back(v);
            }
            opts.seeds = seeds;
        }
        const ExperimentConfig cfg = load_config(config_path);
        const std::string cmd = app.get_subcommands().front()->get_name();
        if (cmd == "mine") {
            out << cmd_mine(cfg, opts).manifest_path << '\n';
        } else if (cmd == "train") {
            for (const auto& r : cmd_train(cfg, opts))
                out << r.metrics_path << ' ' << r.checkpoint_path << ' ' << r.eval.to_json().dump() << '\n';
        } else if (cmd == "eval") {
            out << cmd_eval(cfg, opts).to_json().dump(2) << '\n';
        } else if (cmd == "sweep") {
            out << cmd_sweep(cfg, opts).csv_path << '\n';
        } else {
            out << cmd_transfer(cfg, opts).summary_path << '\n';
        }
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 3;
    }
}

}  // namespace masp
