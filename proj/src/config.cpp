#include "masp/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "masp/errors.hpp"

namespace masp {

using nlohmann::json;

namespace {

// Reads one JSON object, tracking which keys were consumed so leftovers can
// be reported as unknown.
class ObjectReader {
public:
    ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) const { return obj_.contains(key); }

    const json& raw(const std::string& key) {
        used_.insert(key);
        return obj_.at(key);
    }

    template <typename T>
    void read(const std::string& key, T& out) {
        if (!obj_.contains(key)) return;
        used_.insert(key);
        try {
            out = obj_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(field(key), std::string("wrong type: ") + e.what());
        }
    }

    void read_number(const std::string& key, double& out) {
        if (!obj_.contains(key)) return;
        used_.insert(key);
        if (!obj_.at(key).is_number()) throw ConfigError(field(key), "expected a number");
        out = obj_.at(key).get<double>();
    }

    template <typename T>
    void read_count(const std::string& key, T& out) {
        if (!obj_.contains(key)) return;
        used_.insert(key);
        const json& v = obj_.at(key);
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
            throw ConfigError(field(key), "expected a non-negative integer");
        out = static_cast<T>(v.get<std::uint64_t>());
    }

    void finish() const {
        for (const auto& [key, value] : obj_.items())
            if (!used_.contains(key)) throw ConfigError(field(key), "unknown key");
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> used_;
};

template <typename F>
auto wrap(const std::string& field, F&& f) {
    try {
        return f();
    } catch (const ValidationError& e) {
        throw ConfigError(field, e.what());
    }
}

void parse_env(ObjectReader& root, EnvSpec& env) {
    if (!root.has("env")) return;
    const json& v = root.raw("env");
    if (v.is_string()) {
        env.id = v.get<std::string>();
    } else {
        ObjectReader r(v, "env");
        r.read("id", env.id);
        r.read("size", env.size);
        r.read("episode_cap", env.episode_cap);
        r.finish();
    }
    if (env.id != "keydoor" && env.id != "combo" && env.id != "chain")
        throw ConfigError("env.id", "unknown environment '" + env.id + "' (expected keydoor, combo or chain)");
    if (env.size != 0 && env.size < (env.id == "keydoor" ? 5 : 2))
        throw ConfigError("env.size", env.id == "keydoor" ? "keydoor grids need size >= 5" : "must be at least 2");
    if (env.episode_cap < 0) throw ConfigError("env.episode_cap", "must be non-negative");
}

void parse_macros(ObjectReader& root, ExperimentConfig& cfg) {
    if (!root.has("macros")) return;
    const json& v = root.raw("macros");
    if (v.is_null()) return;
    ObjectReader r(v, "macros");
    MacroSource src;
    if (r.has("manifest")) {
        std::string m;
        r.read("manifest", m);
        src.manifest = m;
    }
    r.read_count("k", src.mining.k);
    r.read_count("l_min", src.mining.l_min);
    r.read_count("l_max", src.mining.l_max);
    std::string source = "scripted";
    r.read("corpus_source", source);
    if (r.has("corpus")) {
        r.read("corpus", src.corpus_path);
        source = "file";
    }
    if (source == "file") src.corpus_source = CorpusSource::file;
    else if (source == "scripted") src.corpus_source = CorpusSource::scripted;
    else if (source == "random") src.corpus_source = CorpusSource::random;
    else if (source == "agent") src.corpus_source = CorpusSource::agent;
    else throw ConfigError("macros.corpus_source", "expected file, scripted, random or agent");
    r.read("corpus_checkpoint", src.corpus_checkpoint);
    r.read_count("corpus_episodes", src.corpus_episodes);
    r.read_count("corpus_seed", src.corpus_seed);
    r.read_number("corpus_epsilon", src.corpus_epsilon);
    r.finish();

    if (src.mining.k < 1) throw ConfigError("macros.k", "must be at least 1");
    if (src.mining.l_min < 2 || src.mining.l_min > src.mining.l_max)
        throw ConfigError("macros.l_min", "lengths must satisfy 2 <= l_min <= l_max");
    if (src.corpus_source == CorpusSource::file && src.corpus_path.empty() && !src.manifest)
        throw ConfigError("macros.corpus", "corpus_source=file needs a corpus path");
    if (src.corpus_source == CorpusSource::agent && src.corpus_checkpoint.empty())
        throw ConfigError("macros.corpus_checkpoint", "corpus_source=agent needs a checkpoint");
    if (src.corpus_source == CorpusSource::scripted && cfg.env.id != "keydoor" && !src.manifest)
        throw ConfigError("macros.corpus_source", "scripted corpora exist only for keydoor");
    if (!(src.corpus_epsilon >= 0.0 && src.corpus_epsilon <= 1.0))
        throw ConfigError("macros.corpus_epsilon", "must lie in [0, 1]");
    cfg.macros = src;
}

void parse_masp(ObjectReader& root, MaspConfig& m) {
    if (!root.has("masp")) return;
    ObjectReader r(root.raw("masp"), "masp");
    r.read_number("eta", m.eta);
    r.read_number("beta", m.beta);
    r.read_number("entropy_coef", m.entropy_coef);
    r.read_number("norm_offset", m.norm_offset);
    if (r.has("sigma_init")) {
        std::string s;
        r.read("sigma_init", s);
        m.sigma_init = wrap("masp.sigma_init", [&] { return parse_sigma_init(s); });
    }
    r.read_count("embedding_dim", m.embedding_dim);
    if (r.has("jvp")) {
        std::string s;
        r.read("jvp", s);
        if (s == "finite_difference") m.jvp = JvpMode::finite_difference;
        else if (s == "forward") m.jvp = JvpMode::forward;
        else throw ConfigError("masp.jvp", "expected finite_difference or forward");
    }
    r.finish();
    if (!(m.eta >= 0.0)) throw ConfigError("masp.eta", "must be non-negative");
    if (!(m.beta >= 0.0)) throw ConfigError("masp.beta", "must be non-negative");
    if (!(m.entropy_coef >= 0.0)) throw ConfigError("masp.entropy_coef", "must be non-negative");
    if (!(m.norm_offset > 0.0)) throw ConfigError("masp.norm_offset", "must be positive");
}

void parse_agent(ObjectReader& root, AgentConfig& a) {
    if (!root.has("agent")) return;
    ObjectReader r(root.raw("agent"), "agent");
    r.read_number("gamma", a.gamma);
    r.read_number("lr", a.lr);
    r.read_number("epsilon_start", a.epsilon.start);
    r.read_number("epsilon_end", a.epsilon.end);
    r.read_count("epsilon_decay_steps", a.epsilon.decay_steps);
    r.read_count("buffer_capacity", a.buffer_capacity);
    r.read_count("batch_size", a.batch_size);
    r.read_count("update_period", a.update_period);
    r.read_count("target_period", a.target_period);
    r.read_count("learning_starts", a.learning_starts);
    if (r.has("hidden")) {
        const json& h = r.raw("hidden");
        if (!h.is_array()) throw ConfigError("agent.hidden", "expected an array of layer widths");
        a.hidden.clear();
        for (const auto& w : h) {
            if (!w.is_number_integer() || w.get<std::int64_t>() <= 0)
                throw ConfigError("agent.hidden", "layer widths must be positive integers");
            a.hidden.push_back(w.get<std::size_t>());
        }
    }
    if (r.has("activation")) {
        std::string s;
        r.read("activation", s);
        a.activation = wrap("agent.activation", [&] { return parse_activation(s); });
    }
    r.finish();
    if (!(a.gamma >= 0.0 && a.gamma <= 1.0)) throw ConfigError("agent.gamma", "must lie in [0, 1]");
    if (!(a.lr > 0.0)) throw ConfigError("agent.lr", "must be positive");
    if (!(a.epsilon.start >= 0.0 && a.epsilon.start <= 1.0))
        throw ConfigError("agent.epsilon_start", "must lie in [0, 1]");
    if (!(a.epsilon.end >= 0.0 && a.epsilon.end <= a.epsilon.start))
        throw ConfigError("agent.epsilon_end", "must lie in [0, epsilon_start]");
    if (a.buffer_capacity == 0) throw ConfigError("agent.buffer_capacity", "must be positive");
    if (a.batch_size == 0) throw ConfigError("agent.batch_size", "must be positive");
    if (a.batch_size > a.buffer_capacity) throw ConfigError("agent.batch_size", "exceeds buffer_capacity");
    if (a.update_period == 0) throw ConfigError("agent.update_period", "must be positive");
    if (a.target_period == 0) throw ConfigError("agent.target_period", "must be positive");
}

void parse_sweep(ObjectReader& root, ExperimentConfig& cfg) {
    if (!root.has("sweep")) return;
    ObjectReader r(root.raw("sweep"), "sweep");
    SweepConfig s;
    std::string axis;
    r.read("axis", axis);
    if (axis == "k") s.axis = SweepAxis::k;
    else if (axis == "p_replace") s.axis = SweepAxis::p_replace;
    else if (axis == "eta") s.axis = SweepAxis::eta;
    else throw ConfigError("sweep.axis", "expected k, p_replace or eta");
    if (!r.has("values")) throw ConfigError("sweep.values", "missing");
    const json& vals = r.raw("values");
    if (!vals.is_array() || vals.empty()) throw ConfigError("sweep.values", "expected a non-empty array");
    for (const auto& v : vals) {
        if (!v.is_number()) throw ConfigError("sweep.values", "expected numbers");
        const double x = v.get<double>();
        if (s.axis == SweepAxis::k && (x < 1 || x != std::floor(x)))
            throw ConfigError("sweep.values", "k values must be positive integers");
        if (s.axis == SweepAxis::p_replace && !(x >= 0.0 && x <= 1.0))
            throw ConfigError("sweep.values", "p_replace values must lie in [0, 1]");
        if (s.axis == SweepAxis::eta && !(x >= 0.0)) throw ConfigError("sweep.values", "eta values must be >= 0");
        s.values.push_back(x);
    }
    r.finish();
    cfg.sweep = s;
}

}  // namespace

Mode parse_mode(const std::string& s) {
    if (s == "baseline") return Mode::baseline;
    if (s == "macro") return Mode::macro;
    if (s == "masp") return Mode::masp;
    throw ConfigError("mode", "expected baseline, macro or masp");
}

std::string to_string(Mode m) {
    switch (m) {
        case Mode::baseline: return "baseline";
        case Mode::macro: return "macro";
        case Mode::masp: return "masp";
    }
    return "masp";
}

std::string to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::k: return "k";
        case SweepAxis::p_replace: return "p_replace";
        case SweepAxis::eta: return "eta";
    }
    return "k";
}

void enforce_invariants(ExperimentConfig& cfg) {
    if (cfg.mode == Mode::baseline) {
        if (cfg.macros) throw ConfigError("macros", "mode=baseline does not take macros");
        if (cfg.p_replace != 0.0) throw ConfigError("p_replace", "mode=baseline has no macros to corrupt");
    }
    if (cfg.mode != Mode::masp) {
        if (cfg.masp.eta != 0.0 || cfg.masp.beta != 0.0)
            cfg.warnings.push_back("mode=" + to_string(cfg.mode) + " forces masp.eta and masp.beta to 0");
        cfg.masp.eta = 0.0;
        cfg.masp.beta = 0.0;
    }
    if (cfg.frozen_sigma && cfg.masp.beta != 0.0) {
        cfg.warnings.push_back("frozen_sigma forces masp.beta to 0");
        cfg.masp.beta = 0.0;
    }
}

ExperimentConfig parse_config(const json& doc) {
    ExperimentConfig cfg;
    ObjectReader r(doc, "");
    r.read("name", cfg.name);
    if (cfg.name.empty() || cfg.name.find_first_of("/\\") != std::string::npos)
        throw ConfigError("name", "must be a non-empty file-name-safe string");
    parse_env(r, cfg.env);
    if (r.has("seeds")) {
        const json& s = r.raw("seeds");
        if (!s.is_array() || s.empty()) throw ConfigError("seeds", "expected a non-empty array");
        cfg.seeds.clear();
        for (const auto& x : s) {
            if (!x.is_number_integer() || x.get<std::int64_t>() < 0)
                throw ConfigError("seeds", "seeds must be non-negative integers");
            cfg.seeds.push_back(x.get<std::uint64_t>());
        }
    }
    r.read_count("total_steps", cfg.total_steps);
    if (r.has("mode")) {
        std::string m;
        r.read("mode", m);
        cfg.mode = parse_mode(m);
    }
    parse_macros(r, cfg);
    r.read_number("p_replace", cfg.p_replace);
    if (!(cfg.p_replace >= 0.0 && cfg.p_replace <= 1.0)) throw ConfigError("p_replace", "must lie in [0, 1]");
    parse_masp(r, cfg.masp);
    parse_agent(r, cfg.agent);
    if (r.has("eval")) {
        ObjectReader e(r.raw("eval"), "eval");
        e.read_count("episodes", cfg.eval.episodes);
        e.read_count("seed", cfg.eval.seed);
        e.finish();
        if (cfg.eval.episodes == 0) throw ConfigError("eval.episodes", "must be at least 1");
    }
    auto optional_path = [&](const char* key, std::optional<std::string>& out) {
        if (!r.has(key)) return;
        std::string p;
        r.read(key, p);
        if (p.empty()) throw ConfigError(key, "empty path");
        out = p;
    };
    optional_path("frozen_sigma", cfg.frozen_sigma);
    optional_path("checkpoint", cfg.checkpoint);
    optional_path("source_checkpoint", cfg.source_checkpoint);
    parse_sweep(r, cfg);
    r.finish();
    enforce_invariants(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot open config '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
    }
    return parse_config(doc);
}

json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["name"] = cfg.name;
    j["env"] = {{"id", cfg.env.id}, {"size", cfg.env.size}, {"episode_cap", cfg.env.episode_cap}};
    j["seeds"] = cfg.seeds;
    j["total_steps"] = cfg.total_steps;
    j["mode"] = to_string(cfg.mode);
    if (cfg.macros) {
        const auto& m = *cfg.macros;
        json mj;
        if (m.manifest) mj["manifest"] = *m.manifest;
        mj["k"] = m.mining.k;
        mj["l_min"] = m.mining.l_min;
        mj["l_max"] = m.mining.l_max;
        static const char* kSources[] = {"file", "scripted", "random", "agent"};
        mj["corpus_source"] = kSources[static_cast<int>(m.corpus_source)];
        if (m.corpus_source == CorpusSource::file && !m.corpus_path.empty()) mj["corpus"] = m.corpus_path;
        if (m.corpus_source == CorpusSource::agent) {
            mj["corpus_checkpoint"] = m.corpus_checkpoint;
            mj["corpus_epsilon"] = m.corpus_epsilon;
        }
        mj["corpus_episodes"] = m.corpus_episodes;
        mj["corpus_seed"] = m.corpus_seed;
        j["macros"] = mj;
    }
    j["p_replace"] = cfg.p_replace;
    j["masp"] = {{"eta", cfg.masp.eta},
                 {"beta", cfg.masp.beta},
                 {"entropy_coef", cfg.masp.entropy_coef},
                 {"norm_offset", cfg.masp.norm_offset},
                 {"sigma_init", to_string(cfg.masp.sigma_init)},
                 {"embedding_dim", cfg.masp.embedding_dim},
                 {"jvp", cfg.masp.jvp == JvpMode::forward ? "forward" : "finite_difference"}};
    const auto& a = cfg.agent;
    j["agent"] = {{"gamma", a.gamma},
                  {"lr", a.lr},
                  {"epsilon_start", a.epsilon.start},
                  {"epsilon_end", a.epsilon.end},
                  {"epsilon_decay_steps", a.epsilon.decay_steps},
                  {"buffer_capacity", a.buffer_capacity},
                  {"batch_size", a.batch_size},
                  {"update_period", a.update_period},
                  {"target_period", a.target_period},
                  {"learning_starts", a.learning_starts},
                  {"hidden", a.hidden},
                  {"activation", to_string(a.activation)}};
    j["eval"] = {{"episodes", cfg.eval.episodes}, {"seed", cfg.eval.seed}};
    if (cfg.frozen_sigma) j["frozen_sigma"] = *cfg.frozen_sigma;
    if (cfg.checkpoint) j["checkpoint"] = *cfg.checkpoint;
    if (cfg.source_checkpoint) j["source_checkpoint"] = *cfg.source_checkpoint;
    if (cfg.sweep) j["sweep"] = {{"axis", to_string(cfg.sweep->axis)}, {"values", cfg.sweep->values}};
    return j;
}

}  // namespace masp
