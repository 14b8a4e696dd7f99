#include "masp/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "masp/errors.hpp"

namespace masp {

using nlohmann::json;

namespace {

template <typename F>
auto parse_guard(const std::string& what, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw ValidationError(what + ": " + e.what());
    }
}

json macros_to_json(const std::vector<MacroAction>& macros) {
    json arr = json::array();
    for (const auto& m : macros) arr.push_back(m.sequence);
    return arr;
}

std::vector<MacroAction> macros_from_json(const json& j) {
    std::vector<MacroAction> out;
    for (const auto& m : j) out.push_back({m.get<std::vector<ActionId>>()});
    return out;
}

}  // namespace

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FileError("cannot write '" + path + "'");
    out << contents;
    if (!out) throw FileError("write failed for '" + path + "'");
}

json matrix_to_json(const Matrix& m) { return {{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}}; }

Matrix matrix_from_json(const json& j) {
    Matrix m;
    m.rows = j.at("rows").get<std::size_t>();
    m.cols = j.at("cols").get<std::size_t>();
    m.data = j.at("data").get<std::vector<double>>();
    if (m.data.size() != m.rows * m.cols) throw ValidationError("matrix data length does not match its shape");
    return m;
}

json mlp_to_json(const MlpParams& p) {
    json layers = json::array();
    for (const auto& l : p.layers) layers.push_back({{"weight", matrix_to_json(l.weight)}, {"bias", l.bias}});
    return {{"activation", to_string(p.hidden_activation)}, {"layers", layers}};
}

MlpParams mlp_from_json(const json& j) {
    MlpParams p;
    p.hidden_activation = parse_activation(j.at("activation").get<std::string>());
    for (const auto& l : j.at("layers")) {
        DenseLayer layer{matrix_from_json(l.at("weight")), l.at("bias").get<Vector>()};
        if (layer.bias.size() != layer.weight.rows) throw ValidationError("bias length does not match layer output");
        if (!p.layers.empty() && p.layers.back().weight.rows != layer.weight.cols)
            throw ValidationError("adjacent layer shapes do not compose");
        p.layers.push_back(std::move(layer));
    }
    if (p.layers.empty()) throw ValidationError("network without layers");
    return p;
}

std::string episode_to_jsonl(const EpisodeRecord& e) {
    json j{{"seed", e.seed}, {"actions", e.actions}, {"rewards", e.rewards}, {"success", e.success}};
    return j.dump();
}

void write_trajectories(const std::string& path, const std::vector<EpisodeRecord>& episodes) {
    std::string text;
    for (const auto& e : episodes) text += episode_to_jsonl(e) + "\n";
    write_file(path, text);
}

std::vector<EpisodeRecord> read_trajectories(const std::string& path) {
    std::istringstream in(read_file(path));
    std::vector<EpisodeRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.push_back(parse_guard(path + ":" + std::to_string(lineno), [&] {
            const json j = json::parse(line);
            EpisodeRecord e;
            e.seed = j.at("seed").get<std::uint64_t>();
            e.actions = j.at("actions").get<std::vector<ActionId>>();
            e.rewards = j.at("rewards").get<std::vector<double>>();
            e.success = j.at("success").get<bool>();
            return e;
        }));
    }
    return out;
}

std::string manifest_to_string(const MacroManifest& m) {
    json j{{"primitives", m.primitives},
           {"macros", macros_to_json(m.macros)},
           {"k", m.k},
           {"l_min", m.l_min},
           {"l_max", m.l_max}};
    return j.dump(2) + "\n";
}

void write_manifest(const std::string& path, const MacroManifest& m) { write_file(path, manifest_to_string(m)); }

MacroManifest read_manifest(const std::string& path) {
    const std::string text = read_file(path);
    return parse_guard(path, [&] {
        const json j = json::parse(text);
        MacroManifest m;
        m.primitives = j.at("primitives").get<std::size_t>();
        m.macros = macros_from_json(j.at("macros"));
        m.k = j.at("k").get<std::size_t>();
        m.l_min = j.at("l_min").get<std::size_t>();
        m.l_max = j.at("l_max").get<std::size_t>();
        return m;
    });
}

std::string sigma_to_csv(const Matrix& sigma) {
    std::string out;
    char buf[40];
    for (std::size_t r = 0; r < sigma.rows; ++r) {
        for (std::size_t c = 0; c < sigma.cols; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", sigma(r, c));
            if (c) out += ',';
            out += buf;
        }
        out += '\n';
    }
    return out;
}

Matrix sigma_from_csv(const std::string& text) {
    std::vector<Vector> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Vector row;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ValidationError("sigma CSV: bad number '" + cell + "'");
            }
        }
        rows.push_back(std::move(row));
    }
    Matrix m(rows.size(), rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows.size()) throw ValidationError("sigma CSV is not square");
        for (std::size_t c = 0; c < rows.size(); ++c) m(r, c) = rows[r][c];
    }
    return m;
}

void export_sigma(const std::string& csv_path, const std::string& sidecar_path, const Matrix& sigma,
                  const std::vector<std::string>& labels, std::uint64_t step) {
    if (labels.size() != sigma.rows) throw ShapeError("one label per sigma row required");
    write_file(csv_path, sigma_to_csv(sigma));
    write_file(sidecar_path, json{{"action_labels", labels}, {"step", step}}.dump(2) + "\n");
}

json checkpoint_to_json(const Checkpoint& c) {
    return {{"format", "masp-lab-checkpoint/1"},
            {"seed", c.seed},
            {"env", {{"id", c.env.id}, {"size", c.env.size}, {"episode_cap", c.env.episode_cap}}},
            {"observation_dim", c.observation_dim},
            {"action_space", {{"primitives", c.primitive_names}, {"macros", macros_to_json(c.macros)}}},
            {"online", mlp_to_json(c.online)},
            {"target", mlp_to_json(c.target)},
            {"sigma", matrix_to_json(c.sigma)},
            {"w_emb", matrix_to_json(c.w_emb)},
            {"rng", c.rng_states},
            {"counters",
             {{"env_steps", c.counters.env_steps},
              {"decisions", c.counters.decisions},
              {"updates", c.counters.updates},
              {"episodes", c.counters.episodes}}}};
}

Checkpoint checkpoint_from_json(const json& j) {
    return parse_guard("checkpoint", [&] {
        if (j.at("format").get<std::string>() != "masp-lab-checkpoint/1")
            throw ValidationError("unsupported checkpoint format");
        Checkpoint c;
        c.seed = j.at("seed").get<std::uint64_t>();
        const json& env = j.at("env");
        c.env.id = env.at("id").get<std::string>();
        c.env.size = env.at("size").get<int>();
        c.env.episode_cap = env.at("episode_cap").get<int>();
        c.observation_dim = j.at("observation_dim").get<std::size_t>();
        c.primitive_names = j.at("action_space").at("primitives").get<std::vector<std::string>>();
        c.macros = macros_from_json(j.at("action_space").at("macros"));
        c.online = mlp_from_json(j.at("online"));
        c.target = mlp_from_json(j.at("target"));
        c.sigma = matrix_from_json(j.at("sigma"));
        c.w_emb = matrix_from_json(j.at("w_emb"));
        c.rng_states = j.at("rng").get<std::map<std::string, std::string>>();
        const json& k = j.at("counters");
        c.counters = {k.at("env_steps").get<std::uint64_t>(), k.at("decisions").get<std::uint64_t>(),
                      k.at("updates").get<std::uint64_t>(), k.at("episodes").get<std::uint64_t>()};
        const std::size_t n = c.primitive_names.size() + c.macros.size();
        if (c.sigma.rows != n || c.sigma.cols != n) throw ValidationError("sigma does not match the action space");
        if (c.online.output_dim() != n) throw ValidationError("network output does not match the action space");
        if (!(c.online.layers.size() == c.target.layers.size())) throw ValidationError("target network shape mismatch");
        return c;
    });
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    write_file(path, checkpoint_to_json(c).dump() + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::string text = read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(path + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace masp
