#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>


#include "json.hpp"
#include "masp/config.hpp"
#include "masp/errors.hpp"
#include "masp/harness.hpp"
#include "masp/io.hpp"

using namespace masp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("masp_harness_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& f) const { return (path / f).string(); }
};

json tiny_agent() {
    return {{"hidden", {8}},       {"batch_size", 4},        {"learning_starts", 50},
            {"target_period", 50}, {"buffer_capacity", 500}, {"epsilon_decay_steps", 200}};
}

json tiny_config(const std::string& name, const std::string& mode) {
    json j{{"name", name},   {"env", {{"id", "keydoor"}, {"size", 5}}}, {"seeds", {0}},
           {"total_steps", 400}, {"mode", mode},                        {"agent", tiny_agent()},
           {"eval", {{"episodes", 3}}}};
    if (mode != "baseline") j["macros"] = {{"k", 4}, {"corpus_episodes", 10}};
    return j;
}

std::string config_file(const TempDir& dir, const json& j) {
    const std::string p = dir / (j.at("name").get<std::string>() + ".config.json");
    write_file(p, j.dump(2));
    return p;
}

HarnessOptions opts_for(const TempDir& dir) {
    HarnessOptions o;
    o.out_dir = dir.path.string();
    return o;
}

std::string field_of(const json& doc) {
    try {
        parse_config(doc);
    } catch (const ConfigError& e) {
        return e.field;
    }
    return "";
}

int cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
    args.insert(args.begin(), "masp-lab");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    if (out_text) *out_text = out.str();
    if (err_text) *err_text = err.str();
    return code;
}

}  // namespace

TEST_CASE("config: schema errors name the offending field") {
    json j = tiny_config("c", "masp");
    j["agent"]["gama"] = 0.9;
    CHECK(field_of(j) == "agent.gama");

    j = tiny_config("c", "masp");
    j["totl_steps"] = 10;
    CHECK(field_of(j) == "totl_steps");

    j = tiny_config("c", "masp");
    j["p_replace"] = 1.5;
    CHECK(field_of(j) == "p_replace");

    j = tiny_config("c", "masp");
    j["mode"] = "rainbow";
    CHECK(field_of(j) == "mode");

    j = tiny_config("c", "masp");
    j["macros"]["l_min"] = 1;
    CHECK(field_of(j) == "macros.l_min");

    j = tiny_config("c", "masp");
    j["agent"]["gamma"] = "high";
    CHECK(field_of(j) == "agent.gamma");

    CHECK(field_of(tiny_config("c", "masp")).empty());
}

TEST_CASE("config: mode invariants") {
    json j = tiny_config("c", "baseline");
    j["macros"] = {{"k", 4}};
    CHECK(field_of(j) == "macros");

    j = tiny_config("c", "baseline");
    j["p_replace"] = 0.25;
    CHECK(field_of(j) == "p_replace");

    j = tiny_config("c", "macro");
    j["masp"] = {{"eta", 0.5}, {"beta", 0.1}};
    const ExperimentConfig macro = parse_config(j);
    CHECK(macro.masp.eta == 0.0);
    CHECK(macro.masp.beta == 0.0);
    REQUIRE(macro.warnings.size() == 1);
    CHECK(macro.warnings[0].find("forces masp.eta and masp.beta to 0") != std::string::npos);

    j = tiny_config("c", "masp");
    j["masp"] = {{"eta", 0.5}, {"beta", 0.1}};
    j["frozen_sigma"] = "sigma.csv";
    const ExperimentConfig frozen = parse_config(j);
    CHECK(frozen.masp.eta == 0.5);
    CHECK(frozen.masp.beta == 0.0);
    REQUIRE(frozen.warnings.size() == 1);
    CHECK(frozen.warnings[0] == "frozen_sigma forces masp.beta to 0");
}

TEST_CASE("config: round trip through JSON") {
    json j = tiny_config("rt", "masp");
    j["masp"] = {{"eta", 0.25}, {"beta", 0.01}};
    j["sweep"] = {{"axis", "p_replace"}, {"values", {0.0, 0.5}}};
    const ExperimentConfig a = parse_config(j);
    const ExperimentConfig b = parse_config(config_to_json(a));
    CHECK(config_to_json(a) == config_to_json(b));
}

TEST_CASE("mine: k=8 on the scripted keydoor corpus gives at most 8 macros of length 2..4") {
    TempDir dir("mine");
    json j = tiny_config("m", "masp");
    j["macros"] = {{"k", 8}, {"l_min", 2}, {"l_max", 4}, {"corpus_source", "scripted"}, {"corpus_episodes", 50}};
    const ExperimentConfig cfg = parse_config(j);
    const MineResult a = cmd_mine(cfg, opts_for(dir));
    CHECK(a.manifest.macros.size() >= 1);
    CHECK(a.manifest.macros.size() <= 8);
    for (const auto& m : a.manifest.macros) {
        CHECK(m.length() >= 2);
        CHECK(m.length() <= 4);
    }
    CHECK(fs::exists(dir / "m.corpus.jsonl"));
    const std::string first = read_file(a.manifest_path);
    const MineResult b = cmd_mine(cfg, opts_for(dir));
    CHECK(read_file(b.manifest_path) == first);

    // Mining from the recorded corpus file reproduces the manifest.
    json from_file = j;
    from_file["name"] = "m_file";
    from_file["macros"] = {{"k", 8}, {"l_min", 2}, {"l_max", 4}, {"corpus", dir / "m.corpus.jsonl"}};
    const MineResult c = cmd_mine(parse_config(from_file), opts_for(dir));
    CHECK(c.manifest.macros == a.manifest.macros);
}

TEST_CASE("mine: empty and missing corpora") {
    TempDir dir("mine_err");
    write_file(dir / "empty.jsonl", "");
    json j = tiny_config("e", "masp");
    j["macros"] = {{"k", 8}, {"corpus", dir / "empty.jsonl"}};
    CHECK_THROWS_AS(cmd_mine(parse_config(j), opts_for(dir)), EmptyCorpusError);
    CHECK(cli({"mine", "--config", config_file(dir, j), "--out", dir.path.string()}) != 0);

    j["macros"] = {{"k", 8}, {"corpus", dir / "nowhere.jsonl"}};
    try {
        cmd_mine(parse_config(j), opts_for(dir));
        FAIL("expected a file error");
    } catch (const FileError& e) {
        CHECK(std::string(e.what()).find("corpus_source") != std::string::npos);
    }
}

TEST_CASE("train: one metrics stream and checkpoint per seed, deterministic names") {
    TempDir dir("train");
    json j = tiny_config("t", "masp");
    j["seeds"] = {0, 1, 2, 3, 4};
    j["total_steps"] = 150;
    const auto runs = cmd_train(parse_config(j), opts_for(dir));
    REQUIRE(runs.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(runs[i].seed == i);
        CHECK(runs[i].metrics_path == dir / ("t_seed" + std::to_string(i) + ".metrics.jsonl"));
        CHECK(runs[i].checkpoint_path == dir / ("t_seed" + std::to_string(i) + ".checkpoint.json"));
        CHECK(fs::exists(runs[i].metrics_path));
        CHECK(fs::exists(runs[i].checkpoint_path));
        CHECK(fs::exists(runs[i].sigma_csv_path));
    }
}

TEST_CASE("train: seeded replay gives identical JSONL and checkpoint bytes") {
    TempDir a_dir("replay_a"), b_dir("replay_b");
    json j = tiny_config("r", "masp");
    j["masp"] = {{"eta", 0.1}, {"beta", 0.01}};
    const ExperimentConfig cfg = parse_config(j);
    const auto a = cmd_train(cfg, opts_for(a_dir));
    const auto b = cmd_train(cfg, opts_for(b_dir));
    CHECK(read_file(a[0].metrics_path) == read_file(b[0].metrics_path));
    CHECK(read_file(a[0].checkpoint_path) == read_file(b[0].checkpoint_path));
    CHECK(read_file(a[0].sigma_csv_path) == read_file(b[0].sigma_csv_path));

    std::istringstream lines(read_file(a[0].metrics_path));
    std::string line;
    std::uint64_t prev = 0;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
        const json rec = json::parse(line);
        CHECK(rec.at("step").get<std::uint64_t>() > prev);
        prev = rec.at("step").get<std::uint64_t>();
        ++n;
    }
    CHECK(n > 0);
}

TEST_CASE("train: baseline and masp with eta=beta=0 and no macros agree") {
    TempDir dir("reduce");
    json base = tiny_config("base", "baseline");
    json masp = tiny_config("masp0", "masp");
    masp.erase("macros");
    masp["masp"] = {{"eta", 0.0}, {"beta", 0.0}};
    const auto a = cmd_train(parse_config(base), opts_for(dir));
    const auto b = cmd_train(parse_config(masp), opts_for(dir));
    CHECK(a[0].final_episode_return == b[0].final_episode_return);
    CHECK(read_file(a[0].metrics_path) == read_file(b[0].metrics_path));
}

TEST_CASE("eval: determinism, one episode, env mismatch") {
    TempDir dir("eval");
    const auto runs = cmd_train(parse_config(tiny_config("ev", "masp")), opts_for(dir));
    json j = tiny_config("ev_eval", "masp");
    j["checkpoint"] = runs[0].checkpoint_path;
    j["eval"] = {{"episodes", 4}, {"seed", 9}};
    const EvalSummary a = cmd_eval(parse_config(j), opts_for(dir));
    const EvalSummary b = cmd_eval(parse_config(j), opts_for(dir));
    CHECK(a.to_json() == b.to_json());
    CHECK(a.episodes == 4);

    j["eval"] = {{"episodes", 1}};
    CHECK(cmd_eval(parse_config(j), opts_for(dir)).episodes == 1);

    j["env"] = "combo";
    j.erase("macros");
    CHECK_THROWS_AS(cmd_eval(parse_config(j), opts_for(dir)), ValidationError);
}

TEST_CASE("sweep: one row per value and seed plus summary rows") {
    TempDir dir("sweep");
    json j = tiny_config("s", "masp");
    j["seeds"] = {0, 1};
    j["total_steps"] = 120;
    j["sweep"] = {{"axis", "p_replace"}, {"values", {0.0, 0.25, 0.5, 0.75}}};
    const SweepResult r = cmd_sweep(parse_config(j), opts_for(dir));
    CHECK(r.rows.size() == 8);
    REQUIRE(r.summary.size() == 4);
    for (const auto& s : r.summary) {
        double succ = 0.0, ret = 0.0;
        for (const auto& row : r.rows)
            if (row.axis_value == s.axis_value) {
                succ += row.success;
                ret += row.episode_return;
            }
        CHECK(std::abs(s.success_mean - succ / 2.0) <= 1e-12);
        CHECK(std::abs(s.return_mean - ret / 2.0) <= 1e-12);
    }
    std::istringstream csv(read_file(r.csv_path));
    std::string line;
    std::size_t lines = 0;
    while (std::getline(csv, line)) ++lines;
    CHECK(lines == 1 + 8 + 4);
    CHECK(fs::exists(dir / "s_p_replace0.5_seed1.metrics.jsonl"));

    j["seeds"] = {3};
    j["name"] = "s1";
    j["sweep"] = {{"axis", "k"}, {"values", {2}}};
    const SweepResult one = cmd_sweep(parse_config(j), opts_for(dir));
    CHECK(one.rows.size() == 1);
    CHECK(one.summary.size() == 1);
    CHECK(one.summary[0].success_stderr == 0.0);
}

TEST_CASE("summarize: means and standard errors") {
    const std::vector<SweepRow> rows{{1.0, 0, 0.2, 1.0}, {1.0, 1, 0.4, 3.0}, {2.0, 0, 1.0, 5.0}};
    const auto s = summarize(rows);
    REQUIRE(s.size() == 2);
    CHECK(s[0].n == 2);
    CHECK(std::abs(s[0].success_mean - 0.3) <= 1e-12);
    CHECK(std::abs(s[0].return_mean - 2.0) <= 1e-12);
    CHECK(std::abs(s[0].success_stderr - 0.1) <= 1e-12);
    CHECK(std::abs(s[0].return_stderr - 1.0) <= 1e-12);
    CHECK(s[1].n == 1);
    CHECK(s[1].success_stderr == 0.0);
}

TEST_CASE("transfer: beta forced to 0, sizes checked before training") {
    TempDir dir("transfer");
    json src = tiny_config("src", "masp");
    src["masp"] = {{"beta", 0.01}};
    const auto source = cmd_train(parse_config(src), opts_for(dir));
    const Checkpoint ckpt = load_checkpoint(source[0].checkpoint_path);

    json tgt = tiny_config("tgt", "masp");
    tgt.erase("macros");
    tgt["source_checkpoint"] = source[0].checkpoint_path;
    tgt["masp"] = {{"beta", 0.2}};
    std::ostringstream log;
    HarnessOptions o = opts_for(dir);
    o.log = &log;
    const TransferResult r = cmd_transfer(parse_config(tgt), o);
    CHECK(log.str().find("transfer keeps sigma frozen; masp.beta forced to 0") != std::string::npos);
    REQUIRE(r.runs.size() == 1);
    const Checkpoint after = load_checkpoint(r.runs[0].checkpoint_path);
    CHECK(after.sigma == ckpt.sigma);
    CHECK(fs::exists(r.summary_path));

    tgt["name"] = "tgt_bad";
    tgt["macros"] = {{"k", 2}, {"corpus_episodes", 10}};
    try {
        cmd_transfer(parse_config(tgt), opts_for(dir));
        FAIL("expected a size mismatch");
    } catch (const ValidationError& e) {
        const std::string what = e.what();
        CHECK(what.find(std::to_string(ckpt.sigma.rows)) != std::string::npos);
        CHECK(what.find("8 actions") != std::string::npos);
    }
    CHECK_FALSE(fs::exists(dir / "tgt_bad_seed0.metrics.jsonl"));
}

TEST_CASE("cli: exit codes and output directory override") {
    TempDir dir("cli");
    std::string out, err;
    CHECK(cli({"frobnicate"}, &out, &err) == 2);
    CHECK(cli({"train"}, &out, &err) == 2);

    json bad = tiny_config("bad", "masp");
    bad["agent"]["gama"] = 0.9;
    CHECK(cli({"train", "--config", config_file(dir, bad)}, &out, &err) == 2);
    CHECK(err.find("agent.gama") != std::string::npos);

    CHECK(cli({"train", "--config", config_file(dir, tiny_config("ok", "baseline")), "--seeds", "x1"}, &out, &err) ==
          2);
    CHECK(cli({"eval", "--config", config_file(dir, tiny_config("noeval", "baseline"))}, &out, &err) == 2);

    json missing = tiny_config("missing", "masp");
    missing["checkpoint"] = dir / "nope.json";
    CHECK(cli({"eval", "--config", config_file(dir, missing), "--out", dir.path.string()}, &out, &err) == 3);

    const std::string cfg = config_file(dir, tiny_config("ok", "baseline"));
    const fs::path override_dir = dir.path / "override";
    ::setenv("MASP_LAB_OUT", override_dir.c_str(), 1);
    const int code = cli({"train", "--config", cfg, "--out", (dir.path / "ignored").string(), "--seeds", "7"}, &out, &err);
    ::unsetenv("MASP_LAB_OUT");
    CHECK(code == 0);
    CHECK(fs::exists(override_dir / "ok_seed7.metrics.jsonl"));
    CHECK_FALSE(fs::exists(dir.path / "ignored" / "ok_seed7.metrics.jsonl"));
}

TEST_CASE("cli binary: exit code of a real process") {
    const char* bin = std::getenv("MASP_LAB_CLI");
    if (!bin) return;
    TempDir dir("binary");
    const std::string cfg = config_file(dir, tiny_config("bin", "baseline"));
    const std::string base = std::string(bin) + " train --config " + cfg + " --out " + dir.path.string() + " 2>/dev/null";
    const int ok = std::system(base.c_str());
    CHECK(WEXITSTATUS(ok) == 0);
    CHECK(fs::exists(dir / "bin_seed0.checkpoint.json"));
    const int bad = std::system((std::string(bin) + " train --config " + dir / "absent.json" + " 2>/dev/null").c_str());
    CHECK(WEXITSTATUS(bad) == 3);
}
